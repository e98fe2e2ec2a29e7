use std::fs;
use std::path::{Path, PathBuf};

use aerotri::features::{detect_builtin, read_pgm, write_feature_file, FeatureSet};
use aerotri::geo::{parse_pos_file, write_pos_file, Ellipsoid, Position, PosRecord, ZoneConfig};
use aerotri::geometry::{CameraModel, RansacConfig};
use aerotri::georef_eval::GeorefRoute;
use aerotri::matching::{default_ratio_grid, sweep_ratio, write_sweep_csv, MatchConfig};
use aerotri::pipeline::{
    self, check_descriptor_dims, evaluate as evaluate_report, georeference, keypoints_f64, load_feature_dir,
    match_candidates, matches_csv, order_pos, propose_pairs, read_camera_csv, read_checkpoint, read_ground_truth,
    read_matches_csv, read_seed_pair, seed_pair_csv, seed_relative_orientation, verified_csv, verify_pairs,
    CheckpointInput, PairMatches, PipelineConfig, ReconstructionFiles,
};
use aerotri::synth::{generate_scene, FlightConfig, NoiseConfig, SceneConfig};
use aerotri::Reconstruction;
use nalgebra::Vector2;

use crate::error::{CliError, Failure};
use crate::{
    CheckpointArgs, ConvertPosArgs, DetectArgs, EvaluateArgs, GeorefArgs, MatchArgs, MatchCmdArgs, RansacArgs,
    ReconstructArgs, RunArgs, Scene, SfmArgs, SweepArgs, SynthArgs, VerifyArgs, ZoneArgs,
};

type Result<T> = std::result::Result<T, CliError>;

const SFM_PREFIX: &str = "sfm_";

fn read_bytes(stage: &'static str, path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(stage, path, e))
}

fn write_file(stage: &'static str, path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(stage, parent, e))?;
    }
    fs::write(path, body).map_err(|e| CliError::io(stage, path, e))
}

fn create_dir(stage: &'static str, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(stage, dir, e))
}

/// Reads a POS file and projects any geodetic records.
fn load_pos(stage: &'static str, path: &Path, zone: &ZoneArgs) -> Result<Vec<PosRecord>> {
    let records = parse_pos_file(&read_bytes(stage, path)?).map_err(|e| CliError::geo(stage, path, e))?;
    let geodetic = records.iter().any(|r| matches!(r.position, Position::Geodetic(_)));
    if !geodetic {
        return Ok(records);
    }
    let Some(central_meridian) = zone.central_meridian else {
        return Err(CliError::new(
            stage,
            Failure::Config,
            format!("{} holds geodetic positions; pass --central-meridian", path.display()),
        ));
    };
    let zone = ZoneConfig {
        central_meridian,
        false_easting: zone.false_easting,
        scale_factor: zone.scale_factor,
    };
    records
        .iter()
        .map(|r| r.to_projected(&Ellipsoid::CGCS2000, &zone))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::geo(stage, path, e))
}

struct Images {
    features: Vec<FeatureSet>,
    ids: Vec<String>,
    keypoints: Vec<Vec<Vector2<f64>>>,
}

fn load_images(stage: &'static str, dir: &Path) -> Result<Images> {
    let features = load_feature_dir(dir).map_err(|e| CliError::pipeline(stage, e))?;
    check_descriptor_dims(&features).map_err(|e| CliError::pipeline(stage, e))?;
    let ids = features.iter().map(|f| f.image_id.clone()).collect();
    let keypoints = features.iter().map(keypoints_f64).collect();
    Ok(Images {
        features,
        ids,
        keypoints,
    })
}

fn load_camera(stage: &'static str, path: &Path) -> Result<CameraModel<f64>> {
    read_camera_csv(path).map_err(|e| CliError::pipeline(stage, e))
}

fn load_checkpoint(stage: &'static str, args: &CheckpointArgs) -> Result<Option<CheckpointInput>> {
    match (&args.checkpoint, &args.checkpoint_truth) {
        (Some(obs), Some(truth)) => read_checkpoint(obs, truth)
            .map(Some)
            .map_err(|e| CliError::pipeline(stage, e)),
        _ => Ok(None),
    }
}

fn match_config(args: &MatchArgs) -> MatchConfig {
    MatchConfig {
        ratio: args.ratio,
        cross_check: !args.no_cross_check,
    }
}

fn ransac_config(args: &RansacArgs) -> RansacConfig {
    RansacConfig {
        threshold: args.threshold,
        seed: args.seed,
        ..RansacConfig::default()
    }
}

fn pipeline_config(sfm: &SfmArgs, ransac: &RansacArgs) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_seed(ransac.seed);
    cfg.verify_ransac.threshold = ransac.threshold;
    cfg.min_pair_inliers = sfm.min_pair_inliers;
    cfg.sfm.max_reprojection = sfm.max_reprojection;
    cfg.sfm.min_angle_deg = sfm.min_angle;
    cfg
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut flight = match a.scene {
        Scene::Scene1 => FlightConfig::scene1(),
        Scene::Scene2 => FlightConfig::scene2(),
    };
    if let Some(s) = a.strips {
        flight.strips = s;
    }
    if let Some(n) = a.images_per_strip {
        flight.images_per_strip = n;
    }
    let noise = if a.noise_free {
        NoiseConfig::noise_free()
    } else {
        NoiseConfig {
            keypoint_sigma: a.keypoint_sigma,
            ..NoiseConfig::default()
        }
    };
    let scene = SceneConfig {
        n_points: a.points,
        noise,
        seed: a.seed,
        ..SceneConfig::default()
    };
    let d = generate_scene(&flight, &scene).map_err(CliError::synth)?;
    let zone = (!a.projected).then(|| ZoneConfig::new(a.central_meridian));
    d.write_to_dir(&a.out, zone.as_ref()).map_err(CliError::synth)?;
    println!(
        "synth: {} images, {} points written to {}",
        d.num_images(),
        d.true_points.len(),
        a.out.display()
    );
    Ok(())
}

pub fn convert_pos(a: &ConvertPosArgs) -> Result<()> {
    const STAGE: &str = "convert-pos";
    let records = load_pos(STAGE, &a.input, &a.zone)?;
    let body = write_pos_file(&records).map_err(|e| CliError::geo(STAGE, &a.output, e))?;
    write_file(STAGE, &a.output, body)?;
    println!("convert-pos: {} records written to {}", records.len(), a.output.display());
    Ok(())
}

pub fn detect(a: &DetectArgs) -> Result<()> {
    const STAGE: &str = "detect";
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.images)
        .map_err(|e| CliError::io(STAGE, &a.images, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    create_dir(STAGE, &a.out)?;
    for path in &paths {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let image = read_pgm(&read_bytes(STAGE, path)?).map_err(|e| CliError::feature(STAGE, path, e))?;
        let fs_ = detect_builtin(&id, &image, a.max_features).map_err(|e| CliError::feature(STAGE, path, e))?;
        let bytes = write_feature_file(&fs_).map_err(|e| CliError::feature(STAGE, path, e))?;
        write_file(STAGE, &a.out.join(format!("{id}.feat")), bytes)?;
    }
    println!("detect: {} feature files written to {}", paths.len(), a.out.display());
    Ok(())
}

fn propose(stage: &'static str, images: &Images, pos: &[PosRecord], pairs: &crate::PairArgs) -> Result<(Vec<PosRecord>, Vec<(usize, usize)>)> {
    let pos = order_pos(&images.ids, pos).map_err(|e| CliError::pipeline(stage, e))?;
    let proposed = propose_pairs(&pos, pairs.proposal()).map_err(|e| CliError::pipeline(stage, e))?;
    Ok((pos, proposed))
}

pub fn match_cmd(a: &MatchCmdArgs) -> Result<()> {
    const STAGE: &str = "match";
    let images = load_images(STAGE, &a.features)?;
    let pos = load_pos(STAGE, &a.pos, &a.zone)?;
    let (_, proposed) = propose(STAGE, &images, &pos, &a.pairs)?;
    let pairs = match_candidates(&images.features, &proposed, &match_config(&a.matching))
        .map_err(|e| CliError::pipeline(STAGE, e))?;
    write_file(STAGE, &a.out, matches_csv(&images.ids, &pairs))?;
    let total: usize = pairs.iter().map(|p| p.matches.len()).sum();
    println!("match: {} pairs, {total} matches", pairs.len());
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    const STAGE: &str = "sweep-ratio";
    let images = load_images(STAGE, &a.features)?;
    let find = |id: &str| {
        images.features.iter().find(|f| f.image_id == id).ok_or_else(|| {
            CliError::new(
                STAGE,
                Failure::Config,
                format!("no feature file for image `{id}` in {}", a.features.display()),
            )
        })
    };
    let (fa, fb) = (find(&a.image_a)?, find(&a.image_b)?);
    let truth = read_ground_truth(&a.truth, fa, fb).map_err(|e| CliError::pipeline(STAGE, e))?;
    let ratios = if a.ratios.is_empty() {
        default_ratio_grid()
    } else {
        a.ratios.clone()
    };
    let rows = sweep_ratio(fa, fb, &ratios, !a.no_cross_check, &truth, a.tolerance)
        .map_err(|e| CliError::matching(STAGE, e))?;
    write_file(STAGE, &a.out, write_sweep_csv(&rows))?;
    println!("sweep-ratio: {} ratios written to {}", rows.len(), a.out.display());
    Ok(())
}

fn verify_stage(
    stage: &'static str,
    images: &Images,
    pairs: &mut [PairMatches],
    camera: &CameraModel<f64>,
    ransac: &RansacConfig,
) -> Result<()> {
    ransac
        .validate()
        .map_err(|e| CliError::new(stage, Failure::Config, e.to_string()))?;
    verify_pairs(&images.keypoints, pairs, camera, ransac);
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> Result<()> {
    const STAGE: &str = "verify";
    let images = load_images(STAGE, &a.features)?;
    let camera = load_camera(STAGE, &a.camera)?;
    let mut pairs = read_matches_csv(&a.matches, &images.ids, false).map_err(|e| CliError::pipeline(STAGE, e))?;
    verify_stage(STAGE, &images, &mut pairs, &camera, &ransac_config(&a.ransac))?;
    write_file(STAGE, &a.out, verified_csv(&images.ids, &pairs))?;
    let total: usize = pairs.iter().map(|p| p.inliers.len()).sum();
    println!("verify: {total} inliers over {} pairs", pairs.len());
    Ok(())
}

fn write_reconstruction(stage: &'static str, dir: &Path, prefix: &str, recon: &Reconstruction) -> Result<()> {
    create_dir(stage, dir)?;
    ReconstructionFiles::in_dir(dir, prefix)
        .write(recon)
        .map_err(|e| CliError::pipeline(stage, e))
}

fn read_reconstruction(stage: &'static str, dir: &Path, prefix: &str, images: &Images, camera: CameraModel<f64>) -> Result<Reconstruction> {
    ReconstructionFiles::in_dir(dir, prefix)
        .read(images.ids.clone(), images.keypoints.clone(), camera)
        .map_err(|e| CliError::pipeline(stage, e))
}

fn reconstruct_stage(
    stage: &'static str,
    images: &Images,
    pairs: &[PairMatches],
    camera: &CameraModel<f64>,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<aerotri::SfmOutput> {
    let sfm = pipeline::reconstruct(images.ids.clone(), images.keypoints.clone(), pairs, camera, cfg)
        .map_err(|e| CliError::pipeline(stage, e))?;
    write_reconstruction(stage, out, SFM_PREFIX, &sfm.reconstruction)?;
    write_file(stage, &out.join("seed.csv"), seed_pair_csv(&images.ids, sfm.seed.images))?;
    println!(
        "reconstruct: {}/{} images registered, {} points, rms {:.4} px",
        sfm.reconstruction.num_registered(),
        sfm.reconstruction.num_images(),
        sfm.reconstruction.points.len(),
        sfm.reconstruction.rms_reprojection()
    );
    Ok(sfm)
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    const STAGE: &str = "reconstruct";
    let images = load_images(STAGE, &a.features)?;
    let camera = load_camera(STAGE, &a.camera)?;
    let pairs = read_matches_csv(&a.verified, &images.ids, true).map_err(|e| CliError::pipeline(STAGE, e))?;
    let cfg = pipeline_config(
        &a.sfm,
        &RansacArgs {
            threshold: RansacConfig::default().threshold,
            seed: a.seed,
        },
    );
    reconstruct_stage(STAGE, &images, &pairs, &camera, &cfg, &a.out)?;
    Ok(())
}

fn georef_stage(
    stage: &'static str,
    recon: &Reconstruction,
    pos: &[PosRecord],
    route: GeorefRoute,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<Reconstruction> {
    let georef = georeference(recon, pos, route, &cfg.sfm).map_err(|e| CliError::pipeline(stage, e))?;
    write_reconstruction(stage, out, "", &georef)?;
    println!("georef: {} route, rms {:.4} px", route.name(), georef.rms_reprojection());
    Ok(georef)
}

pub fn georef(a: &GeorefArgs) -> Result<()> {
    const STAGE: &str = "georef";
    let images = load_images(STAGE, &a.features)?;
    let camera = load_camera(STAGE, &a.camera)?;
    let pos = load_pos(STAGE, &a.pos, &a.zone)?;
    let pos = order_pos(&images.ids, &pos).map_err(|e| CliError::pipeline(STAGE, e))?;
    let recon = read_reconstruction(STAGE, &a.recon, SFM_PREFIX, &images, camera)?;
    georef_stage(STAGE, &recon, &pos, a.route.into(), &PipelineConfig::default(), &a.out)?;
    Ok(())
}

fn evaluate_stage(
    stage: &'static str,
    georef: &Reconstruction,
    pos: &[PosRecord],
    route: GeorefRoute,
    relative_orientation: Option<(f64, f64)>,
    checkpoint: Option<&CheckpointInput>,
    out: &Path,
) -> Result<()> {
    let report = evaluate_report(georef, pos, route, relative_orientation, checkpoint)
        .map_err(|e| CliError::pipeline(stage, e))?;
    write_file(stage, out, report.to_csv())?;
    let c = report.camera_position;
    println!(
        "evaluate: camera position rmse x {:.4} y {:.4} z {:.4} m, report at {}",
        c.x,
        c.y,
        c.z,
        out.display()
    );
    Ok(())
}

fn relative_orientation(
    stage: &'static str,
    images: &Images,
    pairs: &[PairMatches],
    seed: (usize, usize),
    camera: &CameraModel<f64>,
    ransac: &RansacConfig,
) -> Result<Option<(f64, f64)>> {
    let Some(pair) = pairs.iter().find(|p| p.pair == seed || p.pair == (seed.1, seed.0)) else {
        return Ok(None);
    };
    seed_relative_orientation(&images.keypoints, pair, camera, ransac)
        .map(Some)
        .map_err(|e| CliError::pipeline(stage, e))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    const STAGE: &str = "evaluate";
    let images = load_images(STAGE, &a.features)?;
    let camera = load_camera(STAGE, &a.camera)?;
    let pos = load_pos(STAGE, &a.pos, &a.zone)?;
    let pos = order_pos(&images.ids, &pos).map_err(|e| CliError::pipeline(STAGE, e))?;
    let georef = read_reconstruction(STAGE, &a.recon, "", &images, camera)?;
    let ro = match (&a.verified, &a.seed_pair) {
        (Some(verified), Some(seed)) => {
            let pairs = read_matches_csv(verified, &images.ids, true).map_err(|e| CliError::pipeline(STAGE, e))?;
            let seed = read_seed_pair(seed, &images.ids).map_err(|e| CliError::pipeline(STAGE, e))?;
            relative_orientation(STAGE, &images, &pairs, seed, &camera, &ransac_config(&a.ransac))?
        }
        _ => None,
    };
    let checkpoint = load_checkpoint(STAGE, &a.checkpoint)?;
    evaluate_stage(STAGE, &georef, &pos, a.route.into(), ro, checkpoint.as_ref(), &a.out)
}

pub fn run(a: &RunArgs) -> Result<()> {
    let cfg = pipeline_config(&a.sfm, &a.ransac);
    let images = load_images("load-features", &a.features)?;
    let camera = load_camera("load-camera", &a.camera)?;
    let checkpoint = load_checkpoint("load-checkpoint", &a.checkpoint)?;
    let pos = load_pos("convert-pos", &a.pos, &a.zone)?;
    create_dir("run", &a.out)?;
    write_file(
        "convert-pos",
        &a.out.join("pos_projected.csv"),
        write_pos_file(&pos).map_err(|e| CliError::geo("convert-pos", &a.pos, e))?,
    )?;

    let (pos, proposed) = propose("propose-pairs", &images, &pos, &a.pairs)?;
    let mut pairs = match_candidates(&images.features, &proposed, &match_config(&a.matching))
        .map_err(|e| CliError::pipeline("match", e))?;
    write_file("match", &a.out.join("matches.csv"), matches_csv(&images.ids, &pairs))?;

    verify_stage("verify", &images, &mut pairs, &camera, &cfg.verify_ransac)?;
    write_file("verify", &a.out.join("verified.csv"), verified_csv(&images.ids, &pairs))?;

    let sfm = reconstruct_stage("reconstruct", &images, &pairs, &camera, &cfg, &a.out)?;
    let route: GeorefRoute = a.route.into();
    let georef = georef_stage("georef", &sfm.reconstruction, &pos, route, &cfg, &a.out)?;

    let ro = relative_orientation("evaluate", &images, &pairs, sfm.seed.images, &camera, &cfg.verify_ransac)?;
    evaluate_stage(
        "evaluate",
        &georef,
        &pos,
        route,
        ro,
        checkpoint.as_ref(),
        &a.out.join("report.csv"),
    )
}
