//! End-to-end orchestration: POS-proximity pair proposal, parallel matching
//! and verification, incremental reconstruction, georeferencing and
//! evaluation, plus the CSV formats exchanged between stages.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector2, Vector3, Quaternion};
use rayon::prelude::*;
use thiserror::Error;

use crate::features::{read_feature_file, FeatureError, FeatureSet};
use crate::geo::PosRecord;
use crate::georef_eval::{
    camera_position_errors, checkpoint_error, georeference_align, georeference_priors, relative_orientation_report,
    EvaluationReport, GeorefError, GeorefRoute,
};
use crate::geometry::{CameraModel, Pose, RansacConfig};
use crate::matching::{match_features, GroundTruth, Match, MatchConfig, MatchError};
use crate::sfm::{
    build_scene_graph, incremental_reconstruct, verify_matches, Reconstruction, ScenePoint, SfmConfig, SfmError,
    SfmOutput,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("need at least 2 images, got {0}")]
    TooFewImages(usize),
    #[error("POS record for image {0} is not in projected coordinates")]
    NotProjected(String),
    #[error("no POS record for image {0}")]
    MissingPos(String),
    #[error("{path}: descriptor dimension {got} differs from {expected}")]
    DescriptorMismatch { path: String, expected: usize, got: usize },
    #[error("{path}: {source}")]
    Feature { path: String, source: FeatureError },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Matching(#[from] MatchError),
    #[error(transparent)]
    Sfm(#[from] SfmError),
    #[error(transparent)]
    Georef(#[from] GeorefError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> PipelineError {
    PipelineError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// How candidate pairs are proposed from POS positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairProposal {
    /// Each image paired with its `k` horizontally nearest neighbours.
    Nearest(usize),
    /// All pairs within this horizontal distance, metres.
    Radius(f64),
    /// Radius of 1.5 times the spacing estimated from the POS positions.
    AutoRadius,
}

impl Default for PairProposal {
    fn default() -> Self {
        PairProposal::Nearest(8)
    }
}

fn horizontal_positions(pos: &[PosRecord]) -> Result<Vec<Vector2<f64>>, PipelineError> {
    pos.iter()
        .map(|r| {
            r.projected()
                .map(|p| Vector2::new(p.easting, p.northing))
                .ok_or_else(|| PipelineError::NotProjected(r.image_id.clone()))
        })
        .collect()
}

/// Median nearest-neighbour horizontal distance of the POS positions.
pub fn estimate_spacing(pos: &[PosRecord]) -> Result<f64, PipelineError> {
    let xy = horizontal_positions(pos)?;
    if xy.len() < 2 {
        return Err(PipelineError::TooFewImages(xy.len()));
    }
    let mut nearest: Vec<f64> = xy
        .iter()
        .enumerate()
        .map(|(i, p)| {
            xy.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nearest.sort_by(f64::total_cmp);
    Ok(nearest[nearest.len() / 2])
}

/// Candidate pairs `(i, j)` with `i < j`, indices into `pos`, sorted and
/// deduplicated.
pub fn propose_pairs(pos: &[PosRecord], proposal: PairProposal) -> Result<Vec<(usize, usize)>, PipelineError> {
    let xy = horizontal_positions(pos)?;
    let n = xy.len();
    if n < 2 {
        return Err(PipelineError::TooFewImages(n));
    }
    let mut pairs = BTreeSet::new();
    match proposal {
        PairProposal::Nearest(k) => {
            for i in 0..n {
                let mut others: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| ((xy[i] - xy[j]).norm(), j)).collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, j) in others.iter().take(k) {
                    pairs.insert((i.min(j), i.max(j)));
                }
            }
        }
        PairProposal::Radius(_) | PairProposal::AutoRadius => {
            let radius = match proposal {
                PairProposal::Radius(r) => r,
                _ => 1.5 * estimate_spacing(pos)?,
            };
            for i in 0..n {
                for j in i + 1..n {
                    if (xy[i] - xy[j]).norm() <= radius {
                        pairs.insert((i, j));
                    }
                }
            }
        }
    }
    Ok(pairs.into_iter().collect())
}

/// Matches and verified inliers of one image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatches {
    pub pair: (usize, usize),
    /// Matches as `(index_a, index_b, distance)`.
    pub matches: Vec<(usize, usize, f32)>,
    /// Geometrically verified matches as `(index_a, index_b)`.
    pub inliers: Vec<(usize, usize)>,
}

pub fn keypoints_f64(fs: &FeatureSet) -> Vec<Vector2<f64>> {
    fs.keypoints().iter().map(|k| Vector2::new(k.x as f64, k.y as f64)).collect()
}

/// Ratio-test matches of every pair, computed in parallel. Output order
/// follows `pairs`; inlier lists are left empty.
pub fn match_candidates(
    features: &[FeatureSet],
    pairs: &[(usize, usize)],
    match_cfg: &MatchConfig,
) -> Result<Vec<PairMatches>, PipelineError> {
    pairs
        .par_iter()
        .map(|&(a, b)| {
            let matches = match match_features(&features[a], &features[b], match_cfg) {
                Ok(m) => m,
                Err(MatchError::TooFewDescriptors(_)) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            Ok(PairMatches {
                pair: (a, b),
                matches: matches.iter().map(|m| (m.index_a, m.index_b, m.distance)).collect(),
                inliers: Vec::new(),
            })
        })
        .collect()
}

/// Fills the inlier list of every pair in parallel. Pairs whose
/// verification fails keep an empty inlier list.
pub fn verify_pairs(
    keypoints: &[Vec<Vector2<f64>>],
    pairs: &mut [PairMatches],
    cam: &CameraModel<f64>,
    ransac: &RansacConfig,
) {
    pairs.par_iter_mut().for_each(|p| {
        let (a, b) = p.pair;
        let matches: Vec<Match> = p
            .matches
            .iter()
            .map(|&(index_a, index_b, distance)| Match {
                index_a,
                index_b,
                distance,
            })
            .collect();
        p.inliers = verify_matches(&keypoints[a], &keypoints[b], &matches, cam, ransac).unwrap_or_default();
    });
}

/// Matches and verifies every pair. Output order follows `pairs`.
pub fn match_pairs(
    features: &[FeatureSet],
    keypoints: &[Vec<Vector2<f64>>],
    pairs: &[(usize, usize)],
    match_cfg: &MatchConfig,
    cam: &CameraModel<f64>,
    ransac: &RansacConfig,
) -> Result<Vec<PairMatches>, PipelineError> {
    let mut out = match_candidates(features, pairs, match_cfg)?;
    verify_pairs(keypoints, &mut out, cam, ransac);
    Ok(out)
}

/// Settings of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub proposal: PairProposal,
    pub matching: MatchConfig,
    /// Verification of pairwise matches; threshold in pixels.
    pub verify_ransac: RansacConfig,
    /// Verified pairs with fewer inliers are left out of the scene graph.
    pub min_pair_inliers: usize,
    pub sfm: SfmConfig,
    pub route: GeorefRoute,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            proposal: PairProposal::default(),
            matching: MatchConfig::default(),
            verify_ransac: RansacConfig::default(),
            min_pair_inliers: 15,
            sfm: SfmConfig::default(),
            route: GeorefRoute::Priors,
        }
    }
}

impl PipelineConfig {
    /// Uses `seed` for every randomised stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.verify_ransac.seed = seed;
        self.sfm.seed_ransac.seed = seed;
        self.sfm.pnp_ransac.seed = seed;
        self
    }
}

/// A known ground point with its image observations.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInput {
    pub observations: Vec<(String, Vector2<f64>)>,
    pub truth: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInputs {
    pub features: Vec<FeatureSet>,
    /// Projected POS records, one per image.
    pub pos: Vec<PosRecord>,
    pub camera: CameraModel<f64>,
    pub checkpoint: Option<CheckpointInput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub pairs: Vec<PairMatches>,
    pub sfm: SfmOutput<f64>,
    pub georeferenced: Reconstruction<f64>,
    pub report: EvaluationReport,
}

/// Checks that all feature sets share one descriptor dimension.
pub fn check_descriptor_dims(features: &[FeatureSet]) -> Result<(), PipelineError> {
    let Some(first) = features.first() else { return Ok(()) };
    for fs in features {
        if fs.descriptor_dim() != first.descriptor_dim() {
            return Err(PipelineError::DescriptorMismatch {
                path: fs.image_id.clone(),
                expected: first.descriptor_dim(),
                got: fs.descriptor_dim(),
            });
        }
    }
    Ok(())
}

/// POS records reordered to follow `image_ids`.
pub fn order_pos(image_ids: &[String], pos: &[PosRecord]) -> Result<Vec<PosRecord>, PipelineError> {
    let by_id: HashMap<&str, &PosRecord> = pos.iter().map(|r| (r.image_id.as_str(), r)).collect();
    image_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| PipelineError::MissingPos(id.clone()))
        })
        .collect()
}

/// Reconstruction from verified pairs, the seed pair's relative orientation
/// report and the reconstruction itself.
pub fn reconstruct(
    image_ids: Vec<String>,
    keypoints: Vec<Vec<Vector2<f64>>>,
    pairs: &[PairMatches],
    cam: &CameraModel<f64>,
    cfg: &PipelineConfig,
) -> Result<SfmOutput<f64>, PipelineError> {
    let verified = pairs
        .iter()
        .filter(|p| p.inliers.len() >= cfg.min_pair_inliers)
        .map(|p| (p.pair, p.inliers.clone()));
    let (graph, tracks) = build_scene_graph(image_ids, keypoints, verified);
    Ok(incremental_reconstruct(&graph, &tracks, cam, &cfg.sfm)?)
}

/// Mean and RMS reprojection error of the relative orientation of a pair.
pub fn seed_relative_orientation(
    keypoints: &[Vec<Vector2<f64>>],
    pair: &PairMatches,
    cam: &CameraModel<f64>,
    ransac: &RansacConfig,
) -> Result<(f64, f64), PipelineError> {
    let (a, b) = pair.pair;
    let pa: Vec<_> = pair.inliers.iter().map(|&(i, _)| keypoints[a][i]).collect();
    let pb: Vec<_> = pair.inliers.iter().map(|&(_, j)| keypoints[b][j]).collect();
    let r = relative_orientation_report(&pa, &pb, cam, ransac)?;
    Ok((r.mean_px, r.rms_px))
}

/// Ties a free-network reconstruction to the POS positions by `route`.
pub fn georeference(
    recon: &Reconstruction<f64>,
    pos: &[PosRecord],
    route: GeorefRoute,
    cfg: &SfmConfig,
) -> Result<Reconstruction<f64>, PipelineError> {
    Ok(match route {
        GeorefRoute::Align => georeference_align(recon, pos)?.0,
        GeorefRoute::Priors => georeference_priors(recon, pos, &cfg.solver, cfg.loss)?.0,
    })
}

/// Georeferences a reconstruction by `route` and evaluates it.
pub fn georeference_and_evaluate(
    sfm: &SfmOutput<f64>,
    pos: &[PosRecord],
    route: GeorefRoute,
    cfg: &SfmConfig,
    relative_orientation: Option<(f64, f64)>,
    checkpoint: Option<&CheckpointInput>,
) -> Result<(Reconstruction<f64>, EvaluationReport), PipelineError> {
    let georef = georeference(&sfm.reconstruction, pos, route, cfg)?;
    let report = evaluate(&georef, pos, route, relative_orientation, checkpoint)?;
    Ok((georef, report))
}

/// Accuracy report of a georeferenced reconstruction.
pub fn evaluate(
    georef: &Reconstruction<f64>,
    pos: &[PosRecord],
    route: GeorefRoute,
    relative_orientation: Option<(f64, f64)>,
    checkpoint: Option<&CheckpointInput>,
) -> Result<EvaluationReport, PipelineError> {
    let checkpoint = checkpoint
        .map(|c| checkpoint_error(georef, &c.observations, &c.truth))
        .transpose()?;
    Ok(EvaluationReport {
        route,
        relative_orientation,
        bundle_adjustment: (georef.rms_reprojection(), georef.mean_reprojection()),
        registered_images: georef.num_registered(),
        total_images: georef.num_images(),
        points: georef.points.len(),
        camera_position: camera_position_errors(georef, pos)?,
        checkpoint,
    })
}

/// Runs every stage on in-memory inputs.
pub fn run_pipeline(inputs: &PipelineInputs, cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    check_descriptor_dims(&inputs.features)?;
    let ids: Vec<String> = inputs.features.iter().map(|f| f.image_id.clone()).collect();
    let pos = order_pos(&ids, &inputs.pos)?;
    let keypoints: Vec<_> = inputs.features.iter().map(keypoints_f64).collect();
    let proposed = propose_pairs(&pos, cfg.proposal)?;
    let pairs = match_pairs(&inputs.features, &keypoints, &proposed, &cfg.matching, &inputs.camera, &cfg.verify_ransac)?;
    let sfm = reconstruct(ids, keypoints.clone(), &pairs, &inputs.camera, cfg)?;
    let ro = pairs
        .iter()
        .find(|p| p.pair == sfm.seed.images)
        .map(|p| seed_relative_orientation(&keypoints, p, &inputs.camera, &cfg.verify_ransac))
        .transpose()?;
    let (georeferenced, report) =
        georeference_and_evaluate(&sfm, &pos, cfg.route, &cfg.sfm, ro, inputs.checkpoint.as_ref())?;
    Ok(PipelineOutput {
        pairs,
        sfm,
        georeferenced,
        report,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(io_err(path))
}

fn records(path: &Path, expected: &[&str]) -> Result<Vec<csv::StringRecord>, PipelineError> {
    let bytes = read(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let header = reader.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(format_err(path, format!("expected header `{}`", expected.join(","))));
    }
    reader
        .records()
        .map(|r| r.map_err(|e| format_err(path, e.to_string())))
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T, PipelineError> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    rec.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_err(path, format!("line {line}: bad field {}", i + 1)))
}

/// Reads every `*.feat` file of a directory, sorted by file name; the image
/// id is the file stem.
pub fn load_feature_dir(dir: &Path) -> Result<Vec<FeatureSet>, PipelineError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "feat"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in &paths {
        let id = path.file_stem().unwrap().to_string_lossy().into_owned();
        let fs_ = read_feature_file(&id, &read(path)?).map_err(|source| PipelineError::Feature {
            path: path.display().to_string(),
            source,
        })?;
        if let Some(first) = out.first() {
            let first: &FeatureSet = first;
            if fs_.descriptor_dim() != first.descriptor_dim() {
                return Err(PipelineError::DescriptorMismatch {
                    path: path.display().to_string(),
                    expected: first.descriptor_dim(),
                    got: fs_.descriptor_dim(),
                });
            }
        }
        out.push(fs_);
    }
    Ok(out)
}

/// `fx,fy,cx,cy,k1,k2`.
pub fn read_camera_csv(path: &Path) -> Result<CameraModel<f64>, PipelineError> {
    let rows = records(path, &["fx", "fy", "cx", "cy", "k1", "k2"])?;
    let [row] = rows.as_slice() else {
        return Err(format_err(path, "expected exactly one camera row"));
    };
    let v = |i| field::<f64>(path, row, i);
    Ok(CameraModel {
        fx: v(0)?,
        fy: v(1)?,
        cx: v(2)?,
        cy: v(3)?,
        k1: v(4)?,
        k2: v(5)?,
    })
}

pub fn camera_csv(c: &CameraModel<f64>) -> String {
    format!("fx,fy,cx,cy,k1,k2\n{},{},{},{},{},{}\n", c.fx, c.fy, c.cx, c.cy, c.k1, c.k2)
}

/// Checkpoint observations `image_id,x,y` and truth `x,y,z`.
pub fn read_checkpoint(observations: &Path, truth: &Path) -> Result<CheckpointInput, PipelineError> {
    let obs = records(observations, &["image_id", "x", "y"])?
        .iter()
        .map(|r| Ok((r[0].to_string(), Vector2::new(field(observations, r, 1)?, field(observations, r, 2)?))))
        .collect::<Result<_, PipelineError>>()?;
    let rows = records(truth, &["x", "y", "z"])?;
    let [row] = rows.as_slice() else {
        return Err(format_err(truth, "expected exactly one truth row"));
    };
    Ok(CheckpointInput {
        observations: obs,
        truth: Vector3::new(field(truth, row, 0)?, field(truth, row, 1)?, field(truth, row, 2)?),
    })
}

const MATCH_HEADER: [&str; 5] = ["image_a", "image_b", "index_a", "index_b", "distance"];
const VERIFIED_HEADER: [&str; 4] = ["image_a", "image_b", "index_a", "index_b"];

/// Raw matches `image_a,image_b,index_a,index_b,distance`.
pub fn matches_csv(image_ids: &[String], pairs: &[PairMatches]) -> String {
    let mut out = MATCH_HEADER.join(",") + "\n";
    for p in pairs {
        for &(a, b, d) in &p.matches {
            let _ = writeln!(out, "{},{},{a},{b},{d:.6}", image_ids[p.pair.0], image_ids[p.pair.1]);
        }
    }
    out
}

/// Verified inliers `image_a,image_b,index_a,index_b`.
pub fn verified_csv(image_ids: &[String], pairs: &[PairMatches]) -> String {
    let mut out = VERIFIED_HEADER.join(",") + "\n";
    for p in pairs {
        for &(a, b) in &p.inliers {
            let _ = writeln!(out, "{},{},{a},{b}", image_ids[p.pair.0], image_ids[p.pair.1]);
        }
    }
    out
}

fn image_lookup(image_ids: &[String]) -> HashMap<&str, usize> {
    image_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
}

fn image_of(path: &Path, lookup: &HashMap<&str, usize>, id: &str) -> Result<usize, PipelineError> {
    lookup
        .get(id)
        .copied()
        .ok_or_else(|| format_err(path, format!("unknown image `{id}`")))
}

/// Reads a matches file (raw or verified). Raw matches fill `matches`;
/// verified ones fill `inliers`. Pairs are returned in file order.
pub fn read_matches_csv(path: &Path, image_ids: &[String], verified: bool) -> Result<Vec<PairMatches>, PipelineError> {
    let header: &[&str] = if verified { &VERIFIED_HEADER } else { &MATCH_HEADER };
    let lookup = image_lookup(image_ids);
    let mut pairs: BTreeMap<(usize, usize), PairMatches> = BTreeMap::new();
    let mut order = Vec::new();
    for r in records(path, header)? {
        let (a, b) = (image_of(path, &lookup, &r[0])?, image_of(path, &lookup, &r[1])?);
        let (ia, ib): (usize, usize) = (field(path, &r, 2)?, field(path, &r, 3)?);
        let entry = pairs.entry((a, b)).or_insert_with(|| {
            order.push((a, b));
            PairMatches {
                pair: (a, b),
                matches: Vec::new(),
                inliers: Vec::new(),
            }
        });
        if verified {
            entry.inliers.push((ia, ib));
        } else {
            entry.matches.push((ia, ib, field(path, &r, 4)?));
        }
    }
    Ok(order.into_iter().map(|k| pairs.remove(&k).unwrap()).collect())
}

/// The seed pair as `image_a,image_b`.
pub fn seed_pair_csv(image_ids: &[String], pair: (usize, usize)) -> String {
    format!("image_a,image_b\n{},{}\n", image_ids[pair.0], image_ids[pair.1])
}

pub fn read_seed_pair(path: &Path, image_ids: &[String]) -> Result<(usize, usize), PipelineError> {
    let rows = records(path, &["image_a", "image_b"])?;
    let [row] = rows.as_slice() else {
        return Err(format_err(path, "expected exactly one pair"));
    };
    let lookup = image_lookup(image_ids);
    Ok((image_of(path, &lookup, &row[0])?, image_of(path, &lookup, &row[1])?))
}

/// Expected location in `b` of every keypoint of `a`, from truth
/// observations `image_id,keypoint_index,point_id`.
pub fn read_ground_truth(path: &Path, a: &FeatureSet, b: &FeatureSet) -> Result<GroundTruth, PipelineError> {
    let mut point_of_a: HashMap<usize, usize> = HashMap::new();
    let mut in_b: HashMap<usize, usize> = HashMap::new();
    for r in records(path, &["image_id", "keypoint_index", "point_id"])? {
        let (k, point): (usize, usize) = (field(path, &r, 1)?, field(path, &r, 2)?);
        let (target, len) = match &r[0] {
            id if id == a.image_id => (&mut point_of_a, a.len()),
            id if id == b.image_id => (&mut in_b, b.len()),
            _ => continue,
        };
        if k >= len {
            return Err(format_err(path, format!("keypoint {k} out of range for image {}", &r[0])));
        }
        if target.insert(k, point).is_some() {
            return Err(format_err(path, format!("keypoint {k} of image {} listed twice", &r[0])));
        }
    }
    let kp_of_point: HashMap<usize, usize> = in_b.into_iter().map(|(k, p)| (p, k)).collect();
    let expected_in_b = (0..a.len())
        .map(|k| {
            let kb = kp_of_point.get(point_of_a.get(&k)?)?;
            let kp = b.keypoints()[*kb];
            Some([kp.x as f64, kp.y as f64])
        })
        .collect();
    Ok(GroundTruth { expected_in_b })
}

/// Observations of the reconstructed points: `track_id,image_id,keypoint_index`.
pub fn observations_csv(recon: &Reconstruction<f64>) -> String {
    let mut out = String::from("track_id,image_id,keypoint_index\n");
    for (t, p) in &recon.points {
        for &(i, k) in &p.observations {
            let _ = writeln!(out, "{t},{},{k}", recon.image_ids[i]);
        }
    }
    out
}

/// Files describing a reconstruction on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionFiles {
    pub poses: PathBuf,
    pub points: PathBuf,
    pub observations: PathBuf,
}

impl ReconstructionFiles {
    pub fn in_dir(dir: &Path, prefix: &str) -> Self {
        Self {
            poses: dir.join(format!("{prefix}poses.csv")),
            points: dir.join(format!("{prefix}points.csv")),
            observations: dir.join(format!("{prefix}observations.csv")),
        }
    }

    pub fn write(&self, recon: &Reconstruction<f64>) -> Result<(), PipelineError> {
        for (path, body) in [
            (&self.poses, recon.poses_csv()),
            (&self.points, recon.points_csv()),
            (&self.observations, observations_csv(recon)),
        ] {
            fs::write(path, body).map_err(io_err(path))?;
        }
        Ok(())
    }

    /// Rebuilds a reconstruction over the given images and keypoints.
    pub fn read(
        &self,
        image_ids: Vec<String>,
        keypoints: Vec<Vec<Vector2<f64>>>,
        camera: CameraModel<f64>,
    ) -> Result<Reconstruction<f64>, PipelineError> {
        let mut recon = Reconstruction::new(image_ids, keypoints, camera);
        let ids = recon.image_ids.clone();
        let lookup = image_lookup(&ids);
        let path = &self.poses;
        for r in records(path, &["image_id", "qw", "qx", "qy", "qz", "cx", "cy", "cz"])? {
            let i = image_of(path, &lookup, &r[0])?;
            let v = |k| field::<f64>(path, &r, k);
            let q = UnitQuaternion::from_quaternion(Quaternion::new(v(1)?, v(2)?, v(3)?, v(4)?));
            recon.poses[i] = Some(Pose::new(q, Vector3::new(v(5)?, v(6)?, v(7)?)));
        }
        let path = &self.points;
        for r in records(path, &["track_id", "x", "y", "z", "n_obs", "rms_px"])? {
            let t: usize = field(path, &r, 0)?;
            let x = Vector3::new(field(path, &r, 1)?, field(path, &r, 2)?, field(path, &r, 3)?);
            recon.points.insert(
                t,
                ScenePoint {
                    position: x,
                    observations: Vec::new(),
                },
            );
        }
        let path = &self.observations;
        for r in records(path, &["track_id", "image_id", "keypoint_index"])? {
            let t: usize = field(path, &r, 0)?;
            let i = image_of(path, &lookup, &r[1])?;
            let k: usize = field(path, &r, 2)?;
            if k >= recon.keypoints[i].len() {
                return Err(format_err(path, format!("keypoint {k} out of range for image {}", ids[i])));
            }
            recon
                .points
                .get_mut(&t)
                .ok_or_else(|| format_err(path, format!("unknown track {t}")))?
                .observations
                .push((i, k));
        }
        Ok(recon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Position, ProjectedCoord};

    fn record(id: &str, e: f64, n: f64) -> PosRecord {
        PosRecord {
            image_id: id.into(),
            position: Position::Projected(ProjectedCoord {
                easting: e,
                northing: n,
                altitude: 100.0,
            }),
            horizontal_sigma: 0.01,
            vertical_sigma: 0.03,
        }
    }

    #[test]
    fn radius_proposal() {
        let pos = [record("a", 0.0, 0.0), record("b", 10.0, 0.0)];
        assert_eq!(propose_pairs(&pos, PairProposal::Radius(20.0)).unwrap(), vec![(0, 1)]);
        assert!(propose_pairs(&pos, PairProposal::Radius(5.0)).unwrap().is_empty());
        assert!(matches!(
            propose_pairs(&pos[..1], PairProposal::Nearest(8)),
            Err(PipelineError::TooFewImages(1))
        ));
    }

    #[test]
    fn nearest_proposal_is_symmetric() {
        let pos: Vec<_> = (0..6).map(|i| record(&i.to_string(), 10.0 * i as f64, 0.0)).collect();
        let pairs = propose_pairs(&pos, PairProposal::Nearest(1)).unwrap();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        let auto = propose_pairs(&pos, PairProposal::AutoRadius).unwrap();
        assert_eq!(auto, pairs);
    }

    #[test]
    fn missing_pos_is_named() {
        let ids = vec!["a".to_string(), "c".to_string()];
        let pos = [record("a", 0.0, 0.0), record("b", 1.0, 0.0)];
        assert!(matches!(order_pos(&ids, &pos), Err(PipelineError::MissingPos(id)) if id == "c"));
    }
}
