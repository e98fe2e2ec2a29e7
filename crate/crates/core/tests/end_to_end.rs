use aerotri::georef_eval::{estimate_similarity, GeorefRoute};
use aerotri::pipeline::{
    match_pairs, propose_pairs, reconstruct, run_pipeline, CheckpointInput, PairProposal, PipelineConfig,
    PipelineInputs, PipelineOutput,
};
use aerotri::synth::{generate_scene, FlightConfig, NoiseConfig, SceneConfig, SynthDataset};
use nalgebra::Vector3;

fn inputs(d: &SynthDataset) -> PipelineInputs {
    PipelineInputs {
        features: d.feature_sets.clone(),
        pos: d.pos_records.clone(),
        camera: d.camera,
        checkpoint: Some(CheckpointInput {
            observations: d
                .checkpoint
                .observations
                .iter()
                .map(|(i, p)| (d.image_ids[*i].clone(), *p))
                .collect(),
            truth: d.checkpoint.position,
        }),
    }
}

fn run(d: &SynthDataset, route: GeorefRoute) -> PipelineOutput {
    let cfg = PipelineConfig {
        route,
        ..PipelineConfig::default()
    };
    run_pipeline(&inputs(d), &cfg).unwrap()
}

/// Per-axis RMSE of the georeferenced centres against `reference`.
fn centre_rmse(out: &PipelineOutput, reference: &[Vector3<f64>]) -> Vector3<f64> {
    let r = &out.georeferenced;
    let mut sq = Vector3::zeros();
    for i in r.registered() {
        let e = r.poses[i].unwrap().center - reference[i];
        sq += e.component_mul(&e);
    }
    (sq / r.num_registered() as f64).map(f64::sqrt)
}

fn pos_centres(d: &SynthDataset) -> Vec<Vector3<f64>> {
    d.pos_records
        .iter()
        .map(|r| {
            let p = r.projected().unwrap();
            Vector3::new(p.easting, p.northing, p.altitude)
        })
        .collect()
}

#[test]
fn block_of_24_with_position_priors() {
    let d = generate_scene(&FlightConfig::scene1(), &SceneConfig::default()).unwrap();
    let out = run(&d, GeorefRoute::Priors);
    let r = &out.report;
    assert_eq!(r.registered_images, 24);
    assert!(r.bundle_adjustment.0 <= 0.5, "rms {}", r.bundle_adjustment.0);
    let (h, v) = (d.scene.noise.gnss_horizontal_sigma, d.scene.noise.gnss_vertical_sigma);
    let c = r.camera_position;
    assert!(c.x <= 3.0 * h && c.y <= 3.0 * h && c.z <= 3.0 * v, "{c:?}");
    let truth: Vec<_> = d.true_poses.iter().map(|p| p.center).collect();
    let t = centre_rmse(&out, &truth);
    assert!(t.x <= 3.0 * h && t.y <= 3.0 * h && t.z <= 3.0 * v, "against truth {t:?}");

    let again = run(&d, GeorefRoute::Priors);
    assert_eq!(out.report.to_csv(), again.report.to_csv());
    assert_eq!(out.georeferenced.poses_csv(), again.georeferenced.poses_csv());
    assert_eq!(out.georeferenced.points_csv(), again.georeferenced.points_csv());
}

#[test]
fn alignment_route_reports_direct_centre_errors() {
    let d = generate_scene(&FlightConfig::scene1(), &SceneConfig::default()).unwrap();
    let out = run(&d, GeorefRoute::Align);
    let direct = centre_rmse(&out, &pos_centres(&d));
    let c = out.report.camera_position;
    assert!((c.x - direct.x).abs() < 1e-12 && (c.y - direct.y).abs() < 1e-12 && (c.z - direct.z).abs() < 1e-12);
    assert_eq!(out.report.registered_images, 24);
}

#[test]
fn noise_free_block_recovers_true_poses() {
    let scene = SceneConfig {
        noise: NoiseConfig::noise_free(),
        ..SceneConfig::default()
    };
    let d = generate_scene(&FlightConfig::scene1(), &scene).unwrap();
    let cfg = PipelineConfig::default();
    let proposed = propose_pairs(&d.pos_records, PairProposal::default()).unwrap();
    let pairs = match_pairs(&d.feature_sets, &d.keypoints, &proposed, &cfg.matching, &d.camera, &cfg.verify_ransac).unwrap();
    let out = reconstruct(d.image_ids.clone(), d.keypoints.clone(), &pairs, &d.camera, &cfg).unwrap();
    let r = &out.reconstruction;
    assert_eq!(r.num_registered(), 24);
    let src: Vec<_> = (0..24).map(|i| r.poses[i].unwrap().center).collect();
    let dst: Vec<_> = d.true_poses.iter().map(|p| p.center).collect();
    let t = estimate_similarity(&src, &dst).unwrap();
    for i in 0..24 {
        let p = t.apply_pose(&r.poses[i].unwrap());
        assert!((p.center - dst[i]).norm() < 1e-6, "image {i}: {}", (p.center - dst[i]).norm());
        assert!(p.rotation.angle_to(&d.true_poses[i].rotation) < 1e-8);
    }
}

#[test]
fn two_strip_scene_with_checkpoint() {
    let d = generate_scene(&FlightConfig::scene2(), &SceneConfig::default()).unwrap();
    let out = run(&d, GeorefRoute::Priors);
    assert_eq!(out.report.registered_images, 6);
    let cp = out.report.checkpoint.unwrap();
    assert!(cp.xyz < 0.5, "{cp:?}");
}
