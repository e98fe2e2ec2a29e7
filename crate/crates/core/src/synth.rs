//! Synthetic aerial survey: a regular nadir flight plan over a smooth
//! terrain, with exact ground truth for every stage.
//!
//! The world frame is the projected (Gauss-Krüger) frame: x = easting,
//! y = northing, z = altitude.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::features::{write_feature_file, FeatureError, FeatureSet, Keypoint};
use crate::geo::{
    gauss_kruger_to_geodetic, write_pos_file, Ellipsoid, GeoError, PosRecord, Position, ProjectedCoord,
    ZoneConfig,
};
use crate::geometry::{project, CameraModel, Pose};
use crate::matching::GroundTruth;

const MAX_RESAMPLES: usize = 100;
const VISIBILITY_MARGIN: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not place a point visible in two images after {0} attempts")]
    NoVisibility(usize),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightConfig {
    pub heading_overlap: f64,
    pub side_overlap: f64,
    /// Ground sample distance, metres per pixel.
    pub gsd: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub focal_px: f64,
    pub k1: f64,
    pub k2: f64,
    pub strips: usize,
    pub images_per_strip: usize,
    /// South-west corner of the first footprint: easting, northing and the
    /// mean terrain altitude.
    pub origin: Vector3<f64>,
}

impl Default for FlightConfig {
    fn default() -> Self {
        Self::scene1()
    }
}

impl FlightConfig {
    /// 4 strips of 6 images.
    pub fn scene1() -> Self {
        Self {
            heading_overlap: 0.8,
            side_overlap: 0.6,
            gsd: 0.2,
            image_width: 1000,
            image_height: 750,
            focal_px: 1000.0,
            k1: 0.0,
            k2: 0.0,
            strips: 4,
            images_per_strip: 6,
            origin: Vector3::new(650_000.0, 3_272_000.0, 300.0),
        }
    }

    /// 2 strips of 3 images.
    pub fn scene2() -> Self {
        Self {
            strips: 2,
            images_per_strip: 3,
            ..Self::scene1()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        if !(0.0..=0.95).contains(&self.heading_overlap) || !(0.0..=0.95).contains(&self.side_overlap) {
            return bad("overlaps must lie in [0, 0.95]");
        }
        if !(self.gsd > 0.0 && self.focal_px > 0.0) {
            return bad("gsd and focal length must be positive");
        }
        if self.image_width < 32 || self.image_height < 32 {
            return bad("images must be at least 32x32");
        }
        if self.strips == 0 || self.images_per_strip == 0 {
            return bad("need at least one strip and one image per strip");
        }
        Ok(())
    }

    /// Flying height above the mean terrain: `gsd * focal`.
    pub fn flying_height(&self) -> f64 {
        self.gsd * self.focal_px
    }

    /// Ground footprint `(along-track, cross-track)` in metres. The flight
    /// runs along easting with the image x axis.
    pub fn footprint(&self) -> (f64, f64) {
        (self.image_width as f64 * self.gsd, self.image_height as f64 * self.gsd)
    }

    /// Camera spacing `(along-track, cross-track)` in metres.
    pub fn spacing(&self) -> (f64, f64) {
        let (l, w) = self.footprint();
        ((1.0 - self.heading_overlap) * l, (1.0 - self.side_overlap) * w)
    }

    pub fn camera(&self) -> CameraModel<f64> {
        CameraModel {
            fx: self.focal_px,
            fy: self.focal_px,
            cx: self.image_width as f64 / 2.0,
            cy: self.image_height as f64 / 2.0,
            k1: self.k1,
            k2: self.k2,
        }
    }

    pub fn image_count(&self) -> usize {
        self.strips * self.images_per_strip
    }

    /// Ground bounding box `(min, max)` covered by all footprints.
    pub fn block_extent(&self) -> (Vector2<f64>, Vector2<f64>) {
        let (l, w) = self.footprint();
        let (dx, dy) = self.spacing();
        let min = self.origin.xy();
        let max = min
            + Vector2::new(
                l + dx * (self.images_per_strip - 1) as f64,
                w + dy * (self.strips - 1) as f64,
            );
        (min, max)
    }
}

/// World-to-camera rotation of a nadir camera: image x along easting,
/// image y along southing, optical axis down.
pub fn nadir_rotation() -> UnitQuaternion<f64> {
    UnitQuaternion::from_matrix(&Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0))
}

/// Nadir poses on a regular grid, strip by strip.
pub fn generate_flight_plan(cfg: &FlightConfig) -> Vec<Pose<f64>> {
    let (l, w) = cfg.footprint();
    let (dx, dy) = cfg.spacing();
    let z = cfg.origin.z + cfg.flying_height();
    let mut poses = Vec::with_capacity(cfg.image_count());
    for s in 0..cfg.strips {
        for i in 0..cfg.images_per_strip {
            let c = Vector3::new(
                cfg.origin.x + l / 2.0 + dx * i as f64,
                cfg.origin.y + w / 2.0 + dy * s as f64,
                z,
            );
            poses.push(Pose::new(nadir_rotation(), c));
        }
    }
    poses
}

/// Sinusoidal height field around the origin altitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terrain {
    pub amplitude: f64,
    pub wavelength_x: f64,
    pub wavelength_y: f64,
}

impl Default for Terrain {
    fn default() -> Self {
        Self {
            amplitude: 10.0,
            wavelength_x: 170.0,
            wavelength_y: 130.0,
        }
    }
}

impl Terrain {
    /// Height relative to the mean altitude.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        self.amplitude * (tau * x / self.wavelength_x).sin() * (tau * y / self.wavelength_y).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Gaussian keypoint noise, pixels.
    pub keypoint_sigma: f64,
    /// GNSS horizontal and vertical noise, metres.
    pub gnss_horizontal_sigma: f64,
    pub gnss_vertical_sigma: f64,
    /// Per-component Gaussian descriptor noise before renormalisation.
    pub descriptor_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            keypoint_sigma: 0.3,
            gnss_horizontal_sigma: crate::geo::DEFAULT_HORIZONTAL_SIGMA,
            gnss_vertical_sigma: crate::geo::DEFAULT_VERTICAL_SIGMA,
            descriptor_sigma: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn noise_free() -> Self {
        Self {
            keypoint_sigma: 0.0,
            gnss_horizontal_sigma: 0.0,
            gnss_vertical_sigma: 0.0,
            descriptor_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub n_points: usize,
    pub terrain: Terrain,
    pub noise: NoiseConfig,
    pub descriptor_dim: usize,
    /// Minimum angle between the descriptors of two scene points.
    pub min_descriptor_angle_deg: f64,
    /// Extra unmatched keypoints per image, as a fraction of its visible
    /// scene points.
    pub clutter_fraction: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_points: 2000,
            terrain: Terrain::default(),
            noise: NoiseConfig::default(),
            descriptor_dim: 128,
            min_descriptor_angle_deg: 60.0,
            clutter_fraction: 0.1,
            seed: 42,
        }
    }
}

/// A known ground point and its (noisy) image observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub position: Vector3<f64>,
    pub observations: Vec<(usize, Vector2<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub flight: FlightConfig,
    pub scene: SceneConfig,
    pub image_ids: Vec<String>,
    pub camera: CameraModel<f64>,
    pub true_poses: Vec<Pose<f64>>,
    pub true_points: Vec<Vector3<f64>>,
    pub feature_sets: Vec<FeatureSet>,
    /// Keypoint positions in double precision (the FEAT files hold f32).
    pub keypoints: Vec<Vec<Vector2<f64>>>,
    /// Truth label of every keypoint; `None` for clutter.
    pub keypoint_points: Vec<Vec<Option<usize>>>,
    /// Projected-coordinate POS records with GNSS noise.
    pub pos_records: Vec<PosRecord>,
    pub checkpoint: Checkpoint,
}

fn in_frame(p: &Vector2<f64>, w: u32, h: u32) -> bool {
    p.x >= VISIBILITY_MARGIN
        && p.y >= VISIBILITY_MARGIN
        && p.x <= w as f64 - VISIBILITY_MARGIN
        && p.y <= h as f64 - VISIBILITY_MARGIN
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit descriptors with a minimum pairwise angle.
fn separated_descriptors(rng: &mut ChaCha8Rng, n: usize, dim: usize, min_angle_deg: f64) -> Result<Vec<Vec<f64>>, SynthError> {
    let max_cos = min_angle_deg.to_radians().cos();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut placed = false;
        for _ in 0..MAX_RESAMPLES {
            let v = random_unit(rng, dim);
            let ok = out
                .iter()
                .all(|u| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < max_cos);
            if ok {
                out.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::InvalidConfig(format!(
                "cannot fit {n} descriptors of dimension {dim} {min_angle_deg} degrees apart"
            )));
        }
    }
    Ok(out)
}

fn noisy_descriptor(rng: &mut ChaCha8Rng, base: &[f64], sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return base.iter().map(|&v| v as f32).collect();
    }
    let noise = Normal::new(0.0, sigma).unwrap();
    let v: Vec<f64> = base.iter().map(|&b| b + noise.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        z * sigma
    } else {
        0.0
    }
}

/// Builds a dataset for `plan`. All randomness comes from `scene.seed`.
pub fn generate_scene(flight: &FlightConfig, scene: &SceneConfig) -> Result<SynthDataset, SynthError> {
    flight.validate()?;
    if scene.n_points < 50 {
        return Err(SynthError::InvalidConfig("n_points must be at least 50".into()));
    }
    if scene.descriptor_dim == 0 {
        return Err(SynthError::InvalidConfig("descriptor dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let plan = generate_flight_plan(flight);
    let camera = flight.camera();
    let (w, h) = (flight.image_width, flight.image_height);
    let (min, max) = flight.block_extent();
    let ground = |rng: &mut ChaCha8Rng| {
        let x = rng.random_range(min.x..max.x);
        let y = rng.random_range(min.y..max.y);
        Vector3::new(x, y, flight.origin.z + scene.terrain.height(x - flight.origin.x, y - flight.origin.y))
    };
    let visible_in = |x: &Vector3<f64>| -> Vec<(usize, Vector2<f64>)> {
        plan.iter()
            .enumerate()
            .filter_map(|(i, pose)| project(pose, &camera, x).filter(|p| in_frame(p, w, h)).map(|p| (i, p)))
            .collect()
    };

    let mut true_points = Vec::with_capacity(scene.n_points);
    let mut visibility = Vec::with_capacity(scene.n_points);
    while true_points.len() < scene.n_points {
        let mut placed = false;
        for _ in 0..MAX_RESAMPLES {
            let x = ground(&mut rng);
            let seen = visible_in(&x);
            if seen.len() >= 2 {
                true_points.push(x);
                visibility.push(seen);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::NoVisibility(MAX_RESAMPLES));
        }
    }

    let descriptors = separated_descriptors(&mut rng, scene.n_points, scene.descriptor_dim, scene.min_descriptor_angle_deg)?;

    let n_images = plan.len();
    let mut raw: Vec<Vec<(Vector2<f64>, Option<usize>, Vec<f32>)>> = vec![Vec::new(); n_images];
    for (pid, seen) in visibility.iter().enumerate() {
        for &(img, exact) in seen {
            let noisy = exact
                + Vector2::new(gaussian(&mut rng, scene.noise.keypoint_sigma), gaussian(&mut rng, scene.noise.keypoint_sigma));
            let clamped = Vector2::new(noisy.x.clamp(0.0, w as f64 - 1e-3), noisy.y.clamp(0.0, h as f64 - 1e-3));
            let desc = noisy_descriptor(&mut rng, &descriptors[pid], scene.noise.descriptor_sigma);
            raw[img].push((clamped, Some(pid), desc));
        }
    }
    for list in raw.iter_mut() {
        let clutter = (list.len() as f64 * scene.clutter_fraction).round() as usize;
        for _ in 0..clutter {
            let p = Vector2::new(rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let d: Vec<f32> = random_unit(&mut rng, scene.descriptor_dim).into_iter().map(|v| v as f32).collect();
            list.push((p, None, d));
        }
        list.shuffle(&mut rng);
    }

    let image_ids: Vec<String> = (0..n_images).map(|i| format!("img_{i:03}")).collect();
    let mut feature_sets = Vec::with_capacity(n_images);
    let mut keypoints = Vec::with_capacity(n_images);
    let mut keypoint_points = Vec::with_capacity(n_images);
    for (i, list) in raw.into_iter().enumerate() {
        let mut fs = FeatureSet::new(image_ids[i].clone(), w, h, scene.descriptor_dim);
        let mut kps = Vec::with_capacity(list.len());
        let mut labels = Vec::with_capacity(list.len());
        for (p, label, d) in list {
            fs.push(Keypoint::new(p.x as f32, p.y as f32, 1.0), &d)?;
            kps.push(p);
            labels.push(label);
        }
        feature_sets.push(fs);
        keypoints.push(kps);
        keypoint_points.push(labels);
    }

    let pos_records = plan
        .iter()
        .zip(&image_ids)
        .map(|(pose, id)| {
            let c = pose.center;
            PosRecord {
                image_id: id.clone(),
                position: Position::Projected(ProjectedCoord {
                    easting: c.x + gaussian(&mut rng, scene.noise.gnss_horizontal_sigma),
                    northing: c.y + gaussian(&mut rng, scene.noise.gnss_horizontal_sigma),
                    altitude: c.z + gaussian(&mut rng, scene.noise.gnss_vertical_sigma),
                }),
                horizontal_sigma: scene.noise.gnss_horizontal_sigma.max(1e-6),
                vertical_sigma: scene.noise.gnss_vertical_sigma.max(1e-6),
            }
        })
        .collect();

    let centre = (min + max) / 2.0;
    let cp = Vector3::new(
        centre.x,
        centre.y,
        flight.origin.z + scene.terrain.height(centre.x - flight.origin.x, centre.y - flight.origin.y),
    );
    let cp_obs = visible_in(&cp)
        .into_iter()
        .map(|(i, p)| {
            let n = Vector2::new(gaussian(&mut rng, scene.noise.keypoint_sigma), gaussian(&mut rng, scene.noise.keypoint_sigma));
            (i, p + n)
        })
        .collect();

    Ok(SynthDataset {
        flight: *flight,
        scene: *scene,
        image_ids,
        camera,
        true_poses: plan,
        true_points,
        feature_sets,
        keypoints,
        keypoint_points,
        pos_records,
        checkpoint: Checkpoint {
            position: cp,
            observations: cp_obs,
        },
    })
}

impl SynthDataset {
    pub fn num_images(&self) -> usize {
        self.image_ids.len()
    }

    /// Keypoint index of scene point `point` in image `image`, if observed.
    pub fn keypoint_of(&self, image: usize, point: usize) -> Option<usize> {
        self.keypoint_points[image].iter().position(|&l| l == Some(point))
    }

    /// True correspondences between two images as `(index_a, index_b)`,
    /// sorted by `index_a`.
    pub fn truth_correspondences(&self, a: usize, b: usize) -> Vec<(usize, usize)> {
        let mut in_b = std::collections::HashMap::new();
        for (k, l) in self.keypoint_points[b].iter().enumerate() {
            if let Some(p) = l {
                in_b.insert(*p, k);
            }
        }
        self.keypoint_points[a]
            .iter()
            .enumerate()
            .filter_map(|(k, l)| l.and_then(|p| in_b.get(&p).map(|&kb| (k, kb))))
            .collect()
    }

    /// Matching truth for the pair: where each keypoint of `a` should
    /// appear in `b` (the exact projection of its scene point).
    pub fn ground_truth(&self, a: usize, b: usize) -> GroundTruth {
        let pose = &self.true_poses[b];
        let (w, h) = (self.flight.image_width, self.flight.image_height);
        GroundTruth {
            expected_in_b: self.keypoint_points[a]
                .iter()
                .map(|l| {
                    l.and_then(|p| project(pose, &self.camera, &self.true_points[p]))
                        .filter(|q| in_frame(q, w, h))
                        .map(|q| [q.x, q.y])
                })
                .collect(),
        }
    }

    /// `point_id,x,y,z`.
    pub fn truth_points_csv(&self) -> String {
        let mut out = String::from("point_id,x,y,z\n");
        for (i, p) in self.true_points.iter().enumerate() {
            let _ = writeln!(out, "{i},{:.6},{:.6},{:.6}", p.x, p.y, p.z);
        }
        out
    }

    /// `image_id,keypoint_index,point_id` for every non-clutter keypoint.
    pub fn truth_observations_csv(&self) -> String {
        let mut out = String::from("image_id,keypoint_index,point_id\n");
        for (i, labels) in self.keypoint_points.iter().enumerate() {
            for (k, l) in labels.iter().enumerate() {
                if let Some(p) = l {
                    let _ = writeln!(out, "{},{k},{p}", self.image_ids[i]);
                }
            }
        }
        out
    }

    /// `image_id,qw,qx,qy,qz,cx,cy,cz` of the true poses.
    pub fn truth_poses_csv(&self) -> String {
        let mut out = String::from("image_id,qw,qx,qy,qz,cx,cy,cz\n");
        for (id, pose) in self.image_ids.iter().zip(&self.true_poses) {
            let q = pose.rotation.quaternion();
            let c = pose.center;
            let _ = writeln!(
                out,
                "{id},{:.12},{:.12},{:.12},{:.12},{:.6},{:.6},{:.6}",
                q.w, q.i, q.j, q.k, c.x, c.y, c.z
            );
        }
        out
    }

    /// Checkpoint observations `image_id,x,y`.
    pub fn checkpoint_csv(&self) -> String {
        let mut out = String::from("image_id,x,y\n");
        for (i, p) in &self.checkpoint.observations {
            let _ = writeln!(out, "{},{:.6},{:.6}", self.image_ids[*i], p.x, p.y);
        }
        out
    }

    /// Writes FEAT files to `dir/features`, the POS file, the camera file,
    /// the truth CSVs and the checkpoint files. With `zone`, the POS file is
    /// written in geodetic coordinates for that zone.
    pub fn write_to_dir(&self, dir: &Path, zone: Option<&ZoneConfig>) -> Result<(), SynthError> {
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir)?;
        for fs_ in &self.feature_sets {
            fs::write(feat_dir.join(format!("{}.feat", fs_.image_id)), write_feature_file(fs_)?)?;
        }
        let records: Vec<PosRecord> = match zone {
            Some(z) => self
                .pos_records
                .iter()
                .map(|r| {
                    let p = r.projected().expect("synthetic POS is projected");
                    Ok(PosRecord {
                        position: Position::Geodetic(gauss_kruger_to_geodetic(&p, &Ellipsoid::CGCS2000, z)?),
                        ..r.clone()
                    })
                })
                .collect::<Result<_, GeoError>>()?,
            None => self.pos_records.clone(),
        };
        fs::write(dir.join("pos.csv"), write_pos_file(&records)?)?;
        let c = &self.camera;
        fs::write(
            dir.join("camera.csv"),
            format!("fx,fy,cx,cy,k1,k2\n{},{},{},{},{},{}\n", c.fx, c.fy, c.cx, c.cy, c.k1, c.k2),
        )?;
        fs::write(dir.join("truth_points.csv"), self.truth_points_csv())?;
        fs::write(dir.join("truth_observations.csv"), self.truth_observations_csv())?;
        fs::write(dir.join("truth_poses.csv"), self.truth_poses_csv())?;
        fs::write(dir.join("checkpoint.csv"), self.checkpoint_csv())?;
        let cp = self.checkpoint.position;
        fs::write(
            dir.join("checkpoint_truth.csv"),
            format!("x,y,z\n{:.6},{:.6},{:.6}\n", cp.x, cp.y, cp.z),
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scene(noise: NoiseConfig, seed: u64) -> SynthDataset {
        generate_scene(
            &FlightConfig::scene2(),
            &SceneConfig {
                n_points: 300,
                noise,
                seed,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn spacing_from_overlap() {
        let cfg = FlightConfig {
            heading_overlap: 0.0,
            ..FlightConfig::scene1()
        };
        assert_eq!(cfg.spacing().0, cfg.footprint().0);
        let cfg = FlightConfig::scene1();
        assert_eq!(cfg.footprint().0, 200.0);
        assert!((cfg.spacing().0 - 40.0).abs() < 1e-12);
        assert_eq!(generate_flight_plan(&cfg).len(), 24);
        assert_eq!(cfg.flying_height(), 200.0);
    }

    #[test]
    fn along_track_overlap() {
        let cfg = FlightConfig::scene1();
        let plan = generate_flight_plan(&cfg);
        let (l, _) = cfg.footprint();
        let overlap = 1.0 - (plan[1].center.x - plan[0].center.x) / l;
        assert!(overlap >= cfg.heading_overlap - 0.02);
    }

    #[test]
    fn noise_free_keypoints_reproject_exactly() {
        let d = small_scene(NoiseConfig::noise_free(), 1);
        for (i, labels) in d.keypoint_points.iter().enumerate() {
            for (k, l) in labels.iter().enumerate() {
                if let Some(p) = l {
                    let q = project(&d.true_poses[i], &d.camera, &d.true_points[*p]).unwrap();
                    assert!((q - d.keypoints[i][k]).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = small_scene(NoiseConfig::default(), 9);
        let b = small_scene(NoiseConfig::default(), 9);
        assert_eq!(a, b);
        let c = small_scene(NoiseConfig::default(), 10);
        assert_ne!(a.keypoints, c.keypoints);
    }

    #[test]
    fn keypoint_noise_statistics() {
        let d = small_scene(NoiseConfig::default(), 3);
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, labels) in d.keypoint_points.iter().enumerate() {
            for (k, l) in labels.iter().enumerate() {
                if let Some(p) = l {
                    let q = project(&d.true_poses[i], &d.camera, &d.true_points[*p]).unwrap();
                    let e = d.keypoints[i][k] - q;
                    sum += e.x * e.x + e.y * e.y;
                    n += 2;
                }
            }
        }
        let sd = (sum / n as f64).sqrt();
        assert!((sd - 0.3).abs() < 0.05 * 0.3, "{sd}");
    }

    #[test]
    fn truth_labels_are_consistent() {
        let d = small_scene(NoiseConfig::noise_free(), 4);
        for i in 0..d.num_images() {
            let mut seen = std::collections::HashSet::new();
            for l in d.keypoint_points[i].iter().flatten() {
                assert!(seen.insert(*l), "point observed twice in one image");
            }
        }
        for (a, b) in d.truth_correspondences(0, 1) {
            assert_eq!(d.keypoint_points[0][a], d.keypoint_points[1][b]);
        }
        assert!(d.checkpoint.observations.len() >= 2);
    }
}
