//! Georeferencing of a free network to POS camera positions and the
//! accuracy metrics reported for a survey.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::ba::{
    apply_solution, build_problem, solve, BACamera, BAError, BAObservation, BAProblem, BAResult, BuildOptions,
    RobustLoss, SolverOptions,
};
use crate::geo::PosRecord;
use crate::geometry::{
    decompose_essential, estimate_essential_ransac, triangulate, CameraModel, GeometryError, Pose,
    RansacConfig, INTRINSIC_COUNT,
};
use crate::scalar::{lit, to_f64, Real};
use crate::sfm::Reconstruction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeorefError {
    #[error("need at least {needed} point pairs, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate configuration: points are collinear")]
    DegenerateConfiguration,
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("no POS record for image {0}")]
    MissingPos(String),
    #[error("POS record for image {0} is not in projected coordinates")]
    NotProjected(String),
    #[error("the pair has no triangulated inlier points")]
    EmptyPair,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Adjustment(#[from] BAError),
}

/// `x -> scale * R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform<T: Real> {
    pub scale: T,
    pub rotation: UnitQuaternion<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> SimilarityTransform<T> {
    pub fn identity() -> Self {
        Self {
            scale: T::one(),
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation * x * self.scale + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        let scale = T::one() / self.scale;
        Self {
            scale,
            rotation,
            translation: -(rotation * self.translation) * scale,
        }
    }

    /// Pose of the same camera in the target frame.
    pub fn apply_pose(&self, pose: &Pose<T>) -> Pose<T> {
        Pose::new(pose.rotation * self.rotation.inverse(), self.apply(&pose.center))
    }
}

/// Least-squares similarity mapping `source` onto `target` (closed form
/// from the SVD of the cross-covariance, with a reflection guard).
pub fn estimate_similarity<T: Real>(
    source: &[Vector3<T>],
    target: &[Vector3<T>],
) -> Result<SimilarityTransform<T>, GeorefError> {
    let n = source.len().min(target.len());
    if n < 3 || source.len() != target.len() {
        return Err(GeorefError::InsufficientPoints { needed: 3, got: n });
    }
    let inv_n = T::one() / lit(n as f64);
    let mu_s = source.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;
    let mu_t = target.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut var_s = T::zero();
    for (s, t) in source.iter().zip(target) {
        let (ds, dt) = (s - mu_s, t - mu_t);
        cov += dt * ds.transpose();
        spread += ds * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;
    let sv = spread.singular_values();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if !(sorted[0] > T::zero()) || sorted[1] <= sorted[0] * lit(1e-12) {
        return Err(GeorefError::DegenerateConfiguration);
    }
    let svd = cov.svd(true, true);
    let u = svd.u.ok_or(GeorefError::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(GeorefError::DegenerateConfiguration)?;
    let d = if (u * v_t).determinant() < T::zero() { -T::one() } else { T::one() };
    let s_diag = Vector3::new(T::one(), T::one(), d);
    let r = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let trace = (0..3).fold(T::zero(), |acc, i| acc + svd.singular_values[i] * s_diag[i]);
    let scale = trace / var_s;
    let rotation = UnitQuaternion::from_matrix(&r);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation: mu_t - rotation * mu_s * scale,
    })
}

/// Maps every point and camera of `recon` through `t`.
pub fn apply_similarity<T: Real>(recon: &Reconstruction<T>, t: &SimilarityTransform<T>) -> Reconstruction<T> {
    let mut out = recon.clone();
    for pose in out.poses.iter_mut().flatten() {
        *pose = t.apply_pose(pose);
    }
    for p in out.points.values_mut() {
        p.position = t.apply(&p.position);
    }
    out
}

/// Per-axis errors with their horizontal and 3D composition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisErrors {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub xy: f64,
    pub xyz: f64,
}

/// `xy = hypot(x, y)`, `xyz = hypot(xy, z)`; the axis values keep their sign.
pub fn compose_axis_errors(x: f64, y: f64, z: f64) -> AxisErrors {
    let xy = x.hypot(y);
    AxisErrors {
        x,
        y,
        z,
        xy,
        xyz: xy.hypot(z),
    }
}

fn pos_lookup(pos: &[PosRecord]) -> Result<HashMap<&str, Vector3<f64>>, GeorefError> {
    pos.iter()
        .map(|r| {
            let p = r.projected().ok_or_else(|| GeorefError::NotProjected(r.image_id.clone()))?;
            Ok((r.image_id.as_str(), Vector3::new(p.easting, p.northing, p.altitude)))
        })
        .collect()
}

/// `(image index, POS position)` of every registered image.
fn registered_positions<T: Real>(
    recon: &Reconstruction<T>,
    pos: &[PosRecord],
) -> Result<Vec<(usize, Vector3<f64>)>, GeorefError> {
    let lookup = pos_lookup(pos)?;
    recon
        .registered()
        .into_iter()
        .map(|i| {
            let id = &recon.image_ids[i];
            lookup
                .get(id.as_str())
                .map(|p| (i, *p))
                .ok_or_else(|| GeorefError::MissingPos(id.clone()))
        })
        .collect()
}

/// Per-axis RMSE between the registered camera centres and their POS
/// positions.
pub fn camera_position_errors<T: Real>(recon: &Reconstruction<T>, pos: &[PosRecord]) -> Result<AxisErrors, GeorefError> {
    let pairs = registered_positions(recon, pos)?;
    if pairs.is_empty() {
        return Err(GeorefError::InsufficientPoints { needed: 1, got: 0 });
    }
    let mut sq = Vector3::<f64>::zeros();
    for (i, p) in &pairs {
        let c = recon.poses[*i].unwrap().center;
        let d = Vector3::new(to_f64(c.x), to_f64(c.y), to_f64(c.z)) - p;
        sq += d.component_mul(&d);
    }
    let rmse = (sq / pairs.len() as f64).map(f64::sqrt);
    Ok(compose_axis_errors(rmse.x, rmse.y, rmse.z))
}

/// Triangulates a known point from its observations in registered images
/// and returns the signed error `estimate - truth`.
pub fn checkpoint_error<T: Real>(
    recon: &Reconstruction<T>,
    observations: &[(String, Vector2<T>)],
    truth: &Vector3<T>,
) -> Result<AxisErrors, GeorefError> {
    let views: Vec<(Pose<T>, Vector2<T>)> = observations
        .iter()
        .filter_map(|(id, px)| recon.image_index(id).and_then(|i| recon.poses[i]).map(|p| (p, *px)))
        .collect();
    if views.len() < 2 {
        return Err(GeorefError::DegenerateGeometry(format!(
            "checkpoint seen in {} registered images",
            views.len()
        )));
    }
    let x = triangulate(&views, &recon.camera).map_err(|e| GeorefError::DegenerateGeometry(e.to_string()))?;
    let d = x - truth;
    Ok(compose_axis_errors(to_f64(d.x), to_f64(d.y), to_f64(d.z)))
}

/// Two-view reconstruction of one image pair and its reprojection error.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeOrientationReport<T: Real> {
    /// Pose of B with A at the origin and a unit baseline.
    pub pose_b: Pose<T>,
    pub points: Vec<Vector3<T>>,
    /// Mean and RMS over both observations of every triangulated point.
    pub mean_px: f64,
    pub rms_px: f64,
}

/// Relative orientation of a matched pair: essential matrix, chirality
/// decomposition, triangulation of the inliers and a two-view adjustment.
pub fn relative_orientation_report<T: Real>(
    pixels_a: &[Vector2<T>],
    pixels_b: &[Vector2<T>],
    cam: &CameraModel<T>,
    ransac: &RansacConfig,
) -> Result<RelativeOrientationReport<T>, GeorefError> {
    if pixels_a.is_empty() {
        return Err(GeorefError::EmptyPair);
    }
    let (e, mask) = estimate_essential_ransac(pixels_a, pixels_b, cam, ransac)?;
    let (ia, ib): (Vec<_>, Vec<_>) = pixels_a
        .iter()
        .zip(pixels_b)
        .zip(&mask)
        .filter(|(_, m)| **m)
        .map(|((a, b), _)| (*a, *b))
        .unzip();
    let pose_b = decompose_essential(&e, &ia, &ib, cam)?;
    let pose_a = Pose::identity();
    let mut points = Vec::new();
    let mut observations = Vec::new();
    for (a, b) in ia.iter().zip(&ib) {
        if let Ok(x) = triangulate(&[(pose_a, *a), (pose_b, *b)], cam) {
            let pi = points.len();
            points.push(x);
            observations.push(BAObservation { camera: 0, point: pi, pixel: *a });
            observations.push(BAObservation { camera: 1, point: pi, pixel: *b });
        }
    }
    if points.is_empty() {
        return Err(GeorefError::EmptyPair);
    }
    let mut free_b = BACamera::free(pose_b);
    free_b.fixed[3 + pose_b.center.iamax()] = true;
    let mut problem = BAProblem {
        intrinsics: *cam,
        intrinsics_fixed: [true; INTRINSIC_COUNT],
        cameras: vec![BACamera::fixed(pose_a), free_b],
        points,
        observations,
        priors: Vec::new(),
        loss: RobustLoss::Squared,
    };
    let before = problem.clone();
    if solve(&mut problem, &SolverOptions::default()).is_err() {
        problem = before;
    }
    let errors: Vec<f64> = problem.reprojection_errors()?.into_iter().map(to_f64).collect();
    let n = errors.len() as f64;
    Ok(RelativeOrientationReport {
        pose_b: problem.cameras[1].pose,
        mean_px: errors.iter().sum::<f64>() / n,
        rms_px: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        points: problem.points,
    })
}

/// How the free network is tied to the POS positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeorefRoute {
    /// Free-network adjustment followed by a similarity to the POS centres.
    Align,
    /// Similarity to the POS centres, then adjustment with the POS centres
    /// as weighted position priors.
    Priors,
}

impl GeorefRoute {
    pub fn name(&self) -> &'static str {
        match self {
            GeorefRoute::Align => "align",
            GeorefRoute::Priors => "priors",
        }
    }
}

/// Aligns the reconstruction to the POS centres of its registered images.
pub fn georeference_align<T: Real>(
    recon: &Reconstruction<T>,
    pos: &[PosRecord],
) -> Result<(Reconstruction<T>, SimilarityTransform<T>), GeorefError> {
    let pairs = registered_positions(recon, pos)?;
    let source: Vec<Vector3<T>> = pairs.iter().map(|(i, _)| recon.poses[*i].unwrap().center).collect();
    let target: Vec<Vector3<T>> = pairs
        .iter()
        .map(|(_, p)| Vector3::new(lit(p.x), lit(p.y), lit(p.z)))
        .collect();
    let t = estimate_similarity(&source, &target)?;
    Ok((apply_similarity(recon, &t), t))
}

/// Aligns, then adjusts every registered image with its POS centre as a
/// position prior (sigmas from the POS record).
pub fn georeference_priors<T: Real>(
    recon: &Reconstruction<T>,
    pos: &[PosRecord],
    solver: &SolverOptions,
    loss: RobustLoss,
) -> Result<(Reconstruction<T>, BAResult<T>), GeorefError> {
    let (mut aligned, _) = georeference_align(recon, pos)?;
    let lookup: HashMap<&str, &PosRecord> = pos.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut priors = Vec::new();
    for (i, p) in registered_positions(recon, pos)? {
        let r = lookup[aligned.image_ids[i].as_str()];
        let (h, v) = (lit::<T>(r.horizontal_sigma), lit::<T>(r.vertical_sigma));
        priors.push((i, Vector3::new(lit(p.x), lit(p.y), lit(p.z)), Vector3::new(h, h, v)));
    }
    let opts = BuildOptions {
        free_images: None,
        refine_intrinsics: false,
        priors,
        loss,
    };
    let (mut problem, map) = build_problem(&aligned, &opts)?;
    let result = solve(&mut problem, solver)?;
    apply_solution(&mut aligned, &problem, &map);
    Ok((aligned, result))
}

/// Survey accuracy summary written as a sectioned CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub route: GeorefRoute,
    /// Mean and RMS reprojection error of the seed pair's relative orientation.
    pub relative_orientation: Option<(f64, f64)>,
    /// RMS and mean reprojection error of the final adjustment.
    pub bundle_adjustment: (f64, f64),
    pub registered_images: usize,
    pub total_images: usize,
    pub points: usize,
    pub camera_position: AxisErrors,
    pub checkpoint: Option<AxisErrors>,
}

impl EvaluationReport {
    /// `section,metric,value` rows. Camera position errors are per-axis RMSE
    /// over cameras against the supplied POS; checkpoint errors are signed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,metric,value\n");
        let mut row = |s: &str, m: &str, v: String| {
            let _ = writeln!(out, "{s},{m},{v}");
        };
        row("summary", "georef_route", self.route.name().into());
        row("summary", "registered_images", self.registered_images.to_string());
        row("summary", "total_images", self.total_images.to_string());
        row("summary", "points", self.points.to_string());
        if let Some((mean, rms)) = self.relative_orientation {
            row("relative_orientation", "mean_px", format!("{mean:.6}"));
            row("relative_orientation", "rms_px", format!("{rms:.6}"));
        }
        row("bundle_adjustment", "rms_px", format!("{:.6}", self.bundle_adjustment.0));
        row("bundle_adjustment", "mean_px", format!("{:.6}", self.bundle_adjustment.1));
        let axes = |row: &mut dyn FnMut(&str, &str, String), s: &str, e: &AxisErrors| {
            for (m, v) in [("x", e.x), ("y", e.y), ("z", e.z), ("xy", e.xy), ("xyz", e.xyz)] {
                row(s, m, format!("{v:.6}"));
            }
        };
        axes(&mut row, "camera_position", &self.camera_position);
        if let Some(c) = &self.checkpoint {
            axes(&mut row, "checkpoint", c);
        }
        out
    }
}
