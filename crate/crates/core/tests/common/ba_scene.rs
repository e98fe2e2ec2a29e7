//! Noise-free bundle adjustment problems over a grid of nadir cameras.

use aerotri::ba::{BACamera, BAObservation, BAProblem, RobustLoss, POSE_PARAMS};
use aerotri::geometry::{project, CameraModel, Pose, INTRINSIC_COUNT};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn intrinsics() -> CameraModel<f64> {
    CameraModel {
        fx: 1000.0,
        fy: 1000.0,
        cx: 500.0,
        cy: 375.0,
        k1: -0.03,
        k2: 0.002,
    }
}

pub fn nadir(x: f64, y: f64, h: f64) -> Pose<f64> {
    let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
    Pose::new(UnitQuaternion::from_matrix(&r), Vector3::new(x, y, h))
}

/// Noise-free block: a grid of nadir cameras over random terrain points,
/// every point observed by every camera that sees it (at least two).
pub fn scene(seed: u64, rows: usize, cols: usize, n_points: usize) -> BAProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = intrinsics();
    let mut cameras = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let mut pose = nadir(40.0 * c as f64, 60.0 * r as f64, 200.0);
            pose.rotation = UnitQuaternion::from_euler_angles(
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.05..0.05),
            ) * pose.rotation;
            cameras.push(BACamera::free(pose));
        }
    }
    let mut points = Vec::new();
    let mut observations = Vec::new();
    while points.len() < n_points {
        let x = Vector3::new(
            rng.random_range(-40.0..40.0 * cols as f64),
            rng.random_range(-40.0..60.0 * rows as f64),
            rng.random_range(-10.0..10.0),
        );
        let seen: Vec<_> = cameras
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                project(&c.pose, &cam, &x)
                    .filter(|p| p.x >= 0.0 && p.x < 1000.0 && p.y >= 0.0 && p.y < 750.0)
                    .map(|p| (i, p))
            })
            .collect();
        if seen.len() < 2 {
            continue;
        }
        let pi = points.len();
        points.push(x);
        for (i, p) in seen {
            observations.push(BAObservation {
                camera: i,
                point: pi,
                pixel: p,
            });
        }
    }
    let mut p = BAProblem {
        intrinsics: cam,
        intrinsics_fixed: [true; INTRINSIC_COUNT],
        cameras,
        points,
        observations,
        priors: Vec::new(),
        loss: RobustLoss::default(),
    };
    p.cameras[0].fixed = [true; POSE_PARAMS];
    p.cameras[1].fixed[3] = true;
    p
}

pub fn perturb(p: &mut BAProblem<f64>, seed: u64, angle_deg: f64, shift: f64, point_shift: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |r: &mut ChaCha8Rng| {
        Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)).normalize()
    };
    for c in p.cameras.iter_mut() {
        let dw = unit(&mut rng) * angle_deg.to_radians();
        let dc = unit(&mut rng) * shift;
        if !c.fixed[..3].iter().any(|&f| f) {
            c.pose.rotation = UnitQuaternion::from_scaled_axis(dw) * c.pose.rotation;
        }
        for k in 0..3 {
            if !c.fixed[3 + k] {
                c.pose.center[k] += dc[k];
            }
        }
    }
    for x in p.points.iter_mut() {
        *x += unit(&mut rng) * point_shift;
    }
}
