//! Two nadir views of random points with known relative pose.

use aerotri::geometry::{project, sampson_distance, CameraModel, EssentialMatrix, Pose};
use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WIDTH: f64 = 1000.0;
pub const HEIGHT: f64 = 750.0;

pub fn camera() -> CameraModel<f64> {
    CameraModel {
        fx: 1000.0,
        fy: 1000.0,
        cx: 500.0,
        cy: 375.0,
        k1: -0.05,
        k2: 0.01,
    }
}

pub fn nadir(center: Vector3<f64>, rng: &mut ChaCha8Rng, tilt: f64) -> Pose<f64> {
    let down = UnitQuaternion::from_matrix(&Matrix3::new(
        1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0,
    ));
    let jitter = UnitQuaternion::from_euler_angles(
        rng.random_range(-tilt..tilt),
        rng.random_range(-tilt..tilt),
        rng.random_range(-tilt..tilt),
    );
    Pose::new(jitter * down, center)
}

pub fn in_image(p: &Vector2<f64>) -> bool {
    p.x >= 0.0 && p.x < WIDTH && p.y >= 0.0 && p.y < HEIGHT
}

pub struct Pair {
    pub a: Pose<f64>,
    pub b: Pose<f64>,
    pub points: Vec<Vector3<f64>>,
    pub pa: Vec<Vector2<f64>>,
    pub pb: Vec<Vector2<f64>>,
}

pub fn synthetic_pair(seed: u64, n: usize) -> Pair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = nadir(Vector3::new(0.0, 0.0, 200.0), &mut rng, 0.05);
    let b = nadir(
        Vector3::new(rng.random_range(30.0..50.0), rng.random_range(-5.0..5.0), 200.0),
        &mut rng,
        0.05,
    );
    let cam = camera();
    let (mut points, mut pa, mut pb) = (Vec::new(), Vec::new(), Vec::new());
    while points.len() < n {
        let x = Vector3::new(
            rng.random_range(-60.0..100.0),
            rng.random_range(-80.0..80.0),
            rng.random_range(-40.0..40.0),
        );
        if let (Some(u), Some(v)) = (project(&a, &cam, &x), project(&b, &cam, &x)) {
            if in_image(&u) && in_image(&v) {
                points.push(x);
                pa.push(u);
                pb.push(v);
            }
        }
    }
    Pair { a, b, points, pa, pb }
}

pub fn relative(a: &Pose<f64>, b: &Pose<f64>) -> (UnitQuaternion<f64>, Vector3<f64>) {
    let r = b.rotation * a.rotation.inverse();
    let t = b.rotation * (a.center - b.center);
    (r, t.normalize())
}

/// Sampson distance in pixels under the true relative pose.
pub fn true_sampson_px(pair: &Pair, u: &Vector2<f64>, v: &Vector2<f64>) -> f64 {
    let cam = camera();
    let (r, t) = relative(&pair.a, &pair.b);
    let e = EssentialMatrix::from_pose(r.to_rotation_matrix().matrix(), &t);
    sampson_distance(&e.0, &cam.undistort(u).unwrap(), &cam.undistort(v).unwrap()) * cam.mean_focal()
}

/// Minimum distance of a planted outlier from its true epipolar line, pixels.
pub const OUTLIER_MARGIN_PX: f64 = 10.0;

/// Replaces the first `n_out` B observations with random pixels at least
/// [`OUTLIER_MARGIN_PX`] from their epipolar line; returns the inlier mask.
pub fn plant_outliers(pair: &mut Pair, n_out: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = vec![true; pair.pa.len()];
    for i in 0..n_out {
        loop {
            let v = Vector2::new(rng.random_range(0.0..WIDTH), rng.random_range(0.0..HEIGHT));
            if true_sampson_px(pair, &pair.pa[i], &v) > OUTLIER_MARGIN_PX {
                pair.pb[i] = v;
                break;
            }
        }
        truth[i] = false;
    }
    truth
}
