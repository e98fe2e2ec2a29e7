//! Essential matrix estimation (normalised eight-point inside RANSAC) and
//! decomposition into a relative pose.
//!
//! Convention: `x_b^T E x_a = 0` for normalised coordinates, with
//! `X_b = R X_a + t` and `E = [t]x R`.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::triangulate::triangulate_two_view_normalized;
use super::{CameraModel, GeometryError, Pose, RansacConfig};
use crate::scalar::{lit, Real};

const SAMPLE_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix<T: Real>(pub Matrix3<T>);

impl<T: Real> EssentialMatrix<T> {
    /// Builds `[t]x R` with the essential spectrum enforced.
    pub fn from_pose(rotation: &Matrix3<T>, translation: &Vector3<T>) -> Self {
        Self(enforce_essential(&(translation.cross_matrix() * rotation)))
    }

    /// Algebraic epipolar residual `|x_b^T E x_a|`.
    pub fn epipolar_residual(&self, xa: &Vector2<T>, xb: &Vector2<T>) -> T {
        let a = Vector3::new(xa.x, xa.y, T::one());
        let b = Vector3::new(xb.x, xb.y, T::one());
        (b.transpose() * self.0 * a)[(0, 0)].abs()
    }
}

/// Projects onto the essential manifold: singular values `(1, 1, 0)`.
pub fn enforce_essential<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = Matrix3::from_diagonal(&Vector3::new(T::one(), T::one(), T::zero()));
    u * d * v_t
}

/// First-order geometric (Sampson) distance of a correspondence, in the
/// units of the coordinates.
pub fn sampson_distance<T: Real>(e: &Matrix3<T>, xa: &Vector2<T>, xb: &Vector2<T>) -> T {
    let a = Vector3::new(xa.x, xa.y, T::one());
    let b = Vector3::new(xb.x, xb.y, T::one());
    let ea = e * a;
    let etb = e.transpose() * b;
    let num = b.dot(&ea);
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den <= T::zero() {
        return T::max_value().unwrap_or(lit(1e30));
    }
    (num * num / den).sqrt()
}

/// Similarity normalisation: centroid to origin, mean distance `sqrt(2)`.
fn normalization<T: Real>(points: &[Vector2<T>]) -> Option<Matrix3<T>> {
    let n = lit::<T>(points.len() as f64);
    let centroid = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).fold(T::zero(), |a, b| a + b) / n;
    if !(mean_dist > T::zero()) {
        return None;
    }
    let s = lit::<T>(std::f64::consts::SQRT_2) / mean_dist;
    Some(Matrix3::new(
        s,
        T::zero(),
        -s * centroid.x,
        T::zero(),
        s,
        -s * centroid.y,
        T::zero(),
        T::zero(),
        T::one(),
    ))
}

fn apply<T: Real>(h: &Matrix3<T>, p: &Vector2<T>) -> Vector2<T> {
    let q = h * Vector3::new(p.x, p.y, T::one());
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Normalised eight-point estimate from `>= 8` correspondences in normalised
/// camera coordinates. Returns `None` when the design matrix has rank < 8.
pub fn eight_point<T: Real>(xa: &[Vector2<T>], xb: &[Vector2<T>]) -> Option<Matrix3<T>> {
    let n = xa.len();
    if n < SAMPLE_SIZE || xb.len() != n {
        return None;
    }
    let ta = normalization(xa)?;
    let tb = normalization(xb)?;
    let rows = n.max(9);
    let mut a = DMatrix::<T>::zeros(rows, 9);
    for i in 0..n {
        let p = apply(&ta, &xa[i]);
        let q = apply(&tb, &xb[i]);
        let row = [
            q.x * p.x,
            q.x * p.y,
            q.x,
            q.y * p.x,
            q.y * p.y,
            q.y,
            p.x,
            p.y,
            T::one(),
        ];
        for (k, v) in row.into_iter().enumerate() {
            a[(i, k)] = v;
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let svd = a.svd(false, true);
    let s = &svd.singular_values;
    if !(s[7] > s[0] * T::default_epsilon().sqrt()) {
        return None;
    }
    let v_t = svd.v_t?;
    let f = v_t.row(8);
    let fm = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let e = tb.transpose() * fm * ta;
    let e = enforce_essential(&e);
    if e.iter().all(|v| v.is_finite()) {
        Some(e)
    } else {
        None
    }
}

fn count_inliers<T: Real>(
    e: &Matrix3<T>,
    xa: &[Vector2<T>],
    xb: &[Vector2<T>],
    threshold: T,
) -> (Vec<bool>, usize, T) {
    let mut mask = Vec::with_capacity(xa.len());
    let mut count = 0;
    let mut score = T::zero();
    for (a, b) in xa.iter().zip(xb) {
        let d = sampson_distance(e, a, b);
        let ok = d <= threshold;
        if ok {
            count += 1;
            score += d;
        } else {
            score += threshold;
        }
        mask.push(ok);
    }
    (mask, count, score)
}

/// Robust essential-matrix estimate from pixel correspondences.
///
/// The threshold of `cfg` is a Sampson distance in pixels; it is divided by
/// the mean focal length to act on normalised coordinates. Same seed and
/// inputs give the same result.
pub fn estimate_essential_ransac<T: Real>(
    pixels_a: &[Vector2<T>],
    pixels_b: &[Vector2<T>],
    cam: &CameraModel<T>,
    cfg: &RansacConfig,
) -> Result<(EssentialMatrix<T>, Vec<bool>), GeometryError> {
    cfg.validate()?;
    if pixels_a.len() != pixels_b.len() {
        return Err(GeometryError::InvalidInput(
            "correspondence arrays differ in length".into(),
        ));
    }
    let n = pixels_a.len();
    if n < SAMPLE_SIZE {
        return Err(GeometryError::InsufficientData {
            needed: SAMPLE_SIZE,
            got: n,
        });
    }
    let xa = pixels_a
        .iter()
        .map(|p| cam.undistort(p))
        .collect::<Result<Vec<_>, _>>()?;
    let xb = pixels_b
        .iter()
        .map(|p| cam.undistort(p))
        .collect::<Result<Vec<_>, _>>()?;
    let threshold = lit::<T>(cfg.threshold) / cam.mean_focal();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Matrix3<T>, Vec<bool>, usize, T)> = None;
    let mut required = cfg.max_iterations;
    let mut iteration = 0;
    let mut sa = Vec::with_capacity(SAMPLE_SIZE);
    let mut sb = Vec::with_capacity(SAMPLE_SIZE);
    while iteration < required {
        iteration += 1;
        let sample = rand::seq::index::sample(&mut rng, n, SAMPLE_SIZE);
        sa.clear();
        sb.clear();
        for i in sample.iter() {
            sa.push(xa[i]);
            sb.push(xb[i]);
        }
        let Some(e) = eight_point(&sa, &sb) else {
            continue;
        };
        let (mask, count, score) = count_inliers(&e, &xa, &xb, threshold);
        let better = match &best {
            None => true,
            Some((_, _, c, s)) => count > *c || (count == *c && score < *s),
        };
        if better {
            required = cfg.required_iterations(count as f64 / n as f64, SAMPLE_SIZE);
            best = Some((e, mask, count, score));
        }
    }
    let (mut e, mut mask, mut count, mut score) =
        best.ok_or(GeometryError::DegenerateConfiguration)?;

    // Refit on the consensus set while it does not lose support.
    for _ in 0..5 {
        let (ia, ib): (Vec<_>, Vec<_>) = xa
            .iter()
            .zip(&xb)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (*a, *b))
            .unzip();
        let Some(refit) = eight_point(&ia, &ib) else {
            break;
        };
        let (m2, c2, s2) = count_inliers(&refit, &xa, &xb, threshold);
        if c2 < count || (c2 == count && s2 >= score) {
            break;
        }
        let changed = m2 != mask;
        e = refit;
        mask = m2;
        count = c2;
        score = s2;
        if !changed {
            break;
        }
    }
    Ok((EssentialMatrix(e), mask))
}

/// Recovers the relative pose of B with respect to A (A at the origin,
/// unit baseline) from pixel correspondences.
pub fn decompose_essential<T: Real>(
    e: &EssentialMatrix<T>,
    pixels_a: &[Vector2<T>],
    pixels_b: &[Vector2<T>],
    cam: &CameraModel<T>,
) -> Result<Pose<T>, GeometryError> {
    let xa = pixels_a
        .iter()
        .map(|p| cam.undistort(p))
        .collect::<Result<Vec<_>, _>>()?;
    let xb = pixels_b
        .iter()
        .map(|p| cam.undistort(p))
        .collect::<Result<Vec<_>, _>>()?;
    decompose_essential_normalized(e, &xa, &xb)
}

/// Chirality test over the four `(R, t)` candidates of `E`, on normalised
/// coordinates. The winner must have a strict maximum of points in front of
/// both cameras and more than half of all points.
pub fn decompose_essential_normalized<T: Real>(
    e: &EssentialMatrix<T>,
    xa: &[Vector2<T>],
    xb: &[Vector2<T>],
) -> Result<Pose<T>, GeometryError> {
    if xa.is_empty() || xa.len() != xb.len() {
        return Err(GeometryError::InsufficientData {
            needed: 1,
            got: xa.len().min(xb.len()),
        });
    }
    let svd = e.0.svd(true, true);
    let mut u = svd.u.ok_or(GeometryError::DegenerateConfiguration)?;
    let mut v = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?.transpose();
    if u.determinant() < T::zero() {
        u = -u;
    }
    if v.determinant() < T::zero() {
        v = -v;
    }
    let w = Matrix3::new(
        T::zero(),
        -T::one(),
        T::zero(),
        T::one(),
        T::zero(),
        T::zero(),
        T::zero(),
        T::zero(),
        T::one(),
    );
    let r1 = u * w * v.transpose();
    let r2 = u * w.transpose() * v.transpose();
    let t: Vector3<T> = u.column(2).into_owned().normalize();
    let candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)];

    let counts: Vec<usize> = candidates
        .iter()
        .map(|(r, t)| {
            xa.iter()
                .zip(xb)
                .filter(|(a, b)| {
                    triangulate_two_view_normalized(r, t, a, b)
                        .map(|x| x.z > T::zero() && (r * x + t).z > T::zero())
                        .unwrap_or(false)
                })
                .count()
        })
        .collect();
    let best = (0..4).max_by_key(|&i| counts[i]).unwrap();
    let best_count = counts[best];
    let tied = counts.iter().filter(|&&c| c == best_count).count() > 1;
    if tied || 2 * best_count <= xa.len() {
        return Err(GeometryError::ChiralityAmbiguous);
    }
    let (r, t) = candidates[best];
    Ok(Pose::from_rt(&r, &t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::Rng;

    fn scene(seed: u64, n: usize) -> (Matrix3<f64>, Vector3<f64>, Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = *UnitQuaternion::from_euler_angles(
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        )
        .to_rotation_matrix()
        .matrix();
        let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2))
            .normalize();
        let mut xa = Vec::new();
        let mut xb = Vec::new();
        while xa.len() < n {
            let x = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(4.0..10.0));
            let y = r * x + t;
            if y.z <= 0.0 {
                continue;
            }
            xa.push(Vector2::new(x.x / x.z, x.y / x.z));
            xb.push(Vector2::new(y.x / y.z, y.y / y.z));
        }
        (r, t, xa, xb)
    }

    #[test]
    fn eight_point_exact_data() {
        let (r, t, xa, xb) = scene(1, 30);
        let e = eight_point(&xa, &xb).unwrap();
        let em = EssentialMatrix(e);
        for (a, b) in xa.iter().zip(&xb) {
            assert!(em.epipolar_residual(a, b) < 1e-12);
        }
        let s = e.svd(false, false).singular_values;
        assert!(e.determinant().abs() < 1e-10);
        assert!((s[0] - s[1]).abs() <= 1e-8 * s[0]);
        let truth = EssentialMatrix::from_pose(&r, &t).0;
        let scale = if (truth - e).norm() < (truth + e).norm() { 1.0 } else { -1.0 };
        assert!((truth - e * scale).norm() < 1e-9);
    }

    #[test]
    fn degenerate_sample_rejected() {
        let xa = vec![Vector2::new(0.1, 0.2); 8];
        let xb = vec![Vector2::new(0.3, 0.1); 8];
        assert!(eight_point(&xa, &xb).is_none());
    }

    #[test]
    fn canonical_decomposition() {
        let t = Vector3::new(1.0, 0.0, 0.0);
        let e = EssentialMatrix(t.cross_matrix());
        let mut xa = Vec::new();
        let mut xb = Vec::new();
        for i in 0..10 {
            let x = Vector3::new(i as f64 * 0.3 - 1.5, 0.2 * i as f64 - 1.0, 5.0 + i as f64);
            let y = x + t;
            xa.push(Vector2::new(x.x / x.z, x.y / x.z));
            xb.push(Vector2::new(y.x / y.z, y.y / y.z));
        }
        let pose = decompose_essential_normalized(&e, &xa, &xb).unwrap();
        assert!(pose.rotation.angle() < 1e-12);
        assert!((pose.translation() - t).norm() < 1e-12);
    }

    #[test]
    fn points_at_infinity_are_ambiguous() {
        let e = EssentialMatrix(Vector3::new(1.0, 0.0, 0.0).cross_matrix());
        let xa: Vec<_> = (0..5).map(|i| Vector2::new(0.1 * i as f64, 0.05)).collect();
        assert_eq!(
            decompose_essential_normalized(&e, &xa, &xa),
            Err(GeometryError::ChiralityAmbiguous)
        );
    }

    #[test]
    fn random_pose_recovered() {
        for seed in 0..20 {
            let (r, t, xa, xb) = scene(seed, 40);
            let e = EssentialMatrix(eight_point(&xa, &xb).unwrap());
            let pose = decompose_essential_normalized(&e, &xa, &xb).unwrap();
            let dr = UnitQuaternion::from_matrix(&r).angle_to(&pose.rotation);
            let dt = pose.translation().angle(&t);
            assert!(dr < 1e-6 && dt < 1e-6, "seed {seed}: {dr} {dt}");
        }
    }

    #[test]
    fn insufficient_matches() {
        let cam = CameraModel::pinhole(1000.0, 1000.0, 500.0, 500.0);
        let p = vec![Vector2::new(1.0, 2.0); 7];
        assert_eq!(
            estimate_essential_ransac(&p, &p, &cam, &RansacConfig::default()).map(|_| ()),
            Err(GeometryError::InsufficientData { needed: 8, got: 7 })
        );
    }
}
