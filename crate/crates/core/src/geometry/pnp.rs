//! Absolute pose from 2D-3D correspondences: six-point DLT (with a plane
//! homography for flat samples) inside RANSAC, then Levenberg-Marquardt.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{project, project_with_jacobian, CameraModel, GeometryError, Pose, RansacConfig};
use crate::scalar::{lit, Real};

const SAMPLE_SIZE: usize = 6;
/// Below this spread ratio a sample is treated as planar.
const PLANAR_RATIO: f64 = 1e-3;
/// Below this spread ratio the homography model is tried as well.
const NEAR_PLANAR_RATIO: f64 = 0.1;
const COLLINEAR_RATIO: f64 = 1e-3;
const REFINE_ITERATIONS: usize = 30;

fn nearest_rotation<T: Real>(m: &Matrix3<T>) -> Option<Matrix3<T>> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut r = u * v_t;
    if r.determinant() < T::zero() {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -T::one();
        r = u * d * v_t;
    }
    Some(r)
}

fn nullspace(a: DMatrix<f64>) -> Option<nalgebra::DVector<f64>> {
    let cols = a.ncols();
    let a = if a.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (a.nrows(), cols)).copy_from(&a);
        p
    } else {
        a
    };
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let svd = a.svd(false, true);
    let s = &svd.singular_values;
    if !(s[cols - 2] > s[0] * 1e-10) {
        return None;
    }
    Some(svd.v_t?.row(cols - 1).transpose())
}

/// Spread of a point set: centroid, principal axes (columns) and the
/// singular values along them.
fn principal_axes(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, Matrix3<f64>, Vector3<f64>)> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let svd = cov.svd(true, false);
    let u = svd.u?;
    let s = svd.singular_values.map(|v| v.max(0.0).sqrt());
    Some((c, u, s))
}

/// Full projective DLT from `>= 6` non-coplanar points.
fn dlt_pose(points: &[Vector3<f64>], xn: &[Vector2<f64>]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let scale = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(scale > 0.0) {
        return None;
    }
    let s = 3f64.sqrt() / scale;
    let mut a = DMatrix::zeros(2 * points.len(), 12);
    for (i, (p, x)) in points.iter().zip(xn).enumerate() {
        let q = (p - c) * s;
        let h = [q.x, q.y, q.z, 1.0];
        for k in 0..4 {
            a[(2 * i, k)] = h[k];
            a[(2 * i, 8 + k)] = -x.x * h[k];
            a[(2 * i + 1, 4 + k)] = h[k];
            a[(2 * i + 1, 8 + k)] = -x.y * h[k];
        }
    }
    let v = nullspace(a)?;
    let mut m = Matrix3::from_fn(|r, k| v[4 * r + k]);
    let mut p4 = Vector3::new(v[3], v[7], v[11]);
    if m.determinant() < 0.0 {
        m = -m;
        p4 = -p4;
    }
    let sv = m.svd(false, false).singular_values;
    let lambda = sv.mean();
    if !(lambda > 0.0) {
        return None;
    }
    let r = nearest_rotation(&m)?;
    let t_norm = p4 / lambda;
    // x ~ R s (X - c) + t  =>  x ~ R X + (t / s - R c)
    let t = t_norm / s - r * c;
    Some((r, t))
}

/// Pose from a planar sample via the plane-to-image homography.
fn homography_pose(
    points: &[Vector3<f64>],
    xn: &[Vector2<f64>],
    centroid: &Vector3<f64>,
    axes: &Matrix3<f64>,
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let e1: Vector3<f64> = axes.column(0).into_owned();
    let e2: Vector3<f64> = axes.column(1).into_owned();
    let basis = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);
    let plane: Vec<Vector2<f64>> = points
        .iter()
        .map(|p| {
            let d = basis.transpose() * (p - centroid);
            Vector2::new(d.x, d.y)
        })
        .collect();
    let scale = plane.iter().map(|p| p.norm()).sum::<f64>() / plane.len() as f64;
    if !(scale > 0.0) {
        return None;
    }
    let s = 2f64.sqrt() / scale;
    let mut a = DMatrix::zeros(2 * plane.len(), 9);
    for (i, (p, x)) in plane.iter().zip(xn).enumerate() {
        let h = [p.x * s, p.y * s, 1.0];
        for k in 0..3 {
            a[(2 * i, k)] = h[k];
            a[(2 * i, 6 + k)] = -x.x * h[k];
            a[(2 * i + 1, 3 + k)] = h[k];
            a[(2 * i + 1, 6 + k)] = -x.y * h[k];
        }
    }
    let v = nullspace(a)?;
    let hm = Matrix3::from_fn(|r, k| v[3 * r + k]);
    let h1: Vector3<f64> = hm.column(0) * s;
    let h2: Vector3<f64> = hm.column(1) * s;
    let mut h3: Vector3<f64> = hm.column(2).into_owned();
    let mut lambda = 0.5 * (h1.norm() + h2.norm());
    if !(lambda > 0.0) {
        return None;
    }
    if h3.z < 0.0 {
        lambda = -lambda;
    }
    let (r1, r2) = (h1 / lambda, h2 / lambda);
    h3 /= lambda;
    let rp = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]))?;
    let r = rp * basis.transpose();
    let t = h3 - r * centroid;
    Some((r, t))
}

fn score<T: Real>(
    pose: &Pose<T>,
    cam: &CameraModel<T>,
    points: &[Vector3<T>],
    pixels: &[Vector2<T>],
    threshold: T,
) -> (Vec<bool>, usize, T) {
    let mut mask = Vec::with_capacity(points.len());
    let mut count = 0;
    let mut total = T::zero();
    for (x, px) in points.iter().zip(pixels) {
        let err = project(pose, cam, x).map(|p| (p - px).norm());
        match err {
            Some(e) if e <= threshold => {
                count += 1;
                total += e;
                mask.push(true);
            }
            _ => {
                total += threshold;
                mask.push(false);
            }
        }
    }
    (mask, count, total)
}

fn reprojection_cost<T: Real>(
    pose: &Pose<T>,
    cam: &CameraModel<T>,
    points: &[Vector3<T>],
    pixels: &[Vector2<T>],
) -> Option<T> {
    let mut sum = T::zero();
    for (x, px) in points.iter().zip(pixels) {
        sum += (project(pose, cam, x)? - px).norm_squared();
    }
    Some(sum)
}

/// Levenberg-Marquardt refinement of a pose on the squared pixel
/// reprojection error. Never returns a pose with a higher cost than `pose`.
pub fn refine_pose<T: Real>(
    pose: &Pose<T>,
    points: &[Vector3<T>],
    pixels: &[Vector2<T>],
    cam: &CameraModel<T>,
    max_iterations: usize,
) -> Result<Pose<T>, GeometryError> {
    if points.len() != pixels.len() {
        return Err(GeometryError::InvalidInput(
            "correspondence arrays differ in length".into(),
        ));
    }
    if points.len() < 3 {
        return Err(GeometryError::InsufficientData {
            needed: 3,
            got: points.len(),
        });
    }
    let mut current = *pose;
    let mut cost = reprojection_cost(&current, cam, points, pixels).ok_or(GeometryError::BehindCamera)?;
    let mut lambda = lit::<T>(1e-4);
    for _ in 0..max_iterations {
        let mut h = SMatrix::<T, 6, 6>::zeros();
        let mut g = SVector::<T, 6>::zeros();
        for (x, px) in points.iter().zip(pixels) {
            let pj = project_with_jacobian(&current, cam, x).ok_or(GeometryError::BehindCamera)?;
            let r = pj.pixel - px;
            h += pj.pose.transpose() * pj.pose;
            g += pj.pose.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(lit(1e-12));
            }
            let Some(step) = damped.cholesky().map(|c| -c.solve(&g)) else {
                lambda *= lit(10.0);
                continue;
            };
            let candidate = current.retract(
                &Vector3::new(step[0], step[1], step[2]),
                &Vector3::new(step[3], step[4], step[5]),
            );
            match reprojection_cost(&candidate, cam, points, pixels) {
                Some(c) if c < cost => {
                    let gain = cost - c;
                    current = candidate;
                    cost = c;
                    lambda = (lambda / lit(3.0)).max(lit(1e-12));
                    improved = gain > cost * lit(1e-12);
                    break;
                }
                _ => lambda *= lit(10.0),
            }
        }
        if !improved {
            break;
        }
    }
    Ok(current)
}

/// Robust absolute pose. The threshold of `cfg` is the reprojection error in
/// pixels; the returned mask flags the inliers of the refined pose.
pub fn solve_pnp_ransac<T: Real>(
    points: &[Vector3<T>],
    pixels: &[Vector2<T>],
    cam: &CameraModel<T>,
    cfg: &RansacConfig,
) -> Result<(Pose<T>, Vec<bool>), GeometryError> {
    cfg.validate()?;
    if points.len() != pixels.len() {
        return Err(GeometryError::InvalidInput(
            "correspondence arrays differ in length".into(),
        ));
    }
    let n = points.len();
    if n < SAMPLE_SIZE {
        return Err(GeometryError::InsufficientData {
            needed: SAMPLE_SIZE,
            got: n,
        });
    }
    let to64 = |v: T| crate::scalar::to_f64(v);
    let pts64: Vec<Vector3<f64>> = points.iter().map(|p| p.map(to64)).collect();
    let xn64: Vec<Vector2<f64>> = pixels
        .iter()
        .map(|p| cam.undistort(p).map(|x| x.map(to64)))
        .collect::<Result<_, _>>()?;
    let threshold = lit::<T>(cfg.threshold);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Pose<T>, Vec<bool>, usize, T)> = None;
    let mut required = cfg.max_iterations;
    let mut iteration = 0;
    let mut sp = Vec::with_capacity(SAMPLE_SIZE);
    let mut sx = Vec::with_capacity(SAMPLE_SIZE);
    while iteration < required {
        iteration += 1;
        let sample = rand::seq::index::sample(&mut rng, n, SAMPLE_SIZE);
        sp.clear();
        sx.clear();
        for i in sample.iter() {
            sp.push(pts64[i]);
            sx.push(xn64[i]);
        }
        let Some((c, axes, s)) = principal_axes(&sp) else {
            continue;
        };
        if !(s[1] > s[0] * COLLINEAR_RATIO) {
            continue;
        }
        let mut models = Vec::with_capacity(2);
        if s[2] >= s[0] * PLANAR_RATIO {
            models.extend(dlt_pose(&sp, &sx));
        }
        if s[2] < s[0] * NEAR_PLANAR_RATIO {
            models.extend(homography_pose(&sp, &sx, &c, &axes));
        }
        for (r, t) in models {
            if !(r.iter().chain(t.iter()).all(|v| v.is_finite())) {
                continue;
            }
            let pose: Pose<T> = Pose::<f64>::from_rt(&r, &t).cast();
            let (mask, count, total) = score(&pose, cam, points, pixels, threshold);
            let better = match &best {
                None => count > 0,
                Some((_, _, bc, bt)) => count > *bc || (count == *bc && total < *bt),
            };
            if better {
                required = cfg.required_iterations(count as f64 / n as f64, SAMPLE_SIZE);
                best = Some((pose, mask, count, total));
            }
        }
    }
    let (mut pose, mut mask, mut count, _) = best.ok_or(GeometryError::DegenerateConfiguration)?;
    if count < SAMPLE_SIZE {
        return Err(GeometryError::DegenerateConfiguration);
    }

    for _ in 0..4 {
        let (ip, ix): (Vec<_>, Vec<_>) = points
            .iter()
            .zip(pixels)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((p, x), _)| (*p, *x))
            .unzip();
        let refined = refine_pose(&pose, &ip, &ix, cam, REFINE_ITERATIONS)?;
        let (m2, c2, _) = score(&refined, cam, points, pixels, threshold);
        if c2 < count {
            break;
        }
        let changed = m2 != mask;
        pose = refined;
        mask = m2;
        count = c2;
        if !changed {
            break;
        }
    }
    Ok((pose, mask))
}
