//! Linear (DLT) triangulation with a Gauss-Newton polish.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector2, Vector3, Vector4};

use super::{project_with_jacobian, CameraModel, GeometryError, Pose};
use crate::scalar::{lit, Real};

/// Rays closer than this to parallel cannot be triangulated.
pub const MIN_TRIANGULATION_ANGLE_DEG: f64 = 0.1;

/// Largest pairwise angle (radians) between the viewing rays of the
/// normalised image points `xn[i]` seen from `poses[i]`.
pub fn triangulation_angle<T: Real>(poses: &[Pose<T>], xn: &[Vector2<T>]) -> T {
    let rays: Vec<Vector3<T>> = poses.iter().zip(xn).map(|(p, x)| p.ray(x)).collect();
    let mut best = T::zero();
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            best = best.max(rays[i].angle(&rays[j]));
        }
    }
    best
}

fn solve_homogeneous<T: Real>(rows: &[[T; 4]]) -> Option<Vector4<T>> {
    let n = rows.len().max(4);
    let mut a = DMatrix::<T>::zeros(n, 4);
    for (i, r) in rows.iter().enumerate() {
        for k in 0..4 {
            a[(i, k)] = r[k];
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let x = v_t.row(3);
    Some(Vector4::new(x[0], x[1], x[2], x[3]))
}

fn dlt_rows<T: Real>(p: &Matrix3x4<T>, x: &Vector2<T>) -> [[T; 4]; 2] {
    let mut out = [[T::zero(); 4]; 2];
    for k in 0..4 {
        out[0][k] = x.x * p[(2, k)] - p[(0, k)];
        out[1][k] = x.y * p[(2, k)] - p[(1, k)];
    }
    out
}

fn dehomogenize<T: Real>(x: &Vector4<T>) -> Option<Vector3<T>> {
    let scale = x.xyz().norm();
    if !(x.w.abs() > scale * T::default_epsilon() * lit(1e3)) {
        return None;
    }
    Some(x.xyz() / x.w)
}

/// Two-view DLT on normalised coordinates with camera A at `[I | 0]` and B at
/// `[R | t]`. Returns the point in A's frame, or `None` at infinity.
pub fn triangulate_two_view_normalized<T: Real>(
    r: &Matrix3<T>,
    t: &Vector3<T>,
    xa: &Vector2<T>,
    xb: &Vector2<T>,
) -> Option<Vector3<T>> {
    let pa = Matrix3x4::identity();
    let mut pb = Matrix3x4::zeros();
    pb.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    pb.set_column(3, t);
    let [r0, r1] = dlt_rows(&pa, xa);
    let [r2, r3] = dlt_rows(&pb, xb);
    dehomogenize(&solve_homogeneous(&[r0, r1, r2, r3])?)
}

fn cost<T: Real>(obs: &[(Pose<T>, Vector2<T>)], cam: &CameraModel<T>, x: &Vector3<T>) -> Option<T> {
    let mut sum = T::zero();
    for (pose, px) in obs {
        let p = super::project(pose, cam, x)?;
        sum += (p - px).norm_squared();
    }
    Some(sum)
}

/// Triangulates a point from two or more `(pose, pixel)` observations.
///
/// The linear solution is computed in a frame centred on the cameras and
/// then polished by one Gauss-Newton step on the pixel reprojection error,
/// kept only if it lowers the cost.
pub fn triangulate<T: Real>(
    observations: &[(Pose<T>, Vector2<T>)],
    cam: &CameraModel<T>,
) -> Result<Vector3<T>, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::InsufficientData {
            needed: 2,
            got: observations.len(),
        });
    }
    let xn = observations
        .iter()
        .map(|(_, p)| cam.undistort(p))
        .collect::<Result<Vec<_>, _>>()?;
    let poses: Vec<Pose<T>> = observations.iter().map(|(p, _)| *p).collect();
    let angle = triangulation_angle(&poses, &xn);
    if !(angle >= lit::<T>(MIN_TRIANGULATION_ANGLE_DEG.to_radians())) {
        return Err(GeometryError::DegenerateGeometry);
    }

    let count = lit::<T>(poses.len() as f64);
    let mean = poses.iter().fold(Vector3::zeros(), |a, p| a + p.center) / count;
    let spread = poses
        .iter()
        .map(|p| (p.center - mean).norm())
        .fold(T::zero(), |a, b| a + b)
        / count;
    if !(spread > T::zero()) {
        return Err(GeometryError::DegenerateGeometry);
    }
    let mut rows = Vec::with_capacity(2 * poses.len());
    for (pose, x) in poses.iter().zip(&xn) {
        let r = pose.rotation_matrix();
        let c = (pose.center - mean) / spread;
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        p.set_column(3, &(-(r * c)));
        rows.extend(dlt_rows(&p, x));
    }
    let h = solve_homogeneous(&rows).ok_or(GeometryError::DegenerateGeometry)?;
    let local = dehomogenize(&h).ok_or(GeometryError::DegenerateGeometry)?;
    let mut x = mean + local * spread;

    if poses.iter().any(|p| !(p.to_camera(&x).z > T::zero())) {
        return Err(GeometryError::BehindCamera);
    }
    let current = cost(observations, cam, &x).ok_or(GeometryError::BehindCamera)?;
    let mut jtj = Matrix3::<T>::zeros();
    let mut jtr = Vector3::<T>::zeros();
    for (pose, px) in observations {
        let pj = project_with_jacobian(pose, cam, &x).ok_or(GeometryError::BehindCamera)?;
        let res = pj.pixel - px;
        jtj += pj.point.transpose() * pj.point;
        jtr += pj.point.transpose() * res;
    }
    if let Some(inv) = jtj.try_inverse() {
        let candidate = x - inv * jtr;
        if matches!(cost(observations, cam, &candidate), Some(c) if c < current) {
            x = candidate;
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::DegenerateGeometry);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use nalgebra::UnitQuaternion;

    fn nadir(cx: f64) -> Pose<f64> {
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        Pose::new(
            UnitQuaternion::from_matrix(&r),
            Vector3::new(cx, 0.0, 200.0),
        )
    }

    fn cam() -> CameraModel<f64> {
        CameraModel::pinhole(1000.0, 1000.0, 500.0, 375.0)
    }

    #[test]
    fn exact_recovery() {
        let x = Vector3::new(12.0, -7.0, 3.5);
        let obs: Vec<_> = [0.0, 40.0, 80.0]
            .iter()
            .map(|&c| (nadir(c), project(&nadir(c), &cam(), &x).unwrap()))
            .collect();
        let got = triangulate(&obs, &cam()).unwrap();
        assert!((got - x).norm() < 1e-8, "{got}");
    }

    #[test]
    fn two_views_exact() {
        let x = Vector3::new(10.0, 20.0, 30.0);
        let obs: Vec<_> = [0.0, 50.0]
            .iter()
            .map(|&c| (nadir(c), project(&nadir(c), &cam(), &x).unwrap()))
            .collect();
        assert!((triangulate(&obs, &cam()).unwrap() - x).norm() < 1e-9);
    }

    #[test]
    fn zero_baseline() {
        let x = Vector3::new(10.0, 20.0, 30.0);
        let p = nadir(0.0);
        let obs = vec![(p, project(&p, &cam(), &x).unwrap()); 2];
        assert_eq!(triangulate(&obs, &cam()), Err(GeometryError::DegenerateGeometry));
    }

    #[test]
    fn parallel_rays_rejected() {
        let x = Vector3::new(0.0, 0.0, 0.0);
        let p = nadir(0.0);
        let q = nadir(0.2);
        let obs = vec![
            (p, project(&p, &cam(), &x).unwrap()),
            (q, project(&q, &cam(), &x).unwrap()),
        ];
        assert_eq!(triangulate(&obs, &cam()), Err(GeometryError::DegenerateGeometry));
    }

    #[test]
    fn point_behind_cameras() {
        // Rays that intersect above the cameras.
        let p = nadir(0.0);
        let q = nadir(40.0);
        let above = Vector3::new(20.0, 0.0, 400.0);
        let mirror = |pose: &Pose<f64>| {
            let c = pose.to_camera(&above);
            cam().normalized_to_pixel(&Vector2::new(c.x / c.z, c.y / c.z))
        };
        let obs = vec![(p, mirror(&p)), (q, mirror(&q))];
        assert_eq!(triangulate(&obs, &cam()), Err(GeometryError::BehindCamera));
    }

    #[test]
    fn single_view() {
        let obs = vec![(nadir(0.0), Vector2::new(1.0, 1.0))];
        assert!(matches!(
            triangulate(&obs, &cam()),
            Err(GeometryError::InsufficientData { .. })
        ));
    }

    #[test]
    fn two_view_normalized() {
        let r = Matrix3::identity();
        let t = Vector3::new(-1.0, 0.0, 0.0);
        let x = Vector3::new(0.3, -0.2, 4.0);
        let y = r * x + t;
        let got = triangulate_two_view_normalized(
            &r,
            &t,
            &Vector2::new(x.x / x.z, x.y / x.z),
            &Vector2::new(y.x / y.z, y.y / y.z),
        )
        .unwrap();
        assert!((got - x).norm() < 1e-12);
    }
}
