use nalgebra::{Matrix2, Matrix2x3, Matrix3, SMatrix, UnitQuaternion, Vector2, Vector3};

use super::GeometryError;
use crate::scalar::{lit, Real};

const UNDISTORT_MAX_ITERATIONS: usize = 20;

/// Pinhole camera with two-term radial distortion
/// `x_d = x (1 + k1 r² + k2 r⁴)` on normalised coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub k1: T,
    pub k2: T,
}

/// Number of intrinsic parameters, ordered `fx, fy, cx, cy, k1, k2`.
pub const INTRINSIC_COUNT: usize = 6;

impl<T: Real> CameraModel<T> {
    pub fn pinhole(fx: T, fy: T, cx: T, cy: T) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: T::zero(),
            k2: T::zero(),
        }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), GeometryError> {
        let (w, h) = (lit::<T>(width as f64), lit::<T>(height as f64));
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(GeometryError::InvalidInput("focal lengths must be positive".into()));
        }
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return Err(GeometryError::InvalidInput(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn mean_focal(&self) -> T {
        (self.fx + self.fy) * lit(0.5)
    }

    pub fn params(&self) -> [T; INTRINSIC_COUNT] {
        [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2]
    }

    pub fn from_params(p: &[T; INTRINSIC_COUNT]) -> Self {
        Self {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            k1: p[4],
            k2: p[5],
        }
    }

    pub fn cast<U: Real>(&self) -> CameraModel<U> {
        let c = |v: T| lit::<U>(crate::scalar::to_f64(v));
        CameraModel {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            k1: c(self.k1),
            k2: c(self.k2),
        }
    }

    fn radial(&self, r2: T) -> T {
        T::one() + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Normalised (undistorted) coordinates to pixels.
    pub fn normalized_to_pixel(&self, xn: &Vector2<T>) -> Vector2<T> {
        let s = self.radial(xn.norm_squared());
        Vector2::new(self.fx * xn.x * s + self.cx, self.fy * xn.y * s + self.cy)
    }

    /// Pixels to normalised undistorted coordinates (Newton inversion of the
    /// radial model).
    pub fn undistort(&self, pixel: &Vector2<T>) -> Result<Vector2<T>, GeometryError> {
        let xd = Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy);
        if self.k1 == T::zero() && self.k2 == T::zero() {
            return Ok(xd);
        }
        let tol = lit::<T>(1e-12).max(T::default_epsilon() * lit(8.0));
        let mut x = xd;
        for _ in 0..UNDISTORT_MAX_ITERATIONS {
            let r2 = x.norm_squared();
            let s = self.radial(r2);
            let ds = self.k1 + lit::<T>(2.0) * self.k2 * r2;
            let f = x * s - xd;
            let jac = Matrix2::identity() * s + (x * x.transpose()) * (lit::<T>(2.0) * ds);
            let step = jac
                .try_inverse()
                .ok_or(GeometryError::NoConvergence)?
                * f;
            x -= step;
            if step.norm() <= tol * (T::one() + x.norm()) {
                return Ok(x);
            }
        }
        Err(GeometryError::NoConvergence)
    }
}

/// Camera pose: `rotation` maps world to camera axes and `center` is the
/// camera centre in world coordinates, so `X_cam = R (X - C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: UnitQuaternion<T>,
    pub center: Vector3<T>,
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            center: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<T>, center: Vector3<T>) -> Self {
        Self { rotation, center }
    }

    /// From `X_cam = R X + t`.
    pub fn from_rt(rotation: &Matrix3<T>, translation: &Vector3<T>) -> Self {
        let q = UnitQuaternion::from_matrix(rotation);
        let center = -(q.to_rotation_matrix().matrix().transpose() * translation);
        Self {
            rotation: q,
            center,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn translation(&self) -> Vector3<T> {
        -(self.rotation * self.center)
    }

    pub fn to_camera(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation * (x - self.center)
    }

    /// Viewing ray of a normalised image point, in world axes.
    pub fn ray(&self, xn: &Vector2<T>) -> Vector3<T> {
        self.rotation.inverse() * Vector3::new(xn.x, xn.y, T::one())
    }

    /// Left-multiplicative tangent update `R <- exp(w) R`, `C <- C + dc`.
    pub fn retract(&self, dw: &Vector3<T>, dc: &Vector3<T>) -> Self {
        Self {
            rotation: UnitQuaternion::from_scaled_axis(*dw) * self.rotation,
            center: self.center + dc,
        }
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        let c = |v: T| lit::<U>(crate::scalar::to_f64(v));
        let q = self.rotation.quaternion();
        Pose {
            rotation: UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
                c(q.w),
                c(q.i),
                c(q.j),
                c(q.k),
            )),
            center: Vector3::new(c(self.center.x), c(self.center.y), c(self.center.z)),
        }
    }
}

/// Projects a world point to pixels; `None` when it is not in front of the
/// camera.
pub fn project<T: Real>(pose: &Pose<T>, cam: &CameraModel<T>, x: &Vector3<T>) -> Option<Vector2<T>> {
    let xc = pose.to_camera(x);
    if !(xc.z > T::zero()) {
        return None;
    }
    Some(cam.normalized_to_pixel(&Vector2::new(xc.x / xc.z, xc.y / xc.z)))
}

/// Projection and its analytic derivatives.
#[derive(Debug, Clone)]
pub struct ProjectionJacobian<T: Real> {
    pub pixel: Vector2<T>,
    /// With respect to the rotation tangent (3) then the centre (3).
    pub pose: SMatrix<T, 2, 6>,
    pub point: Matrix2x3<T>,
    /// With respect to `fx, fy, cx, cy, k1, k2`.
    pub intrinsics: SMatrix<T, 2, INTRINSIC_COUNT>,
}

/// Projection with derivatives. Returns `None` for non-positive depth.
pub fn project_with_jacobian<T: Real>(
    pose: &Pose<T>,
    cam: &CameraModel<T>,
    x: &Vector3<T>,
) -> Option<ProjectionJacobian<T>> {
    let r = pose.rotation_matrix();
    let xc = r * (x - pose.center);
    if !(xc.z > T::zero()) {
        return None;
    }
    let two = lit::<T>(2.0);
    let inv_z = T::one() / xc.z;
    let (xn, yn) = (xc.x * inv_z, xc.y * inv_z);
    let r2 = xn * xn + yn * yn;
    let s = T::one() + cam.k1 * r2 + cam.k2 * r2 * r2;
    let ds = cam.k1 + two * cam.k2 * r2;
    let pixel = Vector2::new(cam.fx * xn * s + cam.cx, cam.fy * yn * s + cam.cy);

    let d_dist = Matrix2::new(
        s + two * xn * xn * ds,
        two * xn * yn * ds,
        two * xn * yn * ds,
        s + two * yn * yn * ds,
    );
    let d_pix_norm = Matrix2::new(cam.fx, T::zero(), T::zero(), cam.fy) * d_dist;
    let d_norm_cam = Matrix2x3::new(
        inv_z,
        T::zero(),
        -xn * inv_z,
        T::zero(),
        inv_z,
        -yn * inv_z,
    );
    let d_pix_cam = d_pix_norm * d_norm_cam;
    let point = d_pix_cam * r;
    let mut pose_jac = SMatrix::<T, 2, 6>::zeros();
    // d(exp(w) Xc)/dw = -[Xc]x
    pose_jac
        .fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(d_pix_cam * -xc.cross_matrix()));
    pose_jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-point));

    let r4 = r2 * r2;
    let intrinsics = SMatrix::<T, 2, INTRINSIC_COUNT>::from_row_slice(&[
        xn * s,
        T::zero(),
        T::one(),
        T::zero(),
        cam.fx * xn * r2,
        cam.fx * xn * r4,
        T::zero(),
        yn * s,
        T::zero(),
        T::one(),
        cam.fy * yn * r2,
        cam.fy * yn * r4,
    ]);
    Some(ProjectionJacobian {
        pixel,
        pose: pose_jac,
        point,
        intrinsics,
    })
}

/// Pixel distance between the projection of `point` and `obs`.
pub fn reprojection_error<T: Real>(
    point: &Vector3<T>,
    pose: &Pose<T>,
    cam: &CameraModel<T>,
    obs: &Vector2<T>,
) -> Result<T, GeometryError> {
    project(pose, cam, point)
        .map(|p| (p - obs).norm())
        .ok_or(GeometryError::BehindCamera)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraModel<f64> {
        CameraModel {
            fx: 1000.0,
            fy: 990.0,
            cx: 500.0,
            cy: 375.0,
            k1: -0.1,
            k2: 0.01,
        }
    }

    #[test]
    fn pinhole_inverse() {
        let c = CameraModel::pinhole(800.0, 820.0, 320.0, 240.0);
        assert_eq!(c.undistort(&Vector2::new(320.0, 240.0)).unwrap(), Vector2::zeros());
        let x = c.undistort(&Vector2::new(400.0, 100.0)).unwrap();
        assert_eq!(x, Vector2::new(80.0 / 800.0, -140.0 / 820.0));
    }

    #[test]
    fn distort_undistort_identity() {
        let c = cam();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let xn = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.4));
            let px = c.normalized_to_pixel(&xn);
            let back = c.undistort(&px).unwrap();
            assert!((back - xn).norm() < 1e-9);
        }
    }

    #[test]
    fn undistort_single_precision() {
        let c = cam().cast::<f32>();
        let xn = Vector2::new(0.3f32, -0.2);
        let back = c.undistort(&c.normalized_to_pixel(&xn)).unwrap();
        assert!((back - xn).norm() < 1e-5);
    }

    #[test]
    fn reprojection_basics() {
        let pose = Pose::new(
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
            Vector3::new(1.0, 2.0, -10.0),
        );
        let x = Vector3::new(0.5, 1.0, 3.0);
        let obs = project(&pose, &cam(), &x).unwrap();
        assert_eq!(reprojection_error(&x, &pose, &cam(), &obs).unwrap(), 0.0);
        let shifted = obs + Vector2::new(3.0, 0.0);
        assert!((reprojection_error(&x, &pose, &cam(), &shifted).unwrap() - 3.0).abs() < 1e-12);
        let behind = Vector3::new(1.0, 2.0, -20.0);
        assert_eq!(
            reprojection_error(&behind, &pose, &cam(), &obs),
            Err(GeometryError::BehindCamera)
        );
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let c = cam();
        let pose = Pose::new(
            UnitQuaternion::from_euler_angles(0.2, 0.1, -0.3),
            Vector3::new(0.5, -1.0, -8.0),
        );
        let x = Vector3::new(1.0, 0.5, 2.0);
        let j = project_with_jacobian(&pose, &c, &x).unwrap();
        let h = 1e-6;
        for k in 0..6 {
            let mut d = [0.0; 6];
            d[k] = h;
            let dw = Vector3::new(d[0], d[1], d[2]);
            let dc = Vector3::new(d[3], d[4], d[5]);
            let plus = project(&pose.retract(&dw, &dc), &c, &x).unwrap();
            let minus = project(&pose.retract(&-dw, &-dc), &c, &x).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - j.pose.column(k)).norm() < 1e-5 * (1.0 + fd.norm()), "pose col {k}");
        }
        for k in 0..3 {
            let mut dx = Vector3::zeros();
            dx[k] = h;
            let fd = (project(&pose, &c, &(x + dx)).unwrap() - project(&pose, &c, &(x - dx)).unwrap())
                / (2.0 * h);
            assert!((fd - j.point.column(k)).norm() < 1e-5 * (1.0 + fd.norm()));
        }
        for k in 0..INTRINSIC_COUNT {
            let mut p = c.params();
            let mut m = c.params();
            p[k] += h;
            m[k] -= h;
            let fd = (project(&pose, &CameraModel::from_params(&p), &x).unwrap()
                - project(&pose, &CameraModel::from_params(&m), &x).unwrap())
                / (2.0 * h);
            assert!((fd - j.intrinsics.column(k)).norm() < 1e-5 * (1.0 + fd.norm()));
        }
    }
}
