use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3};

use crate::geometry::{project, triangulation_angle, CameraModel, Pose};
use crate::scalar::{lit, to_f64, Real};

/// A triangulated track: its position and the `(image, keypoint)` pairs that
/// observe it. Images are indices into [`Reconstruction::image_ids`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePoint<T: Real> {
    pub position: Vector3<T>,
    pub observations: Vec<(usize, usize)>,
}

/// Sparse reconstruction of one flight: a shared camera, the registered
/// poses and the triangulated tracks keyed by track id.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction<T: Real> {
    pub image_ids: Vec<String>,
    pub keypoints: Vec<Vec<Vector2<T>>>,
    pub camera: CameraModel<T>,
    pub poses: Vec<Option<Pose<T>>>,
    pub points: BTreeMap<usize, ScenePoint<T>>,
    /// The seed pair; used to fix the gauge of free-network adjustment.
    pub gauge: Option<(usize, usize)>,
}

impl<T: Real> Reconstruction<T> {
    pub fn new(image_ids: Vec<String>, keypoints: Vec<Vec<Vector2<T>>>, camera: CameraModel<T>) -> Self {
        let n = image_ids.len();
        assert_eq!(keypoints.len(), n, "one keypoint list per image");
        Self {
            image_ids,
            keypoints,
            camera,
            poses: vec![None; n],
            points: BTreeMap::new(),
            gauge: None,
        }
    }

    pub fn num_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_registered(&self, image: usize) -> bool {
        self.poses.get(image).is_some_and(|p| p.is_some())
    }

    /// Indices of registered images in ascending order.
    pub fn registered(&self) -> Vec<usize> {
        (0..self.poses.len()).filter(|&i| self.poses[i].is_some()).collect()
    }

    pub fn num_registered(&self) -> usize {
        self.poses.iter().filter(|p| p.is_some()).count()
    }

    pub fn num_observations(&self) -> usize {
        self.points.values().map(|p| p.observations.len()).sum()
    }

    pub fn image_index(&self, image_id: &str) -> Option<usize> {
        self.image_ids.iter().position(|id| id == image_id)
    }

    /// Pixel error of one observation; `None` if the image is unregistered
    /// or the point is behind it.
    pub fn observation_error(&self, position: &Vector3<T>, image: usize, keypoint: usize) -> Option<T> {
        let pose = self.poses.get(image)?.as_ref()?;
        let obs = self.keypoints[image].get(keypoint)?;
        project(pose, &self.camera, position).map(|p| (p - obs).norm())
    }

    /// Errors of every stored observation, in track then observation order.
    /// Observations behind their camera count as infinite.
    pub fn reprojection_errors(&self) -> Vec<T> {
        let inf = T::max_value().unwrap_or(lit(f64::MAX));
        self.points
            .values()
            .flat_map(|p| {
                p.observations
                    .iter()
                    .map(|&(i, k)| self.observation_error(&p.position, i, k).unwrap_or(inf))
            })
            .collect()
    }

    /// Root-mean-square reprojection error in pixels (0 when empty).
    pub fn rms_reprojection(&self) -> T {
        let e = self.reprojection_errors();
        if e.is_empty() {
            return T::zero();
        }
        (e.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b) / lit(e.len() as f64)).sqrt()
    }

    /// Mean reprojection error in pixels (0 when empty).
    pub fn mean_reprojection(&self) -> T {
        let e = self.reprojection_errors();
        if e.is_empty() {
            return T::zero();
        }
        e.iter().fold(T::zero(), |a, b| a + *b) / lit(e.len() as f64)
    }

    /// Largest pairwise viewing-ray angle of a point's observations, radians.
    pub fn point_angle(&self, point: &ScenePoint<T>) -> T {
        let mut poses = Vec::with_capacity(point.observations.len());
        let mut rays = Vec::with_capacity(point.observations.len());
        for &(i, _) in &point.observations {
            if let Some(pose) = self.poses[i] {
                let dir = pose.to_camera(&point.position);
                poses.push(pose);
                rays.push(Vector2::new(dir.x / dir.z, dir.y / dir.z));
            }
        }
        triangulation_angle(&poses, &rays)
    }

    /// Removes observations above `max_reproj` pixels (or behind the camera)
    /// and then points left with fewer than two observations or a maximum
    /// triangulation angle below `min_angle_deg`. Returns
    /// `(points removed, observations removed)`; observations of removed
    /// points are not double counted.
    pub fn filter_outliers(&mut self, max_reproj: f64, min_angle_deg: f64) -> (usize, usize) {
        let max_reproj = lit::<T>(max_reproj);
        let min_angle = lit::<T>(min_angle_deg.to_radians());
        let mut removed_points = 0;
        let mut removed_obs = 0;
        let ids: Vec<usize> = self.points.keys().copied().collect();
        for id in ids {
            let point = &self.points[&id];
            let keep: Vec<(usize, usize)> = point
                .observations
                .iter()
                .copied()
                .filter(|&(i, k)| {
                    self.observation_error(&point.position, i, k)
                        .is_some_and(|e| e <= max_reproj)
                })
                .collect();
            removed_obs += point.observations.len() - keep.len();
            let point = self.points.get_mut(&id).unwrap();
            point.observations = keep;
            let point = &self.points[&id];
            let drop = point.observations.len() < 2 || self.point_angle(point) < min_angle;
            if drop {
                self.points.remove(&id);
                removed_points += 1;
            }
        }
        (removed_points, removed_obs)
    }

    /// Points CSV: `track_id,x,y,z,n_obs,rms_px`.
    pub fn points_csv(&self) -> String {
        let mut out = String::from("track_id,x,y,z,n_obs,rms_px\n");
        for (id, p) in &self.points {
            let errs: Vec<f64> = p
                .observations
                .iter()
                .map(|&(i, k)| self.observation_error(&p.position, i, k).map(to_f64).unwrap_or(f64::INFINITY))
                .collect();
            let rms = if errs.is_empty() {
                0.0
            } else {
                (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
            };
            let _ = writeln!(
                out,
                "{id},{:.6},{:.6},{:.6},{},{rms:.6}",
                to_f64(p.position.x),
                to_f64(p.position.y),
                to_f64(p.position.z),
                p.observations.len()
            );
        }
        out
    }

    /// Poses CSV: `image_id,qw,qx,qy,qz,cx,cy,cz` for registered images.
    pub fn poses_csv(&self) -> String {
        let mut out = String::from("image_id,qw,qx,qy,qz,cx,cy,cz\n");
        for (i, pose) in self.poses.iter().enumerate() {
            let Some(pose) = pose else { continue };
            let q = pose.rotation.quaternion();
            let c = pose.center;
            let _ = writeln!(
                out,
                "{},{:.12},{:.12},{:.12},{:.12},{:.6},{:.6},{:.6}",
                self.image_ids[i],
                to_f64(q.w),
                to_f64(q.i),
                to_f64(q.j),
                to_f64(q.k),
                to_f64(c.x),
                to_f64(c.y),
                to_f64(c.z)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, UnitQuaternion};

    fn nadir(x: f64) -> Pose<f64> {
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        Pose::new(UnitQuaternion::from_matrix(&r), Vector3::new(x, 0.0, 100.0))
    }

    fn fixture() -> Reconstruction<f64> {
        let cam = CameraModel::pinhole(1000.0, 1000.0, 500.0, 500.0);
        let poses = [nadir(0.0), nadir(20.0), nadir(40.0)];
        let pts = [Vector3::new(5.0, 3.0, 0.0), Vector3::new(20.0, -4.0, 2.0)];
        let keypoints: Vec<Vec<Vector2<f64>>> = poses
            .iter()
            .map(|p| pts.iter().map(|x| project(p, &cam, x).unwrap()).collect())
            .collect();
        let mut r = Reconstruction::new(vec!["a".into(), "b".into(), "c".into()], keypoints, cam);
        for (i, p) in poses.iter().enumerate() {
            r.poses[i] = Some(*p);
        }
        for (t, x) in pts.iter().enumerate() {
            r.points.insert(
                t,
                ScenePoint {
                    position: *x,
                    observations: vec![(0, t), (1, t), (2, t)],
                },
            );
        }
        r
    }

    #[test]
    fn exact_observations_survive() {
        let mut r = fixture();
        assert!(r.rms_reprojection() < 1e-9);
        assert_eq!(r.filter_outliers(4.0, 1.5), (0, 0));
    }

    #[test]
    fn perturbed_observation_is_removed() {
        let mut r = fixture();
        r.keypoints[1][0].x += 10.0;
        assert_eq!(r.filter_outliers(4.0, 1.5), (0, 1));
        assert_eq!(r.points[&0].observations, vec![(0, 0), (2, 0)]);
        assert_eq!(r.filter_outliers(4.0, 1.5), (0, 0));
    }

    #[test]
    fn low_angle_point_is_removed() {
        let mut r = fixture();
        r.points.get_mut(&1).unwrap().observations = vec![(0, 1), (1, 1)];
        // baseline 20 m at 100 m height: about 11 degrees
        assert_eq!(r.filter_outliers(4.0, 15.0), (1, 0));
        assert_eq!(r.filter_outliers(4.0, 15.0), (0, 0));
    }

    #[test]
    fn csv_exports() {
        let r = fixture();
        let pts = r.points_csv();
        assert!(pts.starts_with("track_id,x,y,z,n_obs,rms_px\n0,5.000000,3.000000,0.000000,3,0.000000\n"));
        let poses = r.poses_csv();
        assert_eq!(poses.lines().count(), 4);
        assert!(poses.lines().nth(2).unwrap().starts_with("b,"));
    }
}
