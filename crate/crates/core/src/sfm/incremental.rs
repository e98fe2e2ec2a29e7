use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{Vector2, Vector3};

use super::graph::{track_index, SceneGraph, Track};
use super::{Reconstruction, ScenePoint, SfmError};
use crate::ba::{apply_solution, build_problem, solve, BAError, BAResult, BuildOptions, RobustLoss, SolverOptions};
use crate::geometry::{
    decompose_essential_normalized, estimate_essential_ransac, solve_pnp_ransac, triangulate,
    triangulate_two_view_normalized, CameraModel, Pose, RansacConfig,
};
use crate::scalar::{lit, to_f64, Real};

/// Thresholds and cadences of the incremental controller.
#[derive(Debug, Clone, PartialEq)]
pub struct SfmConfig {
    /// Seed candidates need this many inliers (else the best pair is used).
    pub seed_min_inliers: usize,
    pub seed_min_angle_deg: f64,
    /// Relative orientation of seed candidates; threshold in pixels.
    pub seed_ransac: RansacConfig,
    /// Absolute orientation of new images; threshold in pixels.
    pub pnp_ransac: RansacConfig,
    /// 2D-3D correspondences needed to attempt a registration.
    pub min_correspondences: usize,
    pub max_reprojection: f64,
    pub min_angle_deg: f64,
    /// Registered neighbours adjusted together with each new image.
    pub local_neighbours: usize,
    /// Registrations between global adjustments.
    pub global_interval: usize,
    pub solver: SolverOptions,
    pub loss: RobustLoss,
}

impl Default for SfmConfig {
    fn default() -> Self {
        Self {
            seed_min_inliers: 100,
            seed_min_angle_deg: 2.0,
            seed_ransac: RansacConfig::default(),
            pnp_ransac: RansacConfig {
                threshold: 4.0,
                ..RansacConfig::default()
            },
            min_correspondences: 15,
            max_reprojection: 4.0,
            min_angle_deg: 1.5,
            local_neighbours: 5,
            global_interval: 5,
            solver: SolverOptions {
                max_iterations: 50,
                ..SolverOptions::default()
            },
            loss: RobustLoss::default(),
        }
    }
}

/// The chosen initial pair and its trial relative orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPair<T: Real> {
    pub images: (usize, usize),
    /// Pose of the second image with the first at the origin and a unit
    /// baseline.
    pub pose_b: Pose<T>,
    pub inliers: usize,
    pub median_angle_deg: f64,
}

/// Relative orientation of a pair and the median triangulation angle of
/// its inliers, in degrees.
fn trial_orientation<T: Real>(
    graph: &SceneGraph<T>,
    pair: (usize, usize),
    cam: &CameraModel<T>,
    ransac: &RansacConfig,
) -> Option<(Pose<T>, usize, f64)> {
    let matches = &graph.pairs[&pair];
    let pa: Vec<_> = matches.iter().map(|&(a, _)| graph.keypoints[pair.0][a]).collect();
    let pb: Vec<_> = matches.iter().map(|&(_, b)| graph.keypoints[pair.1][b]).collect();
    let (e, mask) = estimate_essential_ransac(&pa, &pb, cam, ransac).ok()?;
    let mut xa = Vec::new();
    let mut xb = Vec::new();
    for ((a, b), m) in pa.iter().zip(&pb).zip(&mask) {
        if *m {
            xa.push(cam.undistort(a).ok()?);
            xb.push(cam.undistort(b).ok()?);
        }
    }
    let pose = decompose_essential_normalized(&e, &xa, &xb).ok()?;
    let r = pose.rotation_matrix();
    let t = pose.translation();
    let cb = pose.center;
    let mut angles: Vec<f64> = xa
        .iter()
        .zip(&xb)
        .filter_map(|(a, b)| {
            let x = triangulate_two_view_normalized(&r, &t, a, b)?;
            (x.z > T::zero() && pose.to_camera(&x).z > T::zero()).then(|| to_f64(x.angle(&(x - cb))))
        })
        .collect();
    if angles.is_empty() {
        return Some((pose, xa.len(), 0.0));
    }
    angles.sort_by(f64::total_cmp);
    Some((pose, xa.len(), angles[angles.len() / 2].to_degrees()))
}

/// Picks the initial pair: among pairs with at least `seed_min_inliers`
/// inliers (or those sharing the largest count if none reach it), the one
/// with most inliers whose median triangulation angle passes the gate.
pub fn select_seed_pair<T: Real>(
    graph: &SceneGraph<T>,
    cam: &CameraModel<T>,
    cfg: &SfmConfig,
) -> Result<SeedPair<T>, SfmError> {
    let max = graph.pairs.values().map(Vec::len).max().ok_or(SfmError::NoAdequatePair)?;
    let floor = if max >= cfg.seed_min_inliers { cfg.seed_min_inliers } else { max };
    let mut candidates: Vec<(usize, (usize, usize))> = graph
        .pairs
        .iter()
        .filter(|(_, m)| m.len() >= floor)
        .map(|(&k, m)| (m.len(), k))
        .collect();
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, pair) in candidates {
        if let Some((pose_b, inliers, angle)) = trial_orientation(graph, pair, cam, &cfg.seed_ransac) {
            if angle >= cfg.seed_min_angle_deg {
                return Ok(SeedPair {
                    images: pair,
                    pose_b,
                    inliers,
                    median_angle_deg: angle,
                });
            }
        }
    }
    Err(SfmError::NoAdequatePair)
}

/// Outcome of an incremental reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct SfmOutput<T: Real> {
    pub reconstruction: Reconstruction<T>,
    pub seed: SeedPair<T>,
    /// Images in registration order, seed pair first.
    pub registration_order: Vec<usize>,
    /// Images that could not be registered.
    pub unregistered: Vec<usize>,
    /// Result of the closing global adjustment.
    pub final_adjustment: Option<BAResult<T>>,
}

struct Controller<'a, T: Real> {
    tracks: &'a [Track],
    track_of: HashMap<(usize, usize), usize>,
    cfg: &'a SfmConfig,
    recon: Reconstruction<T>,
}

impl<T: Real> Controller<'_, T> {
    /// Triangulates tracks with two or more registered observations that are
    /// not yet in the reconstruction. Observations above the reprojection
    /// threshold are left out; the point must keep two and pass the angle
    /// gate.
    fn triangulate_tracks(&mut self, candidates: impl IntoIterator<Item = usize>) -> usize {
        let max_err = lit::<T>(self.cfg.max_reprojection);
        let min_angle = lit::<T>(self.cfg.min_angle_deg.to_radians());
        let mut added = 0;
        for t in candidates {
            if self.recon.points.contains_key(&t) {
                continue;
            }
            let obs: Vec<(usize, usize)> = self.tracks[t]
                .observations
                .iter()
                .copied()
                .filter(|&(i, _)| self.recon.is_registered(i))
                .collect();
            if obs.len() < 2 {
                continue;
            }
            let views: Vec<(Pose<T>, Vector2<T>)> = obs
                .iter()
                .map(|&(i, k)| (self.recon.poses[i].unwrap(), self.recon.keypoints[i][k]))
                .collect();
            let Ok(x) = triangulate(&views, &self.recon.camera) else { continue };
            let kept: Vec<(usize, usize)> = obs
                .into_iter()
                .filter(|&(i, k)| self.recon.observation_error(&x, i, k).is_some_and(|e| e <= max_err))
                .collect();
            if kept.len() < 2 {
                continue;
            }
            let point = ScenePoint {
                position: x,
                observations: kept,
            };
            if self.recon.point_angle(&point) < min_angle {
                continue;
            }
            self.recon.points.insert(t, point);
            added += 1;
        }
        added
    }

    fn adjust(&mut self, free_images: Option<Vec<usize>>) -> Result<Option<BAResult<T>>, SfmError> {
        let opts = BuildOptions {
            free_images,
            refine_intrinsics: false,
            priors: Vec::new(),
            loss: self.cfg.loss,
        };
        let (mut problem, map) = match build_problem(&self.recon, &opts) {
            Ok(p) => p,
            Err(BAError::EmptyReconstruction) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let result = solve(&mut problem, &self.cfg.solver)?;
        apply_solution(&mut self.recon, &problem, &map);
        self.recon.filter_outliers(self.cfg.max_reprojection, self.cfg.min_angle_deg);
        Ok(Some(result))
    }

    /// 2D-3D correspondences of an unregistered image as
    /// `(track, keypoint)` pairs, in keypoint order.
    fn correspondences(&self, image: usize) -> Vec<(usize, usize)> {
        (0..self.recon.keypoints[image].len())
            .filter_map(|k| {
                let t = *self.track_of.get(&(image, k))?;
                self.recon.points.contains_key(&t).then_some((t, k))
            })
            .collect()
    }

    /// Registered images sharing the most points with `image`.
    fn neighbours(&self, image: usize) -> Vec<usize> {
        let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
        for p in self.recon.points.values() {
            if p.observations.iter().any(|&(i, _)| i == image) {
                for &(i, _) in &p.observations {
                    if i != image {
                        *shared.entry(i).or_default() += 1;
                    }
                }
            }
        }
        let mut ranked: Vec<(usize, usize)> = shared.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.into_iter().take(self.cfg.local_neighbours).map(|(i, _)| i).collect()
    }

    fn register(&mut self, image: usize, corr: &[(usize, usize)]) -> bool {
        let points: Vec<Vector3<T>> = corr.iter().map(|&(t, _)| self.recon.points[&t].position).collect();
        let pixels: Vec<Vector2<T>> = corr.iter().map(|&(_, k)| self.recon.keypoints[image][k]).collect();
        let Ok((pose, mask)) = solve_pnp_ransac(&points, &pixels, &self.recon.camera, &self.cfg.pnp_ransac) else {
            return false;
        };
        if mask.iter().filter(|&&m| m).count() < self.cfg.min_correspondences {
            return false;
        }
        self.recon.poses[image] = Some(pose);
        for (&(t, k), inlier) in corr.iter().zip(&mask) {
            if *inlier {
                self.recon.points.get_mut(&t).unwrap().observations.push((image, k));
            }
        }
        for p in self.recon.points.values_mut() {
            p.observations.sort_unstable();
        }
        let fresh: BTreeSet<usize> = (0..self.recon.keypoints[image].len())
            .filter_map(|k| self.track_of.get(&(image, k)).copied())
            .collect();
        self.triangulate_tracks(fresh);
        true
    }
}

/// Incremental reconstruction: seed pair, then repeated registration of the
/// image with most 2D-3D correspondences, triangulation of new tracks,
/// local adjustment (and global adjustment at a fixed cadence), each
/// followed by outlier filtering. A failed registration is retried once
/// after the next global adjustment.
pub fn incremental_reconstruct<T: Real>(
    graph: &SceneGraph<T>,
    tracks: &[Track],
    cam: &CameraModel<T>,
    cfg: &SfmConfig,
) -> Result<SfmOutput<T>, SfmError> {
    if graph.image_ids.len() < 2 {
        return Err(SfmError::SeedFailure(format!(
            "need at least two images, got {}",
            graph.image_ids.len()
        )));
    }
    let seed = select_seed_pair(graph, cam, cfg)?;
    let (a, b) = seed.images;
    let mut recon = Reconstruction::new(graph.image_ids.clone(), graph.keypoints.clone(), *cam);
    recon.poses[a] = Some(Pose::identity());
    recon.poses[b] = Some(seed.pose_b);
    recon.gauge = Some((a, b));
    let mut ctl = Controller {
        tracks,
        track_of: track_index(tracks),
        cfg,
        recon,
    };
    let seeded = ctl.triangulate_tracks(0..tracks.len());
    if seeded < cfg.min_correspondences {
        return Err(SfmError::SeedFailure(format!(
            "seed pair ({}, {}) triangulated only {seeded} points",
            graph.image_ids[a], graph.image_ids[b]
        )));
    }
    ctl.adjust(None)?;
    if ctl.recon.points.len() < cfg.min_correspondences {
        return Err(SfmError::SeedFailure("seed points did not survive adjustment".into()));
    }

    let n = graph.image_ids.len();
    let mut order = vec![a, b];
    let mut failures = vec![0usize; n];
    let mut waiting: BTreeSet<usize> = BTreeSet::new();
    let mut since_global = 0usize;
    loop {
        let best = (0..n)
            .filter(|&i| !ctl.recon.is_registered(i) && failures[i] < 2 && !waiting.contains(&i))
            .map(|i| (ctl.correspondences(i), i))
            .filter(|(c, _)| c.len() >= cfg.min_correspondences)
            .max_by(|x, y| x.0.len().cmp(&y.0.len()).then(y.1.cmp(&x.1)));
        let Some((corr, image)) = best else {
            if waiting.is_empty() {
                break;
            }
            ctl.adjust(None)?;
            since_global = 0;
            waiting.clear();
            continue;
        };
        if !ctl.register(image, &corr) {
            failures[image] += 1;
            if failures[image] < 2 {
                waiting.insert(image);
            }
            continue;
        }
        order.push(image);
        let mut free = vec![image];
        free.extend(ctl.neighbours(image));
        ctl.adjust(Some(free))?;
        since_global += 1;
        if since_global >= cfg.global_interval {
            ctl.adjust(None)?;
            since_global = 0;
            waiting.clear();
        }
    }
    let final_adjustment = ctl.adjust(None)?;
    let unregistered = (0..n).filter(|&i| !ctl.recon.is_registered(i)).collect();
    Ok(SfmOutput {
        reconstruction: ctl.recon,
        seed,
        registration_order: order,
        unregistered,
        final_adjustment,
    })
}
