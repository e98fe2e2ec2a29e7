use aerotri::geometry::{
    decompose_essential, estimate_essential_ransac, project, sampson_distance, solve_pnp_ransac,
    triangulate, CameraModel, Pose, RansacConfig,
};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

mod common;

use common::pair::{camera, nadir, plant_outliers, relative, synthetic_pair, HEIGHT, WIDTH};

#[test]
fn noise_free_relative_pose() {
    for seed in 0..10 {
        let pair = synthetic_pair(seed, 200);
        let cam = camera();
        let (e, mask) = estimate_essential_ransac(&pair.pa, &pair.pb, &cam, &RansacConfig::default()).unwrap();
        assert!(mask.iter().all(|&m| m));
        let xa: Vec<_> = pair.pa.iter().map(|p| cam.undistort(p).unwrap()).collect();
        let xb: Vec<_> = pair.pb.iter().map(|p| cam.undistort(p).unwrap()).collect();
        let worst = xa.iter().zip(&xb).map(|(a, b)| e.epipolar_residual(a, b)).fold(0.0, f64::max);
        assert!(worst < 1e-9, "epipolar residual {worst}");
        let pose = decompose_essential(&e, &pair.pa, &pair.pb, &cam).unwrap();
        let (r, t) = relative(&pair.a, &pair.b);
        assert!(pose.rotation.angle_to(&r) < 1e-6);
        assert!(pose.translation().angle(&t) < 1e-6);
    }
}

#[test]
fn essential_ransac_recovers_planted_inliers() {
    for trial in 0..50u64 {
        let mut pair = synthetic_pair(1000 + trial, 140);
        let truth = plant_outliers(&mut pair, 42, trial);
        let cfg = RansacConfig {
            seed: trial,
            ..Default::default()
        };
        let (_, mask) = estimate_essential_ransac(&pair.pa, &pair.pb, &camera(), &cfg).unwrap();
        assert_eq!(mask, truth, "trial {trial}");
    }
}

#[test]
fn essential_ransac_is_deterministic() {
    let pair = synthetic_pair(5, 100);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pb: Vec<_> = pair
        .pb
        .iter()
        .map(|p| p + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
        .collect();
    let a = estimate_essential_ransac(&pair.pa, &pb, &camera(), &RansacConfig::default()).unwrap();
    let b = estimate_essential_ransac(&pair.pa, &pb, &camera(), &RansacConfig::default()).unwrap();
    assert_eq!(a, b);
    for ((u, v), &m) in pair.pa.iter().zip(&pb).zip(&a.1) {
        let d = sampson_distance(&a.0 .0, &camera().undistort(u).unwrap(), &camera().undistort(v).unwrap())
            * camera().mean_focal();
        assert_eq!(m, d <= 1.0);
    }
}

#[test]
fn pnp_recovers_planted_inliers() {
    let cam = camera();
    for trial in 0..20u64 {
        let pair = synthetic_pair(2000 + trial, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut pixels = pair.pb.clone();
        let mut truth = vec![true; pixels.len()];
        for i in 0..24 {
            loop {
                let v = Vector2::new(rng.random_range(0.0..WIDTH), rng.random_range(0.0..HEIGHT));
                if (v - pair.pb[i]).norm() > 10.0 {
                    pixels[i] = v;
                    break;
                }
            }
            truth[i] = false;
        }
        let cfg = RansacConfig {
            threshold: 2.0,
            seed: trial,
            ..Default::default()
        };
        let (pose, mask) = solve_pnp_ransac(&pair.points, &pixels, &cam, &cfg).unwrap();
        assert_eq!(mask, truth, "trial {trial}");
        assert!(pose.rotation.angle_to(&pair.b.rotation) < 1e-6);
        assert!((pose.center - pair.b.center).norm() < 1e-6);
    }
}

/// Maximum-likelihood point by Gauss-Newton with numerical derivatives,
/// started at the truth and iterated to convergence.
fn nls_oracle(obs: &[(Pose<f64>, Vector2<f64>)], cam: &CameraModel<f64>, start: Vector3<f64>) -> Vector3<f64> {
    let residuals = |x: &Vector3<f64>| -> Vec<f64> {
        obs.iter()
            .flat_map(|(p, o)| {
                let q = project(p, cam, x).unwrap() - o;
                [q.x, q.y]
            })
            .collect()
    };
    let mut x = start;
    for _ in 0..50 {
        let r0 = residuals(&x);
        let mut jac = nalgebra::DMatrix::zeros(r0.len(), 3);
        for k in 0..3 {
            let h = 1e-6 * (1.0 + x[k].abs());
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let (rp, rm) = (residuals(&xp), residuals(&xm));
            for i in 0..r0.len() {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let r = nalgebra::DVector::from_vec(r0);
        let jt = jac.transpose();
        let step = (&jt * &jac).try_inverse().unwrap() * (jt * r);
        x -= Vector3::new(step[0], step[1], step[2]);
        if step.norm() < 1e-12 {
            break;
        }
    }
    x
}

#[test]
fn triangulation_noise_matches_least_squares_oracle() {
    let cam = camera();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut ours, mut oracle) = (0.0, 0.0);
    let trials = 1000;
    let mut done = 0;
    while done < trials {
        let poses: Vec<_> = [(0.0, 0.0), (40.0, 0.0), (0.0, 40.0), (40.0, 40.0)]
            .iter()
            .map(|&(x, y)| nadir(Vector3::new(x, y, 200.0), &mut rng, 0.03))
            .collect();
        let truth = Vector3::new(
            rng.random_range(0.0..40.0),
            rng.random_range(0.0..40.0),
            rng.random_range(-10.0..10.0),
        );
        let clean: Option<Vec<_>> = poses.iter().map(|p| project(p, &cam, &truth)).collect();
        let Some(clean) = clean else { continue };
        let obs: Vec<_> = poses
            .iter()
            .zip(&clean)
            .map(|(p, c)| (*p, c + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))))
            .collect();
        let got = triangulate(&obs, &cam).unwrap();
        let best = nls_oracle(&obs, &cam, truth);
        ours += (got - truth).norm_squared();
        oracle += (best - truth).norm_squared();
        done += 1;
    }
    let (ours, oracle) = ((ours / trials as f64).sqrt(), (oracle / trials as f64).sqrt());
    assert!((ours - oracle).abs() <= 0.2 * oracle, "rms {ours} vs oracle {oracle}");
}
