use aerotri::ba::{
    check_jacobian, damped_step, solve, LinearSolver, PositionPrior, SolverOptions, Termination, POSE_PARAMS,
};
use aerotri::geometry::INTRINSIC_COUNT;
use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

mod common;

use common::ba_scene::{perturb, scene};

#[test]
fn zero_residual_problem_is_already_optimal() {
    let mut p = scene(1, 2, 3, 200);
    let r = solve(&mut p, &SolverOptions::default()).unwrap();
    assert!(r.iterations <= 1, "{} iterations", r.iterations);
    assert!(r.final_cost < 1e-20);
    assert_eq!(r.termination, Termination::Converged);
}

#[test]
fn perturbed_scene_is_recovered() {
    let truth = scene(2, 3, 4, 600);
    let mut p = truth.clone();
    perturb(&mut p, 3, 0.5, 0.5, 0.5);
    let r = solve(&mut p, &SolverOptions::default()).unwrap();
    assert!(r.rms_reprojection < 1e-6, "rms {}", r.rms_reprojection);
    for (a, b) in p.cameras.iter().zip(&truth.cameras) {
        assert!((a.pose.center - b.pose.center).norm() < 1e-4);
        assert!(a.pose.rotation.angle_to(&b.pose.rotation) < 1e-6);
    }
}

#[test]
fn intrinsics_refinement_recovers_focal() {
    let truth = scene(4, 3, 4, 800);
    let mut p = truth.clone();
    perturb(&mut p, 5, 0.1, 0.1, 0.1);
    p.intrinsics.fx += 3.0;
    p.intrinsics.fy -= 2.0;
    p.intrinsics_fixed = [false, false, true, true, true, true];
    let r = solve(&mut p, &SolverOptions::default()).unwrap();
    assert!(r.rms_reprojection < 1e-6, "rms {}", r.rms_reprojection);
    assert!((p.intrinsics.fx - truth.intrinsics.fx).abs() < 1e-5);
    assert!((p.intrinsics.fy - truth.intrinsics.fy).abs() < 1e-5);
}

#[test]
fn cost_never_increases_over_random_problems() {
    let noise = Normal::new(0.0, 0.5).unwrap();
    for seed in 0..100u64 {
        let mut p = scene(100 + seed, 2, 2 + (seed % 3) as usize, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for o in p.observations.iter_mut() {
            o.pixel += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        }
        if seed % 10 == 0 {
            p.observations[0].pixel.x += 30.0;
        }
        perturb(&mut p, seed, 0.3, 0.3, 0.3);
        let r = solve(&mut p, &SolverOptions::default()).unwrap();
        assert!(r.final_cost <= r.initial_cost);
        for w in r.cost_history.windows(2) {
            assert!(w[1] < w[0], "seed {seed}");
        }
    }
}

#[test]
fn schur_matches_dense_on_small_problems() {
    for seed in 0..10u64 {
        let mut p = scene(200 + seed, 1, 5, 50);
        p.intrinsics_fixed = [false; INTRINSIC_COUNT];
        perturb(&mut p, seed, 0.2, 0.2, 0.2);
        for lambda in [1e-4, 1.0] {
            let a = damped_step(&p, lambda, LinearSolver::Schur).unwrap().unwrap();
            let b = damped_step(&p, lambda, LinearSolver::Dense).unwrap().unwrap();
            let rel = (&a - &b).norm() / b.norm();
            assert!(rel < 1e-8, "seed {seed} lambda {lambda}: {rel}");
        }
    }
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    for seed in 0..5u64 {
        let mut p = scene(300 + seed, 2, 2, 30);
        p.intrinsics_fixed = [false; INTRINSIC_COUNT];
        perturb(&mut p, seed, 0.5, 0.5, 0.5);
        assert!(check_jacobian(&p, 1e-6).unwrap() < 1e-5);
    }
}

#[test]
fn priors_carry_the_gauge() {
    let truth = scene(6, 2, 3, 300);
    let mut p = truth.clone();
    p.cameras.iter_mut().for_each(|c| c.fixed = [false; POSE_PARAMS]);
    p.priors = truth
        .cameras
        .iter()
        .enumerate()
        .map(|(i, c)| PositionPrior {
            camera: i,
            position: c.pose.center,
            sigma: Vector3::new(0.01, 0.01, 0.03),
        })
        .collect();
    perturb(&mut p, 7, 0.3, 0.3, 0.3);
    let r = solve(&mut p, &SolverOptions::default()).unwrap();
    assert!(r.final_cost < 1e-12, "{}", r.final_cost);
    for (a, b) in p.cameras.iter().zip(&truth.cameras) {
        assert!((a.pose.center - b.pose.center).norm() < 1e-6);
    }
}
