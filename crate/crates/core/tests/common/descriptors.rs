//! Random descriptor sets for matcher tests.

use aerotri::features::{FeatureSet, Keypoint};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn build(id: &str, descriptors: &[Vec<f32>], dim: usize) -> FeatureSet {
    let mut fs = FeatureSet::new(id, 1000, 1000, dim);
    for (i, d) in descriptors.iter().enumerate() {
        fs.push(Keypoint::new((i % 1000) as f32, (i / 1000) as f32, 1.0), d).unwrap();
    }
    fs
}

/// Two sets: `b` holds noisy copies of a random share of `a` plus fresh
/// descriptors, shuffled, so that ratios spread across (0, 1].
pub fn random_pair(rng: &mut ChaCha8Rng, n_a: usize, n_b: usize, dim: usize) -> (FeatureSet, FeatureSet) {
    let da: Vec<Vec<f32>> = (0..n_a).map(|_| unit(rng, dim)).collect();
    let sigma = rng.random_range(0.05..0.6);
    let mut db: Vec<Vec<f32>> = (0..n_b)
        .map(|_| {
            if rng.random_bool(0.6) {
                let src = &da[rng.random_range(0..n_a)];
                let noise = unit(rng, dim);
                let v: Vec<f64> = src.iter().zip(&noise).map(|(&s, &e)| s as f64 + sigma * e as f64).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| (x / n) as f32).collect()
            } else {
                unit(rng, dim)
            }
        })
        .collect();
    for i in (1..db.len()).rev() {
        db.swap(i, rng.random_range(0..=i));
    }
    (build("a", &da, dim), build("b", &db, dim))
}
