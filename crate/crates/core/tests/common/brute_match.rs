//! Exhaustive reference matcher: every distance computed and sorted.

use aerotri::features::FeatureSet;

fn distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Indices of `targets` ordered by distance to `query`, ties by index.
fn ranked(query: &[f32], targets: &FeatureSet) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = targets.descriptors().map(|t| distance(query, t)).zip(0..).collect();
    d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    d
}

/// Ratio-test matches of `a` against `b` as `(index_a, index_b)`.
///
/// With `cross_check`, `a[i]` must also be the nearest A descriptor of its
/// match. Without it, a B keypoint claimed by several A keypoints goes to
/// the claimant with the smallest nearest distance (lowest index on ties).
pub fn brute_force_matches(a: &FeatureSet, b: &FeatureSet, ratio: f64, cross_check: bool) -> Vec<(usize, usize)> {
    let nearest: Vec<(usize, f64, f64)> = a
        .descriptors()
        .map(|q| {
            let r = ranked(q, b);
            (r[0].1, r[0].0, r[1].0)
        })
        .collect();
    let mut out = Vec::new();
    for (i, &(j, d1, d2)) in nearest.iter().enumerate() {
        if !(d1 < d2 && d1 < ratio * d2) {
            continue;
        }
        let owner = if cross_check {
            ranked(b.descriptor(j), a)[0].1
        } else {
            (0..a.len())
                .filter(|&k| nearest[k].0 == j)
                .min_by(|&x, &y| nearest[x].1.total_cmp(&nearest[y].1).then(x.cmp(&y)))
                .unwrap()
        };
        if owner == i {
            out.push((i, j));
        }
    }
    out
}
