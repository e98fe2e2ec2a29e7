//! Putative matching: nearest neighbour with the distance-ratio test and an
//! optional mutual-nearest-neighbour cross-check, plus match statistics and
//! ratio sweeps.
//!
//! The ratio test runs from A into B. Search is exhaustive, so results are
//! exact and deterministic.

use std::fmt::Write as _;

use thiserror::Error;

use crate::features::FeatureSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("descriptor dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("ratio test needs at least 2 descriptors in the target set, found {0}")]
    TooFewDescriptors(usize),
    #[error("ratio {0} outside (0, 1]")]
    InvalidRatio(f64),
    #[error("ratios must be strictly increasing")]
    RatiosNotIncreasing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    /// L2 descriptor distance.
    pub distance: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub ratio: f64,
    pub cross_check: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            ratio: 0.7,
            cross_check: true,
        }
    }
}

impl MatchConfig {
    fn validate(&self) -> Result<(), MatchError> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(MatchError::InvalidRatio(self.ratio));
        }
        Ok(())
    }
}

/// Default tolerance, in pixels, for judging a match false against truth.
pub const DEFAULT_TRUTH_TOLERANCE: f64 = 3.0;

/// Ratio grid 0.50, 0.55, …, 0.90.
pub fn default_ratio_grid() -> Vec<f64> {
    (0..=8).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Nearest-neighbour structure of one image pair, independent of the ratio.
#[derive(Debug, Clone)]
pub struct PairNeighbours {
    /// Per A keypoint: (nearest index in B, squared d1, squared d2).
    forward: Vec<(usize, f64, f64)>,
    /// Per B keypoint: nearest index in A.
    backward: Vec<Option<usize>>,
    /// Per B keypoint: the A keypoint with the smallest d1 among those whose
    /// nearest neighbour it is.
    best_claim: Vec<Option<usize>>,
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

impl PairNeighbours {
    pub fn compute(a: &FeatureSet, b: &FeatureSet) -> Result<Self, MatchError> {
        if a.descriptor_dim() != b.descriptor_dim() {
            return Err(MatchError::DimensionMismatch {
                a: a.descriptor_dim(),
                b: b.descriptor_dim(),
            });
        }
        if b.len() < 2 {
            return Err(MatchError::TooFewDescriptors(b.len()));
        }
        let mut forward = Vec::with_capacity(a.len());
        let mut backward_best: Vec<(f64, Option<usize>)> = vec![(f64::INFINITY, None); b.len()];
        for (i, da) in a.descriptors().enumerate() {
            let (mut best, mut d1, mut d2) = (0usize, f64::INFINITY, f64::INFINITY);
            for (j, db) in b.descriptors().enumerate() {
                let d = squared_distance(da, db);
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                    best = j;
                } else if d < d2 {
                    d2 = d;
                }
                if d < backward_best[j].0 {
                    backward_best[j] = (d, Some(i));
                }
            }
            forward.push((best, d1, d2));
        }
        let backward = backward_best.into_iter().map(|(_, i)| i).collect();

        let mut claim: Vec<Option<(f64, usize)>> = vec![None; b.len()];
        for (i, &(j, d1, _)) in forward.iter().enumerate() {
            match claim[j] {
                Some((d, _)) if d <= d1 => {}
                _ => claim[j] = Some((d1, i)),
            }
        }
        Ok(Self {
            forward,
            backward,
            best_claim: claim.into_iter().map(|c| c.map(|(_, i)| i)).collect(),
        })
    }

    /// Applies the ratio test (and cross-check) for one configuration.
    pub fn select(&self, cfg: &MatchConfig) -> Result<Vec<Match>, MatchError> {
        cfg.validate()?;
        let r2 = cfg.ratio * cfg.ratio;
        let mut out = Vec::new();
        for (i, &(j, d1, d2)) in self.forward.iter().enumerate() {
            // equal distances are ambiguous; d1 == d2 == 0 included
            if d1 >= d2 || d1 >= r2 * d2 {
                continue;
            }
            let owner = if cfg.cross_check {
                self.backward[j]
            } else {
                self.best_claim[j]
            };
            if owner != Some(i) {
                continue;
            }
            out.push(Match {
                index_a: i,
                index_b: j,
                distance: d1.sqrt() as f32,
            });
        }
        Ok(out)
    }
}

/// Matches descriptors of `a` against `b`. Output is sorted by `index_a` and
/// injective on both sides.
pub fn match_features(
    a: &FeatureSet,
    b: &FeatureSet,
    cfg: &MatchConfig,
) -> Result<Vec<Match>, MatchError> {
    cfg.validate()?;
    PairNeighbours::compute(a, b)?.select(cfg)
}

/// Known correspondence truth: for every keypoint of A, the pixel where its
/// scene point appears in B (if it does).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub expected_in_b: Vec<Option<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchStats {
    pub total_keypoints: usize,
    pub matched: usize,
    pub false_matches: usize,
    pub match_rate: f64,
    pub mismatch_rate: f64,
}

/// Match and mismatch rates. A match is false when its B keypoint lies more
/// than `tol` pixels from the true location, or when A's point has no truth
/// in B.
pub fn match_stats(
    matches: &[Match],
    truth: &GroundTruth,
    b: &FeatureSet,
    tol: f64,
    total_keypoints: usize,
) -> MatchStats {
    let false_matches = matches
        .iter()
        .filter(|m| {
            let kp = b.keypoints()[m.index_b];
            match truth.expected_in_b.get(m.index_a).copied().flatten() {
                Some([x, y]) => (kp.x as f64 - x).hypot(kp.y as f64 - y) > tol,
                None => true,
            }
        })
        .count();
    let matched = matches.len();
    MatchStats {
        total_keypoints,
        matched,
        false_matches,
        match_rate: if total_keypoints == 0 {
            0.0
        } else {
            matched as f64 / total_keypoints as f64
        },
        mismatch_rate: if matched == 0 {
            0.0
        } else {
            false_matches as f64 / matched as f64
        },
    }
}

/// Match statistics across a strictly increasing list of ratios.
pub fn sweep_ratio(
    a: &FeatureSet,
    b: &FeatureSet,
    ratios: &[f64],
    cross_check: bool,
    truth: &GroundTruth,
    tol: f64,
) -> Result<Vec<(f64, MatchStats)>, MatchError> {
    for r in ratios {
        if !(*r > 0.0 && *r <= 1.0) {
            return Err(MatchError::InvalidRatio(*r));
        }
    }
    if ratios.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MatchError::RatiosNotIncreasing);
    }
    let nn = PairNeighbours::compute(a, b)?;
    ratios
        .iter()
        .map(|&ratio| {
            let matches = nn.select(&MatchConfig { ratio, cross_check })?;
            Ok((ratio, match_stats(&matches, truth, b, tol, a.len())))
        })
        .collect()
}

/// `ratio,total,matched,false,match_rate,mismatch_rate`
pub fn write_sweep_csv(rows: &[(f64, MatchStats)]) -> String {
    let mut out = String::from("ratio,total,matched,false,match_rate,mismatch_rate\n");
    for (ratio, s) in rows {
        let _ = writeln!(
            out,
            "{:.2},{},{},{},{},{}",
            ratio, s.total_keypoints, s.matched, s.false_matches, s.match_rate, s.mismatch_rate
        );
    }
    out
}
