//! Camera model, epipolar geometry, triangulation and absolute pose.

mod camera;
mod essential;
mod pnp;
mod triangulate;

pub use camera::{
    project, project_with_jacobian, reprojection_error, CameraModel, Pose, ProjectionJacobian,
    INTRINSIC_COUNT,
};
pub use essential::{
    decompose_essential, decompose_essential_normalized, eight_point, enforce_essential,
    estimate_essential_ransac, sampson_distance, EssentialMatrix,
};
pub use pnp::{refine_pose, solve_pnp_ransac};
pub use triangulate::{triangulate, triangulate_two_view_normalized, triangulation_angle};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("insufficient data: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate configuration: no non-degenerate sample found")]
    DegenerateConfiguration,
    #[error("degenerate geometry: rays nearly parallel")]
    DegenerateGeometry,
    #[error("chirality test is ambiguous")]
    ChiralityAmbiguous,
    #[error("point lies behind a camera")]
    BehindCamera,
    #[error("iteration did not converge")]
    NoConvergence,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier threshold in pixels.
    pub threshold: f64,
    pub confidence: f64,
    pub min_iterations: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            confidence: 0.9999,
            min_iterations: 100,
            max_iterations: 10_000,
            seed: 42,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(GeometryError::InvalidInput("confidence must be in (0, 1)".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(GeometryError::InvalidInput("threshold must be positive".into()));
        }
        if self.min_iterations > self.max_iterations {
            return Err(GeometryError::InvalidInput(
                "min_iterations exceeds max_iterations".into(),
            ));
        }
        Ok(())
    }

    /// Iterations needed to draw one all-inlier sample with the configured
    /// confidence, clamped to `[min_iterations, max_iterations]`.
    pub fn required_iterations(&self, inlier_ratio: f64, sample_size: usize) -> usize {
        let p_good = inlier_ratio.clamp(0.0, 1.0).powi(sample_size as i32);
        let n = if p_good >= 1.0 {
            0.0
        } else if p_good <= 0.0 {
            f64::INFINITY
        } else {
            ((1.0 - self.confidence).ln() / (1.0 - p_good).ln()).ceil()
        };
        (n.min(self.max_iterations as f64) as usize).clamp(self.min_iterations, self.max_iterations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_count() {
        let cfg = RansacConfig::default();
        assert_eq!(cfg.required_iterations(1.0, 8), 100);
        assert_eq!(cfg.required_iterations(0.0, 8), 10_000);
        // 0.7^8 = 0.0576 -> ln(1e-4)/ln(0.9424) = 155.3
        assert_eq!(cfg.required_iterations(0.7, 8), 156);
        assert!(RansacConfig { confidence: 1.0, ..cfg }.validate().is_err());
    }
}
