//! Incremental structure from motion: scene graph and tracks, seed pair
//! selection and the register, triangulate, adjust and filter loop.

mod graph;
mod incremental;
mod reconstruction;

pub use graph::{build_scene_graph, track_index, verify_matches, SceneGraph, Track};
pub use incremental::{incremental_reconstruct, select_seed_pair, SeedPair, SfmConfig, SfmOutput};
pub use reconstruction::{Reconstruction, ScenePoint};

use thiserror::Error;

use crate::ba::BAError;
use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum SfmError {
    #[error("no image pair has enough inliers and parallax to start")]
    NoAdequatePair,
    #[error("seed failure: {0}")]
    SeedFailure(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Adjustment(#[from] BAError),
}
