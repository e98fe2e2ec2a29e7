//! Aerial triangulation without ground control points.
//!
//! The crate turns per-image feature files and GNSS camera positions into a
//! georeferenced sparse reconstruction: positions are projected to
//! Gauss-Krüger coordinates, candidate pairs are matched with a ratio test
//! and verified epipolarly, images are registered incrementally under bundle
//! adjustment, and the block is finally tied to the GNSS positions and
//! scored. A synthetic survey generator supplies ground truth for every
//! stage.
//!
//! The geometric core is generic over [`scalar::Real`]; the aliases below
//! fix it to `f64`, which is what the pipeline uses.

pub mod ba;
pub mod features;
pub mod geo;
pub mod georef_eval;
pub mod geometry;
pub mod matching;
pub mod pipeline;
pub mod scalar;
pub mod sfm;
pub mod synth;

pub use scalar::Real;

pub type Camera = geometry::CameraModel<f64>;
pub type Pose = geometry::Pose<f64>;
pub type Reconstruction = sfm::Reconstruction<f64>;
pub type ScenePoint = sfm::ScenePoint<f64>;
pub type BAProblem = ba::BAProblem<f64>;
pub type BAResult = ba::BAResult<f64>;
pub type SimilarityTransform = georef_eval::SimilarityTransform<f64>;
pub type SfmOutput = sfm::SfmOutput<f64>;
