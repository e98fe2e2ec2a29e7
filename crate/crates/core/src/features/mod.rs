//! Feature sets: keypoints with L2-normalised descriptors, the FEAT binary
//! format, and a small built-in corner detector.
//!
//! FEAT layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `FEAT` |
//! | 4     | version (u32, = 1) |
//! | 4     | image width (u32) |
//! | 4     | image height (u32) |
//! | 4     | keypoint count `N` (u32) |
//! | 4     | descriptor dimension `D` (u32) |
//! | 12·N  | `(x, y, score)` as f32 |
//! | 4·N·D | descriptors, row-major f32 |

mod detect;
mod pgm;

pub use detect::{detect_builtin, DETECTOR_DESCRIPTOR_DIM};
pub use pgm::{read_pgm, write_pgm, GrayImage};

use thiserror::Error;

pub const FEAT_MAGIC: &[u8; 4] = b"FEAT";
pub const FEAT_VERSION: u32 = 1;
pub const FEAT_HEADER_LEN: usize = 24;

const MIN_DESCRIPTOR_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("bad magic, expected `FEAT`")]
    BadMagic,
    #[error("unsupported FEAT version {0}")]
    BadVersion(u32),
    #[error("file truncated: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingData(usize),
    #[error("keypoint {index} at ({x}, {y}) lies outside the {width}x{height} image")]
    BoundsViolation {
        index: usize,
        x: f32,
        y: f32,
        width: u32,
        height: u32,
    },
    #[error("feature set invariant violated: {0}")]
    InvariantViolation(String),
    #[error("descriptor {0} has zero norm")]
    ZeroDescriptor(usize),
    #[error("image {width}x{height} is smaller than 32x32")]
    TooSmall { width: u32, height: u32 },
    #[error("malformed PGM: {0}")]
    Pgm(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub score: f32,
}

impl Keypoint {
    pub fn new(x: f32, y: f32, score: f32) -> Self {
        Self { x, y, score }
    }
}

/// Keypoints of one image with their descriptors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub image_id: String,
    pub image_width: u32,
    pub image_height: u32,
    keypoints: Vec<Keypoint>,
    descriptor_dim: usize,
    descriptors: Vec<f32>,
}

impl FeatureSet {
    pub fn new(image_id: impl Into<String>, image_width: u32, image_height: u32, descriptor_dim: usize) -> Self {
        Self {
            image_id: image_id.into(),
            image_width,
            image_height,
            keypoints: Vec::new(),
            descriptor_dim,
            descriptors: Vec::new(),
        }
    }

    /// Builds a set from parallel keypoint and flat descriptor arrays.
    pub fn from_parts(
        image_id: impl Into<String>,
        image_width: u32,
        image_height: u32,
        keypoints: Vec<Keypoint>,
        descriptor_dim: usize,
        descriptors: Vec<f32>,
    ) -> Result<Self, FeatureError> {
        if descriptors.len() != keypoints.len() * descriptor_dim {
            return Err(FeatureError::InvariantViolation(format!(
                "{} keypoints but {} descriptor values for dimension {}",
                keypoints.len(),
                descriptors.len(),
                descriptor_dim
            )));
        }
        Ok(Self {
            image_id: image_id.into(),
            image_width,
            image_height,
            keypoints,
            descriptor_dim,
            descriptors,
        })
    }

    pub fn push(&mut self, keypoint: Keypoint, descriptor: &[f32]) -> Result<(), FeatureError> {
        if descriptor.len() != self.descriptor_dim {
            return Err(FeatureError::InvariantViolation(format!(
                "descriptor of length {} in a set of dimension {}",
                descriptor.len(),
                self.descriptor_dim
            )));
        }
        self.keypoints.push(keypoint);
        self.descriptors.extend_from_slice(descriptor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptor_dim
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn descriptor(&self, index: usize) -> &[f32] {
        let d = self.descriptor_dim;
        &self.descriptors[index * d..(index + 1) * d]
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &[f32]> + '_ {
        (0..self.len()).map(move |i| self.descriptor(i))
    }

    fn check_bounds(&self) -> Result<(), FeatureError> {
        for (index, k) in self.keypoints.iter().enumerate() {
            let inside = k.x >= 0.0
                && k.y >= 0.0
                && (k.x as f64) < self.image_width as f64
                && (k.y as f64) < self.image_height as f64;
            if !inside {
                return Err(FeatureError::BoundsViolation {
                    index,
                    x: k.x,
                    y: k.y,
                    width: self.image_width,
                    height: self.image_height,
                });
            }
        }
        Ok(())
    }

    /// Checks every invariant a FEAT writer relies on.
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.descriptors.len() != self.keypoints.len() * self.descriptor_dim {
            return Err(FeatureError::InvariantViolation(
                "descriptor storage does not match keypoint count".into(),
            ));
        }
        self.check_bounds()
            .map_err(|e| FeatureError::InvariantViolation(e.to_string()))?;
        for (i, k) in self.keypoints.iter().enumerate() {
            if !(k.score >= 0.0) {
                return Err(FeatureError::InvariantViolation(format!(
                    "keypoint {i} has negative or NaN score"
                )));
            }
        }
        for (i, d) in self.descriptors().enumerate() {
            if d.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::InvariantViolation(format!(
                    "descriptor {i} has non-finite values"
                )));
            }
            if norm(d) < MIN_DESCRIPTOR_NORM {
                return Err(FeatureError::InvariantViolation(format!(
                    "descriptor {i} has zero norm"
                )));
            }
        }
        Ok(())
    }
}

fn norm(d: &[f32]) -> f64 {
    d.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Rescales every descriptor to unit L2 norm.
pub fn normalize_descriptors(fs: &FeatureSet) -> Result<FeatureSet, FeatureError> {
    let mut out = fs.clone();
    let dim = fs.descriptor_dim;
    for (i, chunk) in out.descriptors.chunks_mut(dim.max(1)).enumerate() {
        let n = norm(chunk);
        if n < MIN_DESCRIPTOR_NORM {
            return Err(FeatureError::ZeroDescriptor(i));
        }
        for v in chunk.iter_mut() {
            *v = (*v as f64 / n) as f32;
        }
    }
    if dim == 0 && !fs.is_empty() {
        return Err(FeatureError::ZeroDescriptor(0));
    }
    Ok(out)
}

/// Encodes a feature set in the canonical FEAT layout.
pub fn write_feature_file(fs: &FeatureSet) -> Result<Vec<u8>, FeatureError> {
    fs.validate()?;
    let n = u32::try_from(fs.len())
        .map_err(|_| FeatureError::InvariantViolation("too many keypoints".into()))?;
    let d = u32::try_from(fs.descriptor_dim)
        .map_err(|_| FeatureError::InvariantViolation("descriptor too long".into()))?;
    let mut out = Vec::with_capacity(FEAT_HEADER_LEN + fs.len() * (12 + 4 * fs.descriptor_dim));
    out.extend_from_slice(FEAT_MAGIC);
    for v in [FEAT_VERSION, fs.image_width, fs.image_height, n, d] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for k in &fs.keypoints {
        for v in [k.x, k.y, k.score] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in &fs.descriptors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a FEAT byte stream. The image id is not part of the format and is
/// supplied by the caller (usually the file stem).
pub fn read_feature_file(image_id: &str, content: &[u8]) -> Result<FeatureSet, FeatureError> {
    if content.len() < 4 {
        return Err(FeatureError::TruncatedFile {
            expected: FEAT_HEADER_LEN,
            actual: content.len(),
        });
    }
    if &content[..4] != FEAT_MAGIC {
        return Err(FeatureError::BadMagic);
    }
    if content.len() < FEAT_HEADER_LEN {
        return Err(FeatureError::TruncatedFile {
            expected: FEAT_HEADER_LEN,
            actual: content.len(),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(content[off..off + 4].try_into().unwrap());
    let f32_at = |off: usize| f32::from_le_bytes(content[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FEAT_VERSION {
        return Err(FeatureError::BadVersion(version));
    }
    let width = u32_at(8);
    let height = u32_at(12);
    let n = u32_at(16) as usize;
    let d = u32_at(20) as usize;

    let expected = n
        .checked_mul(12 + 4 * d)
        .and_then(|body| body.checked_add(FEAT_HEADER_LEN))
        .ok_or(FeatureError::TruncatedFile {
            expected: usize::MAX,
            actual: content.len(),
        })?;
    if content.len() < expected {
        return Err(FeatureError::TruncatedFile {
            expected,
            actual: content.len(),
        });
    }
    if content.len() > expected {
        return Err(FeatureError::TrailingData(content.len() - expected));
    }

    let keypoints: Vec<Keypoint> = (0..n)
        .map(|i| {
            let off = FEAT_HEADER_LEN + 12 * i;
            Keypoint::new(f32_at(off), f32_at(off + 4), f32_at(off + 8))
        })
        .collect();
    let desc_off = FEAT_HEADER_LEN + 12 * n;
    let descriptors: Vec<f32> = (0..n * d).map(|i| f32_at(desc_off + 4 * i)).collect();
    let fs = FeatureSet::from_parts(image_id, width, height, keypoints, d, descriptors)?;
    fs.check_bounds()?;
    Ok(fs)
}
