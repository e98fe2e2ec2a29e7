//! Scalar abstraction shared by the geometric core.
//!
//! Everything that does linear algebra (epipolar geometry, triangulation,
//! bundle adjustment, similarity alignment) is written once against [`Real`]
//! and instantiated for `f64` in the pipeline and `f32` where memory matters.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the geometric core.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(value: f64) -> T {
    nalgebra::convert(value)
}

/// Converts a scalar back to `f64` for reporting.
#[inline]
pub fn to_f64<T: Real>(value: T) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}
