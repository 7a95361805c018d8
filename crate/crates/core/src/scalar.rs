//! Scalar abstraction shared by every numeric module.
//!
//! All geometry, map and solver code is written against [`Real`], which is
//! implemented for `f32` and `f64`. Configuration values are always stored as
//! `f64` and converted with [`lit`] at the point of use.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Default {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn lit<T: Real>(value: f64) -> T {
    T::from_f64(value).expect("f64 constant representable in scalar type")
}

/// Converts a `T` into `f64`.
#[inline]
pub fn to_f64<T: Real>(value: T) -> f64 {
    value.to_f64().expect("scalar convertible to f64")
}

/// Converts a count into `T`.
#[inline]
pub fn from_usize<T: Real>(value: usize) -> T {
    T::from_usize(value).expect("count representable in scalar type")
}
