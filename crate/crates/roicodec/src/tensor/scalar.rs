//! Element type abstraction.
//!
//! All numeric code is generic over [`Scalar`], instantiated at `f32` for
//! regular runtime use and at `f64` for gradient checking and
//! high-precision training.

use std::fmt::{Debug, Display};

pub trait Scalar:
    num_traits::Float + num_traits::FloatConst + Debug + Display + Default + Send + Sync + 'static
{
    const BITS: u32;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;

    /// Complementary error function, evaluated in double precision.
    fn erfc(self) -> Self {
        Self::from_f64(libm::erfc(self.as_f64()))
    }
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
}
