//! Scalar abstraction shared by every numerical module.
//!
//! All of the math in this crate is written against [`Real`], which is
//! satisfied by `f32` and `f64`. The concrete `f64` aliases exported from the
//! crate root are what the pipeline and the CLI use.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar usable by the samplers, the GP code and the metrics.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Serialize + DeserializeOwned
{
    /// Converts an `f64` literal or intermediate into `Self`.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    /// Widens to `f64` (exact for `f32` and `f64`).
    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("float widens to f64")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    /// Absolute value; `RealField` exposes two `abs` methods, this picks one.
    #[inline]
    fn absval(self) -> Self {
        <Self as nalgebra::ComplexField>::abs(self)
    }

    #[inline]
    fn neg_infinity() -> Self {
        Self::of(f64::NEG_INFINITY)
    }

    #[inline]
    fn infinity() -> Self {
        Self::of(f64::INFINITY)
    }
}

impl Real for f32 {}
impl Real for f64 {}
