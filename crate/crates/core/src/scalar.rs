//! Scalar abstraction shared by the spectral kernels, the model and the
//! time stepper.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Floating point type the spectral machinery runs on (`f32` or `f64`).
///
/// `FftNum` pulls in `num_traits::Signed`, so `abs`/`signum` are ambiguous on
/// this bound; call [`Real::mag`] or `Float::abs` explicitly.
pub trait Real:
    Float
    + FloatConst
    + FftNum
    + FromPrimitive
    + NumAssign
    + ToPrimitive
    + Default
    + Display
    + LowerExp
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the implemented types.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn from_i64_lossy(n: i64) -> Self {
        <Self as FromPrimitive>::from_i64(n).expect("i64 representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn mag(self) -> Self {
        Float::abs(self)
    }

    /// Machine epsilon, used for relative tolerances that must scale with `T`.
    #[inline]
    fn eps() -> Self {
        Float::epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}
