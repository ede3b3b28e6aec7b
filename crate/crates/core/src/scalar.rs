//! Scalar abstraction shared by every numeric module.
//!
//! All learned functions and dynamics are written against [`Scalar`], so the
//! same code runs in `f32` or `f64`. Random draws are always made in `f64` and
//! converted, which keeps initialization identical across precisions up to
//! rounding.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; lossy for `f32`.
    fn lit(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// Appends the little-endian `f64` encoding of `self`.
    fn write_le_f64(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_f64_lossy().to_le_bytes());
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

/// Returns true when every entry is finite.
pub fn all_finite<'a, T: Scalar>(values: impl IntoIterator<Item = &'a T>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}
