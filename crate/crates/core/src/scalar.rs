//! Floating-point scalar abstraction.
//!
//! All numeric code in this crate is generic over [`Scalar`] so the same
//! kernels run at f32 (the storage precision of datasets and checkpoints)
//! and at f64 (used by the gradient checker and by test oracles).
//! Reductions always accumulate in f64 regardless of the storage scalar.

use num_traits::{Float, FromPrimitive};

/// f32 or f64, with cheap conversions to and from the f64 accumulator type.
pub trait Scalar:
    Float + FromPrimitive + std::ops::AddAssign + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_acc(v: f64) -> Self;
    fn to_acc(self) -> f64;
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_acc(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_acc(self) -> f64 {
        self
    }
}
