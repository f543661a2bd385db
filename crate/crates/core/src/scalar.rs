//! Scalar abstraction shared by the numeric modules.
//!
//! Everything that does arithmetic on probabilities, embeddings or test
//! statistics is written against [`Scalar`] so it runs on `f32` and `f64`
//! alike. The crate root exposes `f64` aliases for the common case.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the metric and training code.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + FromStr
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant is representable")
    }

    /// Converts a count into this scalar.
    #[inline]
    fn from_count(count: usize) -> Self {
        Self::from_usize(count).expect("count is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + FromStr
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}
