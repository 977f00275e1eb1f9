//! Scalar abstraction shared by the numeric core.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the numeric core is written against: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant, panicking only for non-representable values.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    /// Tolerance used when validating normalized probability vectors.
    fn normalization_tolerance() -> Self;
}

impl Scalar for f32 {
    fn normalization_tolerance() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn normalization_tolerance() -> Self {
        1e-9
    }
}
