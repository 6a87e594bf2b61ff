//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric code is generic over.
///
/// Implemented by `f32` and `f64` through the blanket impl; everything the
/// kernels need (transcendentals, literals, assign ops, thread safety) is
/// collected here so signatures stay short.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal; panics only on non-representable values,
    /// which never occur for the constants used here.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable")
    }

    /// Lossy view as `f64` for reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum<T>
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
