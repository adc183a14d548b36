//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the estimators are generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Conversion from an event count.
    #[inline]
    fn count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar type")
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Round a non-negative scalar down to a count, saturating at zero.
pub(crate) fn floor_count<T: Real>(x: T) -> u64 {
    if x <= T::zero() || x.is_nan() {
        0
    } else {
        x.floor().to_u64().unwrap_or(u64::MAX)
    }
}

/// Round a non-negative scalar up to a count, saturating at zero.
pub(crate) fn ceil_count<T: Real>(x: T) -> u64 {
    if x <= T::zero() || x.is_nan() {
        0
    } else {
        x.ceil().to_u64().unwrap_or(u64::MAX)
    }
}

/// Round to the nearest count, saturating at zero.
pub(crate) fn round_count<T: Real>(x: T) -> u64 {
    if x <= T::zero() || x.is_nan() {
        0
    } else {
        x.round().to_u64().unwrap_or(u64::MAX)
    }
}

/// Shortest round-trip text for a float, switching to exponent notation for
/// very small or very large magnitudes.
pub fn show<T: Real>(x: T) -> String {
    format!("{x:?}")
}
