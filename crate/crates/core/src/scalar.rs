//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + FromStr
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in every float type")
    }

    /// Converts to `f64` (lossless for both implementors).
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    /// Converts a count.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    /// Tolerance for "weights sum to one" checks, scaled to the type's precision.
    #[inline]
    fn sum_tol() -> Self {
        Self::lit(1e-12).max(Self::epsilon() * Self::lit(64.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(<f64 as Scalar>::lit(0.25), 0.25);
        assert_eq!(<f32 as Scalar>::lit(0.5), 0.5f32);
        assert_eq!(Scalar::f64(0.75f32), 0.75);
        assert_eq!(<f64 as Scalar>::count(7), 7.0);
    }

    #[test]
    fn sum_tolerance_tracks_precision() {
        assert_eq!(<f64 as Scalar>::sum_tol(), 1e-12);
        assert!(<f32 as Scalar>::sum_tol() > 1e-6);
    }
}
