//! Scalar abstraction: the whole library is generic over the floating-point
//! type through this single trait, with `f32`/`f64` as the provided models.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the chain calculus is written against.
///
/// `of` converts literal tolerances and grid constants, which are specified
/// in `f64`, into the working precision.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; panics only for values not representable
    /// at all (never the case for finite constants used here).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant must convert into the scalar type")
    }

    /// Widening conversion used by error payloads and text output.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip_for_representable_values() {
        assert_eq!(f64::of(0.5), 0.5);
        assert_eq!(f32::of(0.25), 0.25f32);
        assert_eq!(1.5f64.to_f64_lossy(), 1.5);
    }
}
