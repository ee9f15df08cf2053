//! Scalar abstraction shared by every kernel in the crate.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point element type: `f32` for storage and training, `f64` for
/// gradient probes.
pub trait Scalar:
    'static + Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync
{
    /// Lossy conversion from `f64`, used for constants and initializers.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    /// Widening conversion used wherever values are accumulated.
    fn wide(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Larger of two values. Ties keep `self`.
    #[inline(always)]
    fn max_keep(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
