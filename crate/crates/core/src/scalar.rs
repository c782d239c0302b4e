//! Scalar abstraction shared by the gradient and sketching math.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type for parameters and gradients. Implemented
/// for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; used for constants and checkpoint values.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn widen(self) -> f64 {
        self.to_f64().expect("Scalar always widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
