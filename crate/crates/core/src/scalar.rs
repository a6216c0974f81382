//! Scalar abstraction shared by geometry, tensors and the training engine.
//!
//! Everything numeric is written against [`Real`]; the crate root pins the
//! concrete choices (f64 geometry, f32 features). Gradient checks run the
//! same code in f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// floating point: f32 or f64
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an f64 literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }

    /// Conversion between scalar types.
    #[inline]
    fn cast<U: Real>(self) -> U {
        U::lit(self.as_f64())
    }
}

impl Real for f32 {}
impl Real for f64 {}
