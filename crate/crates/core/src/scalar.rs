//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point scalar the samplers are generic over (`f32` or `f64`).
///
/// Arithmetic and elementary functions come from [`RealField`]; conversions
/// come from `num-traits`. The two special functions needed by the probit
/// and truncated-normal code are provided per concrete type.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Inverse of [`Real::erfc`] on `(0, 2)`.
    fn erfc_inv(self) -> Self;
}

impl Real for f64 {
    fn erfc(self) -> f64 {
        statrs::function::erf::erfc(self)
    }

    fn erfc_inv(self) -> f64 {
        statrs::function::erf::erfc_inv(self)
    }
}

impl Real for f32 {
    fn erfc(self) -> f32 {
        statrs::function::erf::erfc(self as f64) as f32
    }

    fn erfc_inv(self) -> f32 {
        statrs::function::erf::erfc_inv(self as f64) as f32
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts a scalar to `f64`.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

/// Converts a count to `T`.
#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}
