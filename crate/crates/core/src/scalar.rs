use std::fmt::{Debug, Display, LowerExp};

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type the numerical core is generic over.
///
/// Implemented for `f32` and `f64`. The tolerances quoted throughout the crate
/// documentation assume `f64`; with `f32` they scale with machine epsilon.
pub trait Scalar:
    nalgebra::RealField
    + faer::traits::RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + LowerExp
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}

#[inline]
pub fn as_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `max(floor, factor * eps)` expressed in `T`.
pub(crate) fn eps_tol<T: Scalar>(floor: f64, factor: f64) -> T {
    let eps = as_f64(T::default_epsilon());
    lit(floor.max(factor * eps))
}
