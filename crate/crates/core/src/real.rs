use nalgebra::RealField;
use num_traits::{Float, FloatConst};
use std::fmt::{Debug, Display};

/// Scalar type usable throughout the crate.
///
/// Both `nalgebra::RealField` and `num_traits::Float` provide methods such as
/// `sqrt` and `ln`; generic code bounded by `Real` calls them as
/// `Float::sqrt(x)` to pick one unambiguously.
pub trait Real:
    RealField + Float + FloatConst + Copy + Debug + Display + Send + Sync + 'static
{
    fn cast_from(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn cast_from(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn cast_from(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Converts an `f64` literal into any `Float` type.
#[inline]
pub(crate) fn lit<T: Float>(x: f64) -> T {
    T::from(x).expect("f64 literal representable in target float")
}
