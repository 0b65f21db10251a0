use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the kernel.
///
/// `f32` is used for training and inference, `f64` for gradient checks. The
/// layer code is shared between both.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static {
    fn from_f64_lossy(value: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(value: f64) -> Self {
        value as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(value: f64) -> Self {
        value
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
