use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use rand::distributions::uniform::SampleUniform;

/// Floating point type the model can be instantiated with.
///
/// Training and sampling run in `f32`; gradient checks use `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + SampleUniform
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + 'static
{
    fn from_f64c(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).unwrap()
    }

    fn to_f64c(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
