use core::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Scalar element type for tensors. Implemented for `f32` (training and
/// inference) and `f64` (gradient checks and metric references).
pub trait Elem:
    Float + FromPrimitive + ScalarOperand + LinalgScalar + Debug + Display + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite literal")
    }
    fn from_usize_(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("index fits element type")
    }
    fn to_f64_(self) -> f64;
}

impl Elem for f32 {
    fn to_f64_(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    fn to_f64_(self) -> f64 {
        self
    }
}
