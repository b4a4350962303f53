//! Scalar abstraction for the numeric core.
//!
//! Model and optimizer code is generic over [`Scalar`] so the same forward
//! and backward passes run in `f32` (fast training) and `f64` (reference
//! precision for finite-difference gradient checks).

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssignOps};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float
    + NumAssignOps
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    /// Gauss error function, used by the exact GELU.
    fn erf(self) -> Self;

    fn from_f64(x: f64) -> Self;

    fn to_f64(self) -> f64;
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erf(self as f64) as f32
    }

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_values() {
        let cases: [(f64, f64); 4] = [
            (0.0, 0.0),
            // erf(1/sqrt(2)) = 2*Phi(1) - 1
            (1.0 / 2.0f64.sqrt(), 0.682_689_492_137_085_9),
            (1.0, 0.842_700_792_949_714_9),
            (-2.0, -0.995_322_265_018_952_7),
        ];
        for (x, want) in cases {
            let got = Scalar::erf(x);
            assert!((got - want).abs() < 1e-15, "erf({x}) = {got:.17}, want {want:.17}");
        }
        assert!((Scalar::erf(1.0f32) - 0.842_700_8).abs() < 1e-6);
    }
}
