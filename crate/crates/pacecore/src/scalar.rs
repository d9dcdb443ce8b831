//! Scalar abstraction for the value/payment arithmetic.
//!
//! Mechanism and cost-function math is written against [`Scalar`] so the same
//! code runs at `f32` or `f64` precision. Budget accounting deliberately does
//! not use this trait: ledgers are kept in exact integer micro-units (see
//! `reduction::Credits`).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used for values, reports, payments and potentials.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default {
    /// Lossless-enough construction from an `f64` literal.
    fn from_config(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every scalar")
    }

    /// Widening view for reporting and serialization.
    fn to_report(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Harmonic number `H_k = sum_{j<=k} 1/j`.
pub fn harmonic<S: Scalar>(k: usize) -> S {
    let mut acc = S::zero();
    for j in 1..=k {
        acc = acc + S::one() / S::from_config(j as f64);
    }
    acc
}
