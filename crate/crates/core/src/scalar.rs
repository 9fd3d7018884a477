//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the estimators are generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only for values not representable at all.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Violation of `actual == target`, relative when the target is positive and
/// absolute otherwise.
pub fn violation<S: Scalar>(actual: S, target: S) -> S {
    let diff = (actual - target).abs();
    if target > S::zero() {
        diff / target
    } else {
        diff
    }
}

/// `x ln x - x` with the continuous extension at zero.
pub fn xlogx_minus_x<S: Scalar>(x: S) -> S {
    if x == S::zero() {
        S::zero()
    } else {
        x * x.ln() - x
    }
}

/// Numerically stable `ln Σ exp(v)`; returns `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<S: Scalar, I>(values: I) -> S
where
    I: IntoIterator<Item = S> + Clone,
{
    let max = values
        .clone()
        .into_iter()
        .fold(S::neg_infinity(), |m, v| if v > m { v } else { m });
    if max == S::neg_infinity() {
        return max;
    }
    let sum: S = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violation_switches_to_absolute_at_zero() {
        assert_eq!(violation(11.0, 10.0), 0.1);
        assert_eq!(violation(0.5, 0.0), 0.5);
    }

    #[test]
    fn zero_log_zero() {
        assert_eq!(xlogx_minus_x(0.0f64), 0.0);
        assert_eq!(xlogx_minus_x(1.0f64), -1.0);
        assert!(xlogx_minus_x(std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn lse_handles_large_and_empty() {
        let v = [1000.0f64, 1000.0];
        assert!((log_sum_exp(v.iter().copied()) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let e: [f64; 0] = [];
        assert_eq!(log_sum_exp(e.iter().copied()), f64::NEG_INFINITY);
        let ninf = [f64::NEG_INFINITY, 0.0];
        assert_eq!(log_sum_exp(ninf.iter().copied()), 0.0);
    }
}
