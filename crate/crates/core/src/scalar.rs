//! Floating-point abstraction shared by every solver.
//!
//! All numerics are written against [`Scalar`] so the same code runs in
//! `f32` or `f64`. Log-domain quantities use `-inf` for exact zeros.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Tolerance for stochasticity and mass checks.
    fn eps_num() -> Self;

    /// Default L1 marginal tolerance for the iterative solvers.
    fn default_tol() -> Self;

    /// Converts an `f64` literal. Every `f64` is representable (possibly rounded).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    #[inline]
    fn eps_num() -> Self {
        1e-9
    }
    #[inline]
    fn default_tol() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    #[inline]
    fn eps_num() -> Self {
        1e-5
    }
    #[inline]
    fn default_tol() -> Self {
        1e-5
    }
}

/// Natural log with `ln(0) = -inf`.
#[inline]
pub fn ln0<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x.ln()
    } else {
        T::neg_infinity()
    }
}

/// `exp` that maps `-inf` to an exact zero.
#[inline]
pub fn exp0<T: Scalar>(x: T) -> T {
    if x == T::neg_infinity() {
        T::zero()
    } else {
        x.exp()
    }
}

/// Numerically stable `ln(sum(exp(x)))`; returns `-inf` for an empty or all-`-inf` input.
pub fn log_sum_exp<T: Scalar, I>(values: I) -> T
where
    I: IntoIterator<Item = T> + Clone,
{
    let max = values
        .clone()
        .into_iter()
        .fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = values.into_iter().map(|v| exp0(v - max)).sum();
    max + sum.ln()
}

/// Unshifted `ln(sum(exp(x)))`, used when log-domain stabilisation is switched off.
pub fn log_sum_exp_plain<T: Scalar, I>(values: I) -> T
where
    I: IntoIterator<Item = T>,
{
    ln0(values.into_iter().map(exp0).sum::<T>())
}

/// Picks the stabilised or plain reduction.
#[inline]
pub fn lse<T: Scalar, I>(values: I, stabilised: bool) -> T
where
    I: IntoIterator<Item = T> + Clone,
{
    if stabilised {
        log_sum_exp(values)
    } else {
        log_sum_exp_plain(values)
    }
}

/// `ln(a/b)` with `0/0 := 0` (i.e. `-inf`). A positive numerator over a zero
/// denominator yields `+inf`; callers screen for that with feasibility checks.
#[inline]
pub fn log_div<T: Scalar>(log_num: T, log_den: T) -> T {
    if log_num == T::neg_infinity() {
        T::neg_infinity()
    } else {
        log_num - log_den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_direct_sum() {
        let v = [0.1f64.ln(), 0.2f64.ln(), 0.7f64.ln()];
        assert!((log_sum_exp(v) - 0.0).abs() < 1e-15);
        assert!((log_sum_exp_plain(v) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn lse_handles_zeros_and_large_values() {
        let v = [f64::NEG_INFINITY, 1000.0, 1000.0];
        assert!((log_sum_exp(v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(Vec::<f64>::new()), f64::NEG_INFINITY);
        // the unshifted variant overflows here
        assert!(log_sum_exp_plain(v).is_infinite());
    }

    #[test]
    fn zero_over_zero_is_zero() {
        assert_eq!(log_div(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(log_div(0.0, f64::NEG_INFINITY), f64::INFINITY);
        assert_eq!(exp0(f64::NEG_INFINITY), 0.0);
        assert_eq!(ln0(0.0f32), f32::NEG_INFINITY);
    }
}
