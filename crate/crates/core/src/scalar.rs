//! Scalar abstraction shared by the probabilistic modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar used for weights, probabilities and moments: f32 or f64.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + AddAssign + SubAssign + MulAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`. Infallible for the implementors.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable")
    }

    /// Lossy conversion from a count.
    fn of_count(value: u64) -> Self {
        Self::from_u64(value).expect("integer is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `log(sum(exp(values)))` with the maximum factored out.
///
/// Returns negative infinity for an empty slice.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Combines two partial log-sum-exp results.
pub fn log_add_exp<T: Real>(x: T, y: T) -> T {
    if x == T::neg_infinity() {
        return y;
    }
    if y == T::neg_infinity() {
        return x;
    }
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let v = [0.1f64, -2.0, 3.5, 1.0];
        let direct: f64 = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - direct).abs() < 1e-12);
        assert!((log_add_exp(0.1f64, 3.5) - (0.1f64.exp() + 3.5f64.exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_underflow() {
        let v = [-2000.0f64, -2000.0];
        assert!((log_sum_exp(&v) - (-2000.0 + 2f64.ln())).abs() < 1e-9);
        let w = [-200.0f32, -200.0];
        assert!((log_sum_exp(&w) - (-200.0 + 2f32.ln())).abs() < 1e-4);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }
}
