//! Scalar abstraction shared by the numeric modules.
//!
//! Everything numeric (PCA, mixture fitting, Fisher encoding, SVM training)
//! is written against [`Real`], which is implemented for `f32` and `f64`.
//! On-disk feature maps are always `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` constant into this scalar.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    /// Convert a count into this scalar.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Correctly rounded sum of `terms`, independent of their order.
///
/// The buffer is clobbered.
pub fn exact_sum(terms: &mut [f64]) -> f64 {
    match terms.len() {
        0 => 0.0,
        1 => terms[0],
        _ => accurate::sum::i_fast_sum_in_place(terms),
    }
}

/// Pairwise sum of `values`, splitting at the midpoint.
///
/// Fixed association order, so the result does not depend on how the
/// caller parallelised the production of `values`.
pub fn pairwise_sum<T: Real>(values: &[T]) -> T {
    match values.len() {
        0 => T::zero(),
        n if n <= 8 => values.iter().fold(T::zero(), |acc, &v| acc + v),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

/// Numerically stable `log(sum(exp(values)))`.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if !max.is_finite() {
        return max;
    }
    let total = values.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, b| a + b);
    max + total.ln()
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn squared_norm<T: Real>(a: &[T]) -> T {
    dot(a, a)
}
