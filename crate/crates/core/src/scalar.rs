//! Scalar abstraction shared by the numeric kernels.
//!
//! Linear algebra, the learners, the risk measures and the closed-form
//! pricers are written against [`Scalar`] so they run in `f32` or `f64`.
//! The Monte Carlo pipelines themselves are `f64`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; every supported scalar can hold it.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sum in a fixed left-to-right order.
///
/// Used wherever bit reproducibility across worker counts is required: the
/// parallel stages collect per-path values into a vector first and reduce
/// here.
pub fn ordered_sum<T: Scalar>(xs: &[T]) -> T {
    let mut acc = T::zero();
    for &x in xs {
        acc += x;
    }
    acc
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    ordered_sum(xs) / T::of_usize(xs.len())
}

/// Sample variance with the `n - 1` denominator (0 for fewer than 2 points).
pub fn sample_variance<T: Scalar>(xs: &[T]) -> T {
    let n = xs.len();
    if n < 2 {
        return T::zero();
    }
    let m = mean(xs);
    let mut acc = T::zero();
    for &x in xs {
        let d = x - m;
        acc += d * d;
    }
    acc / T::of_usize(n - 1)
}

pub fn sample_stdev<T: Scalar>(xs: &[T]) -> T {
    sample_variance(xs).sqrt()
}

/// Half-width of the 95% normal confidence interval of a sample mean.
pub fn ci95_halfwidth<T: Scalar>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    T::of(1.96) * sample_stdev(xs) / T::of_usize(xs.len()).sqrt()
}
