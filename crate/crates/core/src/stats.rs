//! Standard normal helpers.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::scalar::Scalar;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn norm_cdf<T: Scalar>(x: T) -> T {
    T::of(std_normal().cdf(x.to_f64_lossy()))
}

pub fn norm_pdf<T: Scalar>(x: T) -> T {
    T::of(std_normal().pdf(x.to_f64_lossy()))
}

pub fn norm_inv_cdf(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((norm_cdf(0.0f64) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(0.1f64) - 0.539_827_837_277_029).abs() < 1e-12);
        assert!((norm_inv_cdf(0.95) - 1.644_853_626_951_472).abs() < 1e-9);
        assert!((norm_pdf(0.0f64) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }
}
