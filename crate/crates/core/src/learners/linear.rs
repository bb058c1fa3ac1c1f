use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, LstsqOptions, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct LinearConfig<T> {
    pub intercept: bool,
    /// Absolute ridge weight on standardized coefficients.
    pub ridge: T,
    /// Ridge relative to the mean squared singular value.
    pub ridge_rel: T,
    pub rcond: T,
    /// Rescale columns to unit root-mean-square before solving.
    pub standardize: bool,
    pub std_errors: bool,
}

impl<T: Scalar> Default for LinearConfig<T> {
    fn default() -> Self {
        Self {
            intercept: true,
            ridge: T::zero(),
            ridge_rel: T::of(1e-8),
            rcond: T::of(1e-10),
            standardize: true,
            std_errors: false,
        }
    }
}

impl<T: Scalar> LinearConfig<T> {
    /// No intercept, no ridge, optional slope standard errors.
    pub fn through_origin(std_errors: bool) -> Self {
        Self {
            intercept: false,
            ridge_rel: T::zero(),
            std_errors,
            ..Self::default()
        }
    }
}

/// Affine predictor `intercept + coef . x` in raw feature units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<T> {
    pub coef: Vec<T>,
    pub intercept: T,
    pub std_errors: Option<Vec<T>>,
    /// Features that were identically zero (after centering when an
    /// intercept is fitted); their coefficient is 0.
    pub zero_columns: Vec<usize>,
    pub rank: usize,
}

impl<T: Scalar> LinearModel<T> {
    pub fn predict(&self, x: &[T]) -> T {
        self.intercept + crate::linalg::dot(&self.coef, x)
    }

    pub fn input_gradient(&self, _x: &[T]) -> Vec<T> {
        self.coef.clone()
    }
}

/// Least squares with ridge on `features` (`m x k`) and `labels`.
pub fn fit_linear<T: Scalar>(features: &Matrix<T>, labels: &[T], cfg: &LinearConfig<T>) -> Result<LinearModel<T>> {
    let (m, k) = (features.rows(), features.cols());
    if labels.len() != m {
        return Err(Error::Dimension(format!("{m} feature rows against {} labels", labels.len())));
    }
    if m == 0 {
        return Err(Error::Config("no samples to fit".into()));
    }
    if features.as_slice().iter().chain(labels).any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite regression data".into()));
    }
    let mf = T::of_usize(m);
    let shift: Vec<T> = if cfg.intercept {
        (0..k).map(|j| (0..m).map(|i| features[(i, j)]).sum::<T>() / mf).collect()
    } else {
        vec![T::zero(); k]
    };
    let y_shift = if cfg.intercept {
        labels.iter().copied().sum::<T>() / mf
    } else {
        T::zero()
    };
    let mut zero_columns = Vec::new();
    let scale: Vec<T> = (0..k)
        .map(|j| {
            let ss: T = (0..m).map(|i| (features[(i, j)] - shift[j]).powi(2)).sum();
            // Constant columns leave rounding residue after centering.
            let amax = (0..m).map(|i| features[(i, j)].abs()).fold(T::zero(), |a, b| a.max(b));
            if ss <= mf * (T::of(1e-9) * amax).powi(2) {
                zero_columns.push(j);
                T::one()
            } else if cfg.standardize {
                (ss / mf).sqrt()
            } else {
                T::one()
            }
        })
        .collect();
    let a = Matrix::from_fn(m, k, |i, j| (features[(i, j)] - shift[j]) / scale[j]);
    let y: Vec<T> = labels.iter().map(|&v| v - y_shift).collect();
    let opts = LstsqOptions {
        ridge: cfg.ridge,
        ridge_rel: cfg.ridge_rel,
        rcond: cfg.rcond,
        std_errors: cfg.std_errors,
    };
    let sol = lstsq(&a, &y, &opts)?;
    let coef: Vec<T> = sol.coef.iter().zip(&scale).map(|(&c, &s)| c / s).collect();
    let intercept = y_shift - crate::linalg::dot(&coef, &shift);
    let std_errors = sol
        .std_errors
        .map(|se| se.iter().zip(&scale).map(|(&e, &s)| e / s).collect());
    Ok(LinearModel {
        coef,
        intercept,
        std_errors,
        zero_columns,
        rank: sol.rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;

    #[test]
    fn exact_slope() {
        let x: Matrix<f64> = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let y = [2.0, 4.0, 6.0, 8.0];
        let m = fit_linear(&x, &y, &LinearConfig::through_origin(false)).unwrap();
        assert!((m.coef[0] - 2.0).abs() < 1e-14);
        assert_eq!(m.intercept, 0.0);
    }

    #[test]
    fn constant_label_gives_zero_slope() {
        let x: Matrix<f64> = Matrix::from_vec(5, 1, vec![1.0, -2.0, 3.0, 0.5, 4.0]);
        let m = fit_linear(&x, &[7.0; 5], &LinearConfig::default()).unwrap();
        assert!(m.coef[0].abs() < 1e-14);
        assert!((m.intercept - 7.0).abs() < 1e-14);
        assert_eq!(m.predict(&[100.0]), m.intercept + 100.0 * m.coef[0]);
    }

    #[test]
    fn ridge_splits_duplicated_feature() {
        let mut s = make_stream(3, 0);
        let n = 500;
        let x1: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let y: Vec<f64> = x1.iter().map(|&v| v + 0.1 * s.normal()).collect();
        let x = Matrix::from_fn(n, 2, |i, _| x1[i]);
        let cfg = LinearConfig {
            intercept: false,
            ridge: 1e-6,
            ..LinearConfig::default()
        };
        let m = fit_linear(&x, &y, &cfg).unwrap();
        assert_eq!(m.coef[0], m.coef[1]);
        // Each weight is half the one-feature slope.
        let ols = crate::linalg::dot(&x1, &y) / crate::linalg::dot(&x1, &x1);
        assert!((m.coef[0] - ols / 2.0).abs() < 1e-6);
        assert!((m.coef[0] - 0.5).abs() < 0.02);
    }

    #[test]
    fn constant_column_flagged_after_centering() {
        let x: Matrix<f64> = Matrix::from_fn(7, 2, |i, j| if j == 0 { i as f64 } else { 0.1 + 0.2 });
        let m = fit_linear(&x, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &LinearConfig::default()).unwrap();
        assert_eq!(m.zero_columns, vec![1]);
        assert_eq!(m.coef[1], 0.0);
    }

    #[test]
    fn zero_column_flagged() {
        let x: Matrix<f64> = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]]);
        let m = fit_linear(&x, &[1.0, 2.0, 3.0], &LinearConfig::through_origin(true)).unwrap();
        assert_eq!(m.zero_columns, vec![1]);
        assert_eq!(m.coef[1], 0.0);
        assert!((m.coef[0] - 1.0).abs() < 1e-14);
        assert_eq!(m.input_gradient(&[0.0, 0.0]), m.coef);
    }

    #[test]
    fn standard_errors_shrink_with_sample_size() {
        let se_at = |n: usize| {
            let mut s = make_stream(5, n as u64);
            let x: Vec<f64> = (0..n).map(|_| s.normal()).collect();
            let y: Vec<f64> = x.iter().map(|&v| 3.0 * v + s.normal()).collect();
            let m = fit_linear(&Matrix::from_vec(n, 1, x), &y, &LinearConfig::through_origin(true)).unwrap();
            m.std_errors.unwrap()[0]
        };
        let (a, b) = (se_at(400), se_at(6400));
        assert!((a / b - 4.0).abs() < 0.6);
        assert!((a - 0.05).abs() < 0.01);
    }
}
