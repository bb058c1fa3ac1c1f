//! Calibration by least squares and the implicit-function conversion of
//! model sensitivities into market-instrument sensitivities.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{condition_number, lu, Matrix};
use crate::model::ModelParams;
use crate::products::InstrumentSet;
use crate::report::sig6;

/// Model prices of `q` instruments as a function of free parameters.
pub trait PricingModel: Sync {
    fn n_params(&self) -> usize;
    fn n_instruments(&self) -> usize;
    fn prices(&self, psi: &[f64]) -> Vec<f64>;
    /// Exact price Jacobian `q x n`, when available.
    fn price_jacobian(&self, _psi: &[f64]) -> Option<Matrix<f64>> {
        None
    }
}

/// Pricing model from a closure.
pub struct FnModel<F> {
    pub n_params: usize,
    pub n_instruments: usize,
    pub f: F,
    pub jac: Option<fn(&[f64]) -> Matrix<f64>>,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> PricingModel for FnModel<F> {
    fn n_params(&self) -> usize {
        self.n_params
    }
    fn n_instruments(&self) -> usize {
        self.n_instruments
    }
    fn prices(&self, psi: &[f64]) -> Vec<f64> {
        (self.f)(psi)
    }
    fn price_jacobian(&self, psi: &[f64]) -> Option<Matrix<f64>> {
        self.jac.map(|j| j(psi))
    }
}

/// Instrument prices at time 0 with the non-free parameters held at
/// `base`.
pub struct CalibrationSpec<'a> {
    pub instruments: &'a InstrumentSet,
    pub base: ModelParams,
    /// Indices (in the [`ModelParams::to_vec`] layout) that are calibrated.
    pub free: Vec<usize>,
}

impl<'a> CalibrationSpec<'a> {
    /// Volatility parameters frozen, everything else free.
    pub fn new(instruments: &'a InstrumentSet, base: &ModelParams) -> Self {
        Self {
            instruments,
            base: base.clone(),
            free: base.layout().free_indices(),
        }
    }

    pub fn params_of(&self, psi: &[f64]) -> ModelParams {
        let mut v = self.base.to_vec();
        for (&k, &x) in self.free.iter().zip(psi) {
            v[k] = x;
        }
        self.base.with_vec(&v)
    }

    pub fn psi_of(&self, p: &ModelParams) -> Vec<f64> {
        let v = p.to_vec();
        self.free.iter().map(|&k| v[k]).collect()
    }

    pub fn free_names(&self) -> Vec<String> {
        let l = self.base.layout();
        self.free.iter().map(|&k| l.name(k)).collect()
    }
}

impl PricingModel for CalibrationSpec<'_> {
    fn n_params(&self) -> usize {
        self.free.len()
    }
    fn n_instruments(&self) -> usize {
        self.instruments.count()
    }
    fn prices(&self, psi: &[f64]) -> Vec<f64> {
        self.instruments.prices_at_zero(&self.params_of(psi))
    }
}

/// `(1/q) sum (price_i(psi) - z_i)^2`.
pub fn cal_err(model: &dyn PricingModel, z: &[f64], psi: &[f64]) -> f64 {
    let p = model.prices(psi);
    p.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / z.len() as f64
}

#[derive(Clone, Copy, Debug)]
pub struct CalibrateOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub fd_rel: f64,
    pub fd_abs: f64,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-10,
            fd_rel: 1e-6,
            fd_abs: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub psi: Vec<f64>,
    pub cal_err: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn fd_step(x: f64, o: &CalibrateOptions) -> f64 {
    (o.fd_rel * x.abs()).max(o.fd_abs)
}

/// Price Jacobian `q x n`, analytic when provided, central differences
/// otherwise.
pub fn price_jacobian(model: &dyn PricingModel, psi: &[f64], o: &CalibrateOptions) -> Matrix<f64> {
    if let Some(j) = model.price_jacobian(psi) {
        return j;
    }
    let n = psi.len();
    let q = model.n_instruments();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let h = fd_step(psi[k], o);
            let mut up = psi.to_vec();
            let mut dn = psi.to_vec();
            up[k] += h;
            dn[k] -= h;
            let (pu, pd) = (model.prices(&up), model.prices(&dn));
            pu.iter().zip(&pd).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect();
    Matrix::from_fn(q, n, |i, k| cols[k][i])
}

fn gradient(jac: &Matrix<f64>, resid: &[f64]) -> Vec<f64> {
    let q = resid.len() as f64;
    jac.tr_matvec(resid).into_iter().map(|g| 2.0 * g / q).collect()
}

fn check_shapes(model: &dyn PricingModel, z: &[f64], psi: &[f64]) -> Result<()> {
    if z.len() != model.n_instruments() || psi.len() != model.n_params() {
        return Err(Error::Dimension(format!(
            "model has {} parameters / {} instruments, got {} / {}",
            model.n_params(),
            model.n_instruments(),
            psi.len(),
            z.len()
        )));
    }
    if z.len() < psi.len() {
        return Err(Error::Config(format!(
            "underdetermined calibration: {} instruments for {} free parameters",
            z.len(),
            psi.len()
        )));
    }
    Ok(())
}

/// Levenberg-Marquardt minimization of [`cal_err`] until the gradient norm
/// falls below `grad_tol`.
pub fn calibrate(model: &dyn PricingModel, z: &[f64], psi_init: &[f64], o: &CalibrateOptions) -> Result<Calibration> {
    check_shapes(model, z, psi_init)?;
    let n = psi_init.len();
    let mut psi = psi_init.to_vec();
    let resid_of = |psi: &[f64]| -> Vec<f64> { model.prices(psi).iter().zip(z).map(|(a, b)| a - b).collect() };
    let mut r = resid_of(&psi);
    let mut err = r.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
    let mut mu = 1e-3;
    for it in 0..=o.max_iter {
        let j = price_jacobian(model, &psi, o);
        let g = gradient(&j, &r);
        let gn = crate::linalg::norm2(&g);
        if gn < o.grad_tol {
            return Ok(Calibration {
                psi,
                cal_err: err,
                grad_norm: gn,
                iterations: it,
            });
        }
        if it == o.max_iter {
            return Err(Error::NoConvergence(format!(
                "calibration stopped after {it} iterations with gradient norm {gn:e}"
            )));
        }
        let jtj = j.gram();
        let jtr = j.tr_matvec(&r);
        let mut accepted = false;
        for _ in 0..40 {
            let a = Matrix::from_fn(n, n, |i, k| {
                if i == k {
                    jtj[(i, i)] * (1.0 + mu) + 1e-300
                } else {
                    jtj[(i, k)]
                }
            });
            let step = match lu(&a) {
                Ok(f) => f.solve(&jtr.iter().map(|v| -v).collect::<Vec<_>>()),
                Err(_) => {
                    mu *= 10.0;
                    continue;
                }
            };
            let cand: Vec<f64> = psi.iter().zip(&step).map(|(a, b)| a + b).collect();
            let rc = resid_of(&cand);
            let ec = rc.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
            if ec.is_finite() && ec <= err {
                let stalled = ec == err;
                psi = cand;
                r = rc;
                err = ec;
                mu = (mu / 3.0).max(1e-12);
                accepted = !stalled;
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            let gn = crate::linalg::norm2(&gradient(&price_jacobian(model, &psi, o), &r));
            if gn < o.grad_tol {
                continue;
            }
            return Err(Error::NoConvergence(format!(
                "calibration stalled at iteration {it} with gradient norm {gn:e}"
            )));
        }
    }
    unreachable!("loop returns")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianMode {
    /// `(2/q) J^T J`.
    GaussNewton,
    /// Adds the residual-weighted second derivatives of the prices, by
    /// central differences of the price Jacobian.
    FiniteDifference,
}

/// `d psi / d z = -(d2 cal_err / d psi2)^{-1} (d2 cal_err / d psi dz)`,
/// an `n x q` matrix.
pub fn param_jacobian(
    model: &dyn PricingModel,
    z: &[f64],
    psi_star: &[f64],
    mode: HessianMode,
    o: &CalibrateOptions,
) -> Result<Matrix<f64>> {
    check_shapes(model, z, psi_star)?;
    let n = psi_star.len();
    let q = z.len() as f64;
    let j = price_jacobian(model, psi_star, o);
    let mut h = j.gram();
    if mode == HessianMode::FiniteDifference {
        let r: Vec<f64> = model.prices(psi_star).iter().zip(z).map(|(a, b)| a - b).collect();
        for k in 0..n {
            let s = fd_step(psi_star[k], o);
            let mut up = psi_star.to_vec();
            let mut dn = psi_star.to_vec();
            up[k] += s;
            dn[k] -= s;
            let (ju, jd) = (price_jacobian(model, &up, o), price_jacobian(model, &dn, o));
            for l in 0..n {
                let mut acc = 0.0;
                for (i, ri) in r.iter().enumerate() {
                    acc += ri * (ju[(i, l)] - jd[(i, l)]) / (2.0 * s);
                }
                h[(k, l)] += acc;
            }
        }
        // Symmetrize the difference noise.
        for k in 0..n {
            for l in 0..k {
                let v = 0.5 * (h[(k, l)] + h[(l, k)]);
                h[(k, l)] = v;
                h[(l, k)] = v;
            }
        }
    }
    h.scale(2.0 / q);
    // Condition number on the unit-diagonal rescaling.
    let d: Vec<f64> = (0..n).map(|k| h[(k, k)].abs().sqrt()).collect();
    if d.contains(&0.0) {
        return Err(Error::Singular(format!(
            "calibration Hessian has {} zero diagonal entries (parameters not identified)",
            d.iter().filter(|&&v| v == 0.0).count()
        )));
    }
    let hs = Matrix::from_fn(n, n, |a, b| h[(a, b)] / (d[a] * d[b]));
    let cond = condition_number(&hs);
    if !(cond <= 1e12) {
        let s = crate::linalg::svd(&hs).s;
        let smax = s[0];
        let rank = s.iter().filter(|&&v| v > 1e-12 * smax).count();
        return Err(Error::Singular(format!(
            "calibration Hessian condition number {cond:e}: numerical rank {rank} of {n}"
        )));
    }
    // Cross derivative: d2 cal_err / d psi dz = -(2/q) J^T.
    let rhs = Matrix::from_fn(n, j.rows(), |a, i| 2.0 / q * j[(i, a)]);
    Ok(lu(&h)?.solve_matrix(&rhs))
}

/// `(d Pi / d z) = (d psi / d z)^T (d Pi / d psi)`.
pub fn market_sensitivities(model_sensis: &[f64], jacobian: &Matrix<f64>) -> Result<Vec<f64>> {
    if model_sensis.len() != jacobian.rows() {
        return Err(Error::Dimension(format!(
            "{} model sensitivities for a Jacobian with {} rows",
            model_sensis.len(),
            jacobian.rows()
        )));
    }
    Ok(jacobian.tr_matvec(model_sensis))
}

pub fn write_jacobian_csv(
    jac: &Matrix<f64>,
    row_names: &[String],
    col_names: &[String],
    w: impl std::io::Write,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["parameter".to_string()];
    header.extend_from_slice(col_names);
    wr.write_record(&header)?;
    for (a, name) in row_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(jac.row(a).iter().map(|&v| sig6(v)));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Market sensitivities with `curve` and `pillar` columns.
pub fn write_market_csv(set: &InstrumentSet, sensis: &[f64], ci: Option<&[f64]>, w: impl std::io::Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["instrument", "curve", "pillar", "sensitivity", "ci_halfwidth"])?;
    for (i, &s) in sensis.iter().enumerate() {
        let (curve, pillar) = set.curve_and_pillar(i);
        wr.write_record([
            set.name(i),
            curve,
            sig6(pillar),
            sig6(s),
            ci.map_or(String::new(), |c| sig6(c[i])),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Propagates independent half-widths through the Jacobian (root sum of
/// squares).
pub fn propagate_ci(ci: &[f64], jacobian: &Matrix<f64>) -> Vec<f64> {
    (0..jacobian.cols())
        .map(|i| {
            (0..jacobian.rows())
                .map(|a| (jacobian[(a, i)] * ci[a]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}
