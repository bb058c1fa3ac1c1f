//! Hedged CVA losses, hedge ratio estimators and compression backtests.

use serde::{Deserialize, Serialize};

use crate::cva::{loss_c_at, CvaLab};
use crate::error::{Error, Result};
use crate::learners::{fit_linear, ConditionalCva, ConditionalSample, LinearConfig, Predictor, RunOnSample};
use crate::linalg::Matrix;
use crate::products::InstrumentSet;
use crate::risk::var_es;
use crate::rng::make_stream;

/// Hedged loss `L = pnl - hedge . Delta - c` with `c` fixing the sample
/// mean at zero.
#[derive(Clone, Debug)]
pub struct HedgeData {
    /// CVA leg per scenario.
    pub pnl: Vec<f64>,
    /// Hedge-instrument leg, `m x q`.
    pub hedge: Matrix<f64>,
}

impl HedgeData {
    pub fn new(pnl: Vec<f64>, hedge: Matrix<f64>) -> Result<Self> {
        if pnl.len() != hedge.rows() {
            return Err(Error::Dimension(format!(
                "{} loss samples against {} hedge rows",
                pnl.len(),
                hedge.rows()
            )));
        }
        if pnl.is_empty() {
            return Err(Error::Config("no hedge scenarios".into()));
        }
        Ok(Self { pnl, hedge })
    }

    pub fn m(&self) -> usize {
        self.pnl.len()
    }

    pub fn q(&self) -> usize {
        self.hedge.cols()
    }

    fn check(&self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.q() {
            return Err(Error::Dimension(format!("{} hedge ratios for {} instruments", delta.len(), self.q())));
        }
        Ok(())
    }

    /// Loss samples and the trend `c`, computed on centered legs so large
    /// offsetting ratios do not cancel catastrophically.
    pub fn loss(&self, delta: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(delta)?;
        let m = self.m() as f64;
        let mu_pnl = self.pnl.iter().sum::<f64>() / m;
        let mu_h: Vec<f64> = (0..self.q()).map(|k| self.hedge.col(k).iter().sum::<f64>() / m).collect();
        let c = mu_pnl - crate::linalg::dot(&mu_h, delta);
        let l = (0..self.m())
            .map(|j| {
                let h: f64 = self.hedge.row(j).iter().zip(&mu_h).zip(delta).map(|((h, mu), d)| (h - mu) * d).sum();
                (self.pnl[j] - mu_pnl) - h
            })
            .collect();
        Ok((l, c))
    }
}

fn centered_rows(xs: &[f64]) -> Vec<f64> {
    let mu = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|v| v - mu).collect()
}

/// Run-off: `pnl = Pi_t(X_t, rho_t) - Pi_0 + C_t`,
/// `hedge = Z_t - z_0 + CF_t`, on the paths of a risk-mode sample.
pub fn build_runoff_data(
    lab: &CvaLab,
    cva: &ConditionalCva,
    sample: &ConditionalSample,
    pi0: f64,
    set: &InstrumentSet,
) -> Result<HedgeData> {
    use rayon::prelude::*;
    let i = lab.step_of(sample.t)?;
    let grid = lab.grid();
    let z0 = set.prices_at_zero(&lab.rho0);
    let pred = cva.predictor.predict_rows(&sample.features);
    let rows: Vec<Vec<f64>> = (0..sample.xi.len())
        .into_par_iter()
        .map(|j| {
            let p = &sample.params[j];
            let path = &sample.states[j];
            let z = set.prices_on_path(p, path, &grid, i);
            let cf = set.cashflows_on_path(p, path, &grid, i);
            z.iter().zip(&z0).zip(&cf).map(|((z, z0), cf)| z - z0 + cf).collect()
        })
        .collect();
    let q = set.count();
    let hedge = Matrix::from_fn(rows.len(), q, |j, k| rows[j][k]);
    let pnl = pred.iter().zip(&sample.loss_c).map(|(p, c)| p - pi0 + c).collect();
    HedgeData::new(pnl, hedge)
}

/// Run-on: `pnl = dPi(rho_(t))` from a learned predictor,
/// `hedge = Z_0(rho_(t)) - z_0`.
pub fn build_runon_data(lab: &CvaLab, predictor: &Predictor, sample: &RunOnSample, set: &InstrumentSet) -> Result<HedgeData> {
    let pnl = predictor.predict_rows(&sample.drho);
    HedgeData::new(pnl, runon_dz(lab, sample, set))
}

/// `Z_0(rho_(t)) - z_0` per scenario.
pub fn runon_dz(lab: &CvaLab, sample: &RunOnSample, set: &InstrumentSet) -> Matrix<f64> {
    use rayon::prelude::*;
    let z0 = set.prices_at_zero(&lab.rho0);
    let rows: Vec<Vec<f64>> = sample
        .scenarios
        .par_iter()
        .map(|p| set.prices_at_zero(p).iter().zip(&z0).map(|(a, b)| a - b).collect())
        .collect();
    Matrix::from_fn(rows.len(), set.count(), |j, k| rows[j][k])
}

/// Realized `C_t` on the stored states of a conditional sample.
pub fn sample_loss_c(lab: &CvaLab, sample: &ConditionalSample) -> Result<Vec<f64>> {
    let i = lab.step_of(sample.t)?;
    let mut s = lab.scratch();
    Ok(sample
        .states
        .iter()
        .zip(&sample.params)
        .map(|(path, p)| {
            lab.kernel.mtm(p, path, &mut s.mtm);
            loss_c_at(path, &s.mtm, lab.rho0.clients(), i)
        })
        .collect())
}

fn regress(hedge: &Matrix<f64>, target: &[f64], ridge_rel: f64) -> Result<Vec<f64>> {
    let cfg = LinearConfig {
        intercept: true,
        ridge_rel,
        ..LinearConfig::default()
    };
    Ok(fit_linear(hedge, target, &cfg)?.coef)
}

/// `argmin E[L^2]`: least squares of the CVA leg on the hedge leg.
pub fn ple_sensitivities(data: &HedgeData, ridge_rel: f64) -> Result<Vec<f64>> {
    regress(&data.hedge, &data.pnl, ridge_rel)
}

/// Regression of raw cash-flow differences on the instrument moves.
pub fn ls_sensitivities(label: &[f64], dz: &Matrix<f64>, ridge_rel: f64) -> Result<Vec<f64>> {
    if label.len() != dz.rows() {
        return Err(Error::Dimension(format!("{} labels against {} scenario rows", label.len(), dz.rows())));
    }
    regress(dz, label, ridge_rel)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EcConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for EcConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            learning_rate: 1e-2,
            epochs: 500,
            batch_size: 1024,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EcResult {
    pub delta: Vec<f64>,
    /// Minimizer in `k` of the objective at `delta`, the VaR of the loss.
    pub k: f64,
    /// `k` as reached by the stochastic optimizer before the exact step.
    pub k_sgd: f64,
    pub objective: f64,
    /// The last-epoch expected shortfall exceeded the best by more than 5%.
    pub oscillating: bool,
}

/// `argmin_{Delta, k} k + E[(L - k)^+] / (1 - alpha)` by Adam on mini-batches,
/// in units where the CVA leg and each hedge column have unit spread. The
/// epoch with the lowest full-sample expected shortfall is kept and `k` is
/// then set to its exact minimizer.
pub fn ec_sensitivities(data: &HedgeData, init: Option<&[f64]>, cfg: &EcConfig) -> Result<EcResult> {
    let (m, q) = (data.m(), data.q());
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) || cfg.batch_size == 0 {
        return Err(Error::Config("EC needs 0 < alpha < 1 and a positive batch size".into()));
    }
    if let Some(d) = init {
        data.check(d)?;
    }
    let y = centered_rows(&data.pnl);
    let sy = (y.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt().max(f64::MIN_POSITIVE);
    let mut hc = Matrix::zeros(m, q);
    let mut sh = vec![1.0; q];
    let mut frozen = vec![false; q];
    for k in 0..q {
        let col = centered_rows(&data.hedge.col(k));
        let s = (col.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
        let amax = data.hedge.col(k).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if s <= 1e-9 * amax || s == 0.0 {
            // Constant instrument leg: no hedge effect, ratio held at 0.
            frozen[k] = true;
            continue;
        }
        sh[k] = s;
        for (j, v) in col.iter().enumerate() {
            hc[(j, k)] = v / sh[k];
        }
    }
    let ys: Vec<f64> = y.iter().map(|v| v / sy).collect();
    let scale = 1.0 / (1.0 - cfg.alpha);
    let loss_at = |w: &[f64], j: usize| ys[j] - crate::linalg::dot(hc.row(j), w);
    let full_objective = |w: &[f64], k: f64| k + scale * (0..m).map(|j| (loss_at(w, j) - k).max(0.0)).sum::<f64>() / m as f64;

    // theta = (w, k) in standardized units.
    let mut w: Vec<f64> = match init {
        Some(d) => d
            .iter()
            .zip(&sh)
            .zip(&frozen)
            .map(|((d, s), &f)| if f { 0.0 } else { d * s / sy })
            .collect(),
        None => vec![0.0; q],
    };
    let losses = |w: &[f64]| -> Vec<f64> { (0..m).map(|j| loss_at(w, j)).collect() };
    let tail = |w: &[f64]| -> Result<(f64, f64)> {
        let r = var_es(&losses(w), cfg.alpha)?;
        Ok((r.var, r.es))
    };
    let (mut k, es0) = tail(&w)?;
    // Kept by expected shortfall of the loss, the reported metric.
    let mut best = (es0, w.clone(), k);
    let mut last = es0;
    let (mut m1, mut v1) = (vec![0.0; q + 1], vec![0.0; q + 1]);
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = make_stream(cfg.seed, crate::rng::domain::TRAINING | 2);
    let mut step = 0i32;
    let mut g = vec![0.0; q + 1];
    for _ in 0..cfg.epochs {
        for i in (1..m).rev() {
            let r = (rng.uniform() * (i + 1) as f64) as usize;
            order.swap(i, r.min(i));
        }
        for batch in order.chunks(cfg.batch_size) {
            g.iter_mut().for_each(|v| *v = 0.0);
            let mut above = 0usize;
            for &j in batch {
                if loss_at(&w, j) > k {
                    above += 1;
                    for (gk, h) in g.iter_mut().zip(hc.row(j)) {
                        *gk -= h;
                    }
                }
            }
            let nb = batch.len() as f64;
            for gk in g.iter_mut().take(q) {
                *gk *= scale / nb;
            }
            g[q] = 1.0 - scale * above as f64 / nb;
            step += 1;
            let (b1t, b2t) = (1.0 - cfg.beta1.powi(step), 1.0 - cfg.beta2.powi(step));
            for i in 0..=q {
                m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
                v1[i] = cfg.beta2 * v1[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let upd = cfg.learning_rate * (m1[i] / b1t) / ((v1[i] / b2t).sqrt() + cfg.eps);
                if i < q {
                    w[i] -= upd;
                } else {
                    k -= upd;
                }
            }
        }
        if !full_objective(&w, k).is_finite() {
            return Err(Error::Diverged("EC objective became non-finite".into()));
        }
        last = tail(&w)?.1;
        if last < best.0 {
            best = (last, w.clone(), k);
        }
    }
    let (_, w, k_sgd) = best;
    let k_exact = tail(&w)?.0;
    let objective = full_objective(&w, k_exact);
    Ok(EcResult {
        delta: w.iter().zip(&sh).map(|(w, s)| w * sy / s).collect(),
        k: k_exact * sy,
        k_sgd: k_sgd * sy,
        objective: objective * sy,
        oscillating: last > 1.05 * best.0.abs().max(f64::MIN_POSITIVE) && cfg.epochs > 0,
    })
}

/// UPL, EC and trend of one hedge.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HedgeReport {
    pub method: String,
    pub delta: Vec<f64>,
    pub c: f64,
    pub upl: f64,
    pub ec: f64,
    pub upl_ratio: f64,
    pub ec_ratio: f64,
    pub c_ratio: f64,
}

pub fn hedge_metrics(data: &HedgeData, delta: &[f64], alpha: f64) -> Result<(f64, f64, f64)> {
    let (l, c) = data.loss(delta)?;
    let upl = (l.iter().map(|v| v * v).sum::<f64>() / l.len() as f64).sqrt();
    let ec = var_es(&l, alpha)?.es;
    Ok((upl, ec, c))
}

fn ratio(base: f64, v: f64) -> f64 {
    if base == v {
        return 1.0;
    }
    let floor = 1e-12 * base.abs().max(f64::MIN_POSITIVE);
    base.abs() / v.abs().max(floor)
}

/// One row per candidate plus a leading `Delta = 0` row, ratios taken
/// against that row.
pub fn compression_report(candidates: &[(String, Vec<f64>)], data: &HedgeData, alpha: f64) -> Result<Vec<HedgeReport>> {
    let zero = vec![0.0; data.q()];
    let (u0, e0, c0) = hedge_metrics(data, &zero, alpha)?;
    let mut out = vec![HedgeReport {
        method: "none".into(),
        delta: zero,
        c: c0,
        upl: u0,
        ec: e0,
        upl_ratio: 1.0,
        ec_ratio: 1.0,
        c_ratio: 1.0,
    }];
    for (name, d) in candidates {
        let (u, e, c) = hedge_metrics(data, d, alpha)?;
        out.push(HedgeReport {
            method: name.clone(),
            delta: d.clone(),
            c,
            upl: u,
            ec: e,
            upl_ratio: ratio(u0, u),
            ec_ratio: ratio(e0, e),
            c_ratio: ratio(c0, c),
        });
    }
    Ok(out)
}

pub fn write_compression_csv(rows: &[(String, f64, Vec<HedgeReport>)], w: impl std::io::Write) -> Result<()> {
    use crate::report::sig6;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["sample", "t", "method", "upl", "ec", "c", "upl_ratio", "ec_ratio", "c_ratio"])?;
    for (sample, t, reports) in rows {
        for r in reports {
            wr.write_record([
                sample.clone(),
                sig6(*t),
                r.method.clone(),
                sig6(r.upl),
                sig6(r.ec),
                sig6(r.c),
                sig6(r.upl_ratio),
                sig6(r.ec_ratio),
                sig6(r.c_ratio),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;

    fn toy(m: usize, beta: &[f64], noise: f64, seed: u64) -> HedgeData {
        let mut s = make_stream(seed, 0);
        let q = beta.len();
        let hedge = Matrix::from_fn(m, q, |_, _| s.normal());
        let pnl = (0..m)
            .map(|j| crate::linalg::dot(hedge.row(j), beta) + 2.0 + noise * s.normal())
            .collect();
        HedgeData::new(pnl, hedge).unwrap()
    }

    #[test]
    fn zero_delta_centers_pnl() {
        let d = toy(100, &[1.0], 1.0, 1);
        let (l, c) = d.loss(&[0.0]).unwrap();
        let mu = d.pnl.iter().sum::<f64>() / 100.0;
        assert_eq!(c, mu);
        for (a, b) in l.iter().zip(&d.pnl) {
            assert_eq!(*a, b - mu);
        }
        let (l, _) = d.loss(&[1.0]).unwrap();
        assert!(l.iter().sum::<f64>().abs() < 1e-12);
        assert!(d.loss(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn replication_gives_zero_upl() {
        let d = toy(500, &[3.0, -1.0], 0.0, 2);
        let delta = ple_sensitivities(&d, 0.0).unwrap();
        assert!((delta[0] - 3.0).abs() < 1e-10 && (delta[1] + 1.0).abs() < 1e-10);
        let (l, c) = d.loss(&delta).unwrap();
        assert!((c - 2.0).abs() < 1e-10);
        assert!(l.iter().all(|v| v.abs() < 1e-10));
        let rep = compression_report(&[("ple".into(), delta)], &d, 0.95).unwrap();
        assert_eq!((rep[0].upl_ratio, rep[0].ec_ratio, rep[0].c_ratio), (1.0, 1.0, 1.0));
        assert!(rep[1].upl_ratio > 1e8);
    }

    #[test]
    fn ple_is_least_squares_optimal() {
        let d = toy(2000, &[1.0, 0.5, 0.0], 1.0, 3);
        let ple = ple_sensitivities(&d, 0.0).unwrap();
        let (u, _, _) = hedge_metrics(&d, &ple, 0.95).unwrap();
        let mut s = make_stream(4, 0);
        for _ in 0..20 {
            let other: Vec<f64> = ple.iter().map(|v| v + 0.05 * s.normal()).collect();
            assert!(u <= hedge_metrics(&d, &other, 0.95).unwrap().0);
        }
        let (l, _) = d.loss(&ple).unwrap();
        let mean = l.iter().sum::<f64>() / l.len() as f64;
        assert!(mean.abs() <= 1e-10 * u);
    }

    #[test]
    fn uncorrelated_instruments_give_small_delta() {
        let mut s = make_stream(5, 0);
        let m = 20000;
        let hedge = Matrix::from_fn(m, 2, |_, _| s.normal());
        let pnl = (0..m).map(|_| s.normal()).collect();
        let d = HedgeData::new(pnl, hedge).unwrap();
        let delta = ple_sensitivities(&d, 1e-8).unwrap();
        assert!(delta.iter().all(|v| v.abs() < 0.03), "{delta:?}");
    }

    #[test]
    fn ls_recovers_linear_coefficients() {
        let mut s = make_stream(6, 0);
        let m = 5000;
        let dz = Matrix::from_fn(m, 2, |_, _| s.normal());
        let label: Vec<f64> = (0..m).map(|j| 2.0 * dz[(j, 0)] - dz[(j, 1)] + 0.1 * s.normal()).collect();
        let b = ls_sensitivities(&label, &dz, 0.0).unwrap();
        assert!((b[0] - 2.0).abs() < 0.01 && (b[1] + 1.0).abs() < 0.01);
        let zero = ls_sensitivities(&label, &Matrix::zeros(m, 2), 0.0).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn ec_without_instruments_finds_var() {
        let mut s = make_stream(7, 0);
        let m = 4096;
        let pnl: Vec<f64> = (0..m).map(|_| s.normal()).collect();
        let d = HedgeData::new(pnl, Matrix::zeros(m, 0)).unwrap();
        let cfg = EcConfig {
            epochs: 50,
            ..EcConfig::default()
        };
        let r = ec_sensitivities(&d, None, &cfg).unwrap();
        let (l, _) = d.loss(&[]).unwrap();
        let mut sorted = l.clone();
        sorted.sort_by(f64::total_cmp);
        let v = var_es(&l, 0.95).unwrap().var;
        let pos = sorted.partition_point(|&x| x < v);
        let gap = (sorted[pos + 1] - sorted[pos - 1]).abs();
        assert!((r.k - v).abs() <= gap);
        assert!((r.k_sgd - v).abs() < 0.1);
    }

    #[test]
    fn ec_recovers_replicating_ratio() {
        let d = toy(8192, &[3.0], 0.0, 8);
        let cfg = EcConfig {
            epochs: 100,
            ..EcConfig::default()
        };
        let r = ec_sensitivities(&d, None, &cfg).unwrap();
        assert!((r.delta[0] - 3.0).abs() < 0.06, "{:?}", r.delta);
        let warm = ec_sensitivities(&d, Some(&[3.0]), &cfg).unwrap();
        assert!((warm.delta[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ec_no_worse_than_warm_start() {
        let mut s = make_stream(9, 0);
        let m = 4096;
        let hedge = Matrix::from_fn(m, 2, |_, _| s.normal());
        // Skewed residual so the ES and variance optima differ.
        let pnl: Vec<f64> = (0..m)
            .map(|j| hedge[(j, 0)] + 0.5 * hedge[(j, 1)] + (0.7 * s.normal()).exp())
            .collect();
        let d = HedgeData::new(pnl, hedge).unwrap();
        let ple = ple_sensitivities(&d, 0.0).unwrap();
        let cfg = EcConfig {
            epochs: 30,
            ..EcConfig::default()
        };
        let ec = ec_sensitivities(&d, Some(&ple), &cfg).unwrap();
        let (_, e_ple, _) = hedge_metrics(&d, &ple, 0.95).unwrap();
        let (_, e_ec, _) = hedge_metrics(&d, &ec.delta, 0.95).unwrap();
        assert!(e_ec <= e_ple + 1e-9 * e_ple.abs());
        let (u_ple, _, _) = hedge_metrics(&d, &ple, 0.95).unwrap();
        assert!(u_ple <= hedge_metrics(&d, &ec.delta, 0.95).unwrap().0);
    }

    #[test]
    fn symmetric_instruments_split_the_tie() {
        let mut s = make_stream(10, 0);
        let m = 4000;
        let x: Vec<f64> = (0..m).map(|_| s.normal()).collect();
        let pnl: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.1 * s.normal()).collect();
        let single = HedgeData::new(pnl.clone(), Matrix::from_vec(m, 1, x.clone())).unwrap();
        let twin = HedgeData::new(pnl, Matrix::from_fn(m, 2, |j, _| x[j])).unwrap();
        let a = ple_sensitivities(&single, 1e-8).unwrap();
        let b = ple_sensitivities(&twin, 1e-8).unwrap();
        assert!((b[0] - b[1]).abs() < 1e-10);
        assert!((b[0] + b[1] - a[0]).abs() < 1e-6);
    }
}
