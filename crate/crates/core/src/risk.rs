//! Twin Monte Carlo validation of conditional-expectation predictors and
//! empirical VaR / ES.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Mean squared error estimate of a predictor from two conditionally
/// independent payoff copies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinReport {
    pub twin_stat: f64,
    pub twin_stdev: f64,
    /// `sqrt(twin_stat) / norm`, absent when `twin_stat <= 0`.
    pub twin_err: Option<f64>,
    pub twin_ub: f64,
    pub norm: f64,
    pub samples: usize,
}

impl TwinReport {
    /// Standard error of `twin_stat`.
    pub fn std_error(&self) -> f64 {
        self.twin_stdev / (self.samples as f64).sqrt()
    }
}

/// `phi[j]` is the prediction at the state shared by `xi1[j]` and `xi2[j]`.
pub fn twin_validate(phi: &[f64], xi1: &[f64], xi2: &[f64], norm: f64) -> Result<TwinReport> {
    if !(norm > 0.0) {
        return Err(Error::Config(format!("twin normalization must be positive, got {norm}")));
    }
    let m = phi.len();
    if xi1.len() != m || xi2.len() != m {
        return Err(Error::Dimension(format!(
            "{m} predictions against {} / {} twin payoffs",
            xi1.len(),
            xi2.len()
        )));
    }
    if m == 0 {
        return Err(Error::Config("no twin samples".into()));
    }
    let terms: Vec<f64> = (0..m)
        .map(|j| phi[j] * phi[j] - (xi1[j] + xi2[j]) * phi[j] + xi1[j] * xi2[j])
        .collect();
    let mf = m as f64;
    let stat = terms.iter().sum::<f64>() / mf;
    let var = terms.iter().map(|v| (v - stat).powi(2)).sum::<f64>() / mf;
    let stdev = var.sqrt();
    let ub_arg = stat + 2.0 / mf.sqrt() * stdev;
    Ok(TwinReport {
        twin_stat: stat,
        twin_stdev: stdev,
        twin_err: (stat > 0.0).then(|| stat.sqrt() / norm),
        twin_ub: ub_arg.max(0.0).sqrt() / norm,
        norm,
        samples: m,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskLevel {
    pub alpha: f64,
    pub var: f64,
    pub es: f64,
    /// Fewer than `1 / (1 - alpha)` samples.
    pub thin_tail: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub expectation: f64,
    pub levels: Vec<RiskLevel>,
}

pub const RISK_LEVELS: [f64; 3] = [0.95, 0.975, 0.99];

/// Empirical `alpha`-quantile with the higher order statistic and the mean
/// of the samples at or above it.
pub fn var_es(samples: &[f64], alpha: f64) -> Result<RiskLevel> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    var_es_sorted(&s, alpha)
}

pub fn var_es_sorted(sorted: &[f64], alpha: f64) -> Result<RiskLevel> {
    if sorted.is_empty() {
        return Err(Error::Config("no samples for VaR".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("risk level must lie in (0, 1), got {alpha}")));
    }
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite risk samples".into()));
    }
    let n = sorted.len();
    let idx = (((n - 1) as f64) * alpha).ceil() as usize;
    let var = sorted[idx];
    let first = sorted.partition_point(|&v| v < var);
    let tail = &sorted[first..];
    let es = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok(RiskLevel {
        alpha,
        var,
        es: es.max(var),
        thin_tail: (n as f64) < 1.0 / (1.0 - alpha),
    })
}

pub fn risk_report(samples: &[f64], alphas: &[f64]) -> Result<RiskReport> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let levels = alphas.iter().map(|&a| var_es_sorted(&s, a)).collect::<Result<_>>()?;
    Ok(RiskReport {
        expectation: samples.iter().sum::<f64>() / samples.len() as f64,
        levels,
    })
}

/// Risk of `delta . d + (1/2) sum gamma_k d_k^2` over scenario rows `d`.
pub fn quadratic_proxy_risk(
    delta: &[f64],
    gamma: Option<&[f64]>,
    scenarios: &Matrix<f64>,
    alphas: &[f64],
) -> Result<(RiskReport, Vec<f64>)> {
    if scenarios.cols() != delta.len() || gamma.is_some_and(|g| g.len() != delta.len()) {
        return Err(Error::Dimension(format!(
            "{} sensitivities against {} scenario columns",
            delta.len(),
            scenarios.cols()
        )));
    }
    let samples: Vec<f64> = (0..scenarios.rows())
        .map(|j| {
            let d = scenarios.row(j);
            let mut v = crate::linalg::dot(delta, d);
            if let Some(g) = gamma {
                v += 0.5 * g.iter().zip(d).map(|(g, x)| g * x * x).sum::<f64>();
            }
            v
        })
        .collect();
    Ok((risk_report(&samples, alphas)?, samples))
}

pub fn write_risk_csv(rows: &[(String, RiskReport)], w: impl std::io::Write) -> Result<()> {
    use crate::report::sig6;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["method", "measure", "alpha", "value"])?;
    for (name, r) in rows {
        wr.write_record([name.as_str(), "mean", "", &sig6(r.expectation)])?;
        for l in &r.levels {
            wr.write_record([name.as_str(), "VaR", &sig6(l.alpha), &sig6(l.var)])?;
            wr.write_record([name.as_str(), "ES", &sig6(l.alpha), &sig6(l.es)])?;
        }
    }
    wr.flush()?;
    Ok(())
}
