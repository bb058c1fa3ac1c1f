//! Bump sensitivities with common random numbers: full benchmark bumps,
//! randomized (linear) bumps regressed per parameter group, smart bumps on
//! disjoint path blocks, and network-gradient (AAD) variants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_linear, LearnerSpec, LinearConfig, Predictor};
use crate::linalg::Matrix;
use crate::products::{basket_payoff, BasketSpec};
use crate::report::sig6;
use crate::rng::{domain, make_stream};
use crate::scalar::{mean, sample_stdev, Scalar};

/// A pathwise payoff `xi(rho; omega_path)`. Evaluations with the same
/// `path` share their random drivers.
pub trait Payoff<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, rho: &[T], path: usize) -> T;
    fn eval_pair(&self, a: &[T], b: &[T], path: usize) -> (T, T) {
        (self.eval(a, path), self.eval(b, path))
    }
}

/// Payoff from a closure.
pub struct FnPayoff<F> {
    pub dim: usize,
    pub f: F,
}

impl<T: Scalar, F: Fn(&[T], usize) -> T + Sync> Payoff<T> for FnPayoff<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, rho: &[T], path: usize) -> T {
        (self.f)(rho, path)
    }
}

/// Monte Carlo geometric-basket call; `rho = (spots, vols)`.
pub struct BasketMc<T> {
    pub spec: BasketSpec<T>,
    pub seed: u64,
}

impl<T: Scalar> Payoff<T> for BasketMc<T> {
    fn dim(&self) -> usize {
        2 * self.spec.d()
    }
    fn eval(&self, rho: &[T], path: usize) -> T {
        let mut s = make_stream(self.seed, domain::DIFFUSION | path as u64);
        let z: Vec<T> = (0..self.spec.d()).map(|_| T::of(s.normal())).collect();
        basket_payoff(&self.spec.with_params(rho), &z)
    }
}

/// `2 rho0 - rho`.
pub fn symmetrize<T: Scalar>(rho: &[T], rho0: &[T]) -> Vec<T> {
    rho.iter().zip(rho0).map(|(&r, &r0)| r0 + r0 - r).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Benchmark,
    Linear,
    Smart,
    Aad,
    NaiveAad,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Benchmark => "benchmark",
            Method::Linear => "linear",
            Method::Smart => "smart",
            Method::Aad => "aad",
            Method::NaiveAad => "naive-aad",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        [Method::Benchmark, Method::Linear, Method::Smart, Method::Aad, Method::NaiveAad]
            .into_iter()
            .find(|m| m.tag() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityReport<T> {
    pub names: Vec<String>,
    pub estimate: Vec<T>,
    /// 95% half-widths; absent for network gradients.
    pub ci_halfwidth: Option<Vec<T>>,
    pub gamma: Option<Vec<T>>,
    pub method: Method,
    /// Components whose regression was rank deficient.
    pub failed: Vec<usize>,
}

impl<T: Scalar> SensitivityReport<T> {
    fn new(names: Vec<String>, estimate: Vec<T>, ci: Option<Vec<T>>, method: Method) -> Self {
        Self {
            names,
            estimate,
            ci_halfwidth: ci,
            gamma: None,
            method,
            failed: vec![],
        }
    }

    /// Whether the 95% interval of component `k` contains `value`.
    pub fn covers(&self, k: usize, value: T) -> bool {
        match &self.ci_halfwidth {
            Some(ci) => (self.estimate[k] - value).abs() <= ci[k],
            None => false,
        }
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["parameter_name", "estimate", "ci_halfwidth", "method"];
        if self.gamma.is_some() {
            header.push("gamma");
        }
        wr.write_record(&header)?;
        for k in 0..self.estimate.len() {
            let mut row = vec![
                self.names[k].clone(),
                sig6(self.estimate[k].to_f64_lossy()),
                self.ci_halfwidth
                    .as_ref()
                    .map_or(String::new(), |c| sig6(c[k].to_f64_lossy())),
                self.method.tag().to_string(),
            ];
            if let Some(g) = &self.gamma {
                row.push(sig6(g[k].to_f64_lossy()));
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn default_names(p: usize) -> Vec<String> {
    (0..p).map(|k| format!("rho[{k}]")).collect()
}

/// Relative bump with an absolute fallback for zero parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BumpSize {
    pub rel: f64,
    pub abs_floor: f64,
}

impl Default for BumpSize {
    fn default() -> Self {
        Self {
            rel: 0.01,
            abs_floor: 1e-4,
        }
    }
}

impl BumpSize {
    pub fn of<T: Scalar>(&self, rho0: &[T]) -> Vec<T> {
        rho0.iter()
            .map(|&r| {
                if r == T::zero() {
                    T::of(self.abs_floor)
                } else {
                    T::of(self.rel) * r.abs()
                }
            })
            .collect()
    }
}

/// Scale of a component for relative Gaussian bumps.
fn unit_scale<T: Scalar>(r: T, abs_floor: f64) -> T {
    if r == T::zero() {
        T::of(abs_floor)
    } else {
        r.abs()
    }
}

/// Central differences with `2p` repricings per path and, optionally,
/// diagonal second differences.
pub fn benchmark_bump<T: Scalar>(
    payoff: &dyn Payoff<T>,
    rho0: &[T],
    m: usize,
    bump: &BumpSize,
    gammas: bool,
) -> Result<SensitivityReport<T>> {
    let p = check_dim(payoff, rho0)?;
    if m < 2 {
        return Err(Error::Config("benchmark bump needs m >= 2".into()));
    }
    let b = bump.of(rho0);
    let rows: Vec<(Vec<T>, Vec<T>)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let base = if gammas { payoff.eval(rho0, j) } else { T::zero() };
            let mut d = Vec::with_capacity(p);
            let mut g = Vec::with_capacity(if gammas { p } else { 0 });
            let mut up = rho0.to_vec();
            let mut dn = rho0.to_vec();
            for k in 0..p {
                up[k] = rho0[k] + b[k];
                dn[k] = rho0[k] - b[k];
                let (xu, xd) = payoff.eval_pair(&up, &dn, j);
                d.push((xu - xd) / (b[k] + b[k]));
                if gammas {
                    g.push((xu - base - base + xd) / (b[k] * b[k]));
                }
                up[k] = rho0[k];
                dn[k] = rho0[k];
            }
            (d, g)
        })
        .collect();
    let col = |k: usize, second: bool| -> Vec<T> {
        rows.iter().map(|r| if second { r.1[k] } else { r.0[k] }).collect()
    };
    let mut est = Vec::with_capacity(p);
    let mut ci = Vec::with_capacity(p);
    for k in 0..p {
        let c = col(k, false);
        est.push(mean(&c));
        ci.push(crate::scalar::ci95_halfwidth(&c));
    }
    let mut rep = SensitivityReport::new(default_names(p), est, Some(ci), Method::Benchmark);
    if gammas {
        rep.gamma = Some((0..p).map(|k| mean(&col(k, true))).collect());
    }
    Ok(rep)
}

fn check_dim<T: Scalar>(payoff: &dyn Payoff<T>, rho0: &[T]) -> Result<usize> {
    let p = payoff.dim();
    if rho0.len() != p {
        return Err(Error::Dimension(format!("payoff has {p} parameters, rho0 has {}", rho0.len())));
    }
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Gaussian bumps of the block's group, relative stdev `sigma`.
    Gaussian,
    /// `+sigma` relative bump of the block's single component.
    Deterministic,
}

/// Which parameters each block of paths bumps, and by how much.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpPlan {
    pub groups: Vec<Vec<usize>>,
    pub sigma: Vec<f64>,
    pub mode: PlanMode,
    pub abs_floor: f64,
    pub seed: u64,
}

/// Contiguous block sizes proportional to `weights`, summing to `m`.
pub fn block_sizes(m: usize, weights: &[usize]) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    let mut sizes: Vec<usize> = weights.iter().map(|&w| m * w / total.max(1)).collect();
    let mut rest = m - sizes.iter().sum::<usize>();
    let n = sizes.len();
    let mut i = 0;
    while rest > 0 && n > 0 {
        sizes[i % n] += 1;
        rest -= 1;
        i += 1;
    }
    sizes
}

impl BumpPlan {
    /// Singleton groups with a deterministic `+rel` bump each.
    pub fn one_hot(p: usize, rel: f64) -> Self {
        Self {
            groups: (0..p).map(|k| vec![k]).collect(),
            sigma: vec![rel; p],
            mode: PlanMode::Deterministic,
            abs_floor: 1e-4,
            seed: 0,
        }
    }

    pub fn gaussian(groups: Vec<Vec<usize>>, sigma: Vec<f64>, seed: u64) -> Self {
        Self {
            groups,
            sigma,
            mode: PlanMode::Gaussian,
            abs_floor: 1e-4,
            seed,
        }
    }

    /// Gaussian plan with one group per entry of `groups` and `sigma`
    /// chosen by `vol` membership.
    pub fn by_groups(groups: Vec<Vec<usize>>, is_vol: &[bool], sigma: f64, vol_sigma: f64, seed: u64) -> Self {
        let s = is_vol.iter().map(|&v| if v { vol_sigma } else { sigma }).collect();
        Self::gaussian(groups, s, seed)
    }

    /// One group per model parameter family; volatility families get
    /// `vol_sigma`.
    pub fn for_model(layout: &crate::model::ParamLayout, sigma: f64, vol_sigma: f64, seed: u64) -> Self {
        let (groups, vol): (Vec<Vec<usize>>, Vec<bool>) = layout
            .groups()
            .into_iter()
            .filter(|(_, idx)| !idx.is_empty())
            .map(|(g, idx)| (idx, g.is_volatility()))
            .unzip();
        Self::by_groups(groups, &vol, sigma, vol_sigma, seed)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.groups.len() != self.sigma.len() {
            return Err(Error::Config("one sigma per bump group required".into()));
        }
        let mut seen = vec![false; p];
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::Config("empty bump group".into()));
            }
            for &k in g {
                if k >= p || seen[k] {
                    return Err(Error::Config(format!("bump groups overlap or exceed p at index {k}")));
                }
                seen[k] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Config("bump groups do not cover all parameters".into()));
        }
        if self.mode == PlanMode::Deterministic && self.groups.iter().any(|g| g.len() != 1) {
            return Err(Error::Config("deterministic bump plans need singleton groups".into()));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("bump sigmas must be positive".into()));
        }
        Ok(())
    }

    pub fn block_sizes(&self, m: usize) -> Vec<usize> {
        block_sizes(m, &self.groups.iter().map(Vec::len).collect::<Vec<_>>())
    }

    /// Bumped parameters of path `j` in block `g`.
    pub fn draw<T: Scalar>(&self, rho0: &[T], g: usize, j: usize) -> Vec<T> {
        let mut rho = rho0.to_vec();
        let sig = T::of(self.sigma[g]);
        match self.mode {
            PlanMode::Deterministic => {
                let k = self.groups[g][0];
                rho[k] = rho0[k] + sig * unit_scale(rho0[k], self.abs_floor);
            }
            PlanMode::Gaussian => {
                let mut s = make_stream(self.seed, domain::PARAMS | j as u64);
                for &k in &self.groups[g] {
                    rho[k] = rho0[k] + sig * unit_scale(rho0[k], self.abs_floor) * T::of(s.normal());
                }
            }
        }
        rho
    }
}

/// Regression target samples of one block.
struct Block<T> {
    group: usize,
    rho: Vec<Vec<T>>,
    sigma_diff: Vec<T>,
}

/// `varsigma = xi(rho) - xi(rho_bar)` on every path, grouped by block.
fn simulate_blocks<T: Scalar>(payoff: &dyn Payoff<T>, rho0: &[T], m: usize, plan: &BumpPlan) -> Vec<Block<T>> {
    let sizes = plan.block_sizes(m);
    let mut start = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for (g, &n) in sizes.iter().enumerate() {
        let rows: Vec<(Vec<T>, T)> = (start..start + n)
            .into_par_iter()
            .map(|j| {
                let rho = plan.draw(rho0, g, j);
                let bar = symmetrize(&rho, rho0);
                let (a, b) = payoff.eval_pair(&rho, &bar, j);
                (rho, a - b)
            })
            .collect();
        let (rho, sigma_diff) = rows.into_iter().unzip();
        out.push(Block {
            group: g,
            rho,
            sigma_diff,
        });
        start += n;
    }
    out
}

/// Estimate and half-width of `E varsigma / (2 b)` from a block sample.
fn block_mean_estimate<T: Scalar>(varsigma: &[T], bump: T) -> (T, T) {
    let n = varsigma.len();
    let two_b = bump + bump;
    let est = mean(varsigma) / two_b;
    let ci = if n > 1 {
        T::of(1.96) * sample_stdev(varsigma) / T::of_usize(n).sqrt() / two_b.abs()
    } else {
        T::infinity()
    };
    (est, ci)
}

/// How linear-bump slopes are obtained from a Gaussian block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regression {
    Svd,
    /// Uses the known bump covariance `sigma^2 diag(rho0^2)` in place of
    /// the sample Gram matrix.
    AnalyticCovariance,
}

/// Randomized bumps regressed (without intercept) per group; slopes are
/// halved since `E[varsigma | rho]` has gradient `2 dPi` at `rho0`.
pub fn linear_bump<T: Scalar>(
    payoff: &dyn Payoff<T>,
    rho0: &[T],
    m: usize,
    plan: &BumpPlan,
    ridge_rel: T,
    regression: Regression,
) -> Result<SensitivityReport<T>> {
    let p = check_dim(payoff, rho0)?;
    plan.validate(p)?;
    let sizes = plan.block_sizes(m);
    for (g, &n) in sizes.iter().enumerate() {
        if n < plan.groups[g].len() + 2 {
            return Err(Error::Config(format!(
                "block {g} has {n} paths for {} parameters",
                plan.groups[g].len()
            )));
        }
    }
    let blocks = simulate_blocks(payoff, rho0, m, plan);
    let mut est = vec![T::zero(); p];
    let mut ci = vec![T::zero(); p];
    let mut failed = Vec::new();
    for blk in &blocks {
        let idx = &plan.groups[blk.group];
        if plan.mode == PlanMode::Deterministic {
            let k = idx[0];
            let b = T::of(plan.sigma[blk.group]) * unit_scale(rho0[k], plan.abs_floor);
            let (e, c) = block_mean_estimate(&blk.sigma_diff, b);
            est[k] = e;
            ci[k] = c;
            continue;
        }
        let n = blk.rho.len();
        let x = Matrix::from_fn(n, idx.len(), |i, c| blk.rho[i][idx[c]] - rho0[idx[c]]);
        match regression {
            Regression::Svd => {
                let cfg = LinearConfig {
                    intercept: false,
                    ridge: T::zero(),
                    ridge_rel,
                    rcond: T::of(1e-10),
                    standardize: true,
                    std_errors: true,
                };
                let fit = fit_linear(&x, &blk.sigma_diff, &cfg)?;
                if fit.rank < idx.len() {
                    failed.extend_from_slice(idx);
                }
                let se = fit.std_errors.expect("requested");
                for (c, &k) in idx.iter().enumerate() {
                    est[k] = fit.coef[c] / T::of(2.0);
                    ci[k] = T::of(1.96) * se[c] / T::of(2.0);
                }
            }
            Regression::AnalyticCovariance => {
                let sig = T::of(plan.sigma[blk.group]);
                for (c, &k) in idx.iter().enumerate() {
                    let var = (sig * unit_scale(rho0[k], plan.abs_floor)).powi(2);
                    let terms: Vec<T> = (0..n).map(|i| x[(i, c)] * blk.sigma_diff[i] / var / T::of(2.0)).collect();
                    est[k] = mean(&terms);
                    ci[k] = T::of(1.96) * sample_stdev(&terms) / T::of_usize(n).sqrt();
                }
            }
        }
    }
    let mut rep = SensitivityReport::new(default_names(p), est, Some(ci), Method::Linear);
    failed.sort_unstable();
    rep.failed = failed;
    Ok(rep)
}

/// Block `k` of `m/p` paths bumps component `k` only, by `+rel`.
pub fn smart_bump<T: Scalar>(
    payoff: &dyn Payoff<T>,
    rho0: &[T],
    m: usize,
    bump: &BumpSize,
) -> Result<SensitivityReport<T>> {
    let p = check_dim(payoff, rho0)?;
    if m < 2 * p {
        return Err(Error::Config(format!("smart bump needs m >= 2p = {}", 2 * p)));
    }
    let mut plan = BumpPlan::one_hot(p, bump.rel);
    plan.abs_floor = bump.abs_floor;
    let blocks = simulate_blocks(payoff, rho0, m, &plan);
    let b = bump.of(rho0);
    let mut est = vec![T::zero(); p];
    let mut ci = vec![T::zero(); p];
    for blk in &blocks {
        let (e, c) = block_mean_estimate(&blk.sigma_diff, b[blk.group]);
        est[blk.group] = e;
        ci[blk.group] = c;
    }
    Ok(SensitivityReport::new(default_names(p), est, Some(ci), Method::Smart))
}

/// Halved input gradient at `rho0` of a network fitted to
/// `(rho, varsigma)` pairs of a Gaussian plan.
pub fn aad_bump(
    payoff: &dyn Payoff<f64>,
    rho0: &[f64],
    m: usize,
    plan: &BumpPlan,
    learner: &LearnerSpec,
) -> Result<(SensitivityReport<f64>, Predictor)> {
    let p = check_dim(payoff, rho0)?;
    plan.validate(p)?;
    let blocks = simulate_blocks(payoff, rho0, m, plan);
    let rows: Vec<&Vec<f64>> = blocks.iter().flat_map(|b| b.rho.iter()).collect();
    let x = Matrix::from_fn(rows.len(), p, |i, k| rows[i][k]);
    let y: Vec<f64> = blocks.iter().flat_map(|b| b.sigma_diff.iter().copied()).collect();
    let (pred, _) = learner.fit(&x, &y)?;
    let g: Vec<f64> = pred.input_gradient(rho0).iter().map(|v| v / 2.0).collect();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("non-finite network gradient".into()));
    }
    Ok((SensitivityReport::new(default_names(p), g, None, Method::Aad), pred))
}

/// Input gradient at `rho0` of a network fitted to `(rho, xi(rho))` pairs.
pub fn naive_aad(
    payoff: &dyn Payoff<f64>,
    rho0: &[f64],
    m: usize,
    plan: &BumpPlan,
    learner: &LearnerSpec,
) -> Result<(SensitivityReport<f64>, Predictor)> {
    let p = check_dim(payoff, rho0)?;
    plan.validate(p)?;
    let sizes = plan.block_sizes(m);
    let mut owner = Vec::with_capacity(m);
    for (g, &n) in sizes.iter().enumerate() {
        owner.extend(std::iter::repeat_n(g, n));
    }
    let rows: Vec<(Vec<f64>, f64)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let rho = plan.draw(rho0, owner[j], j);
            let v = payoff.eval(&rho, j);
            (rho, v)
        })
        .collect();
    let x = Matrix::from_fn(m, p, |i, k| rows[i].0[k]);
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (pred, _) = learner.fit(&x, &y)?;
    let g = pred.input_gradient(rho0);
    Ok((SensitivityReport::new(default_names(p), g, None, Method::NaiveAad), pred))
}

/// Names a report's components.
pub fn with_names<T>(mut rep: SensitivityReport<T>, names: Vec<String>) -> SensitivityReport<T> {
    rep.names = names;
    rep
}
