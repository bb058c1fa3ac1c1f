use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LearnerSpec, Predictor};
use crate::cva::CvaLab;
use crate::engine::{simulate_range, EngineConfig, PathBuf, PathStreams, NO_DEFAULT};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ModelParams, SimGrid};
use crate::rng::{domain, make_stream};

/// Features of a conditional CVA learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondMode {
    /// `(X_t, Y_t)` with parameters at `rho0`.
    Baseline,
    /// `(X_t, Y_t, eps)` with exogenous parameters randomized per path.
    Risk,
}

/// Relative Gaussian noise on the exogenous parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamNoise {
    /// Relative standard deviation at a one-year horizon; scaled by
    /// `sqrt(t)` for horizon `t`.
    pub rel_sd: f64,
}

impl Default for ParamNoise {
    fn default() -> Self {
        Self { rel_sd: 0.01 }
    }
}

impl ParamNoise {
    pub fn at(&self, t: f64) -> f64 {
        self.rel_sd * t.max(0.0).sqrt()
    }
}

/// `eps_k (1 + rel_sd z_k)` on every exogenous component, clamped at 0.
pub fn perturb_exogenous(rho0: &ModelParams, rel_sd: f64, stream: &mut crate::rng::RngStream) -> ModelParams {
    let mut v = rho0.to_vec();
    for k in rho0.layout().exogenous_indices() {
        v[k] = (v[k] * (1.0 + rel_sd * stream.normal())).max(0.0);
    }
    rho0.with_vec(&v)
}

/// Per-path parameters of a risk-mode simulation at horizon `t`.
pub fn risk_params(rho0: &ModelParams, noise: &ParamNoise, t: f64, m: usize, seed: u64) -> Vec<ModelParams> {
    let sd = noise.at(t);
    (0..m)
        .map(|j| perturb_exogenous(rho0, sd, &mut make_stream(seed, domain::PARAMS | j as u64)))
        .collect()
}

/// Learner inputs at grid date `i`: default indicators, factors and, in
/// risk mode, the exogenous parameters.
pub fn state_features(p: &ModelParams, buf: &PathBuf, i: usize, mode: CondMode) -> Vec<f64> {
    let mut f: Vec<f64> = (0..buf.default_step.len())
        .map(|k| if buf.defaulted(i, k) { 1.0 } else { 0.0 })
        .collect();
    f.extend_from_slice(buf.factors(i));
    if mode == CondMode::Risk {
        let v = p.to_vec();
        f.extend(p.layout().exogenous_indices().into_iter().map(|k| v[k]));
    }
    f
}

/// Simulated training set for `CVA_t`.
#[derive(Clone, Debug)]
pub struct ConditionalSample {
    pub t: f64,
    pub mode: CondMode,
    pub features: Matrix<f64>,
    /// `xi_{t,T}` labels.
    pub xi: Vec<f64>,
    /// Realized losses `C_t`.
    pub loss_c: Vec<f64>,
    pub params: Vec<ModelParams>,
    pub states: Vec<PathBuf>,
}

fn param_set(lab: &CvaLab, mode: CondMode, noise: &ParamNoise, t: f64, m: usize, seed: u64) -> Vec<ModelParams> {
    match mode {
        CondMode::Baseline => vec![lab.rho0.clone(); m],
        CondMode::Risk => risk_params(&lab.rho0, noise, t, m, seed),
    }
}

/// Simulates `m` paths and records the state at `t` and `xi_{t,T}`.
pub fn conditional_sample(
    lab: &CvaLab,
    mode: CondMode,
    t: f64,
    m: usize,
    seed: u64,
    noise: &ParamNoise,
) -> Result<ConditionalSample> {
    let i = lab.step_of(t)?;
    let params = param_set(lab, mode, noise, t, m, seed);
    let layout = lab.layout();
    let grid = lab.grid();
    let rows: Vec<(Vec<f64>, f64, f64, PathBuf)> = (0..m)
        .into_par_iter()
        .map_init(
            || lab.scratch(),
            |s, j| {
                let p = &params[j];
                let mut st = PathStreams::for_path(seed, j);
                lab.run_path(p, &mut st, s);
                let xi = crate::cva::xi_from(&s.buf, &s.mtm, &layout, &grid, i);
                let c = crate::cva::loss_c_at(&s.buf, &s.mtm, layout.clients, i);
                let mut state = s.buf.clone();
                truncate_state(&mut state, i);
                (state_features(p, &s.buf, i, mode), xi, c, state)
            },
        )
        .collect();
    let k = rows.first().map_or(0, |r| r.0.len());
    let mut x = Vec::with_capacity(m * k);
    let mut xi = Vec::with_capacity(m);
    let mut loss_c = Vec::with_capacity(m);
    let mut states = Vec::with_capacity(m);
    for (f, a, c, st) in rows {
        x.extend(f);
        xi.push(a);
        loss_c.push(c);
        states.push(st);
    }
    Ok(ConditionalSample {
        t,
        mode,
        features: Matrix::from_vec(m, k, x),
        xi,
        loss_c,
        params,
        states,
    })
}

/// Forgets everything after date `i` (future factors zeroed, later
/// defaults removed) so a state carries only `(X_t, Y_t)` information.
pub fn truncate_state(buf: &mut PathBuf, i: usize) {
    let d = buf.dim;
    for v in buf.y[(i + 1) * d..].iter_mut() {
        *v = 0.0;
    }
    for s in buf.default_step.iter_mut() {
        if *s != NO_DEFAULT && (*s as usize) > i {
            *s = NO_DEFAULT;
        }
    }
}

/// Trained `CVA_t` learner with its training diagnostics.
#[derive(Clone, Debug)]
pub struct ConditionalCva {
    pub t: f64,
    pub mode: CondMode,
    pub predictor: Predictor,
    pub train_loss: f64,
}

/// Learns `CVA_t(X_t, rho_t)` by regressing `xi_{t,T}` on the state.
pub fn learn_conditional_cva(
    lab: &CvaLab,
    mode: CondMode,
    t: f64,
    m: usize,
    seed: u64,
    noise: &ParamNoise,
    learner: &LearnerSpec,
) -> Result<(ConditionalCva, ConditionalSample)> {
    if !(t > 0.0) {
        return Err(Error::Config("conditional CVA needs t > 0; use the baseline CVA at t = 0".into()));
    }
    let sample = conditional_sample(lab, mode, t, m, seed, noise)?;
    let (predictor, train_loss) = learner.fit(&sample.features, &sample.xi)?;
    Ok((
        ConditionalCva {
            t,
            mode,
            predictor,
            train_loss,
        },
        sample,
    ))
}

/// Twin data: states at `t` with two conditionally independent
/// continuations of `xi_{t,T}` each.
#[derive(Clone, Debug)]
pub struct TwinSample {
    pub features: Matrix<f64>,
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
}

pub fn twin_sample(
    lab: &CvaLab,
    mode: CondMode,
    t: f64,
    m: usize,
    seed: u64,
    noise: &ParamNoise,
) -> Result<TwinSample> {
    let i = lab.step_of(t)?;
    let params = param_set(lab, mode, noise, t, m, seed);
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..m)
        .into_par_iter()
        .map_init(
            || lab.scratch(),
            |s, j| {
                let p = &params[j];
                lab.state_at(p, seed, j, i, s);
                let start = s.buf.clone();
                let feats = state_features(p, &start, i, mode);
                let run = |s: &mut crate::cva::Scratch, dom: u64| {
                    s.buf.y.copy_from_slice(&start.y);
                    s.buf.default_step.copy_from_slice(&start.default_step);
                    let id = dom | j as u64;
                    let mut st = PathStreams::from_ids(seed, id, id | (1 << 55));
                    lab.continue_xi(p, i, &mut st, s)
                };
                let a = run(s, domain::TWIN_A);
                let b = run(s, domain::TWIN_B);
                (feats, a, b)
            },
        )
        .collect();
    let k = rows.first().map_or(0, |r| r.0.len());
    let mut x = Vec::with_capacity(m * k);
    let (mut xi1, mut xi2) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for (f, a, b) in rows {
        x.extend(f);
        xi1.push(a);
        xi2.push(b);
    }
    Ok(TwinSample {
        features: Matrix::from_vec(m, k, x),
        xi1,
        xi2,
    })
}

/// Scenario `rho_(t) = (Y_t(y0, eps_(t)), eps_(t))` of the run-on risk at
/// horizon `t` (not necessarily a pricing date).
pub fn runon_scenario(rho0: &ModelParams, engine: &EngineConfig, noise: &ParamNoise, t: f64, seed: u64, j: usize) -> ModelParams {
    let mut eps = perturb_exogenous(rho0, noise.at(t), &mut make_stream(seed, domain::PARAMS | j as u64));
    if t <= 0.0 {
        return eps;
    }
    let dt = engine.grid.h / engine.grid.substeps as f64;
    let grid = SimGrid {
        n: 1,
        h: t,
        substeps: ((t / dt).round() as usize).max(1),
    };
    let mut cfg = engine.clone();
    cfg.grid = grid;
    let layout = crate::engine::FactorLayout::of(rho0);
    let mut buf = PathBuf::new(layout, &grid);
    buf.y[..layout.dim()].copy_from_slice(&layout.initial(&eps));
    let id = domain::HORIZON | j as u64;
    let mut st = PathStreams::from_ids(seed, id, id | (1 << 55));
    simulate_range(&eps, &cfg, 0, 1, &mut st, &mut buf);
    let y = buf.factors(1);
    let e_n = layout.economies;
    eps.r0.copy_from_slice(&y[..e_n]);
    eps.fx0.copy_from_slice(&y[e_n..2 * e_n - 1]);
    eps.gamma0.copy_from_slice(&y[2 * e_n - 1..]);
    eps
}

/// Run-on training data: scenarios and common-driver cash-flow
/// differences `xi_{0,T}(rho_(t)) - xi_{0,T}(rho0)`.
#[derive(Clone, Debug)]
pub struct RunOnSample {
    pub t: f64,
    pub scenarios: Vec<ModelParams>,
    /// `rho_(t) - rho0`, one row per scenario.
    pub drho: Matrix<f64>,
    pub label: Vec<f64>,
    /// `xi_{0,T}(rho0)` on the same drivers.
    pub xi0: Vec<f64>,
}

pub fn runon_sample(
    lab: &CvaLab,
    t: f64,
    m: usize,
    seed: u64,
    noise: &ParamNoise,
    with_labels: bool,
) -> Result<RunOnSample> {
    if t < 0.0 {
        return Err(Error::Config("run-on horizon must be nonnegative".into()));
    }
    let rho0v = lab.rho0.to_vec();
    let rows: Vec<(ModelParams, f64, f64)> = (0..m)
        .into_par_iter()
        .map_init(
            || lab.scratch(),
            |s, j| {
                let p = runon_scenario(&lab.rho0, &lab.engine, noise, t, seed, j);
                if !with_labels {
                    return (p, 0.0, 0.0);
                }
                let a = lab.xi0(&p, seed, j, s);
                let b = lab.xi0(&lab.rho0, seed, j, s);
                (p, a - b, b)
            },
        )
        .collect();
    let pdim = rho0v.len();
    let mut d = Vec::with_capacity(m * pdim);
    let mut scenarios = Vec::with_capacity(m);
    let mut label = Vec::with_capacity(m);
    let mut xi0 = Vec::with_capacity(m);
    for (p, l, b) in rows {
        d.extend(p.to_vec().iter().zip(&rho0v).map(|(a, b)| a - b));
        scenarios.push(p);
        label.push(l);
        xi0.push(b);
    }
    Ok(RunOnSample {
        t,
        scenarios,
        drho: Matrix::from_vec(m, pdim, d),
        label,
        xi0,
    })
}

/// Learns `dPi_(t)` as a function of `rho_(t) - rho0`.
pub fn learn_delta_cva_runon(
    lab: &CvaLab,
    t: f64,
    m: usize,
    seed: u64,
    noise: &ParamNoise,
    learner: &LearnerSpec,
) -> Result<(Predictor, RunOnSample)> {
    if !(t > 0.0) {
        return Err(Error::Config("run-on learning needs t > 0".into()));
    }
    let sample = runon_sample(lab, t, m, seed, noise, true)?;
    let (pred, _) = learner.fit(&sample.drho, &sample.label)?;
    Ok((pred, sample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::products::PortfolioSpec;

    fn lab() -> CvaLab {
        let grid = SimGrid { n: 20, h: 0.25, substeps: 2 };
        let spec = PortfolioSpec {
            count: 40,
            max_maturity: 5.0,
            ..Default::default()
        };
        CvaLab::generate(ModelParams::desk_lab(), EngineConfig::new(grid), &spec, 4).unwrap()
    }

    #[test]
    fn features_layout() {
        let lab = lab();
        let s = conditional_sample(&lab, CondMode::Risk, 0.5, 8, 1, &ParamNoise::default()).unwrap();
        assert_eq!(s.features.cols(), 2 + 7 + 17);
        let b = conditional_sample(&lab, CondMode::Baseline, 0.5, 8, 1, &ParamNoise::default()).unwrap();
        assert_eq!(b.features.cols(), 9);
        // Same drivers, different parameters.
        assert_ne!(s.xi, b.xi);
        assert!(s.params.iter().all(|p| p.r0 == lab.rho0.r0 && p.gamma0 == lab.rho0.gamma0));
    }

    #[test]
    fn rejects_t_zero() {
        let lab = lab();
        let spec = LearnerSpec::Linear { ridge_rel: 1e-8 };
        assert!(learn_conditional_cva(&lab, CondMode::Baseline, 0.0, 8, 1, &ParamNoise::default(), &spec).is_err());
        assert!(learn_delta_cva_runon(&lab, 0.0, 8, 1, &ParamNoise::default(), &spec).is_err());
    }

    #[test]
    fn twin_copies_share_the_state() {
        let lab = lab();
        let tw = twin_sample(&lab, CondMode::Baseline, 1.0, 16, 3, &ParamNoise::default()).unwrap();
        let cs = conditional_sample(&lab, CondMode::Baseline, 1.0, 16, 3, &ParamNoise::default()).unwrap();
        assert_eq!(tw.features, cs.features);
        assert_ne!(tw.xi1, tw.xi2);
    }

    #[test]
    fn runon_zero_horizon_is_degenerate() {
        let lab = lab();
        let s = runon_sample(&lab, 0.0, 6, 2, &ParamNoise::default(), true).unwrap();
        assert!(s.drho.as_slice().iter().all(|&v| v == 0.0));
        assert!(s.label.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn common_drivers_reduce_label_variance() {
        let lab = lab();
        let s = runon_sample(&lab, 0.1, 200, 5, &ParamNoise::default(), true).unwrap();
        let xi_rho: Vec<f64> = s.label.iter().zip(&s.xi0).map(|(l, b)| l + b).collect();
        let indep: Vec<f64> = xi_rho.iter().map(|v| v - crate::scalar::mean(&s.xi0)).collect();
        assert!(crate::scalar::sample_variance(&s.label) < crate::scalar::sample_variance(&indep));
    }
}
