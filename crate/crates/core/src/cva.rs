//! CVA cash flows on simulated paths, the baseline Monte Carlo estimator
//! and nested Monte Carlo conditional CVA.
//!
//! All amounts are in the reference currency and already discounted
//! (the bank account is the numeraire), with a unit loss-given-default.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    simulate_from, simulate_path, simulate_range, EngineConfig, FactorLayout, ParamSource, PathBuf, PathSet,
    PathStreams, NO_DEFAULT,
};
use crate::error::{Error, Result};
use crate::model::{ModelParams, SimGrid};
use crate::products::{generate_portfolio, ExposureKernel, PortfolioSpec, Swap};
use crate::report::sig6;
use crate::rng::{domain, make_stream};
use crate::scalar::{ci95_halfwidth, mean};

/// Portfolio, model and engine settings of a CVA experiment.
#[derive(Clone, Debug)]
pub struct CvaLab {
    pub rho0: ModelParams,
    pub engine: EngineConfig,
    pub portfolio: Vec<Swap>,
    pub kernel: ExposureKernel,
}

/// Reusable per-thread buffers.
#[derive(Clone, Debug)]
pub struct Scratch {
    pub buf: PathBuf,
    /// Exposures `[j * C + c]`.
    pub mtm: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvaEstimate {
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub paths: usize,
}

impl CvaEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        Self {
            estimate: mean(xs),
            ci_halfwidth: if xs.len() > 1 { ci95_halfwidth(xs) } else { 0.0 },
            paths: xs.len(),
        }
    }
}

/// Per-path CVA cash flows at grid date `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CashFlowSample {
    pub path_id: usize,
    /// Intensity-based future loss `xi_{t,T}`.
    pub xi: f64,
    /// Realized default losses `C_t`.
    pub loss_c: f64,
    pub t: f64,
}

impl CvaLab {
    pub fn new(rho0: ModelParams, engine: EngineConfig, portfolio: Vec<Swap>) -> Result<Self> {
        engine.grid.validate()?;
        rho0.validate()?;
        let kernel = ExposureKernel::new(&portfolio, rho0.economies(), rho0.clients(), &engine.grid)?;
        Ok(Self {
            rho0,
            engine,
            portfolio,
            kernel,
        })
    }

    /// Lab with a random portfolio drawn from `seed`.
    pub fn generate(rho0: ModelParams, engine: EngineConfig, spec: &PortfolioSpec, seed: u64) -> Result<Self> {
        let mut s = make_stream(seed, domain::MISC);
        let portfolio = generate_portfolio(spec, &rho0, &engine.grid, &mut s)?;
        Self::new(rho0, engine, portfolio)
    }

    /// Three economies, two clients, 500 swaps on the default grid.
    pub fn desk(seed: u64) -> Result<Self> {
        let spec = PortfolioSpec {
            count: 500,
            ..Default::default()
        };
        Self::generate(ModelParams::desk_lab(), EngineConfig::new(SimGrid::default()), &spec, seed)
    }

    pub fn grid(&self) -> SimGrid {
        self.engine.grid
    }

    pub fn layout(&self) -> FactorLayout {
        FactorLayout::of(&self.rho0)
    }

    pub fn scratch(&self) -> Scratch {
        let g = self.grid();
        Scratch {
            buf: PathBuf::new(self.layout(), &g),
            mtm: vec![0.0; (g.n + 1) * self.rho0.clients()],
        }
    }

    /// Grid index of `t`, rejecting off-grid dates.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        self.grid()
            .index_of(t)
            .map_err(|_| Error::Config(format!("t = {t} is not a pricing date")))
    }

    /// Simulates a full path under `p` and its exposures into `s`.
    pub fn run_path(&self, p: &ModelParams, streams: &mut PathStreams, s: &mut Scratch) {
        simulate_path(p, &self.engine, streams, &mut s.buf);
        self.kernel.mtm(p, &s.buf, &mut s.mtm);
    }

    /// `xi_{0,T}` on path `j` of the simulation seeded with `seed`.
    pub fn xi0(&self, p: &ModelParams, seed: u64, j: usize, s: &mut Scratch) -> f64 {
        let mut st = PathStreams::for_path(seed, j);
        self.run_path(p, &mut st, s);
        xi_from(&s.buf, &s.mtm, &self.layout(), &self.grid(), 0)
    }

    /// Continues the path in `s` from date `i` with `streams` and returns
    /// `xi_{t_i,T}`. Dates before `i` are kept.
    pub fn continue_xi(&self, p: &ModelParams, i: usize, streams: &mut PathStreams, s: &mut Scratch) -> f64 {
        simulate_from(p, &self.engine, i, streams, &mut s.buf);
        self.kernel.mtm_from(p, &s.buf, i, &mut s.mtm);
        xi_from(&s.buf, &s.mtm, &self.layout(), &self.grid(), i)
    }

    /// Simulates path `j` up to date `i` only (state at `t_i`).
    pub fn state_at(&self, p: &ModelParams, seed: u64, j: usize, i: usize, s: &mut Scratch) {
        let layout = self.layout();
        s.buf.y[..layout.dim()].copy_from_slice(&layout.initial(p));
        s.buf.default_step.fill(NO_DEFAULT);
        let mut st = PathStreams::for_path(seed, j);
        simulate_range(p, &self.engine, 0, i, &mut st, &mut s.buf);
    }
}

/// `xi_{t_i,T} = sum_c sum_{j=i}^{n-1} (MtM^c_j)^+ (S^c_{i,j-1} - S^c_{i,j})
/// 1{tau_c > t_i}` with `S^c_{i,j} = exp(-h sum_{l=i}^{j} gamma^c_l)`.
pub fn xi_from(buf: &PathBuf, mtm: &[f64], layout: &FactorLayout, grid: &SimGrid, i: usize) -> f64 {
    let cn = layout.clients;
    let mut total = 0.0;
    for c in 0..cn {
        if buf.defaulted(i, c) {
            continue;
        }
        let gi = layout.gamma(c);
        let mut surv = 1.0;
        let mut xi = 0.0;
        for j in i..grid.n {
            let next = surv * (-grid.h * buf.y[j * buf.dim + gi]).exp();
            let e = mtm[j * cn + c];
            if e > 0.0 {
                xi += e * (surv - next);
            }
            surv = next;
        }
        total += xi;
    }
    total
}

/// `C_{t_i} = sum_c (MtM^c_{t_j})^+` over clients defaulting in
/// `(t_j, t_{j+1}]` with `t_{j+1} <= t_i`.
pub fn loss_c_at(buf: &PathBuf, mtm: &[f64], clients: usize, i: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..clients {
        let d = buf.default_step[c];
        if d != NO_DEFAULT && d as usize <= i && d >= 1 {
            total += mtm[(d as usize - 1) * clients + c].max(0.0);
        }
    }
    total
}

/// `xi_{t,T}` for every path of a stored path set.
pub fn cashflows_xi(set: &PathSet, kernel: &ExposureKernel, t: f64) -> Result<Vec<f64>> {
    Ok(cashflow_samples(set, kernel, t)?.into_iter().map(|s| s.xi).collect())
}

/// `C_t` for every path of a stored path set.
pub fn realized_loss_c(set: &PathSet, kernel: &ExposureKernel, t: f64) -> Result<Vec<f64>> {
    Ok(cashflow_samples(set, kernel, t)?.into_iter().map(|s| s.loss_c).collect())
}

pub fn cashflow_samples(set: &PathSet, kernel: &ExposureKernel, t: f64) -> Result<Vec<CashFlowSample>> {
    let i = set
        .grid
        .index_of(t)
        .map_err(|_| Error::Config(format!("t = {t} is not a pricing date")))?;
    if kernel.clients != set.layout.clients || kernel.economies != set.layout.economies {
        return Err(Error::Dimension("portfolio and path set disagree on E or C".into()));
    }
    let cn = set.layout.clients;
    Ok((0..set.paths())
        .into_par_iter()
        .map(|j| {
            let buf = set.path(j);
            let p = set.params_of(j);
            let mut mtm = vec![0.0; (set.grid.n + 1) * cn];
            kernel.mtm(p, &buf, &mut mtm);
            CashFlowSample {
                path_id: j,
                xi: xi_from(&buf, &mtm, &set.layout, &set.grid, i),
                loss_c: loss_c_at(&buf, &mtm, cn, i),
                t,
            }
        })
        .collect())
}

/// Streams `m` paths (nothing stored) and returns `xi_{t,T}` and `C_t`
/// per path.
pub fn simulate_cashflows(
    lab: &CvaLab,
    params: ParamSource<'_>,
    seed: u64,
    m: usize,
    t: f64,
) -> Result<Vec<CashFlowSample>> {
    let i = lab.step_of(t)?;
    if let ParamSource::PerPath(ps) = params {
        if ps.len() != m {
            return Err(Error::Dimension(format!("{} parameter sets for {m} paths", ps.len())));
        }
    }
    let layout = lab.layout();
    let grid = lab.grid();
    Ok((0..m)
        .into_par_iter()
        .map_init(
            || lab.scratch(),
            |s, j| {
                let p = params.get(j);
                let mut st = PathStreams::for_path(seed, j);
                lab.run_path(p, &mut st, s);
                CashFlowSample {
                    path_id: j,
                    xi: xi_from(&s.buf, &s.mtm, &layout, &grid, i),
                    loss_c: loss_c_at(&s.buf, &s.mtm, layout.clients, i),
                    t,
                }
            },
        )
        .collect())
}

/// Sample mean of `xi_{0,T}` over `m` paths under `rho0`.
pub fn baseline_cva(lab: &CvaLab, m: usize, seed: u64) -> Result<CvaEstimate> {
    if m < 2 {
        return Err(Error::Config("baseline CVA needs m >= 2".into()));
    }
    let xs: Vec<f64> = simulate_cashflows(lab, ParamSource::Shared(&lab.rho0), seed, m, 0.0)?
        .into_iter()
        .map(|s| s.xi)
        .collect();
    Ok(CvaEstimate::from_samples(&xs))
}

/// Default-based estimate: sample mean of `C_T`.
pub fn default_based_cva(lab: &CvaLab, m: usize, seed: u64) -> Result<CvaEstimate> {
    let t = lab.grid().horizon();
    let xs: Vec<f64> = simulate_cashflows(lab, ParamSource::Shared(&lab.rho0), seed, m, t)?
        .into_iter()
        .map(|s| s.loss_c)
        .collect();
    Ok(CvaEstimate::from_samples(&xs))
}

/// Stream ids of inner path `l` of outer state `j`.
pub fn nested_streams(seed: u64, j: usize, l: usize) -> PathStreams {
    let id = domain::NESTED | ((j as u64) << 24) | l as u64;
    PathStreams::from_ids(seed, id, id | (1 << 55))
}

/// An outer state `(X_t, Y_t, eps)`: the path up to `t_i` and its parameters.
#[derive(Clone, Debug)]
pub struct OuterState {
    pub params: ModelParams,
    pub path: PathBuf,
}

/// Nested Monte Carlo `CVA_t` for each outer state, averaging `inner_m`
/// continuations of `xi_{t,T}` restarted from the state at `t`.
pub fn nested_cva(
    lab: &CvaLab,
    states: &[OuterState],
    inner_m: usize,
    t: f64,
    seed: u64,
) -> Result<Vec<CvaEstimate>> {
    let i = lab.step_of(t)?;
    if inner_m == 0 {
        return Err(Error::Config("inner_m must be at least 1".into()));
    }
    for st in states {
        if st.path.dim != lab.layout().dim() || st.path.default_step.len() != lab.rho0.clients() {
            return Err(Error::Dimension("outer state does not match the lab".into()));
        }
    }
    Ok(states
        .par_iter()
        .enumerate()
        .map(|(j, st)| {
            let mut s = lab.scratch();
            let xs: Vec<f64> = (0..inner_m)
                .map(|l| {
                    s.buf.y.copy_from_slice(&st.path.y);
                    s.buf.default_step.copy_from_slice(&st.path.default_step);
                    let mut streams = nested_streams(seed, j, l);
                    lab.continue_xi(&st.params, i, &mut streams, &mut s)
                })
                .collect();
            CvaEstimate::from_samples(&xs)
        })
        .collect())
}

/// Outer states at `t` for paths `0..m` of the simulation seeded `seed`.
pub fn outer_states(lab: &CvaLab, params: ParamSource<'_>, seed: u64, m: usize, t: f64) -> Result<Vec<OuterState>> {
    let i = lab.step_of(t)?;
    Ok((0..m)
        .into_par_iter()
        .map(|j| {
            let p = params.get(j);
            let mut s = lab.scratch();
            lab.state_at(p, seed, j, i, &mut s);
            OuterState {
                params: p.clone(),
                path: s.buf,
            }
        })
        .collect())
}

/// `xi_{0,T}(rho; omega_j)` as a bump-sensitivity payoff, `rho` in the
/// [`ModelParams::to_vec`] layout.
pub struct CvaPayoff<'a> {
    pub lab: &'a CvaLab,
    pub seed: u64,
}

impl crate::sensitivities::Payoff<f64> for CvaPayoff<'_> {
    fn dim(&self) -> usize {
        self.lab.rho0.dim()
    }

    fn eval(&self, rho: &[f64], path: usize) -> f64 {
        let p = self.lab.rho0.with_vec(rho);
        let mut s = self.lab.scratch();
        self.lab.xi0(&p, self.seed, path, &mut s)
    }

    fn eval_pair(&self, a: &[f64], b: &[f64], path: usize) -> (f64, f64) {
        let mut s = self.lab.scratch();
        let pa = self.lab.rho0.with_vec(a);
        let pb = self.lab.rho0.with_vec(b);
        (self.lab.xi0(&pa, self.seed, path, &mut s), self.lab.xi0(&pb, self.seed, path, &mut s))
    }
}

pub fn write_cashflows_csv(samples: &[CashFlowSample], w: impl std::io::Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["path_id", "xi", "loss_C"])?;
    for s in samples {
        wr.write_record([s.path_id.to_string(), sig6(s.xi), sig6(s.loss_c)])?;
    }
    wr.flush()?;
    Ok(())
}
