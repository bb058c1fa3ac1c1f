//! End-to-end experiments on a CVA lab: sensitivities, their market
//! conversion and hedging backtests.

use serde::{Deserialize, Serialize};

use crate::cva::{baseline_cva, CvaLab, CvaPayoff};
use crate::error::{Error, Result};
use crate::hedge::{
    build_runoff_data, build_runon_data, compression_report, ec_sensitivities, ls_sensitivities, ple_sensitivities,
    runon_dz, EcConfig, HedgeData, HedgeReport,
};
use crate::jacobian::{
    calibrate, market_sensitivities, param_jacobian, propagate_ci, CalibrateOptions, CalibrationSpec, HessianMode,
};
use crate::learners::{
    conditional_sample, learn_conditional_cva, learn_delta_cva_runon, runon_sample, CondMode, LearnerSpec, ParamNoise,
    TrainConfig,
};
use crate::linalg::Matrix;
use crate::products::{basket_call_analytic, BasketSpec, InstrumentSet};
use crate::sensitivities::{
    aad_bump, benchmark_bump, linear_bump, naive_aad, smart_bump, with_names, BasketMc, BumpPlan, BumpSize, Method, Regression,
    SensitivityReport,
};

/// A CVA lab with its calibration instruments.
pub struct Desk {
    pub lab: CvaLab,
    pub instruments: InstrumentSet,
}

impl Desk {
    pub fn new(lab: CvaLab) -> Result<Self> {
        let instruments = InstrumentSet::standard(&lab.rho0)?;
        Ok(Self { lab, instruments })
    }

    pub fn calibration(&self) -> CalibrationSpec<'_> {
        CalibrationSpec::new(&self.instruments, &self.lab.rho0)
    }

    pub fn z0(&self) -> Vec<f64> {
        self.instruments.prices_at_zero(&self.lab.rho0)
    }

    /// Calibrates the free parameters to `z` from `rho0`.
    pub fn recalibrate(&self, z: &[f64]) -> Result<Vec<f64>> {
        let spec = self.calibration();
        Ok(calibrate(&spec, z, &spec.psi_of(&self.lab.rho0), &CalibrateOptions::default())?.psi)
    }

    /// `d psi / d z` at `rho0`, free parameters by instruments.
    pub fn jacobian(&self, mode: HessianMode) -> Result<Matrix<f64>> {
        let spec = self.calibration();
        let psi = spec.psi_of(&self.lab.rho0);
        param_jacobian(&spec, &self.z0(), &psi, mode, &CalibrateOptions::default())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SensiOptions {
    pub bump: BumpSize,
    /// Relative spread of randomized bumps.
    pub sigma: f64,
    pub vol_sigma: f64,
    pub ridge_rel: f64,
    pub learner: LearnerSpec,
}

impl Default for SensiOptions {
    fn default() -> Self {
        Self {
            bump: BumpSize::default(),
            sigma: 0.01,
            vol_sigma: 0.05,
            ridge_rel: 1e-8,
            learner: LearnerSpec::mlp(&[32, 32], TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            }),
        }
    }
}

/// `dPi_0 / d rho` at `rho0` for every model parameter.
pub fn model_sensitivities(
    lab: &CvaLab,
    method: Method,
    m: usize,
    seed: u64,
    opts: &SensiOptions,
) -> Result<SensitivityReport<f64>> {
    let payoff = CvaPayoff { lab, seed };
    let rho0 = lab.rho0.to_vec();
    let layout = lab.rho0.layout();
    let plan = || BumpPlan::for_model(&layout, opts.sigma, opts.vol_sigma, seed);
    let rep = match method {
        Method::Benchmark => benchmark_bump(&payoff, &rho0, m, &opts.bump, false)?,
        Method::Smart => smart_bump(&payoff, &rho0, m, &opts.bump)?,
        Method::Linear => linear_bump(&payoff, &rho0, m, &plan(), opts.ridge_rel, Regression::Svd)?,
        Method::Aad => aad_bump(&payoff, &rho0, m, &plan(), &opts.learner)?.0,
        Method::NaiveAad => naive_aad(&payoff, &rho0, m, &plan(), &opts.learner)?.0,
    };
    Ok(with_names(rep, layout.names()))
}

/// Market sensitivities `dPi_0 / dz` with propagated half-widths.
#[derive(Clone, Debug)]
pub struct MarketSensis {
    pub values: Vec<f64>,
    pub ci_halfwidth: Option<Vec<f64>>,
}

pub fn market_from_model(desk: &Desk, model: &SensitivityReport<f64>, mode: HessianMode) -> Result<MarketSensis> {
    let free = desk.lab.rho0.layout().free_indices();
    if model.estimate.len() != desk.lab.rho0.dim() {
        return Err(Error::Dimension(format!(
            "{} model sensitivities for {} parameters",
            model.estimate.len(),
            desk.lab.rho0.dim()
        )));
    }
    let jac = desk.jacobian(mode)?;
    let restricted: Vec<f64> = free.iter().map(|&k| model.estimate[k]).collect();
    let values = market_sensitivities(&restricted, &jac)?;
    let ci_halfwidth = model.ci_halfwidth.as_ref().map(|ci| {
        let r: Vec<f64> = free.iter().map(|&k| ci[k]).collect();
        propagate_ci(&r, &jac)
    });
    Ok(MarketSensis { values, ci_halfwidth })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct HedgeConfig {
    pub t: f64,
    /// Training and backtest scenario counts.
    pub m: usize,
    pub noise: ParamNoise,
    pub learner: LearnerSpec,
    pub ec: EcConfig,
    pub ridge_rel: f64,
    /// Method and path count of the bump hedge.
    pub bump_method: Method,
    pub bump_m: usize,
    pub sensi: SensiOptions,
}

impl Default for HedgeConfig {
    fn default() -> Self {
        Self {
            t: 0.1,
            m: 1 << 14,
            noise: ParamNoise::default(),
            learner: LearnerSpec::mlp(&[32, 32], TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            }),
            ec: EcConfig::default(),
            ridge_rel: 1e-6,
            bump_method: Method::Linear,
            bump_m: 1 << 14,
            sensi: SensiOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Backtest {
    pub t: f64,
    pub in_sample: Vec<HedgeReport>,
    pub out_of_sample: Vec<HedgeReport>,
    pub ec_oscillating: bool,
}

impl Backtest {
    pub fn row<'a>(rows: &'a [HedgeReport], method: &str) -> Option<&'a HedgeReport> {
        rows.iter().find(|r| r.method == method)
    }
}

fn seed_oos(seed: u64) -> u64 {
    seed ^ 0x5eed_0f_0ac7_u64
}

fn bump_delta(desk: &Desk, cfg: &HedgeConfig, seed: u64) -> Result<Vec<f64>> {
    let model = model_sensitivities(&desk.lab, cfg.bump_method, cfg.bump_m, seed, &cfg.sensi)?;
    Ok(market_from_model(desk, &model, HessianMode::GaussNewton)?.values)
}

fn candidates(
    data: &HedgeData,
    bump: Vec<f64>,
    ls: Option<Vec<f64>>,
    cfg: &HedgeConfig,
) -> Result<(Vec<(String, Vec<f64>)>, bool)> {
    let ple = ple_sensitivities(data, cfg.ridge_rel)?;
    let ec = ec_sensitivities(data, Some(&ple), &cfg.ec)?;
    let mut out = vec![("bump".to_string(), bump)];
    if let Some(ls) = ls {
        out.push(("ls".into(), ls));
    }
    out.push(("ple".into(), ple));
    out.push(("ec".into(), ec.delta));
    Ok((out, ec.oscillating))
}

/// Risk-mode conditional CVA at `t`, hedged with `Z_t - z_0 + CF_t`.
pub fn runoff_backtest(desk: &Desk, cfg: &HedgeConfig, seed: u64) -> Result<Backtest> {
    let lab = &desk.lab;
    let pi0 = baseline_cva(lab, cfg.m, seed)?.estimate;
    let (cva, sample) = learn_conditional_cva(lab, CondMode::Risk, cfg.t, cfg.m, seed, &cfg.noise, &cfg.learner)?;
    let data = build_runoff_data(lab, &cva, &sample, pi0, &desk.instruments)?;
    drop(sample);
    let bump = bump_delta(desk, cfg, seed)?;
    let (cands, osc) = candidates(&data, bump, None, cfg)?;
    let in_sample = compression_report(&cands, &data, cfg.ec.alpha)?;
    drop(data);
    let oos = conditional_sample(lab, CondMode::Risk, cfg.t, cfg.m, seed_oos(seed), &cfg.noise)?;
    let oos_data = build_runoff_data(lab, &cva, &oos, pi0, &desk.instruments)?;
    Ok(Backtest {
        t: cfg.t,
        in_sample,
        out_of_sample: compression_report(&cands, &oos_data, cfg.ec.alpha)?,
        ec_oscillating: osc,
    })
}

/// Time-0 CVA revalued under horizon-`t` parameter scenarios, hedged with
/// `Z_0(rho_(t)) - z_0`.
pub fn runon_backtest(desk: &Desk, cfg: &HedgeConfig, seed: u64) -> Result<Backtest> {
    let lab = &desk.lab;
    let (pred, sample) = learn_delta_cva_runon(lab, cfg.t, cfg.m, seed, &cfg.noise, &cfg.learner)?;
    let data = build_runon_data(lab, &pred, &sample, &desk.instruments)?;
    let ls = ls_sensitivities(&sample.label, &data.hedge, cfg.ridge_rel)?;
    let bump = bump_delta(desk, cfg, seed)?;
    let (cands, osc) = candidates(&data, bump, Some(ls), cfg)?;
    let in_sample = compression_report(&cands, &data, cfg.ec.alpha)?;
    let oos = runon_sample(lab, cfg.t, cfg.m, seed_oos(seed), &cfg.noise, false)?;
    let oos_data = HedgeData::new(pred.predict_rows(&oos.drho), runon_dz(lab, &oos, &desk.instruments))?;
    Ok(Backtest {
        t: cfg.t,
        in_sample,
        out_of_sample: compression_report(&cands, &oos_data, cfg.ec.alpha)?,
        ec_oscillating: osc,
    })
}

/// Basket sensitivities to spots then vols; randomized plans bump the
/// spot and vol groups in separate blocks.
pub fn basket_sensitivities(
    spec: &BasketSpec<f64>,
    method: Method,
    m: usize,
    seed: u64,
    opts: &SensiOptions,
) -> Result<SensitivityReport<f64>> {
    spec.validate()?;
    let payoff = BasketMc { spec: spec.clone(), seed };
    let rho0 = spec.params();
    let p = rho0.len();
    let d = spec.d();
    let plan = || {
        let spots: Vec<usize> = (0..d).collect();
        let vols: Vec<usize> = (d..p).collect();
        BumpPlan::by_groups(vec![spots, vols], &[false, true], opts.sigma, opts.vol_sigma, seed)
    };
    let rep = match method {
        Method::Benchmark => benchmark_bump(&payoff, &rho0, m, &opts.bump, true)?,
        Method::Smart => smart_bump(&payoff, &rho0, m, &opts.bump)?,
        Method::Linear => linear_bump(&payoff, &rho0, m, &plan(), opts.ridge_rel, Regression::Svd)?,
        Method::Aad => aad_bump(&payoff, &rho0, m, &plan(), &opts.learner)?.0,
        Method::NaiveAad => naive_aad(&payoff, &rho0, m, &plan(), &opts.learner)?.0,
    };
    let names = (0..d)
        .map(|i| format!("delta[{i}]"))
        .chain((0..d).map(|i| format!("vega[{i}]")))
        .collect();
    Ok(with_names(rep, names))
}

/// One Greek of the basket bench against its closed form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub analytic: f64,
    pub estimate: f64,
    pub ci_halfwidth: Option<f64>,
    pub covered: Option<bool>,
}

impl BenchRow {
    pub fn rel_error(&self) -> f64 {
        (self.estimate - self.analytic).abs() / self.analytic.abs().max(f64::MIN_POSITIVE)
    }
}

/// Deltas, vegas and (benchmark only) spot gammas against the closed form.
pub fn basket_bench(
    spec: &BasketSpec<f64>,
    method: Method,
    m: usize,
    seed: u64,
    opts: &SensiOptions,
) -> Result<Vec<BenchRow>> {
    let exact = basket_call_analytic(spec);
    let rep = basket_sensitivities(spec, method, m, seed, opts)?;
    let d = spec.d();
    let mut rows: Vec<BenchRow> = exact
        .delta
        .iter()
        .chain(&exact.vega)
        .enumerate()
        .map(|(k, &a)| BenchRow {
            name: rep.names[k].clone(),
            analytic: a,
            estimate: rep.estimate[k],
            ci_halfwidth: rep.ci_halfwidth.as_ref().map(|c| c[k]),
            covered: rep.ci_halfwidth.as_ref().map(|_| rep.covers(k, a)),
        })
        .collect();
    if let Some(g) = &rep.gamma {
        rows.extend((0..d).map(|i| BenchRow {
            name: format!("gamma[{i}]"),
            analytic: exact.gamma[i],
            estimate: g[i],
            ci_halfwidth: None,
            covered: None,
        }));
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], w: impl std::io::Write) -> Result<()> {
    use crate::report::sig6;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["greek", "analytic", "estimate", "ci_halfwidth", "covered", "rel_error"])?;
    for r in rows {
        wr.write_record([
            r.name.clone(),
            sig6(r.analytic),
            sig6(r.estimate),
            r.ci_halfwidth.map_or(String::new(), sig6),
            r.covered.map_or(String::new(), |c| c.to_string()),
            sig6(r.rel_error()),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
