use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xvasensi::cva::{baseline_cva, default_based_cva, CvaLab};
use xvasensi::engine::EngineConfig;
use xvasensi::hedge::write_compression_csv;
use xvasensi::jacobian::{write_jacobian_csv, write_market_csv};
use xvasensi::learners::{
    conditional_sample, learn_conditional_cva, learn_delta_cva_runon, runon_sample, twin_sample, CondMode, ParamNoise,
    Predictor,
};
use xvasensi::pipeline::{
    basket_bench, market_from_model, model_sensitivities, runoff_backtest, runon_backtest, write_bench_csv, Desk,
    HedgeConfig, SensiOptions,
};
use xvasensi::products::write_portfolio_csv;
use xvasensi::risk::{quadratic_proxy_risk, risk_report, twin_validate, write_risk_csv, TwinReport};
use xvasensi::sensitivities::{BumpSize, Method};

use crate::config::{HedgeMode, RunConfig};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    /// Output file name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    /// Headline numbers at full precision.
    pub metrics: BTreeMap<String, f64>,
}

pub struct Run {
    dir: PathBuf,
    command: String,
    config: RunConfig,
    outputs: BTreeMap<String, String>,
    metrics: BTreeMap<String, f64>,
}

impl Run {
    pub fn new(dir: &Path, command: &str, config: RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config,
            outputs: BTreeMap::new(),
            metrics: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> xvasensi::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = self.dir.join(name);
        fs::write(&path, &buf).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.insert(name.to_string(), hex::encode(Sha256::digest(&buf)));
        Ok(())
    }

    fn metric(&mut self, k: &str, v: f64) {
        self.metrics.insert(k.to_string(), v);
    }

    pub fn finish(self) -> Result<Manifest, CliError> {
        let m = Manifest {
            command: self.command,
            config: self.config,
            outputs: self.outputs,
            metrics: self.metrics,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(self.dir.join(MANIFEST), text + "\n").map_err(|e| CliError::Config(e.to_string()))?;
        Ok(m)
    }
}

fn sensi_options(cfg: &RunConfig) -> SensiOptions {
    let e = &cfg.experiment;
    SensiOptions {
        bump: BumpSize {
            rel: e.bump_rel,
            abs_floor: e.bump_abs_floor,
        },
        sigma: e.sigma,
        vol_sigma: e.vol_sigma,
        ridge_rel: e.ridge_rel,
        learner: e.learner.spec(cfg.seeds.simulation),
    }
}

fn desk(cfg: &RunConfig) -> Result<Desk, CliError> {
    let rho0 = cfg.model.resolve()?;
    let engine = EngineConfig::new(cfg.grid.grid()).with_fx_drift(cfg.grid.fx_drift);
    let lab = CvaLab::generate(rho0, engine, &cfg.portfolio.spec(), cfg.seeds.portfolio)?;
    Ok(Desk::new(lab)?)
}

fn noise(cfg: &RunConfig) -> ParamNoise {
    ParamNoise {
        rel_sd: cfg.experiment.noise_rel_sd,
    }
}

/// Seed of the fresh scenarios used for validation and backtests.
fn fresh_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9e37_79b9_7f4a_7c15)
}

pub fn bs_bench(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.config.clone();
    let b = &cfg.basket;
    let spec = b.spec()?;
    let opts = SensiOptions {
        bump: BumpSize {
            rel: b.bump_rel,
            ..BumpSize::default()
        },
        sigma: b.sigma,
        vol_sigma: b.vol_sigma,
        ridge_rel: cfg.experiment.ridge_rel,
        learner: b.learner.spec(cfg.seeds.simulation),
    };
    let rows = basket_bench(&spec, b.method, b.m, cfg.seeds.simulation, &opts)?;
    run.write("bs-bench.csv", |w| write_bench_csv(&rows, w))?;
    let greeks = &rows[..2 * spec.d()];
    run.metric("max_rel_error", greeks.iter().map(|r| r.rel_error()).fold(0.0, f64::max));
    if greeks[0].covered.is_some() {
        let hit = greeks.iter().filter(|r| r.covered == Some(true)).count();
        run.metric("coverage", hit as f64 / greeks.len() as f64);
    }
    Ok(())
}

pub fn price(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.config.clone();
    let d = desk(&cfg)?;
    let (m, seed) = (cfg.experiment.m, cfg.seeds.simulation);
    let base = baseline_cva(&d.lab, m, seed)?;
    let dflt = default_based_cva(&d.lab, m, seed)?;
    run.write("portfolio.csv", |w| write_portfolio_csv(&d.lab.portfolio, w))?;
    run.write("price.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["estimator", "estimate", "ci_halfwidth", "paths"])?;
        for (name, e) in [("intensity", &base), ("default", &dflt)] {
            wr.write_record([name.to_string(), sig6(e.estimate), sig6(e.ci_halfwidth), e.paths.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    run.metric("cva", base.estimate);
    run.metric("cva_ci", base.ci_halfwidth);
    Ok(())
}

fn sig6(x: f64) -> String {
    xvasensi::report::sig6(x)
}

pub fn bump_sensis(run: &mut Run, method: Method) -> Result<(), CliError> {
    let cfg = run.config.clone();
    let d = desk(&cfg)?;
    let rep = model_sensitivities(&d.lab, method, cfg.experiment.m, cfg.seeds.simulation, &sensi_options(&cfg))?;
    run.write("bump-sensis.csv", |w| rep.write_csv(w))?;
    Ok(())
}

pub fn market_sensis(run: &mut Run, method: Method) -> Result<(), CliError> {
    let cfg = run.config.clone();
    let d = desk(&cfg)?;
    let rep = model_sensitivities(&d.lab, method, cfg.experiment.m, cfg.seeds.simulation, &sensi_options(&cfg))?;
    let mode = cfg.experiment.hessian.into();
    let market = market_from_model(&d, &rep, mode)?;
    let jac = d.jacobian(mode)?;
    let names: Vec<String> = (0..d.instruments.count()).map(|i| d.instruments.name(i)).collect();
    run.write("bump-sensis.csv", |w| rep.write_csv(w))?;
    run.write("jacobian.csv", |w| write_jacobian_csv(&jac, &d.calibration().free_names(), &names, w))?;
    run.write("market-sensis.csv", |w| {
        write_market_csv(&d.instruments, &market.values, market.ci_halfwidth.as_deref(), w)
    })?;
    Ok(())
}

fn learn_inner(run: &mut Run, cfg: &RunConfig, d: &Desk) -> Result<(Predictor, f64), CliError> {
    let e = &cfg.experiment;
    let (cva, sample) = learn_conditional_cva(
        &d.lab,
        e.learn_mode,
        e.t,
        e.m,
        cfg.seeds.simulation,
        &noise(cfg),
        &e.learner.spec(cfg.seeds.simulation),
    )?;
    let mean_label = sample.xi.iter().sum::<f64>() / sample.xi.len() as f64;
    let pred = cva.predictor.predict_rows(&sample.features);
    let mean_pred = pred.iter().sum::<f64>() / pred.len() as f64;
    run.write("learn.model", |w| cva.predictor.save(w))?;
    run.write("learn.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "mode", "samples", "train_mse", "mean_label", "mean_prediction"])?;
        wr.write_record([
            sig6(e.t),
            mode_tag(e.learn_mode).into(),
            sample.xi.len().to_string(),
            sig6(cva.train_loss),
            sig6(mean_label),
            sig6(mean_pred),
        ])?;
        wr.flush()?;
        Ok(())
    })?;
    run.metric("train_mse", cva.train_loss);
    Ok((cva.predictor, mean_label))
}

fn mode_tag(m: CondMode) -> &'static str {
    match m {
        CondMode::Baseline => "baseline",
        CondMode::Risk => "risk",
    }
}

pub fn learn(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.config.clone();
    let d = desk(&cfg)?;
    learn_inner(run, &cfg, &d)?;
    Ok(())
}

pub fn twin(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.config.clone();
    let d = desk(&cfg)?;
    let (pred, mean_label) = learn_inner(run, &cfg, &d)?;
    let e = &cfg.experiment;
    let seed = fresh_seed(cfg.seeds.simulation);
    let norm = baseline_cva(&d.lab, e.m, cfg.seeds.simulation)?.estimate;
    let ts = twin_sample(&d.lab, e.learn_mode, e.t, e.twin_m, seed, &noise(&cfg))?;
    let phi = pred.predict_rows(&ts.features);
    let learned = twin_validate(&phi, &ts.xi1, &ts.xi2, norm)?;
    let constant = twin_validate(&vec![mean_label; phi.len()], &ts.xi1, &ts.xi2, norm)?;
    run.write("twin.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["predictor", "twin_stat", "twin_stdev", "twin_err", "twin_ub", "norm", "samples"])?;
        for (name, r) in [("learned", &learned), ("constant", &constant)] {
            wr.write_record(twin_row(name, r))?;
        }
        wr.flush()?;
        Ok(())
    })?;
    run.metric("twin_ub_learned", learned.twin_ub);
    run.metric("twin_ub_constant", constant.twin_ub);
    Ok(())
}

fn twin_row(name: &str, r: &TwinReport) -> Vec<String> {
    vec![
        name.to_string(),
        sig6(r.twin_stat),
        sig6(r.twin_stdev),
        r.twin_err.map_or("N/A".into(), sig6),
        sig6(r.twin_ub),
        sig6(r.norm),
        r.samples.to_string(),
    ]
}

pub fn risk_runoff(run: &mut Run) -> Result<(), CliError> {
    let mut cfg = run.config.clone();
    cfg.experiment.learn_mode = CondMode::Risk;
    let d = desk(&cfg)?;
    let (pred, _) = learn_inner(run, &cfg, &d)?;
    let e = &cfg.experiment;
    let pi0 = baseline_cva(&d.lab, e.m, cfg.seeds.simulation)?.estimate;
    let oos = conditional_sample(&d.lab, CondMode::Risk, e.t, e.m, fresh_seed(cfg.seeds.simulation), &noise(&cfg))?;
    let loss: Vec<f64> = pred
        .predict_rows(&oos.features)
        .iter()
        .zip(&oos.loss_c)
        .map(|(p, c)| p - pi0 + c)
        .collect();
    let rep = risk_report(&loss, &e.alpha_levels)?;
    run.write("risk-runoff.csv", |w| write_risk_csv(&[("learned".into(), rep.clone())], w))?;
    run.metric("expectation", rep.expectation);
    Ok(())
}

pub fn risk_runon(run: &mut Run, method: Method) -> Result<(), CliError> {
    let cfg = run.config.clone();
    let d = desk(&cfg)?;
    let e = &cfg.experiment;
    let seed = cfg.seeds.simulation;
    let (pred, _) = learn_delta_cva_runon(&d.lab, e.t, e.m, seed, &noise(&cfg), &e.learner.spec(seed))?;
    run.write("runon.model", |w| pred.save(w))?;
    let oos = runon_sample(&d.lab, e.t, e.m, fresh_seed(seed), &noise(&cfg), false)?;
    let learned = risk_report(&pred.predict_rows(&oos.drho), &e.alpha_levels)?;
    let sens = model_sensitivities(&d.lab, method, e.bump_m, seed, &sensi_options(&cfg))?;
    let (proxy, _) = quadratic_proxy_risk(&sens.estimate, sens.gamma.as_deref(), &oos.drho, &e.alpha_levels)?;
    run.write("risk-runon.csv", |w| {
        write_risk_csv(&[("learned".into(), learned.clone()), (format!("proxy-{}", method.tag()), proxy)], w)
    })?;
    run.metric("expectation", learned.expectation);
    Ok(())
}

pub fn hedge_backtest(run: &mut Run, method: Method) -> Result<(), CliError> {
    let cfg = run.config.clone();
    let d = desk(&cfg)?;
    let e = &cfg.experiment;
    let seed = cfg.seeds.simulation;
    let hc = HedgeConfig {
        t: e.t,
        m: e.m,
        noise: noise(&cfg),
        learner: e.learner.spec(seed),
        ec: xvasensi::hedge::EcConfig { seed, ..e.ec },
        ridge_rel: e.hedge_ridge_rel,
        bump_method: method,
        bump_m: e.bump_m,
        sensi: sensi_options(&cfg),
    };
    let (tag, bt) = match e.hedge_mode {
        HedgeMode::Runoff => ("runoff", runoff_backtest(&d, &hc, seed)?),
        HedgeMode::Runon => ("runon", runon_backtest(&d, &hc, seed)?),
    };
    let rows = vec![
        (format!("{tag}-in"), bt.t, bt.in_sample.clone()),
        (format!("{tag}-out"), bt.t, bt.out_of_sample.clone()),
    ];
    run.write("hedge-backtest.csv", |w| write_compression_csv(&rows, w))?;
    run.write("hedge-ratios.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["instrument".to_string()];
        header.extend(bt.in_sample.iter().skip(1).map(|r| r.method.clone()));
        wr.write_record(&header)?;
        for i in 0..d.instruments.count() {
            let mut row = vec![d.instruments.name(i)];
            row.extend(bt.in_sample.iter().skip(1).map(|r| sig6(r.delta[i])));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    })?;
    for r in &bt.out_of_sample {
        run.metric(&format!("upl_ratio_out_{}", r.method), r.upl_ratio);
    }
    if bt.ec_oscillating {
        eprintln!("warning: EC optimization oscillated; increase epochs or lower the step");
    }
    Ok(())
}
