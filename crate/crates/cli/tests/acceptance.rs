//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with `harness = false`; exits non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use xvasensi::cva::{baseline_cva, default_based_cva, loss_c_at, xi_from, CvaLab};
use xvasensi::engine::{FactorLayout, PathBuf};
use xvasensi::model::SimGrid;
use xvasensi::hedge::{ec_sensitivities, EcConfig, HedgeData};
use xvasensi::jacobian::{
    calibrate, market_sensitivities, param_jacobian, CalibrateOptions, FnModel, HessianMode, PricingModel,
};
use xvasensi::learners::{learn_conditional_cva, twin_sample, CondMode, ParamNoise};
use xvasensi::linalg::Matrix;
use xvasensi::pipeline::{basket_bench, runoff_backtest, runon_backtest, Desk, HedgeConfig, SensiOptions};
use xvasensi::products::BasketSpec;
use xvasensi::risk::{twin_validate, var_es};
use xvasensi::rng::make_stream;
use xvasensi::sensitivities::{linear_bump, smart_bump, BumpPlan, BumpSize, FnPayoff, Method, Regression};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn basket() -> BasketSpec<f64> {
    BasketSpec {
        spots: vec![90.0, 100.0, 110.0],
        vols: vec![0.2, 0.25, 0.3],
        rate: 0.01,
        strike: 100.0,
        maturity: 1.0,
    }
}

fn c1_black_scholes() -> Outcome {
    let t0 = Instant::now();
    let spec = basket();
    let opts = SensiOptions::default();
    // Two significant digits: relative error at most 5e-2.
    let bench = basket_bench(&spec, Method::Benchmark, 100_000, 1, &opts).unwrap();
    let worst = bench[..6].iter().map(|r| r.rel_error()).fold(0.0, f64::max);
    let mut pass = worst <= 5e-2;
    let mut detail = format!("benchmark max rel err {worst:.2e}");
    for method in [Method::Linear, Method::Smart] {
        let mut hit = 0;
        for rep in 0..20 {
            let rows = basket_bench(&spec, method, 100_000, 100 + rep, &opts).unwrap();
            hit += rows[..6].iter().filter(|r| r.covered == Some(true)).count();
        }
        let rate = hit as f64 / 120.0;
        pass &= rate >= 0.85;
        detail += &format!(", {} coverage {hit}/120", method.tag());
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    outcome(pass, format!("{detail}, {secs:.1}s"))
}

fn quad(r: &[f64]) -> f64 {
    let a = [0.5, -2.0, 1.0];
    let q = [[1.0, 0.3, 0.0], [0.3, 2.0, -0.4], [0.0, -0.4, 0.5]];
    let mut v = 1.0;
    for i in 0..3 {
        v += a[i] * r[i];
        for j in 0..3 {
            v += r[i] * q[i][j] * r[j];
        }
    }
    v
}

fn c2_specialization() -> Outcome {
    let pay = FnPayoff {
        dim: 4,
        f: |r: &[f64], j: usize| {
            let mut s = make_stream(77, j as u64);
            let (z, w) = (s.normal(), s.normal());
            (r[0] * z).exp() * r[3] + r[1] * r[2] * w * w
        },
    };
    let rho0 = [0.3, 1.1, -0.7, 2.0];
    let m = 4003;
    let smart = smart_bump(&pay, &rho0, m, &BumpSize::default()).unwrap();
    let lin = linear_bump(&pay, &rho0, m, &BumpPlan::one_hot(4, 0.01), 1e-8, Regression::Svd).unwrap();
    let pass = smart.estimate == lin.estimate && smart.ci_halfwidth == lin.ci_halfwidth;
    outcome(pass, format!("estimates bit-equal: {pass}"))
}

fn c3_halving() -> Outcome {
    let pay = FnPayoff {
        dim: 3,
        f: |r: &[f64], _| quad(r),
    };
    let rho0 = [0.7, -0.2, 1.3];
    // Analytic gradient a + 2 Q rho0 by central differences of a quadratic (exact up to rounding).
    let plan = BumpPlan::gaussian(vec![vec![0, 1, 2]], vec![0.05], 3);
    let rep = linear_bump(&pay, &rho0, 64, &plan, 0.0, Regression::Svd).unwrap();
    let a = [0.5, -2.0, 1.0];
    let q = [[1.0, 0.3, 0.0], [0.3, 2.0, -0.4], [0.0, -0.4, 0.5]];
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let grad = a[k] + (0..3).map(|j| (q[k][j] + q[j][k]) * rho0[j]).sum::<f64>();
        // The reported sensitivity is half the regressed slope.
        worst = worst.max((2.0 * rep.estimate[k] - 2.0 * grad).abs());
    }
    outcome(worst < 1e-10, format!("max |slope - 2 grad| {worst:.1e}"))
}

struct Vasicek;

impl Vasicek {
    const MATS: [f64; 5] = [0.5, 1.0, 2.0, 5.0, 10.0];
    const SIGMA: f64 = 0.01;

    fn zc(p: &[f64], t: f64) -> f64 {
        let (r0, a, b) = (p[0], p[1], p[2]);
        let s2 = Self::SIGMA * Self::SIGMA;
        let bt = (1.0 - (-a * t).exp()) / a;
        let ln_a = (b - s2 / (2.0 * a * a)) * (bt - t) - s2 * bt * bt / (4.0 * a);
        (ln_a - bt * r0).exp()
    }
}

impl PricingModel for Vasicek {
    fn n_params(&self) -> usize {
        3
    }
    fn n_instruments(&self) -> usize {
        5
    }
    fn prices(&self, psi: &[f64]) -> Vec<f64> {
        Self::MATS.iter().map(|&t| Self::zc(psi, t)).collect()
    }
    fn price_jacobian(&self, _psi: &[f64]) -> Option<Matrix<f64>> {
        None
    }
}

fn c4_jacobian() -> Outcome {
    let toy = [0.02, 0.5, 0.03];
    let quotes = Vasicek.prices(&toy);
    let opts = CalibrateOptions::default();
    let cal = calibrate(&Vasicek, &quotes, &toy, &opts).unwrap();
    // A CVA-like functional of the model parameters with a known gradient.
    let f = |p: &[f64]| 3.0 * p[0] - 0.4 * p[1] * p[1] + 10.0 * p[2] * p[0];
    let s = [3.0 + 10.0 * cal.psi[2], -0.8 * cal.psi[1], 10.0 * cal.psi[0]];
    let jac = param_jacobian(&Vasicek, &quotes, &cal.psi, HessianMode::GaussNewton, &opts).unwrap();
    let chain = market_sensitivities(&s, &jac).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let h = 1e-4 * quotes[i];
        let mut up = quotes.clone();
        let mut dn = quotes.clone();
        up[i] += h;
        dn[i] -= h;
        let pu = calibrate(&Vasicek, &up, &cal.psi, &opts).unwrap().psi;
        let pd = calibrate(&Vasicek, &dn, &cal.psi, &opts).unwrap().psi;
        let direct = (f(&pu) - f(&pd)) / (2.0 * h);
        let scale = chain.iter().map(|x| x.abs()).fold(0.0, f64::max);
        worst = worst.max((chain[i] - direct).abs() / direct.abs().max(1e-3 * scale));
    }
    let id = FnModel {
        n_params: 4,
        n_instruments: 4,
        f: |p: &[f64]| p.to_vec(),
        jac: Some(|_: &[f64]| Matrix::identity(4)),
    };
    let z = [0.1, -0.3, 2.0, 0.5];
    let ij = param_jacobian(&id, &z, &z, HessianMode::GaussNewton, &opts).unwrap();
    let exact_identity = ij == Matrix::identity(4);
    outcome(
        worst < 0.02 && exact_identity,
        format!("max rel err vs recalibration {worst:.2e}, identity exact: {exact_identity}"),
    )
}

fn c5_cva_equivalence() -> Outcome {
    let lab = CvaLab::desk(1).unwrap();
    let m = 1 << 14;
    let a = baseline_cva(&lab, m, 11).unwrap();
    let b = default_based_cva(&lab, m, 11).unwrap();
    let joint = a.ci_halfwidth.hypot(b.ci_halfwidth);
    let desk_ok = (a.estimate - b.estimate).abs() <= joint;

    // Single client, unit exposure, constant intensity: the expected default
    // loss telescopes to 1 - exp(-gamma T).
    let (n, gamma) = (100, 0.03);
    let layout = FactorLayout {
        economies: 1,
        clients: 1,
    };
    let grid = SimGrid { n, h: 0.1, substeps: 1 };
    let mut buf = PathBuf::new(layout, &grid);
    for j in 0..=n {
        buf.y[j * buf.dim + layout.gamma(0)] = gamma;
    }
    let mtm = vec![1.0; n + 1];
    let intensity = xi_from(&buf, &mtm, &layout, &grid, 0);
    let surv = |j: usize| (-gamma * grid.h * j as f64).exp();
    let mut default_based = 0.0;
    for s in 1..=n {
        buf.default_step[0] = s as u32;
        default_based += (surv(s - 1) - surv(s)) * loss_c_at(&buf, &mtm, 1, n);
    }
    let toy_err = (intensity - default_based).abs();
    outcome(
        desk_ok && toy_err < 1e-12,
        format!(
            "desk {:.2} vs {:.2} (joint ci {:.2}), toy |diff| {toy_err:.1e}",
            a.estimate, b.estimate, joint
        ),
    )
}

fn coin_toy(m: usize, bias: f64) -> xvasensi::risk::TwinReport {
    let p = [0.3, 0.8];
    let mut s = make_stream(21, 0);
    let (mut phi, mut x1, mut x2) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..m {
        let rho = usize::from(s.uniform() < 0.5);
        phi.push(10.0 * p[rho] + bias);
        x1.push(if s.uniform() < p[rho] { 10.0 } else { 0.0 });
        x2.push(if s.uniform() < p[rho] { 10.0 } else { 0.0 });
    }
    twin_validate(&phi, &x1, &x2, 1.0).unwrap()
}

fn c6_twin() -> Outcome {
    let exact = coin_toy(200_000, 0.0);
    let a = exact.twin_stat.abs() < 3.0 * exact.std_error();
    let b = 1.5;
    let biased = coin_toy(200_000, b);
    let bb = (biased.twin_stat - b * b).abs() < 3.0 * biased.std_error();

    let lab = CvaLab::desk(1).unwrap();
    let cfg = HedgeConfig::default();
    let (m, t, seed) = (1 << 14, 0.1, 3);
    let noise = ParamNoise::default();
    let norm = baseline_cva(&lab, m, seed).unwrap().estimate;
    let (cva, sample) = learn_conditional_cva(&lab, CondMode::Baseline, t, m, seed, &noise, &cfg.learner).unwrap();
    let mean = sample.xi.iter().sum::<f64>() / sample.xi.len() as f64;
    let ts = twin_sample(&lab, CondMode::Baseline, t, m, seed + 1000, &noise).unwrap();
    let phi = cva.predictor.predict_rows(&ts.features);
    let learned = twin_validate(&phi, &ts.xi1, &ts.xi2, norm).unwrap();
    let constant = twin_validate(&vec![mean; phi.len()], &ts.xi1, &ts.xi2, norm).unwrap();
    let c = learned.twin_ub < constant.twin_ub;
    outcome(
        a && bb && c,
        format!(
            "exact {:.3}±{:.3}, biased {:.3} vs {:.3}±{:.3}, desk twin_ub mlp {:.4} < const {:.4}",
            exact.twin_stat,
            exact.std_error(),
            biased.twin_stat,
            b * b,
            biased.std_error(),
            learned.twin_ub,
            constant.twin_ub
        ),
    )
}

fn c7_var_es() -> Outcome {
    let mut s = make_stream(31, 0);
    let x: Vec<f64> = (0..1_000_000).map(|_| s.normal()).collect();
    let v = var_es(&x, 0.95).unwrap().var;
    let e = var_es(&x, 0.975).unwrap().es;
    // Normal quantile and tail mean phi(z)/(1 - alpha).
    let z975: f64 = 1.959_963_984_540_054;
    let es_exact = (-0.5 * z975 * z975).exp() / (2.0 * std::f64::consts::PI).sqrt() / 0.025;
    let pass = (v - 1.644_853_626_951_472).abs() <= 0.01 && (e - es_exact).abs() <= 0.02;
    outcome(pass, format!("VaR95 {v:.4}, ES97.5 {e:.4} (exact {es_exact:.4})"))
}

fn c8_rockafellar() -> Outcome {
    let mut s = make_stream(41, 0);
    let m = 4096;
    let pnl: Vec<f64> = (0..m).map(|_| s.normal()).collect();
    let d = HedgeData::new(pnl, Matrix::zeros(m, 0)).unwrap();
    let r = ec_sensitivities(&d, None, &EcConfig::default()).unwrap();
    let (l, _) = d.loss(&[]).unwrap();
    let mut sorted = l.clone();
    sorted.sort_by(f64::total_cmp);
    let v = var_es(&l, 0.95).unwrap().var;
    let pos = sorted.partition_point(|&x| x < v);
    let gap = sorted[pos + 1] - sorted[pos];
    let k_ok = (r.k - v).abs() <= gap;

    // pnl = 3 x + small noise, one instrument x: the ratio 3 replicates.
    let mut s = make_stream(42, 0);
    let hedge = Matrix::from_fn(8192, 1, |_, _| s.normal());
    let pnl: Vec<f64> = (0..8192).map(|j| 3.0 * hedge[(j, 0)] + 0.05 * s.normal()).collect();
    let d = HedgeData::new(pnl, hedge).unwrap();
    let r2 = ec_sensitivities(&d, None, &EcConfig::default()).unwrap();
    let ratio_ok = (r2.delta[0] - 3.0).abs() <= 0.02 * 3.0;
    outcome(
        k_ok && ratio_ok,
        format!(
            "k {:.4} vs VaR {v:.4} (gap {gap:.1e}, sgd k {:.4}), replicating ratio {:.4}",
            r.k, r.k_sgd, r2.delta[0]
        ),
    )
}

fn c9_hedging() -> Outcome {
    let t0 = Instant::now();
    let desk = Desk::new(CvaLab::desk(1).unwrap()).unwrap();
    let cfg = HedgeConfig::default();
    let ratio = |rows: &[xvasensi::hedge::HedgeReport], m: &str| {
        rows.iter().find(|r| r.method == m).map_or(f64::NAN, |r| r.upl_ratio)
    };
    let off = runoff_backtest(&desk, &cfg, 1).unwrap();
    let (ple_off, bump_off) = (ratio(&off.in_sample, "ple"), ratio(&off.in_sample, "bump"));
    let (ple_off_oos, bump_off_oos) = (ratio(&off.out_of_sample, "ple"), ratio(&off.out_of_sample, "bump"));
    let off_ok = ple_off > 1.0 && bump_off < 1.0 && ple_off_oos > 1.0 && bump_off_oos < 1.0;

    let on = runon_backtest(&desk, &cfg, 1).unwrap();
    let methods = ["bump", "ls", "ple", "ec"];
    let ins: Vec<f64> = methods.iter().map(|m| ratio(&on.in_sample, m)).collect();
    let oos: Vec<f64> = methods.iter().map(|m| ratio(&on.out_of_sample, m)).collect();
    let all_above_two = ins.iter().chain(&oos).all(|&r| r > 2.0);
    let ple_best_in = ins.iter().all(|&r| r <= ins[2]);
    let best_oos = oos.iter().copied().fold(f64::MIN, f64::max);
    let ple_near_oos = oos[2] >= 0.95 * best_oos;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        off_ok && all_above_two && ple_best_in && ple_near_oos && secs < 900.0,
        format!(
            "run-off ple {ple_off:.2}/{ple_off_oos:.2} bump {bump_off:.2}/{bump_off_oos:.2}; \
             run-on in {ins:.2?} out {oos:.2?} (bump, ls, ple, ec); {secs:.0}s"
        ),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_xvasensi"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_outputs(a: &Path, b: &Path) -> bool {
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_object().unwrap();
    !outputs.is_empty()
        && outputs
            .keys()
            .all(|f| std::fs::read(a.join(f)).ok().is_some_and(|x| Some(x) == std::fs::read(b.join(f)).ok()))
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let small = [
        "--set",
        "portfolio.count=40",
        "--set",
        "experiment.m=2048",
        "--set",
        "experiment.bump_m=1024",
        "--set",
        "experiment.twin_m=1024",
        "--set",
        "experiment.learner.train.epochs=10",
        "--set",
        "experiment.ec.epochs=20",
    ];
    let commands: [&[&str]; 7] = [
        &["bs-bench", "--method", "smart", "--m", "20000"],
        &["cva", "price"],
        &["cva", "market-sensis"],
        &["cva", "twin"],
        &["cva", "risk-runoff"],
        &["cva", "risk-runon"],
        &["cva", "hedge-backtest"],
    ];
    let mut failed = Vec::new();
    for (i, cmd) in commands.iter().enumerate() {
        let a = tmp.path().join(format!("{i}a"));
        let b = tmp.path().join(format!("{i}b"));
        let mut first: Vec<&str> = cmd.to_vec();
        if cmd[0] == "cva" {
            first.extend_from_slice(&small);
        }
        let a_s = a.to_str().unwrap();
        first.extend_from_slice(&["--threads", "1", "--out", a_s]);
        let manifest = a.join("manifest.json");
        let mut rerun: Vec<&str> = cmd[..if cmd[0] == "cva" { 2 } else { 1 }].to_vec();
        let m_s = manifest.to_str().unwrap().to_string();
        let b_s = b.to_str().unwrap().to_string();
        rerun.extend_from_slice(&["--config", &m_s, "--threads", "2", "--out", &b_s]);
        let ok = run_cli(&first) && run_cli(&rerun) && same_outputs(&a, &b);
        if !ok {
            failed.push(cmd.join(" "));
        }
    }
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} commands reproduced bit-identically across 1 and 2 threads", commands.len())
        } else {
            format!("mismatch in {failed:?}")
        },
    )
}

fn main() {
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "black-scholes oracle", c1_black_scholes),
        (2, "smart equals one-hot linear", c2_specialization),
        (3, "halving identity", c3_halving),
        (4, "calibration jacobian", c4_jacobian),
        (5, "cva estimator equivalence", c5_cva_equivalence),
        (6, "twin validation", c6_twin),
        (7, "var / es", c7_var_es),
        (8, "rockafellar", c8_rockafellar),
        (9, "hedging at desk scale", c9_hedging),
        (10, "determinism", c10_determinism),
    ];
    let mut failures = 0;
    for (k, name, f) in criteria {
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let o = f();
        failures += usize::from(!o.pass);
        println!("criterion {k:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
