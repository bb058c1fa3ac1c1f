use proptest::prelude::*;

use xvasensi::cva::xi_from;
use xvasensi::engine::{FactorLayout, PathBuf};
use xvasensi::hedge::{hedge_metrics, ple_sensitivities, HedgeData};
use xvasensi::jacobian::{param_jacobian, CalibrateOptions, FnModel, HessianMode};
use xvasensi::learners::{fit_linear, LinearConfig};
use xvasensi::linalg::Matrix;
use xvasensi::model::SimGrid;
use xvasensi::products::{basket_call_analytic, BasketSpec};
use xvasensi::report::sig6;
use xvasensi::risk::{twin_validate, var_es};
use xvasensi::rng::make_stream;
use xvasensi::sensitivities::{linear_bump, smart_bump, BumpPlan, BumpSize, FnPayoff, Regression};

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut s = make_stream(seed, 0);
    (0..n).map(|_| s.normal()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rng_batching_is_invisible(seed in any::<u64>(), id in any::<u64>(), split in 0usize..50) {
        let mut a = make_stream(seed, id);
        let mut b = make_stream(seed, id);
        let one: Vec<f64> = (0..50).map(|_| a.normal()).collect();
        let mut two = vec![0.0; 50];
        b.fill_normal(&mut two[..split]);
        b.fill_normal(&mut two[split..]);
        prop_assert_eq!(one, two);
    }

    #[test]
    fn es_dominates_var_and_both_grow_with_alpha(seed in any::<u64>(), n in 20usize..500, a in 0.5f64..0.9, da in 0.0f64..0.09) {
        let x: Vec<f64> = normals(seed, n).iter().map(|z| z.exp()).collect();
        let lo = var_es(&x, a).unwrap();
        let hi = var_es(&x, a + da).unwrap();
        prop_assert!(lo.es >= lo.var);
        prop_assert!(hi.var >= lo.var);
        prop_assert!(hi.es >= lo.es - 1e-12 * lo.es.abs());
    }

    #[test]
    fn sig6_keeps_six_digits(x in -1e12f64..1e12) {
        let back: f64 = sig6(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-6 * x.abs());
    }

    #[test]
    fn hedged_loss_is_centered_and_ple_minimizes_upl(seed in any::<u64>(), q in 1usize..4, d0 in -3.0f64..3.0) {
        let m = 400;
        let z = normals(seed, m * (q + 1));
        let hedge = Matrix::from_fn(m, q, |j, k| z[j * (q + 1) + k]);
        let pnl: Vec<f64> = (0..m).map(|j| 2.0 * hedge[(j, 0)] + z[j * (q + 1) + q].powi(2) + 7.0).collect();
        let data = HedgeData::new(pnl, hedge).unwrap();
        let mut other = vec![0.0; q];
        other[0] = d0;
        let (l, _) = data.loss(&other).unwrap();
        let sd = (l.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
        prop_assert!(l.iter().sum::<f64>().abs() / m as f64 <= 1e-10 * sd.max(1.0));
        let ple = ple_sensitivities(&data, 0.0).unwrap();
        let (best, _, _) = hedge_metrics(&data, &ple, 0.95).unwrap();
        let (alt, _, _) = hedge_metrics(&data, &other, 0.95).unwrap();
        prop_assert!(best <= alt * (1.0 + 1e-12));
    }

    #[test]
    fn twin_bound_dominates_error(seed in any::<u64>(), bias in -2.0f64..2.0) {
        let z = normals(seed, 3000);
        let phi: Vec<f64> = (0..1000).map(|j| z[j] + bias).collect();
        let x1: Vec<f64> = (0..1000).map(|j| z[j] + z[1000 + j]).collect();
        let x2: Vec<f64> = (0..1000).map(|j| z[j] + z[2000 + j]).collect();
        let r = twin_validate(&phi, &x1, &x2, 1.0).unwrap();
        prop_assert!(r.twin_ub >= 0.0);
        if let Some(e) = r.twin_err {
            prop_assert!(r.twin_stat > 0.0);
            prop_assert!(r.twin_ub >= e);
        }
    }

    #[test]
    fn smart_equals_one_hot_linear(r0 in -1.0f64..1.0, r1 in 0.1f64..2.0, m in 40usize..400) {
        let pay = FnPayoff {
            dim: 2,
            f: |r: &[f64], j: usize| {
                let z = make_stream(5, j as u64).normal();
                (r[0] * z).exp() + r[1] * r[1] * z
            },
        };
        let rho0 = [r0, r1];
        let smart = smart_bump(&pay, &rho0, m, &BumpSize::default()).unwrap();
        let lin = linear_bump(&pay, &rho0, m, &BumpPlan::one_hot(2, 0.01), 1e-8, Regression::Svd).unwrap();
        prop_assert_eq!(smart.estimate, lin.estimate);
    }

    #[test]
    fn halving_identity_on_random_quadratics(
        a in prop::array::uniform3(-2.0f64..2.0),
        q in prop::array::uniform6(-1.0f64..1.0),
        rho0 in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let qm = [[q[0], q[1], q[2]], [q[1], q[3], q[4]], [q[2], q[4], q[5]]];
        let pi = move |r: &[f64]| {
            let mut v = 0.0;
            for i in 0..3 {
                v += a[i] * r[i];
                for j in 0..3 {
                    v += r[i] * qm[i][j] * r[j];
                }
            }
            v
        };
        let pay = FnPayoff { dim: 3, f: move |r: &[f64], _| pi(r) };
        let plan = BumpPlan::gaussian(vec![vec![0, 1, 2]], vec![0.1], 9);
        let rep = linear_bump(&pay, &rho0, 64, &plan, 0.0, Regression::Svd).unwrap();
        for k in 0..3 {
            let g = a[k] + 2.0 * (0..3).map(|j| qm[k][j] * rho0[j]).sum::<f64>();
            prop_assert!((rep.estimate[k] - g).abs() < 1e-9 * (1.0 + g.abs()));
        }
    }

    #[test]
    fn linear_fit_recovers_affine_labels(seed in any::<u64>(), c in prop::array::uniform3(-5.0f64..5.0), b in -5.0f64..5.0) {
        let x = normals(seed, 90);
        let f = Matrix::from_fn(30, 3, |j, k| x[3 * j + k]);
        let y: Vec<f64> = (0..30).map(|j| b + (0..3).map(|k| c[k] * f[(j, k)]).sum::<f64>()).collect();
        let cfg = LinearConfig { ridge_rel: 0.0, ..LinearConfig::default() };
        let fit = fit_linear(&f, &y, &cfg).unwrap();
        for k in 0..3 {
            prop_assert!((fit.coef[k] - c[k]).abs() < 1e-8);
        }
        prop_assert!((fit.intercept - b).abs() < 1e-8);
    }

    #[test]
    fn linear_model_jacobian_is_inverse(m in prop::array::uniform4(-1.0f64..1.0)) {
        // Diagonally dominant, hence well conditioned.
        let a = [[3.0 + m[0], m[1]], [m[2], 3.0 + m[3]]];
        let model = FnModel {
            n_params: 2,
            n_instruments: 2,
            f: move |p: &[f64]| vec![a[0][0] * p[0] + a[0][1] * p[1], a[1][0] * p[0] + a[1][1] * p[1]],
            jac: None,
        };
        let psi = [0.4, -0.2];
        let z = [a[0][0] * psi[0] + a[0][1] * psi[1], a[1][0] * psi[0] + a[1][1] * psi[1]];
        let j = param_jacobian(&model, &z, &psi, HessianMode::GaussNewton, &CalibrateOptions::default()).unwrap();
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        for r in 0..2 {
            for c in 0..2 {
                prop_assert!((j[(r, c)] - inv[r][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn basket_price_decreasing_and_convex_in_strike(s in 50.0f64..150.0, v in 0.05f64..0.6, k in 60.0f64..140.0) {
        let price = |k: f64| basket_call_analytic(&BasketSpec {
            spots: vec![s, 0.9 * s],
            vols: vec![v, 0.5 * v],
            rate: 0.02,
            strike: k,
            maturity: 2.0,
        }).price;
        let (lo, mid, hi) = (price(k - 1.0), price(k), price(k + 1.0));
        prop_assert!(lo >= mid && mid >= hi);
        prop_assert!(lo + hi - 2.0 * mid >= -1e-9);
    }

    #[test]
    fn intensity_cva_telescopes_and_grows_with_intensity(g in prop::collection::vec(0.0f64..0.3, 21), e in 0.0f64..10.0) {
        let layout = FactorLayout { economies: 1, clients: 1 };
        let grid = SimGrid { n: 20, h: 0.25, substeps: 1 };
        let fill = |scale: f64| {
            let mut buf = PathBuf::new(layout, &grid);
            for j in 0..=20 {
                buf.y[j * buf.dim + layout.gamma(0)] = scale * g[j];
            }
            buf
        };
        let mtm = vec![e; 21];
        let xi = xi_from(&fill(1.0), &mtm, &layout, &grid, 0);
        let hazard: f64 = g[..20].iter().sum::<f64>() * grid.h;
        prop_assert!(xi >= 0.0);
        prop_assert!((xi - e * -(-hazard).exp_m1()).abs() <= 1e-12 * (1.0 + e));
        prop_assert!(xi_from(&fill(1.1), &mtm, &layout, &grid, 0) >= xi);
    }
}
