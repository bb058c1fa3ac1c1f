//! Closed-form pricing: Vasicek zero-coupons, CIR survival probabilities,
//! interest-rate swaps, the hedge instruments (zero-coupons, FX forwards,
//! CDS) and the geometric-basket call.

use serde::{Deserialize, Serialize};

use crate::engine::{FactorLayout, PathBuf};
use crate::error::{Error, Result};
use crate::model::{ModelParams, SimGrid};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::stats::{norm_cdf, norm_pdf};

/// `-expm1(-x)/x`, equal to 1 at 0.
#[inline]
fn phi1<T: Scalar>(x: T) -> T {
    if x.abs() < T::of(1e-12) {
        T::one() - x / T::of(2.0)
    } else {
        -(-x).exp_m1() / x
    }
}

/// `(x - 2(1-e^-x) + (1-e^-2x)/2) / x^3`, the variance factor of the
/// integrated Vasicek rate.
#[inline]
fn vasicek_var_factor<T: Scalar>(x: T) -> T {
    if x.abs() < T::of(1e-3) {
        T::one() / T::of(3.0) - x / T::of(4.0) + T::of(7.0 / 60.0) * x * x - x * x * x / T::of(24.0)
    } else {
        let e1 = -(-x).exp_m1();
        let e2 = -(-(x + x)).exp_m1() / T::of(2.0);
        (x - T::of(2.0) * e1 + e2) / (x * x * x)
    }
}

/// Log-affine coefficients `(ln A, B)` with `P = exp(ln A - B r)`.
pub fn zc_coeffs<T: Scalar>(a: T, b: T, sigma: T, ttm: T) -> (T, T) {
    let x = a * ttm;
    let bb = ttm * phi1(x);
    let ln_a = -b * ttm + b * bb + sigma * sigma * ttm * ttm * ttm * vasicek_var_factor(x) / T::of(2.0);
    (ln_a, bb)
}

/// Vasicek zero-coupon price for short rate `r` and time to maturity `ttm`.
pub fn zc_bond_price<T: Scalar>(a: T, b: T, sigma: T, r: T, ttm: T) -> T {
    if ttm <= T::zero() {
        return T::one();
    }
    let (ln_a, bb) = zc_coeffs(a, b, sigma, ttm);
    (ln_a - bb * r).exp()
}

/// Log-affine coefficients `(ln A, B)` of the CIR survival probability
/// `E exp(-int gamma) = exp(ln A - B gamma)`.
///
/// Written so that `nu -> 0` and `delta -> 0` are continuous limits.
pub fn cir_coeffs<T: Scalar>(alpha: T, delta: T, nu: T, ttm: T) -> (T, T) {
    let two = T::of(2.0);
    let h = (delta * delta + two * nu * nu).sqrt();
    let hd = h + delta;
    if hd == T::zero() {
        return (T::zero(), ttm);
    }
    let em1 = (h * ttm).exp_m1();
    let bb = if h == T::zero() {
        ttm
    } else {
        two * em1 / (hd * em1 + two * h)
    };
    // ln A = -(2 delta alpha / nu^2) [eps t/2 + ln1p(-u)] with
    // eps = h - delta = 2 nu^2 / (h + delta) and u = eps (1 - e^{-ht}) / (2h).
    let eps = two * nu * nu / hd;
    let f = ttm * phi1(h * ttm);
    let u = eps * f / two;
    let l = if u == T::zero() { T::one() } else { (-u).ln_1p() / (-u) };
    let ln_a = -two * delta * alpha * ttm / hd + two * delta * alpha * f / hd * l;
    (ln_a, bb)
}

/// CIR survival probability over `ttm` from intensity `gamma`.
pub fn cir_survival<T: Scalar>(alpha: T, delta: T, nu: T, gamma: T, ttm: T) -> T {
    if ttm <= T::zero() {
        return T::one();
    }
    let (ln_a, bb) = cir_coeffs(alpha, delta, nu, ttm);
    (ln_a - bb * gamma.max(T::zero())).exp()
}

fn zc_of(p: &ModelParams, e: usize, r: f64, ttm: f64) -> f64 {
    zc_bond_price(p.a[e], p.b[e], p.sigma_r[e], r, ttm)
}

/// Fixed-for-floating swap. `payer` pays the fixed rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Swap {
    pub economy: usize,
    pub counterparty: usize,
    pub notional: f64,
    pub maturity: f64,
    pub strike: f64,
    pub freq: u32,
    pub payer: bool,
}

impl Swap {
    fn sign(&self) -> f64 {
        if self.payer {
            1.0
        } else {
            -1.0
        }
    }

    pub fn payment_dates(&self) -> Vec<f64> {
        let n = (self.maturity * self.freq as f64).round() as usize;
        (1..=n).map(|j| j as f64 / self.freq as f64).collect()
    }

    /// Fixed rate making the swap worth 0 at time 0 under `p`.
    pub fn par_strike(&self, p: &ModelParams) -> f64 {
        let e = self.economy;
        let tau = 1.0 / self.freq as f64;
        let annuity: f64 = self
            .payment_dates()
            .iter()
            .map(|&d| tau * zc_of(p, e, p.r0[e], d))
            .sum();
        (1.0 - zc_of(p, e, p.r0[e], self.maturity)) / annuity
    }
}

/// Swap value at time `t` in the reference currency: the float leg is
/// worth `N (1 - P(t, M))`, the fixed leg `N K tau sum_{T_j > t} P(t, T_j)`.
/// `fx` converts the swap's currency into the reference one.
pub fn swap_value(swap: &Swap, r: f64, fx: f64, p: &ModelParams, t: f64) -> f64 {
    if t >= swap.maturity - 1e-12 {
        return 0.0;
    }
    let e = swap.economy;
    let tau = 1.0 / swap.freq as f64;
    let float = 1.0 - zc_of(p, e, r, swap.maturity - t);
    let fixed: f64 = swap
        .payment_dates()
        .iter()
        .filter(|&&d| d > t + 1e-12)
        .map(|&d| tau * zc_of(p, e, r, d - t))
        .sum();
    swap.sign() * swap.notional * fx * (float - swap.strike * fixed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PortfolioSpec {
    pub count: usize,
    pub notional_min: f64,
    pub notional_max: f64,
    /// Longest maturity (capped by the grid horizon).
    pub max_maturity: f64,
    /// Payment frequencies drawn uniformly.
    pub freqs: Vec<u32>,
}

impl Default for PortfolioSpec {
    fn default() -> Self {
        Self {
            count: 100,
            notional_min: 1_000.0,
            notional_max: 10_000.0,
            max_maturity: 10.0,
            freqs: vec![1, 2],
        }
    }
}

/// Draws a random portfolio; strikes are set at par under `p`.
pub fn generate_portfolio(
    spec: &PortfolioSpec,
    p: &ModelParams,
    grid: &SimGrid,
    stream: &mut RngStream,
) -> Result<Vec<Swap>> {
    if spec.count == 0 {
        return Err(Error::Config("portfolio count must be at least 1".into()));
    }
    if spec.freqs.is_empty() || p.clients() == 0 {
        return Err(Error::Config("portfolio needs frequencies and at least one client".into()));
    }
    if !(spec.notional_min > 0.0 && spec.notional_max >= spec.notional_min) {
        return Err(Error::Config("portfolio notional range is invalid".into()));
    }
    let horizon = spec.max_maturity.min(grid.horizon());
    let mut out = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let freq = spec.freqs[stream.below(spec.freqs.len())];
        let periods_per_step = 1.0 / (freq as f64 * grid.h);
        if (periods_per_step - periods_per_step.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "payment frequency {freq} is not aligned with the pricing grid step {}",
                grid.h
            )));
        }
        let max_periods = (horizon * freq as f64 + 1e-9).floor() as usize;
        if max_periods == 0 {
            return Err(Error::Config("horizon shorter than one payment period".into()));
        }
        let periods = 1 + stream.below(max_periods);
        let mut swap = Swap {
            economy: stream.below(p.economies()),
            counterparty: stream.below(p.clients()),
            notional: spec.notional_min + (spec.notional_max - spec.notional_min) * stream.uniform(),
            maturity: periods as f64 / freq as f64,
            strike: 0.0,
            freq,
            payer: stream.uniform() < 0.5,
        };
        swap.strike = swap.par_strike(p);
        out.push(swap);
    }
    Ok(out)
}

pub fn write_portfolio_csv(swaps: &[Swap], w: impl std::io::Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["economy", "counterparty", "notional", "maturity", "strike", "freq", "payer"])?;
    for s in swaps {
        wr.write_record([
            s.economy.to_string(),
            s.counterparty.to_string(),
            format!("{:?}", s.notional),
            format!("{:?}", s.maturity),
            format!("{:?}", s.strike),
            s.freq.to_string(),
            u8::from(s.payer).to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_portfolio_csv(r: impl std::io::Read) -> Result<Vec<Swap>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::Serde(format!("portfolio row has no column {i}")))
        };
        let num = |i: usize| -> Result<f64> {
            f(i)?
                .parse()
                .map_err(|_| Error::Serde(format!("bad number in portfolio column {i}")))
        };
        let int = |i: usize| -> Result<usize> {
            f(i)?
                .parse()
                .map_err(|_| Error::Serde(format!("bad integer in portfolio column {i}")))
        };
        out.push(Swap {
            economy: int(0)?,
            counterparty: int(1)?,
            notional: num(2)?,
            maturity: num(3)?,
            strike: num(4)?,
            freq: int(5)? as u32,
            payer: int(6)? == 1,
        });
    }
    Ok(out)
}

/// Portfolio aggregated per (economy, client) on the pricing grid.
///
/// A swap alive at date `j` contributes `s N` to a constant and
/// `-s N` / `-s N K tau` to the weights of its maturity / payment dates, so
/// the reference-currency exposure to client `c` at date `j` is
/// `sum_e fx_e [const_{e,c}(j) + sum_{k > j} w_{e,c}(k) P_e(t_j, t_k)]`.
#[derive(Clone, Debug)]
pub struct ExposureKernel {
    pub grid: SimGrid,
    pub economies: usize,
    pub clients: usize,
    /// `[e][c][j]`, `j in 0..=n`.
    constant: Vec<Vec<Vec<f64>>>,
    /// `[e][c][k]`, `k in 0..=n`.
    weight: Vec<Vec<Vec<f64>>>,
    /// Economies carrying at least one swap.
    active: Vec<bool>,
}

impl ExposureKernel {
    pub fn new(swaps: &[Swap], economies: usize, clients: usize, grid: &SimGrid) -> Result<Self> {
        let n = grid.n;
        let mut constant = vec![vec![vec![0.0; n + 1]; clients]; economies];
        let mut weight = vec![vec![vec![0.0; n + 1]; clients]; economies];
        let mut active = vec![false; economies];
        let idx = |t: f64| -> Result<usize> {
            grid.index_of(t).map_err(|_| {
                Error::Config(format!("swap date {t} is not on the pricing grid"))
            })
        };
        for s in swaps {
            if s.economy >= economies || s.counterparty >= clients {
                return Err(Error::Dimension(format!(
                    "swap on economy {} / client {} outside the model",
                    s.economy, s.counterparty
                )));
            }
            let m = idx(s.maturity)?;
            let sn = s.sign() * s.notional;
            let tau = 1.0 / s.freq as f64;
            active[s.economy] = true;
            let c = &mut constant[s.economy][s.counterparty];
            for cj in c.iter_mut().take(m) {
                *cj += sn;
            }
            let w = &mut weight[s.economy][s.counterparty];
            w[m] -= sn;
            for d in s.payment_dates() {
                w[idx(d)?] -= sn * s.strike * tau;
            }
        }
        Ok(Self {
            grid: *grid,
            economies,
            clients,
            constant,
            weight,
            active,
        })
    }

    /// Exposures `MtM^c(t_j)` for `j in 0..=n`, written to
    /// `out[j * C + c]`.
    pub fn mtm(&self, p: &ModelParams, path: &PathBuf, out: &mut [f64]) {
        self.mtm_from(p, path, 0, out)
    }

    /// Same as [`ExposureKernel::mtm`] for dates `start..=n` only (earlier
    /// entries untouched).
    pub fn mtm_from(&self, p: &ModelParams, path: &PathBuf, start: usize, out: &mut [f64]) {
        let n = self.grid.n;
        let h = self.grid.h;
        let cn = self.clients;
        let layout = FactorLayout {
            economies: self.economies,
            clients: self.clients,
        };
        for v in out[start * cn..(n + 1) * cn].iter_mut() {
            *v = 0.0;
        }
        let mut ln_a = vec![0.0; n + 1];
        let mut bb = vec![0.0; n + 1];
        let mut disc = vec![0.0; n + 1];
        for e in 0..self.economies {
            if !self.active[e] {
                continue;
            }
            for d in 1..=n {
                let (la, b) = zc_coeffs(p.a[e], p.b[e], p.sigma_r[e], d as f64 * h);
                ln_a[d] = la;
                bb[d] = b;
            }
            for j in start..n {
                let f = path.factors(j);
                let r = f[layout.rate(e)];
                let fx = if e == 0 { 1.0 } else { f[layout.fx(e)] };
                for k in (j + 1)..=n {
                    let d = k - j;
                    disc[k] = (ln_a[d] - bb[d] * r).exp();
                }
                for c in 0..cn {
                    let w = &self.weight[e][c];
                    let mut v = self.constant[e][c][j];
                    for k in (j + 1)..=n {
                        v += w[k] * disc[k];
                    }
                    out[j * cn + c] += fx * v;
                }
            }
        }
    }
}

/// Hedge instruments: zero-coupons per economy (native currency), FX
/// forwards per foreign economy (forward rate `fx P_c / P_0`) and CDS per
/// client (upfront of a contract struck at its time-0 par spread,
/// protection-buyer side, discounted on the reference curve, monthly
/// premiums).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSet {
    pub economies: usize,
    pub clients: usize,
    pub zc_pillars: Vec<f64>,
    pub fx_pillars: Vec<f64>,
    pub cds_pillars: Vec<f64>,
    pub lgd: f64,
    /// Par spread per client and CDS pillar, fixed at construction.
    pub par_spreads: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InstrumentKind {
    Zc { economy: usize },
    FxForward { economy: usize },
    Cds { client: usize },
}

/// Market state at time `t` used to price the instruments.
#[derive(Clone, Copy, Debug)]
pub struct MarketState<'a> {
    pub t: f64,
    pub rates: &'a [f64],
    /// Spot FX of economies `1..E`.
    pub fx: &'a [f64],
    pub gamma: &'a [f64],
    /// Clients already defaulted at `t`.
    pub defaulted: &'a [bool],
}

const CDS_PAYMENTS_PER_YEAR: f64 = 12.0;

impl InstrumentSet {
    /// Pillar lists of the full lab.
    pub fn standard_pillars() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut zc = vec![0.01, 0.1, 0.2, 0.5];
        zc.extend((1..=10).map(|x| x as f64));
        let fx = vec![0.01, 0.1, 0.2, 0.5];
        let cds = (1..=10).map(|x| x as f64).collect();
        (zc, fx, cds)
    }

    pub fn new(
        rho0: &ModelParams,
        zc_pillars: Vec<f64>,
        fx_pillars: Vec<f64>,
        cds_pillars: Vec<f64>,
        lgd: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&lgd) {
            return Err(Error::Config(format!("lgd {lgd} outside [0, 1]")));
        }
        for &t in zc_pillars.iter().chain(&fx_pillars).chain(&cds_pillars) {
            if !(t > 0.0) {
                return Err(Error::Config(format!("pillar {t} must be positive")));
            }
        }
        let mut set = Self {
            economies: rho0.economies(),
            clients: rho0.clients(),
            zc_pillars,
            fx_pillars,
            cds_pillars,
            lgd,
            par_spreads: vec![],
        };
        set.par_spreads = (0..set.clients)
            .map(|k| {
                set.cds_pillars
                    .iter()
                    .map(|&tp| {
                        let (prot, prem) = set.cds_legs(rho0, k, rho0.r0[0], rho0.gamma0[k], 0.0, tp);
                        if prem > 0.0 {
                            prot / prem
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(set)
    }

    pub fn standard(rho0: &ModelParams) -> Result<Self> {
        let (zc, fx, cds) = Self::standard_pillars();
        Self::new(rho0, zc, fx, cds, 0.6)
    }

    pub fn count(&self) -> usize {
        self.economies * self.zc_pillars.len()
            + (self.economies - 1) * self.fx_pillars.len()
            + self.clients * self.cds_pillars.len()
    }

    /// Kind and pillar of instrument `i`.
    pub fn describe(&self, i: usize) -> (InstrumentKind, f64) {
        let nz = self.zc_pillars.len();
        let nf = self.fx_pillars.len();
        let nc = self.cds_pillars.len();
        let zc_total = self.economies * nz;
        let fx_total = (self.economies - 1) * nf;
        if i < zc_total {
            (InstrumentKind::Zc { economy: i / nz }, self.zc_pillars[i % nz])
        } else if i < zc_total + fx_total {
            let k = i - zc_total;
            (InstrumentKind::FxForward { economy: 1 + k / nf }, self.fx_pillars[k % nf])
        } else {
            let k = i - zc_total - fx_total;
            (InstrumentKind::Cds { client: k / nc }, self.cds_pillars[k % nc])
        }
    }

    pub fn name(&self, i: usize) -> String {
        match self.describe(i) {
            (InstrumentKind::Zc { economy }, t) => format!("zc[{economy}]@{t}"),
            (InstrumentKind::FxForward { economy }, t) => format!("fx[{economy}]@{t}"),
            (InstrumentKind::Cds { client }, t) => format!("cds[{}]@{t}", client + 1),
        }
    }

    /// `(curve, pillar)` columns for reports.
    pub fn curve_and_pillar(&self, i: usize) -> (String, f64) {
        match self.describe(i) {
            (InstrumentKind::Zc { economy }, t) => (format!("zc[{economy}]"), t),
            (InstrumentKind::FxForward { economy }, t) => (format!("fx[{economy}]"), t),
            (InstrumentKind::Cds { client }, t) => (format!("cds[{}]", client + 1), t),
        }
    }

    /// Protection and premium (per unit spread) legs from `t` to pillar
    /// `tp` for an alive client.
    fn cds_legs(&self, p: &ModelParams, k: usize, r_dom: f64, gamma: f64, t: f64, tp: f64) -> (f64, f64) {
        let dt = 1.0 / CDS_PAYMENTS_PER_YEAR;
        let n = (tp * CDS_PAYMENTS_PER_YEAR).round() as usize;
        let mut prot = 0.0;
        let mut prem = 0.0;
        let mut s_prev = 1.0;
        for l in 1..=n {
            let tl = l as f64 * dt;
            if tl <= t + 1e-12 {
                continue;
            }
            let ttm = tl - t;
            let disc = zc_of(p, 0, r_dom, ttm);
            let s = cir_survival(p.alpha[k], p.delta[k], p.nu[k], gamma, ttm);
            prot += disc * (s_prev - s);
            prem += disc * s * dt;
            s_prev = s;
        }
        (self.lgd * prot, prem)
    }

    /// Instrument prices in a market state. Matured instruments and CDS on
    /// defaulted clients are worth 0.
    pub fn prices(&self, p: &ModelParams, st: &MarketState<'_>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        let t = st.t;
        for e in 0..self.economies {
            for &tp in &self.zc_pillars {
                out.push(if tp > t + 1e-12 {
                    zc_of(p, e, st.rates[e], tp - t)
                } else {
                    0.0
                });
            }
        }
        for c in 1..self.economies {
            for &tp in &self.fx_pillars {
                out.push(if tp > t + 1e-12 {
                    let ttm = tp - t;
                    st.fx[c - 1] * zc_of(p, c, st.rates[c], ttm) / zc_of(p, 0, st.rates[0], ttm)
                } else {
                    0.0
                });
            }
        }
        for k in 0..self.clients {
            for (l, &tp) in self.cds_pillars.iter().enumerate() {
                out.push(if tp > t + 1e-12 && !st.defaulted[k] {
                    let (prot, prem) = self.cds_legs(p, k, st.rates[0], st.gamma[k], t, tp);
                    prot - self.par_spreads[k][l] * prem
                } else {
                    0.0
                });
            }
        }
        out
    }

    /// Time-0 prices from the parameters' own initial values.
    pub fn prices_at_zero(&self, p: &ModelParams) -> Vec<f64> {
        let g: Vec<f64> = p.gamma0.iter().map(|g| g.max(0.0)).collect();
        let alive = vec![false; p.clients()];
        self.prices(
            p,
            &MarketState {
                t: 0.0,
                rates: &p.r0,
                fx: &p.fx0,
                gamma: &g,
                defaulted: &alive,
            },
        )
    }

    /// Prices at grid date `i` of a simulated path.
    pub fn prices_on_path(&self, p: &ModelParams, path: &PathBuf, grid: &SimGrid, i: usize) -> Vec<f64> {
        let layout = FactorLayout::of(p);
        let f = path.factors(i);
        let defaulted: Vec<bool> = (0..layout.clients).map(|k| path.defaulted(i, k)).collect();
        self.prices(
            p,
            &MarketState {
                t: grid.time(i),
                rates: &f[..layout.economies],
                fx: &f[layout.economies..2 * layout.economies - 1],
                gamma: &f[2 * layout.economies - 1..],
                defaulted: &defaulted,
            },
        )
    }

    /// Cumulative instrument cash flows over `(0, t_i]` on a path: zero
    /// coupons pay 1, FX forwards pay the spot at maturity, CDS buyers pay
    /// monthly premiums while the client is alive and receive the LGD at
    /// default.
    pub fn cashflows_on_path(&self, p: &ModelParams, path: &PathBuf, grid: &SimGrid, i: usize) -> Vec<f64> {
        let layout = FactorLayout::of(p);
        let t = grid.time(i);
        let mut out = Vec::with_capacity(self.count());
        for _ in 0..self.economies {
            for &tp in &self.zc_pillars {
                out.push(if tp <= t + 1e-12 { 1.0 } else { 0.0 });
            }
        }
        for c in 1..self.economies {
            for &tp in &self.fx_pillars {
                out.push(if tp <= t + 1e-12 {
                    // Spot at the first grid date on or after maturity.
                    let im = ((tp / grid.h) - 1e-9).ceil().max(0.0) as usize;
                    path.factors(im.min(i))[layout.fx(c)]
                } else {
                    0.0
                });
            }
        }
        let dt = 1.0 / CDS_PAYMENTS_PER_YEAR;
        for k in 0..self.clients {
            let tau = path.default_step[k];
            let tau_t = if tau == crate::engine::NO_DEFAULT {
                f64::INFINITY
            } else {
                tau as f64 * grid.h
            };
            for (l, &tp) in self.cds_pillars.iter().enumerate() {
                let horizon = t.min(tp);
                let n_paid = (1..=(tp * CDS_PAYMENTS_PER_YEAR).round() as usize)
                    .filter(|&q| {
                        let tq = q as f64 * dt;
                        tq <= horizon + 1e-12 && tq < tau_t - 1e-12
                    })
                    .count();
                let mut cf = -self.par_spreads[k][l] * dt * n_paid as f64;
                if tau_t <= horizon + 1e-12 {
                    cf += self.lgd;
                }
                out.push(cf);
            }
        }
        out
    }
}

/// Call on the geometric average of `d` independent Black-Scholes assets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasketSpec<T> {
    pub spots: Vec<T>,
    pub vols: Vec<T>,
    pub rate: T,
    pub strike: T,
    pub maturity: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasketGreeks<T> {
    pub price: T,
    pub delta: Vec<T>,
    pub vega: Vec<T>,
    pub gamma: Vec<T>,
}

impl<T: Scalar> BasketSpec<T> {
    pub fn d(&self) -> usize {
        self.spots.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.spots.is_empty() || self.spots.len() != self.vols.len() {
            return Err(Error::Config("basket needs as many vols as spots (d >= 1)".into()));
        }
        let pos = |x: T| x > T::zero() && x.is_finite();
        if !self.spots.iter().all(|&s| pos(s))
            || !self.vols.iter().all(|&s| pos(s))
            || !pos(self.strike)
            || !pos(self.maturity)
            || !self.rate.is_finite()
        {
            return Err(Error::Config("basket spots, vols, strike and maturity must be positive".into()));
        }
        Ok(())
    }

    /// Parameter vector `(spots, vols)`.
    pub fn params(&self) -> Vec<T> {
        let mut v = self.spots.clone();
        v.extend_from_slice(&self.vols);
        v
    }

    pub fn with_params(&self, rho: &[T]) -> Self {
        let d = self.d();
        Self {
            spots: rho[..d].to_vec(),
            vols: rho[d..2 * d].to_vec(),
            ..self.clone()
        }
    }
}

/// Closed-form price, deltas, vegas and diagonal gammas of the discounted
/// geometric-basket call.
pub fn basket_call_analytic<T: Scalar>(spec: &BasketSpec<T>) -> BasketGreeks<T> {
    let d = T::of_usize(spec.d());
    let t = spec.maturity;
    let sq_t = t.sqrt();
    let disc = (-spec.rate * t).exp();
    let sum_s2: T = spec.vols.iter().map(|&s| s * s).sum();
    let sig_g = sum_s2.sqrt() / d;
    let v = sig_g * sq_t;
    let ln_g0: T = spec.spots.iter().map(|&s| s.ln()).sum::<T>() / d;
    let mu: T = spec.vols.iter().map(|&s| spec.rate - s * s / T::of(2.0)).sum::<T>() / d;
    let fwd = (ln_g0 + mu * t + v * v / T::of(2.0)).exp();
    let d1 = ((fwd / spec.strike).ln() + v * v / T::of(2.0)) / v;
    let d2 = d1 - v;
    let (nd1, pd1) = (norm_cdf(d1), norm_pdf(d1));
    let price = disc * (fwd * nd1 - spec.strike * norm_cdf(d2));
    let delta = spec.spots.iter().map(|&s| disc * nd1 * fwd / (d * s)).collect();
    let gamma = spec
        .spots
        .iter()
        .map(|&s| disc * fwd / (d * s * s) * (pd1 / (v * d) + nd1 * (T::one() / d - T::one())))
        .collect();
    let vega = spec
        .vols
        .iter()
        .map(|&s| {
            let dfwd = fwd * (-t * s / d + t * s / (d * d));
            let dv = sq_t * s / (d * d * sig_g);
            disc * (nd1 * dfwd + fwd * pd1 * dv)
        })
        .collect();
    BasketGreeks {
        price,
        delta,
        vega,
        gamma,
    }
}

/// Discounted payoff of the basket call for one set of standard normal
/// drivers `z` (one per asset).
pub fn basket_payoff<T: Scalar>(spec: &BasketSpec<T>, z: &[T]) -> T {
    let t = spec.maturity;
    let sq_t = t.sqrt();
    let d = T::of_usize(spec.d());
    let mut ln_g = T::zero();
    for ((&s, &sig), &zi) in spec.spots.iter().zip(&spec.vols).zip(z) {
        ln_g += s.ln() + (spec.rate - sig * sig / T::of(2.0)) * t + sig * sq_t * zi;
    }
    let g = (ln_g / d).exp();
    (-spec.rate * t).exp() * (g - spec.strike).max(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;

    #[test]
    fn zc_trivial_cases() {
        assert_eq!(zc_bond_price(0.1, 0.03, 0.01, 0.02, 0.0), 1.0);
        let p = zc_bond_price(0.0, 0.05, 0.0, 0.05, 3.0);
        assert!((p - (-0.15f64).exp()).abs() < 1e-15);
        // r = b with zero vol stays at b for any speed.
        let p = zc_bond_price(0.3, 0.04, 0.0, 0.04, 2.0);
        assert!((p - (-0.08f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn zc_matches_textbook_formula() {
        let (a, b, s, r, t) = (0.1f64, 0.03, 0.01, 0.02, 5.0);
        let bb = (1.0 - (-a * t).exp()) / a;
        let ln_a = (bb - t) * (a * a * b - s * s / 2.0) / (a * a) - s * s * bb * bb / (4.0 * a);
        let expect = (ln_a - bb * r).exp();
        assert!((zc_bond_price(a, b, s, r, t) - expect).abs() < 1e-14);
        // Series branch (a t < 1e-3) against the same textbook formula.
        let a = 1.9e-4;
        let bb = (1.0 - (-a * t).exp()) / a;
        let ln_a = (bb - t) * (a * a * b - s * s / 2.0) / (a * a) - s * s * bb * bb / (4.0 * a);
        let expect = (ln_a - bb * r).exp();
        assert!((zc_bond_price(a, b, s, r, t) - expect).abs() < 1e-9);
    }

    #[test]
    fn zc_f32() {
        let p = zc_bond_price(0.1f32, 0.03, 0.01, 0.02, 5.0);
        let q = zc_bond_price(0.1f64, 0.03, 0.01, 0.02, 5.0);
        assert!((p as f64 - q).abs() < 1e-6);
    }

    #[test]
    fn cir_limits() {
        // nu = 0: deterministic intensity alpha + (g - alpha) e^{-delta s}.
        let (al, de, g, t) = (0.03f64, 0.5, 0.02, 4.0);
        let integral = al * t + (g - al) * (1.0 - (-de * t).exp()) / de;
        assert!((cir_survival(al, de, 0.0, g, t) - (-integral).exp()).abs() < 1e-14);
        // Continuity in nu.
        let s0 = cir_survival(al, de, 1e-9, g, t);
        assert!((s0 - (-integral).exp()).abs() < 1e-12);
        // Textbook formula at a regular point.
        let nu: f64 = 0.1;
        let h = (de * de + 2.0 * nu * nu).sqrt();
        let e = (h * t).exp();
        let den = (h + de) * (e - 1.0) + 2.0 * h;
        let bb = 2.0 * (e - 1.0) / den;
        let aa = (2.0 * h * ((h + de) * t / 2.0).exp() / den).powf(2.0 * de * al / (nu * nu));
        assert!((cir_survival(al, de, nu, g, t) - aa * (-bb * g).exp()).abs() < 1e-13);
        // delta = nu = 0: flat intensity.
        assert!((cir_survival(0.0, 0.0, 0.0, 0.05, 2.0) - (-0.1f64).exp()).abs() < 1e-15);
    }

    fn lab_swap(payer: bool) -> Swap {
        let p = ModelParams::desk_lab();
        let mut s = Swap {
            economy: 1,
            counterparty: 0,
            notional: 5000.0,
            maturity: 4.0,
            strike: 0.0,
            freq: 2,
            payer,
        };
        s.strike = s.par_strike(&p);
        s
    }

    #[test]
    fn swap_at_par_and_antisymmetric() {
        let p = ModelParams::desk_lab();
        let pay = lab_swap(true);
        let rec = lab_swap(false);
        assert!(swap_value(&pay, p.r0[1], 1.0, &p, 0.0).abs() < 1e-9);
        let (r, fx) = (0.05, 1.3);
        let v = swap_value(&pay, r, fx, &p, 1.3) + swap_value(&rec, r, fx, &p, 1.3);
        assert!(v.abs() < 1e-12);
        let mut zero = pay.clone();
        zero.notional = 0.0;
        assert_eq!(swap_value(&zero, r, fx, &p, 1.3), 0.0);
    }

    #[test]
    fn portfolio_is_at_par() {
        let p = ModelParams::desk_lab();
        let grid = SimGrid::default();
        let spec = PortfolioSpec {
            count: 200,
            ..Default::default()
        };
        let swaps = generate_portfolio(&spec, &p, &grid, &mut make_stream(1, 0)).unwrap();
        assert_eq!(swaps.len(), 200);
        for s in &swaps {
            let fx = if s.economy == 0 { 1.0 } else { p.fx0[s.economy - 1] };
            let v = swap_value(s, p.r0[s.economy], fx, &p, 0.0);
            assert!(v.abs() < 1e-8 * s.notional);
            assert!(s.maturity <= 10.0 + 1e-12);
        }
        let again = generate_portfolio(&spec, &p, &grid, &mut make_stream(1, 0)).unwrap();
        assert_eq!(swaps, again);
    }

    #[test]
    fn kernel_matches_swap_by_swap_valuation() {
        let p = ModelParams::desk_lab();
        let grid = SimGrid { n: 100, h: 0.1, substeps: 2 };
        let spec = PortfolioSpec {
            count: 30,
            ..Default::default()
        };
        let swaps = generate_portfolio(&spec, &p, &grid, &mut make_stream(2, 0)).unwrap();
        let kernel = ExposureKernel::new(&swaps, 3, 2, &grid).unwrap();
        let cfg = crate::engine::EngineConfig::new(grid);
        let layout = FactorLayout::of(&p);
        let mut buf = PathBuf::new(layout, &grid);
        let mut st = crate::engine::PathStreams::for_path(4, 0);
        crate::engine::simulate_path(&p, &cfg, &mut st, &mut buf);
        let mut mtm = vec![0.0; 101 * 2];
        kernel.mtm(&p, &buf, &mut mtm);
        for j in [0usize, 7, 35, 99] {
            let f = buf.factors(j);
            for c in 0..2 {
                let direct: f64 = swaps
                    .iter()
                    .filter(|s| s.counterparty == c)
                    .map(|s| {
                        let fx = if s.economy == 0 { 1.0 } else { f[layout.fx(s.economy)] };
                        swap_value(s, f[s.economy], fx, &p, grid.time(j))
                    })
                    .sum();
                assert!((mtm[j * 2 + c] - direct).abs() < 1e-8, "j={j} c={c}");
            }
        }
        // Aggregated exposures vanish at time 0.
        assert!(mtm[0].abs() < 1e-7 && mtm[1].abs() < 1e-7);
    }

    #[test]
    fn instrument_counts_and_par() {
        let p = ModelParams::full_lab();
        let set = InstrumentSet::standard(&p).unwrap();
        assert_eq!(set.count(), 256);
        let d = ModelParams::desk_lab();
        let set = InstrumentSet::standard(&d).unwrap();
        assert_eq!(set.count(), 70);
        let z0 = set.prices_at_zero(&d);
        for i in 50..70 {
            assert!(z0[i].abs() < 1e-15, "cds {i} upfront {}", z0[i]);
        }
        assert_eq!(set.name(0), "zc[0]@0.01");
        assert_eq!(set.name(42), "fx[1]@0.01");
        assert_eq!(set.name(50), "cds[1]@1");
    }

    #[test]
    fn fx_forward_parity_with_equal_curves() {
        let mut p = ModelParams::desk_lab();
        p.a[1] = p.a[0];
        p.b[1] = p.b[0];
        p.sigma_r[1] = p.sigma_r[0];
        p.r0[1] = p.r0[0];
        let set = InstrumentSet::standard(&p).unwrap();
        let z = set.prices_at_zero(&p);
        for i in 42..46 {
            assert!((z[i] - p.fx0[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn short_zc_bounds() {
        let p = ModelParams::desk_lab();
        let set = InstrumentSet::standard(&p).unwrap();
        let z = set.prices_at_zero(&p);
        for e in 0..3 {
            let r = p.r0[e];
            let v = z[e * 14];
            assert!(v < (-0.01 * (r - 0.01)).exp() && v > (-0.01 * (r + 0.01)).exp());
        }
    }

    #[test]
    fn basket_scalar_case() {
        let spec = BasketSpec {
            spots: vec![100.0f64],
            vols: vec![0.2],
            rate: 0.0,
            strike: 100.0,
            maturity: 1.0,
        };
        let g = basket_call_analytic(&spec);
        assert!((g.delta[0] - 0.539_827_837_277_029).abs() < 1e-12);
        // Black-Scholes at the money, r = 0: vega = S phi(d1) sqrt(T).
        let vega = 100.0 * norm_pdf(0.1f64);
        assert!((g.vega[0] - vega).abs() < 1e-10);
        let gamma = norm_pdf(0.1f64) / (100.0 * 0.2);
        assert!((g.gamma[0] - gamma).abs() < 1e-12);
    }

    #[test]
    fn basket_deep_in_the_money() {
        let spec = BasketSpec {
            spots: vec![90.0f64, 100.0, 110.0],
            vols: vec![0.2, 0.25, 0.3],
            rate: 0.01,
            strike: 1e-6,
            maturity: 1.0,
        };
        let g = basket_call_analytic(&spec);
        for i in 0..3 {
            let approx = g.price / (3.0 * spec.spots[i]);
            assert!((g.delta[i] - approx).abs() < 1e-8);
        }
    }

    #[test]
    fn basket_greeks_match_finite_differences() {
        let spec = BasketSpec {
            spots: vec![90.0f64, 100.0, 110.0],
            vols: vec![0.2, 0.25, 0.3],
            rate: 0.02,
            strike: 95.0,
            maturity: 1.5,
        };
        let g = basket_call_analytic(&spec);
        let rho = spec.params();
        let price = |r: &[f64]| basket_call_analytic(&spec.with_params(r)).price;
        for k in 0..6 {
            let hk = 1e-4 * rho[k];
            let mut up = rho.clone();
            let mut dn = rho.clone();
            up[k] += hk;
            dn[k] -= hk;
            let fd = (price(&up) - price(&dn)) / (2.0 * hk);
            let exact = if k < 3 { g.delta[k] } else { g.vega[k - 3] };
            assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1.0), "k={k}");
            if k < 3 {
                let fd2 = (price(&up) - 2.0 * g.price + price(&dn)) / (hk * hk);
                assert!((fd2 - g.gamma[k]).abs() < 1e-4, "gamma k={k}");
            }
        }
    }

    #[test]
    fn basket_price_monotone_and_convex_in_strike() {
        let base = BasketSpec {
            spots: vec![100.0f64, 100.0],
            vols: vec![0.2, 0.3],
            rate: 0.01,
            strike: 100.0,
            maturity: 1.0,
        };
        let price = |k: f64| basket_call_analytic(&BasketSpec { strike: k, ..base.clone() }).price;
        let ks: Vec<f64> = (0..20).map(|i| 60.0 + 4.0 * i as f64).collect();
        let ps: Vec<f64> = ks.iter().map(|&k| price(k)).collect();
        for w in ps.windows(2) {
            assert!(w[1] < w[0]);
        }
        for w in ps.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] > -1e-12);
        }
        let g = basket_call_analytic(&base);
        assert!(g.vega.iter().all(|&v| v > 0.0));
    }
}
