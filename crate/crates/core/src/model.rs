//! Pricing-model parameters and the simulation grid.
//!
//! The flat parameter vector is laid out group by group:
//! `r0[E] fx0[E-1] gamma0[C] a[E] b[E] sigma_r[E] sigma_fx[E-1] alpha[C]
//! delta[C] nu[C]`. The first three groups are the initial values of the
//! diffusive factors, the rest are the exogenous dynamics parameters.
//! Foreign economies are numbered `1..E`, economy 0 is the reference one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    R0,
    Fx0,
    Gamma0,
    A,
    B,
    SigmaR,
    SigmaFx,
    Alpha,
    Delta,
    Nu,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 10] = [
        ParamGroup::R0,
        ParamGroup::Fx0,
        ParamGroup::Gamma0,
        ParamGroup::A,
        ParamGroup::B,
        ParamGroup::SigmaR,
        ParamGroup::SigmaFx,
        ParamGroup::Alpha,
        ParamGroup::Delta,
        ParamGroup::Nu,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ParamGroup::R0 => "r0",
            ParamGroup::Fx0 => "fx0",
            ParamGroup::Gamma0 => "gamma0",
            ParamGroup::A => "a",
            ParamGroup::B => "b",
            ParamGroup::SigmaR => "sigma_r",
            ParamGroup::SigmaFx => "sigma_fx",
            ParamGroup::Alpha => "alpha",
            ParamGroup::Delta => "delta",
            ParamGroup::Nu => "nu",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.key() == key)
    }

    /// Initial value of a diffusive factor (as opposed to an exogenous
    /// dynamics parameter).
    pub fn is_initial_condition(self) -> bool {
        matches!(self, ParamGroup::R0 | ParamGroup::Fx0 | ParamGroup::Gamma0)
    }

    /// Volatility parameters, frozen in calibration.
    pub fn is_volatility(self) -> bool {
        matches!(self, ParamGroup::SigmaR | ParamGroup::SigmaFx | ParamGroup::Nu)
    }

    /// Index of the first entry (economy 1 for FX groups, client 1 for
    /// credit groups) used in parameter names.
    fn first_label(self) -> usize {
        match self {
            ParamGroup::Fx0 | ParamGroup::SigmaFx => 1,
            ParamGroup::Gamma0 | ParamGroup::Alpha | ParamGroup::Delta | ParamGroup::Nu => 1,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub r0: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma_r: Vec<f64>,
    pub fx0: Vec<f64>,
    pub sigma_fx: Vec<f64>,
    pub gamma0: Vec<f64>,
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub nu: Vec<f64>,
}

impl ModelParams {
    pub fn economies(&self) -> usize {
        self.r0.len()
    }

    pub fn clients(&self) -> usize {
        self.gamma0.len()
    }

    /// Parameter count `4E + 2(E-1) + 4C`.
    pub fn dim(&self) -> usize {
        layout_dim(self.economies(), self.clients())
    }

    /// Diffusive factor count `E + (E-1) + C`.
    pub fn factor_dim(&self) -> usize {
        2 * self.economies() - 1 + self.clients()
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::R0 => &self.r0,
            ParamGroup::Fx0 => &self.fx0,
            ParamGroup::Gamma0 => &self.gamma0,
            ParamGroup::A => &self.a,
            ParamGroup::B => &self.b,
            ParamGroup::SigmaR => &self.sigma_r,
            ParamGroup::SigmaFx => &self.sigma_fx,
            ParamGroup::Alpha => &self.alpha,
            ParamGroup::Delta => &self.delta,
            ParamGroup::Nu => &self.nu,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut Vec<f64> {
        match g {
            ParamGroup::R0 => &mut self.r0,
            ParamGroup::Fx0 => &mut self.fx0,
            ParamGroup::Gamma0 => &mut self.gamma0,
            ParamGroup::A => &mut self.a,
            ParamGroup::B => &mut self.b,
            ParamGroup::SigmaR => &mut self.sigma_r,
            ParamGroup::SigmaFx => &mut self.sigma_fx,
            ParamGroup::Alpha => &mut self.alpha,
            ParamGroup::Delta => &mut self.delta,
            ParamGroup::Nu => &mut self.nu,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        for g in ParamGroup::ALL {
            v.extend_from_slice(self.group(g));
        }
        v
    }

    /// Rebuilds parameters with the shape of `self` from a flat vector.
    pub fn with_vec(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.dim(), "parameter vector length");
        let mut out = self.clone();
        let mut at = 0;
        for g in ParamGroup::ALL {
            let dst = out.group_mut(g);
            let n = dst.len();
            dst.copy_from_slice(&v[at..at + n]);
            at += n;
        }
        out
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.economies(), self.clients())
    }

    /// Checks shapes and signs. Returns the list of warnings (Feller
    /// condition violations) on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        let e = self.economies();
        let c = self.clients();
        if e == 0 {
            return Err(Error::Config("at least one economy is required".into()));
        }
        for g in ParamGroup::ALL {
            let want = match g {
                ParamGroup::R0 | ParamGroup::A | ParamGroup::B | ParamGroup::SigmaR => e,
                ParamGroup::Fx0 | ParamGroup::SigmaFx => e - 1,
                _ => c,
            };
            let got = self.group(g).len();
            if got != want {
                return Err(Error::Config(format!(
                    "{} has {got} entries, expected {want}",
                    g.key()
                )));
            }
            if self.group(g).iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("{} has non-finite entries", g.key())));
            }
        }
        let positive = |g: ParamGroup, strict: bool| -> Result<()> {
            for (i, &x) in self.group(g).iter().enumerate() {
                if x < 0.0 || (strict && x == 0.0) {
                    return Err(Error::Config(format!(
                        "{}[{}] = {x} must be {}",
                        g.key(),
                        i + g.first_label(),
                        if strict { "positive" } else { "nonnegative" }
                    )));
                }
            }
            Ok(())
        };
        positive(ParamGroup::Fx0, true)?;
        positive(ParamGroup::Gamma0, false)?;
        positive(ParamGroup::SigmaR, false)?;
        positive(ParamGroup::SigmaFx, false)?;
        positive(ParamGroup::Nu, false)?;
        positive(ParamGroup::Delta, false)?;
        positive(ParamGroup::A, false)?;
        positive(ParamGroup::Alpha, false)?;
        let mut warnings = Vec::new();
        for k in 0..c {
            let lhs = 2.0 * self.delta[k] * self.alpha[k];
            let rhs = self.nu[k] * self.nu[k];
            if lhs < rhs {
                warnings.push(format!(
                    "client {}: Feller condition 2 delta alpha = {lhs:.3e} < nu^2 = {rhs:.3e}",
                    k + 1
                ));
            }
        }
        Ok(warnings)
    }

    /// Sets one entry by its config key, e.g. `"r0[2]"` or `"fx0[1]"`.
    pub fn set_by_key(&mut self, key: &str, value: f64) -> Result<()> {
        let (g, idx) = parse_key(key)?;
        let first = g.first_label();
        let vec = self.group_mut(g);
        if idx < first || idx - first >= vec.len() {
            return Err(Error::Config(format!("parameter index out of range: {key}")));
        }
        vec[idx - first] = value;
        Ok(())
    }

    pub fn get_by_key(&self, key: &str) -> Result<f64> {
        let (g, idx) = parse_key(key)?;
        let first = g.first_label();
        self.group(g)
            .get(idx.wrapping_sub(first))
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter index out of range: {key}")))
    }

    /// Reduced lab with `E = 3` economies and `C = 2` clients, moderately
    /// stressed credit.
    pub fn desk_lab() -> Self {
        Self {
            r0: vec![0.02, 0.03, 0.015],
            a: vec![0.10, 0.15, 0.20],
            b: vec![0.03, 0.035, 0.025],
            sigma_r: vec![0.010, 0.012, 0.008],
            fx0: vec![1.10, 0.90],
            sigma_fx: vec![0.10, 0.12],
            gamma0: vec![0.02, 0.04],
            alpha: vec![0.03, 0.05],
            delta: vec![0.50, 0.40],
            nu: vec![0.05, 0.07],
        }
    }

    /// Full-size lab with `E = 10` economies and `C = 8` clients
    /// (`p = 90`), with deterministic but heterogeneous values.
    pub fn full_lab() -> Self {
        let e = 10;
        let c = 8;
        let f = |i: usize, lo: f64, hi: f64, n: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
        Self {
            r0: (0..e).map(|i| f(i, 0.01, 0.04, e)).collect(),
            a: (0..e).map(|i| f(i, 0.08, 0.25, e)).collect(),
            b: (0..e).map(|i| f((i + 3) % e, 0.02, 0.045, e)).collect(),
            sigma_r: (0..e).map(|i| f((i + 5) % e, 0.007, 0.015, e)).collect(),
            fx0: (1..e).map(|i| f(i - 1, 0.6, 1.6, e - 1)).collect(),
            sigma_fx: (1..e).map(|i| f((i + 2) % (e - 1), 0.08, 0.15, e - 1)).collect(),
            gamma0: (0..c).map(|i| f(i, 0.01, 0.06, c)).collect(),
            alpha: (0..c).map(|i| f((i + 3) % c, 0.015, 0.07, c)).collect(),
            delta: (0..c).map(|i| f((i + 5) % c, 0.3, 0.8, c)).collect(),
            nu: (0..c).map(|i| f((i + 1) % c, 0.03, 0.08, c)).collect(),
        }
    }
}

fn parse_key(key: &str) -> Result<(ParamGroup, usize)> {
    let bad = || Error::Config(format!("bad parameter key: {key}"));
    let open = key.find('[').ok_or_else(bad)?;
    if !key.ends_with(']') {
        return Err(bad());
    }
    let g = ParamGroup::from_key(&key[..open]).ok_or_else(bad)?;
    let idx: usize = key[open + 1..key.len() - 1].parse().map_err(|_| bad())?;
    Ok((g, idx))
}

pub fn layout_dim(economies: usize, clients: usize) -> usize {
    4 * economies + 2 * (economies - 1) + 4 * clients
}

/// Flat-vector bookkeeping: where each group lives and what each entry is
/// called.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub economies: usize,
    pub clients: usize,
    ranges: Vec<(ParamGroup, std::ops::Range<usize>)>,
}

impl ParamLayout {
    pub fn new(economies: usize, clients: usize) -> Self {
        let mut ranges = Vec::new();
        let mut at = 0;
        for g in ParamGroup::ALL {
            let n = match g {
                ParamGroup::R0 | ParamGroup::A | ParamGroup::B | ParamGroup::SigmaR => economies,
                ParamGroup::Fx0 | ParamGroup::SigmaFx => economies - 1,
                _ => clients,
            };
            ranges.push((g, at..at + n));
            at += n;
        }
        Self {
            economies,
            clients,
            ranges,
        }
    }

    pub fn dim(&self) -> usize {
        self.ranges.last().map_or(0, |(_, r)| r.end)
    }

    pub fn range(&self, g: ParamGroup) -> std::ops::Range<usize> {
        self.ranges
            .iter()
            .find(|(h, _)| *h == g)
            .map(|(_, r)| r.clone())
            .expect("every group has a range")
    }

    pub fn group_of(&self, k: usize) -> ParamGroup {
        self.ranges
            .iter()
            .find(|(_, r)| r.contains(&k))
            .map(|(g, _)| *g)
            .expect("index inside layout")
    }

    pub fn name(&self, k: usize) -> String {
        let g = self.group_of(k);
        let r = self.range(g);
        format!("{}[{}]", g.key(), k - r.start + g.first_label())
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|k| self.name(k)).collect()
    }

    /// Group partition as index lists, in layout order.
    pub fn groups(&self) -> Vec<(ParamGroup, Vec<usize>)> {
        self.ranges
            .iter()
            .filter(|(_, r)| !r.is_empty())
            .map(|(g, r)| (*g, r.clone().collect()))
            .collect()
    }

    /// Indices of the initial conditions `y`.
    pub fn initial_indices(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&k| self.group_of(k).is_initial_condition())
            .collect()
    }

    /// Indices of the exogenous parameters `epsilon`.
    pub fn exogenous_indices(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&k| !self.group_of(k).is_initial_condition())
            .collect()
    }

    /// Indices left free in calibration (volatilities frozen).
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&k| !self.group_of(k).is_volatility())
            .collect()
    }
}

/// Pricing grid: `n` steps of length `h`, each split into `substeps`
/// Euler steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimGrid {
    pub n: usize,
    pub h: f64,
    pub substeps: usize,
}

impl Default for SimGrid {
    fn default() -> Self {
        Self {
            n: 100,
            h: 0.1,
            substeps: 25,
        }
    }
}

impl SimGrid {
    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.substeps == 0 || !(self.h > 0.0) {
            return Err(Error::Config(format!(
                "grid needs n >= 1, substeps >= 1, h > 0 (got n={}, h={}, substeps={})",
                self.n, self.h, self.substeps
            )));
        }
        Ok(())
    }

    /// Grid index of time `t`, if `t` is a grid date.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.h;
        let i = x.round();
        if (x - i).abs() > 1e-9 || i < 0.0 || i as usize > self.n {
            return Err(Error::Config(format!("t = {t} is not on the pricing grid")));
        }
        Ok(i as usize)
    }
}
