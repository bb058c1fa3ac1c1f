//! Euler simulation of the pricing model and default-time sampling.
//!
//! Diffusive factors per path, in this order:
//! short rates `r[e]` (Vasicek), spot FX `fx[c]` for foreign economies
//! (lognormal, drift by rate differential) and default intensities
//! `gamma[k]` (CIR, full truncation). Factors are recorded at the pricing
//! dates; intensities are recorded as their positive part.
//!
//! A client defaulting in `(jh, (j+1)h]` is stored with default step
//! `j + 1`, so its indicator is 1 from grid date `j + 1` onward. The default
//! step is the first grid step at which `h * sum(gamma)` since the segment
//! start exceeds an independent standard exponential threshold.
//!
//! Simulation is segment-based: a path can be restarted from any recorded
//! grid state with fresh drivers, which is how nested Monte Carlo and twin
//! copies are produced.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix};
use crate::model::{ModelParams, SimGrid};
use crate::rng::{domain, make_stream, RngStream};

/// Default step of a client surviving the whole horizon.
pub const NO_DEFAULT: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FxDrift {
    #[default]
    RateDifferential,
    Zero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Every path uses the same parameters.
    #[default]
    Baseline,
    /// Initial factors fixed, exogenous parameters randomized.
    Risk,
    /// Everything randomized.
    Sensis,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub grid: SimGrid,
    pub fx_drift: FxDrift,
    /// Lower Cholesky factor of the driver correlation, if any.
    chol: Option<Matrix<f64>>,
}

impl EngineConfig {
    pub fn new(grid: SimGrid) -> Self {
        Self {
            grid,
            fx_drift: FxDrift::RateDifferential,
            chol: None,
        }
    }

    pub fn with_fx_drift(mut self, d: FxDrift) -> Self {
        self.fx_drift = d;
        self
    }

    /// Correlates the Brownian drivers (factor order: rates, FX, intensities).
    pub fn with_correlation(mut self, corr: &Matrix<f64>) -> Result<Self> {
        self.chol = Some(cholesky(corr).map_err(|e| {
            Error::Config(format!("driver correlation is not positive definite: {e}"))
        })?);
        Ok(self)
    }

    pub fn correlation_factor(&self) -> Option<&Matrix<f64>> {
        self.chol.as_ref()
    }
}

/// Index helpers for the factor vector of a model with `E` economies and
/// `C` clients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FactorLayout {
    pub economies: usize,
    pub clients: usize,
}

impl FactorLayout {
    pub fn of(p: &ModelParams) -> Self {
        Self {
            economies: p.economies(),
            clients: p.clients(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.economies - 1 + self.clients
    }

    #[inline]
    pub fn rate(&self, e: usize) -> usize {
        e
    }

    /// FX of foreign economy `c` in `1..E`.
    #[inline]
    pub fn fx(&self, c: usize) -> usize {
        self.economies + c - 1
    }

    #[inline]
    pub fn gamma(&self, k: usize) -> usize {
        2 * self.economies - 1 + k
    }

    pub fn initial(&self, p: &ModelParams) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.dim());
        y.extend_from_slice(&p.r0);
        y.extend_from_slice(&p.fx0);
        y.extend(p.gamma0.iter().map(|g| g.max(0.0)));
        y
    }
}

/// Per-path driver streams.
#[derive(Clone, Debug)]
pub struct PathStreams {
    pub diffusion: RngStream,
    pub defaults: RngStream,
}

impl PathStreams {
    /// Streams of path `j` of a simulation seeded with `seed`.
    pub fn for_path(seed: u64, j: usize) -> Self {
        Self {
            diffusion: make_stream(seed, domain::DIFFUSION | j as u64),
            defaults: make_stream(seed, domain::DEFAULTS | j as u64),
        }
    }

    pub fn from_ids(seed: u64, diffusion_id: u64, defaults_id: u64) -> Self {
        Self {
            diffusion: make_stream(seed, diffusion_id),
            defaults: make_stream(seed, defaults_id),
        }
    }
}

/// One simulated path: factors on grid dates `0..=n` and default steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBuf {
    pub dim: usize,
    pub y: Vec<f64>,
    pub default_step: Vec<u32>,
}

impl PathBuf {
    pub fn new(layout: FactorLayout, grid: &SimGrid) -> Self {
        Self {
            dim: layout.dim(),
            y: vec![0.0; (grid.n + 1) * layout.dim()],
            default_step: vec![NO_DEFAULT; layout.clients],
        }
    }

    #[inline]
    pub fn factors(&self, i: usize) -> &[f64] {
        &self.y[i * self.dim..(i + 1) * self.dim]
    }

    /// Default indicator of client `k` at grid date `i`.
    #[inline]
    pub fn defaulted(&self, i: usize, k: usize) -> bool {
        (self.default_step[k] as usize) <= i
    }
}

/// Advances factors by one Euler substep of length `dt`.
#[inline]
fn euler_substep(
    p: &ModelParams,
    layout: FactorLayout,
    fx_drift: FxDrift,
    dt: f64,
    sq: f64,
    z: &[f64],
    r: &mut [f64],
    lnfx: &mut [f64],
    g: &mut [f64],
) {
    let e_n = layout.economies;
    if e_n > 1 {
        let r_dom = r[0];
        for c in 1..e_n {
            let s = p.sigma_fx[c - 1];
            let mu = match fx_drift {
                FxDrift::RateDifferential => r_dom - r[c],
                FxDrift::Zero => 0.0,
            };
            lnfx[c - 1] += (mu - 0.5 * s * s) * dt + s * sq * z[layout.fx(c)];
        }
    }
    for e in 0..e_n {
        r[e] += p.a[e] * (p.b[e] - r[e]) * dt + p.sigma_r[e] * sq * z[e];
    }
    for k in 0..layout.clients {
        let gp = g[k].max(0.0);
        g[k] += p.delta[k] * (p.alpha[k] - gp) * dt + p.nu[k] * gp.sqrt() * sq * z[layout.gamma(k)];
    }
}

/// Simulates grid dates `start+1..=n` of `buf` from the factor state at
/// `start` (already in `buf`) and the default state inherited in
/// `buf.default_step` (clients with a step `<= start` stay defaulted, the
/// others get fresh exponential thresholds).
pub fn simulate_from(
    p: &ModelParams,
    cfg: &EngineConfig,
    start: usize,
    streams: &mut PathStreams,
    buf: &mut PathBuf,
) {
    simulate_range(p, cfg, start, cfg.grid.n, streams, buf)
}

/// [`simulate_from`] stopping at grid date `end`. Defaults are only
/// resolved up to `end`; later dates of `buf` are left untouched.
pub fn simulate_range(
    p: &ModelParams,
    cfg: &EngineConfig,
    start: usize,
    end: usize,
    streams: &mut PathStreams,
    buf: &mut PathBuf,
) {
    let layout = FactorLayout::of(p);
    let grid = cfg.grid;
    let dim = layout.dim();
    let e_n = layout.economies;
    let c_n = layout.clients;
    let y0 = buf.factors(start).to_vec();
    let mut r: Vec<f64> = y0[..e_n].to_vec();
    let mut lnfx: Vec<f64> = y0[e_n..2 * e_n - 1].iter().map(|x| x.ln()).collect();
    let mut g: Vec<f64> = y0[2 * e_n - 1..].to_vec();

    // Default thresholds, drawn up front so the default stream does not
    // depend on the diffusion draws.
    let mut threshold = vec![f64::INFINITY; c_n];
    let mut cum = vec![0.0; c_n];
    for k in 0..c_n {
        let alive = (buf.default_step[k] as usize) > start;
        let th = streams.defaults.exponential();
        if alive {
            threshold[k] = th;
            buf.default_step[k] = NO_DEFAULT;
        }
    }

    let dt = grid.h / grid.substeps as f64;
    let sq = dt.sqrt();
    let mut w = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    for i in start..end.min(grid.n) {
        // Defaults in (ih, (i+1)h] from the intensity recorded at ih.
        for k in 0..c_n {
            if buf.default_step[k] == NO_DEFAULT {
                cum[k] += grid.h * buf.y[i * dim + layout.gamma(k)];
                if cum[k] >= threshold[k] {
                    buf.default_step[k] = (i + 1) as u32;
                }
            }
        }
        for _ in 0..grid.substeps {
            streams.diffusion.fill_normal(&mut w);
            let zz: &[f64] = match &cfg.chol {
                Some(l) => {
                    for (a, zi) in z.iter_mut().enumerate() {
                        *zi = crate::linalg::dot(&l.row(a)[..=a], &w[..=a]);
                    }
                    &z
                }
                None => &w,
            };
            euler_substep(p, layout, cfg.fx_drift, dt, sq, zz, &mut r, &mut lnfx, &mut g);
        }
        let row = &mut buf.y[(i + 1) * dim..(i + 2) * dim];
        row[..e_n].copy_from_slice(&r);
        for c in 1..e_n {
            row[layout.fx(c)] = lnfx[c - 1].exp();
        }
        for k in 0..c_n {
            row[layout.gamma(k)] = g[k].max(0.0);
        }
    }
}

/// Simulates one full path from the parameters' initial values.
pub fn simulate_path(p: &ModelParams, cfg: &EngineConfig, streams: &mut PathStreams, buf: &mut PathBuf) {
    let layout = FactorLayout::of(p);
    let init = layout.initial(p);
    buf.y[..layout.dim()].copy_from_slice(&init);
    buf.default_step.fill(NO_DEFAULT);
    simulate_from(p, cfg, 0, streams, buf);
}

/// Default steps from an intensity path given exponential thresholds:
/// client `k` defaults at the first step `j + 1` such that
/// `h * sum_{i <= j} gamma_i >= threshold_k`.
pub fn default_step_from_intensity(gamma: &[f64], h: f64, threshold: f64) -> u32 {
    let mut cum = 0.0;
    for (j, &g) in gamma.iter().enumerate() {
        cum += h * g.max(0.0);
        if cum >= threshold {
            return (j + 1) as u32;
        }
    }
    NO_DEFAULT
}

/// Samples default steps for intensity paths `gamma[path][client][step]`
/// (steps `0..n`) with thresholds from the per-path default streams.
pub fn sample_defaults(gamma: &[Vec<Vec<f64>>], grid: &SimGrid, seed: u64) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::with_capacity(gamma.len());
    for (j, clients) in gamma.iter().enumerate() {
        let mut s = make_stream(seed, domain::DEFAULTS | j as u64);
        let mut steps = Vec::with_capacity(clients.len());
        for g in clients {
            if g.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::Config(format!("path {j}: negative or non-finite intensity")));
            }
            let n = g.len().min(grid.n);
            steps.push(default_step_from_intensity(&g[..n], grid.h, s.exponential()));
        }
        out.push(steps);
    }
    Ok(out)
}

/// Parameters for a set of paths.
#[derive(Clone, Copy, Debug)]
pub enum ParamSource<'a> {
    Shared(&'a ModelParams),
    PerPath(&'a [ModelParams]),
}

impl<'a> ParamSource<'a> {
    #[inline]
    pub fn get(&self, j: usize) -> &'a ModelParams {
        match self {
            ParamSource::Shared(p) => p,
            ParamSource::PerPath(ps) => &ps[j],
        }
    }

    fn first(&self) -> Option<&'a ModelParams> {
        match self {
            ParamSource::Shared(p) => Some(p),
            ParamSource::PerPath(ps) => ps.first(),
        }
    }
}

/// Simulated paths kept in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    pub grid: SimGrid,
    pub layout: FactorLayout,
    /// `paths x (n+1) x dim` factors.
    pub y: Vec<f64>,
    /// `paths x C` default steps.
    pub default_step: Vec<u32>,
    /// One entry in baseline mode, one per path otherwise.
    pub params: Vec<ModelParams>,
}

impl PathSet {
    pub fn paths(&self) -> usize {
        self.default_step.len() / self.layout.clients.max(1)
    }

    pub fn params_of(&self, j: usize) -> &ModelParams {
        if self.params.len() == 1 {
            &self.params[0]
        } else {
            &self.params[j]
        }
    }

    #[inline]
    pub fn factors(&self, j: usize, i: usize) -> &[f64] {
        let d = self.layout.dim();
        let off = (j * (self.grid.n + 1) + i) * d;
        &self.y[off..off + d]
    }

    pub fn rate(&self, j: usize, i: usize, e: usize) -> f64 {
        self.factors(j, i)[self.layout.rate(e)]
    }

    /// Spot FX of economy `c`; economy 0 has FX 1.
    pub fn fx(&self, j: usize, i: usize, c: usize) -> f64 {
        if c == 0 {
            1.0
        } else {
            self.factors(j, i)[self.layout.fx(c)]
        }
    }

    pub fn gamma(&self, j: usize, i: usize, k: usize) -> f64 {
        self.factors(j, i)[self.layout.gamma(k)]
    }

    pub fn default_step(&self, j: usize, k: usize) -> u32 {
        self.default_step[j * self.layout.clients + k]
    }

    /// Default indicator `X` of client `k` at grid date `i`.
    pub fn x(&self, j: usize, i: usize, k: usize) -> u8 {
        u8::from(self.default_step(j, k) as usize <= i)
    }

    /// Default time of client `k` (end of the default step), if any.
    pub fn tau(&self, j: usize, k: usize) -> Option<f64> {
        let s = self.default_step(j, k);
        (s != NO_DEFAULT).then_some(s as f64 * self.grid.h)
    }

    /// Path `j` as a standalone buffer.
    pub fn path(&self, j: usize) -> PathBuf {
        let d = self.layout.dim();
        let len = (self.grid.n + 1) * d;
        let c = self.layout.clients;
        PathBuf {
            dim: d,
            y: self.y[j * len..(j + 1) * len].to_vec(),
            default_step: self.default_step[j * c..(j + 1) * c].to_vec(),
        }
    }
}

fn check_mode(params: &ParamSource<'_>, paths: usize, mode: SimMode) -> Result<()> {
    let first = params
        .first()
        .ok_or_else(|| Error::Dimension("no parameters supplied".into()))?;
    if let ParamSource::PerPath(ps) = params {
        if ps.len() != paths {
            return Err(Error::Dimension(format!(
                "{} parameter sets for {paths} paths",
                ps.len()
            )));
        }
        let shape = (first.economies(), first.clients());
        for (j, p) in ps.iter().enumerate() {
            if (p.economies(), p.clients()) != shape {
                return Err(Error::Dimension(format!("path {j}: parameter shape differs")));
            }
            match mode {
                SimMode::Baseline if p != first => {
                    return Err(Error::Config(format!(
                        "baseline mode requires identical parameters (path {j} differs)"
                    )))
                }
                SimMode::Risk
                    if p.r0 != first.r0 || p.fx0 != first.fx0 || p.gamma0 != first.gamma0 =>
                {
                    return Err(Error::Config(format!(
                        "risk mode requires fixed initial factors (path {j} differs)"
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Simulates `paths` full paths, path `j` driven by
/// [`PathStreams::for_path`]`(seed, j)`. Output does not depend on the
/// rayon worker count.
pub fn simulate_paths(
    params: ParamSource<'_>,
    cfg: &EngineConfig,
    seed: u64,
    paths: usize,
    mode: SimMode,
) -> Result<PathSet> {
    cfg.grid.validate()?;
    check_mode(&params, paths, mode)?;
    let first = params.first().expect("checked above");
    first.validate()?;
    let layout = FactorLayout::of(first);
    let bufs: Vec<PathBuf> = (0..paths)
        .into_par_iter()
        .map(|j| {
            let mut buf = PathBuf::new(layout, &cfg.grid);
            let mut st = PathStreams::for_path(seed, j);
            simulate_path(params.get(j), cfg, &mut st, &mut buf);
            buf
        })
        .collect();
    let mut y = Vec::with_capacity(paths * (cfg.grid.n + 1) * layout.dim());
    let mut default_step = Vec::with_capacity(paths * layout.clients);
    for b in bufs {
        y.extend_from_slice(&b.y);
        default_step.extend_from_slice(&b.default_step);
    }
    let stored = match params {
        ParamSource::Shared(p) => vec![p.clone()],
        ParamSource::PerPath(ps) => ps.to_vec(),
    };
    Ok(PathSet {
        grid: cfg.grid,
        layout,
        y,
        default_step,
        params: stored,
    })
}

/// Magic header of the binary path dump.
pub const PATHS_MAGIC: &[u8; 16] = b"XVASENSI-PATHS01";

/// Columnar little-endian dump: magic, then `u64` paths, steps+1, dim,
/// clients, then the factor columns (`dim` columns of `paths x (n+1)`
/// values each) and the default steps.
pub fn write_paths(set: &PathSet, mut w: impl std::io::Write) -> Result<()> {
    w.write_all(PATHS_MAGIC)?;
    let paths = set.paths();
    let steps = set.grid.n + 1;
    let dim = set.layout.dim();
    for v in [paths, steps, dim, set.layout.clients] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&set.grid.h.to_le_bytes())?;
    w.write_all(&(set.grid.substeps as u64).to_le_bytes())?;
    w.write_all(&(set.layout.economies as u64).to_le_bytes())?;
    for d in 0..dim {
        for j in 0..paths {
            for i in 0..steps {
                w.write_all(&set.factors(j, i)[d].to_le_bytes())?;
            }
        }
    }
    for s in &set.default_step {
        w.write_all(&s.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a dump written by [`write_paths`]. Parameters are not part of
/// the dump and must be supplied.
pub fn read_paths(mut r: impl std::io::Read, params: Vec<ModelParams>) -> Result<PathSet> {
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)?;
    if &magic != PATHS_MAGIC {
        return Err(Error::Serde("not a path dump (bad magic)".into()));
    }
    let mut u = || -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let paths = u()? as usize;
    let steps = u()? as usize;
    let dim = u()? as usize;
    let clients = u()? as usize;
    let h = f64::from_bits(u()?);
    let substeps = u()? as usize;
    let economies = u()? as usize;
    let layout = FactorLayout { economies, clients };
    if layout.dim() != dim || steps == 0 {
        return Err(Error::Serde("inconsistent path dump header".into()));
    }
    let mut y = vec![0.0; paths * steps * dim];
    for d in 0..dim {
        for j in 0..paths {
            for i in 0..steps {
                y[(j * steps + i) * dim + d] = f64::from_bits(u()?);
            }
        }
    }
    let mut default_step = vec![0u32; paths * clients];
    for s in default_step.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *s = u32::from_le_bytes(b);
    }
    Ok(PathSet {
        grid: SimGrid {
            n: steps - 1,
            h,
            substeps,
        },
        layout,
        y,
        default_step,
        params,
    })
}
