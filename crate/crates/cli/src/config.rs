use std::path::Path;

use serde::{Deserialize, Serialize};
use xvasensi::engine::FxDrift;
use xvasensi::hedge::EcConfig;
use xvasensi::jacobian::HessianMode;
use xvasensi::learners::{CondMode, LearnerSpec, TrainConfig};
use xvasensi::model::{ModelParams, SimGrid};
use xvasensi::products::{BasketSpec, PortfolioSpec};
use xvasensi::sensitivities::Method;

use crate::CliError;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub portfolio: PortfolioSection,
    pub experiment: Experiment,
    pub basket: BasketSection,
    pub seeds: Seeds,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

/// A preset with optional per-group overrides.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    pub r0: Option<Vec<f64>>,
    pub a: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
    pub sigma_r: Option<Vec<f64>>,
    pub fx0: Option<Vec<f64>>,
    pub sigma_fx: Option<Vec<f64>>,
    pub gamma0: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub nu: Option<Vec<f64>>,
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelParams, CliError> {
        let mut p = match self.preset {
            Preset::Desk => ModelParams::desk_lab(),
            Preset::Full => ModelParams::full_lab(),
        };
        let set = |dst: &mut Vec<f64>, src: &Option<Vec<f64>>, name: &str| -> Result<(), CliError> {
            if let Some(v) = src {
                if v.len() != dst.len() {
                    return Err(CliError::Config(format!(
                        "model.{name} has {} entries, the preset needs {}",
                        v.len(),
                        dst.len()
                    )));
                }
                dst.clone_from(v);
            }
            Ok(())
        };
        set(&mut p.r0, &self.r0, "r0")?;
        set(&mut p.a, &self.a, "a")?;
        set(&mut p.b, &self.b, "b")?;
        set(&mut p.sigma_r, &self.sigma_r, "sigma_r")?;
        set(&mut p.fx0, &self.fx0, "fx0")?;
        set(&mut p.sigma_fx, &self.sigma_fx, "sigma_fx")?;
        set(&mut p.gamma0, &self.gamma0, "gamma0")?;
        set(&mut p.alpha, &self.alpha, "alpha")?;
        set(&mut p.delta, &self.delta, "delta")?;
        set(&mut p.nu, &self.nu, "nu")?;
        Ok(p)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub h: f64,
    pub substeps: usize,
    pub fx_drift: FxDrift,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = SimGrid::default();
        Self {
            n: g.n,
            h: g.h,
            substeps: g.substeps,
            fx_drift: FxDrift::default(),
        }
    }
}

impl GridSection {
    pub fn grid(&self) -> SimGrid {
        SimGrid {
            n: self.n,
            h: self.h,
            substeps: self.substeps,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioSection {
    pub count: usize,
    pub notional_min: f64,
    pub notional_max: f64,
    pub max_maturity: f64,
    pub freqs: Vec<u32>,
}

impl Default for PortfolioSection {
    fn default() -> Self {
        let s = PortfolioSpec::default();
        Self {
            count: 500,
            notional_min: s.notional_min,
            notional_max: s.notional_max,
            max_maturity: s.max_maturity,
            freqs: s.freqs,
        }
    }
}

impl PortfolioSection {
    pub fn spec(&self) -> PortfolioSpec {
        PortfolioSpec {
            count: self.count,
            notional_min: self.notional_min,
            notional_max: self.notional_max,
            max_maturity: self.max_maturity,
            freqs: self.freqs.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[default]
    Mlp,
    Linear,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub kind: LearnerKind,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Linear learner ridge relative to the mean squared singular value.
    pub ridge_rel: f64,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Mlp,
            hidden: vec![32, 32],
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            ridge_rel: 1e-8,
        }
    }
}

impl LearnerSection {
    pub fn spec(&self, seed: u64) -> LearnerSpec {
        match self.kind {
            LearnerKind::Mlp => LearnerSpec::mlp(&self.hidden, TrainConfig {
                seed,
                ..self.train.clone()
            }),
            LearnerKind::Linear => LearnerSpec::Linear {
                ridge_rel: self.ridge_rel,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HedgeMode {
    Runoff,
    #[default]
    Runon,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hessian {
    #[default]
    GaussNewton,
    FiniteDifference,
}

impl From<Hessian> for HessianMode {
    fn from(h: Hessian) -> Self {
        match h {
            Hessian::GaussNewton => HessianMode::GaussNewton,
            Hessian::FiniteDifference => HessianMode::FiniteDifference,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    pub t: f64,
    pub m: usize,
    pub method: Method,
    pub learn_mode: CondMode,
    pub hedge_mode: HedgeMode,
    pub alpha_levels: Vec<f64>,
    pub bump_rel: f64,
    pub bump_abs_floor: f64,
    pub sigma: f64,
    pub vol_sigma: f64,
    pub ridge_rel: f64,
    pub hedge_ridge_rel: f64,
    pub noise_rel_sd: f64,
    pub hessian: Hessian,
    /// Paths of the sensitivities feeding the bump hedge.
    pub bump_m: usize,
    pub twin_m: usize,
    pub learner: LearnerSection,
    pub ec: EcConfig,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            t: 0.1,
            m: 1 << 14,
            method: Method::Linear,
            learn_mode: CondMode::Risk,
            hedge_mode: HedgeMode::Runon,
            alpha_levels: vec![0.95, 0.975, 0.99],
            bump_rel: 0.01,
            bump_abs_floor: 1e-4,
            sigma: 0.01,
            vol_sigma: 0.05,
            ridge_rel: 1e-8,
            hedge_ridge_rel: 1e-6,
            noise_rel_sd: 0.01,
            hessian: Hessian::GaussNewton,
            bump_m: 1 << 14,
            twin_m: 1 << 14,
            learner: LearnerSection::default(),
            ec: EcConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasketSection {
    pub d: usize,
    pub m: usize,
    pub method: Method,
    /// Defaults spread around 100 and 20%..30% when absent.
    pub spots: Option<Vec<f64>>,
    pub vols: Option<Vec<f64>>,
    pub rate: f64,
    pub strike: f64,
    pub maturity: f64,
    pub bump_rel: f64,
    pub sigma: f64,
    pub vol_sigma: f64,
    pub learner: LearnerSection,
}

impl Default for BasketSection {
    fn default() -> Self {
        Self {
            d: 3,
            m: 100_000,
            method: Method::Benchmark,
            spots: None,
            vols: None,
            rate: 0.01,
            strike: 100.0,
            maturity: 1.0,
            bump_rel: 0.01,
            sigma: 0.01,
            vol_sigma: 0.05,
            learner: LearnerSection::default(),
        }
    }
}

impl BasketSection {
    pub fn spec(&self) -> Result<BasketSpec<f64>, CliError> {
        let d = self.d;
        if d == 0 {
            return Err(CliError::Config("basket.d must be positive".into()));
        }
        let spread = |i: usize, lo: f64, hi: f64| if d == 1 { lo } else { lo + (hi - lo) * i as f64 / (d - 1) as f64 };
        let spots = self.spots.clone().unwrap_or_else(|| (0..d).map(|i| spread(i, 90.0, 110.0)).collect());
        let vols = self.vols.clone().unwrap_or_else(|| (0..d).map(|i| spread(i, 0.2, 0.3)).collect());
        if spots.len() != d || vols.len() != d {
            return Err(CliError::Config(format!(
                "basket.d = {d} but {} spots and {} vols",
                spots.len(),
                vols.len()
            )));
        }
        let spec = BasketSpec {
            spots,
            vols,
            rate: self.rate,
            strike: self.strike,
            maturity: self.maturity,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub simulation: u64,
    pub portfolio: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            simulation: 1,
            portfolio: 1,
        }
    }
}

/// Parses `key=value`, reading the value as a TOML literal and falling back
/// to a bare string.
fn parse_override(s: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {s:?}")))?;
    let key: Vec<String> = k.trim().split('.').map(str::to_string).collect();
    if key.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("bad --set key {k:?}")));
    }
    let v = v.trim();
    let value = match format!("x = {v}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((key, value))
}

fn apply(root: &mut toml::Table, key: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, path) = key.split_last().expect("nonempty key");
    let mut t = root;
    for part in path {
        let entry = t
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set path crosses non-table key {part:?}")))?;
    }
    t.insert(last.clone(), value);
    Ok(())
}

/// Reads a TOML config or the `config` field of a run manifest, then
/// applies overrides.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut table = match path {
        None => toml::Table::new(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            if p.extension().is_some_and(|e| e == "json") {
                let v: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let cfg = v.get("config").cloned().unwrap_or(v);
                let rc: RunConfig =
                    serde_json::from_value(cfg).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::Table::try_from(&rc).map_err(|e| CliError::Config(e.to_string()))?
            } else {
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        }
    };
    for s in sets {
        let (k, v) = parse_override(s)?;
        apply(&mut table, &k, v)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_typed() {
        let c = load(None, &["experiment.t=0.5".into(), "model.gamma0=[0.0, 0.0]".into(), "experiment.method=smart".into()])
            .unwrap();
        assert_eq!(c.experiment.t, 0.5);
        assert_eq!(c.model.gamma0, Some(vec![0.0, 0.0]));
        assert_eq!(c.experiment.method, Method::Smart);
        assert!(load(None, &["experiment.nope=1".into()]).is_err());
        assert!(load(None, &["novalue".into()]).is_err());
    }

    #[test]
    fn model_override_length_checked() {
        let c = load(None, &["model.gamma0=[0.0]".into()]).unwrap();
        assert!(c.model.resolve().is_err());
    }
}
