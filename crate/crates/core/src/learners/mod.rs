//! Regression models (SVD-ridge linear, softplus MLP) and the CVA
//! learning pipelines built on them.

mod conditional;
mod linear;
mod mlp;

pub use conditional::*;
pub use linear::{fit_linear, LinearConfig, LinearModel};
pub use mlp::{fit_mlp, Layer, Mlp, TrainConfig, TrainReport};

pub type MlpModel<T> = Mlp<T>;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Versioned header of saved models.
pub const MODEL_MAGIC: &str = "XVASENSI-MODEL01";

/// A trained regression of a label on features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    Constant { value: f64, inputs: usize },
    Linear(LinearModel<f64>),
    Mlp(Mlp<f64>),
}

impl Predictor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Predictor::Constant { value, .. } => *value,
            Predictor::Linear(m) => m.predict(x),
            Predictor::Mlp(m) => m.predict(x),
        }
    }

    pub fn predict_rows(&self, x: &Matrix<f64>) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict(x.row(i))).collect()
    }

    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Predictor::Constant { inputs, .. } => vec![0.0; *inputs],
            Predictor::Linear(m) => m.input_gradient(x),
            Predictor::Mlp(m) => m.input_gradient(x),
        }
    }

    pub fn save(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "{MODEL_MAGIC}")?;
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn load(mut r: impl std::io::Read) -> Result<Self> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        let body = s
            .strip_prefix(MODEL_MAGIC)
            .and_then(|b| b.strip_prefix('\n'))
            .ok_or_else(|| Error::Serde("missing model header".into()))?;
        Ok(serde_json::from_str(body)?)
    }
}

/// Which regression to fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Linear { ridge_rel: f64 },
    Mlp { hidden: Vec<usize>, train: TrainConfig },
}

impl LearnerSpec {
    pub fn mlp(hidden: &[usize], train: TrainConfig) -> Self {
        LearnerSpec::Mlp {
            hidden: hidden.to_vec(),
            train,
        }
    }

    pub fn fit(&self, x: &Matrix<f64>, y: &[f64]) -> Result<(Predictor, f64)> {
        match self {
            LearnerSpec::Linear { ridge_rel } => {
                let cfg = LinearConfig {
                    ridge_rel: *ridge_rel,
                    ..LinearConfig::default()
                };
                let m = fit_linear(x, y, &cfg)?;
                let mse = (0..x.rows()).map(|i| (m.predict(x.row(i)) - y[i]).powi(2)).sum::<f64>()
                    / x.rows() as f64;
                Ok((Predictor::Linear(m), mse))
            }
            LearnerSpec::Mlp { hidden, train } => {
                let (m, rep) = fit_mlp(x, y, hidden, train)?;
                Ok((Predictor::Mlp(m), rep.final_loss))
            }
        }
    }
}
