//! Monte Carlo CVA laboratory.

pub mod engine;
pub mod error;
pub mod hedge;
pub mod jacobian;
pub mod learners;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod products;
pub mod report;
pub mod risk;
pub mod cva;
pub mod rng;
pub mod scalar;
pub mod sensitivities;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use cva::CashFlowSample;
pub use engine::PathSet;
pub use hedge::HedgeReport;
pub use jacobian::CalibrationSpec;
pub use learners::{LinearModel, MlpModel, TrainConfig};
pub use model::{ModelParams, SimGrid};
pub use products::{BasketSpec, InstrumentSet, Swap};
pub use risk::{RiskReport, TwinReport};
pub use rng::RngStream;
pub use sensitivities::{BumpPlan, SensitivityReport};
