//! Fatal errors of the experiment runner, each with a stable machine-
//! readable kind for scripted callers.

use thiserror::Error;

use rwre_core::environment::EnvError;
use rwre_core::oracle::OracleError;
use rwre_core::rate::RateError;
use rwre_core::tilted::TiltedError;
use rwre_core::walk_sim::HarvestError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(EnvError),
    #[error(transparent)]
    Harvest(HarvestError),
    #[error(transparent)]
    Oracle(OracleError),
    #[error(transparent)]
    Rate(RateError),
    #[error(transparent)]
    Tilted(TiltedError),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    /// Stable identifier written into the error record.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigInvalid",
            CliError::Env(e) => match e {
                EnvError::NotAProbability { .. } => "NotAProbability",
                EnvError::EllipticityViolated { .. } => "EllipticityViolated",
                EnvError::DegenerateDrift => "DegenerateDrift",
                EnvError::DimensionMismatch(_) => "DimensionMismatch",
                EnvError::BadStepToken(_) => "BadStepToken",
            },
            CliError::Harvest(e) => match e {
                HarvestError::Env(_) => "EnvironmentInvalid",
                HarvestError::RegenerationStarvation { .. } => "RegenerationStarvation",
                HarvestError::MergeMismatch(_) => "MergeMismatch",
                HarvestError::BadCycleLog(_) => "BadCycleLog",
                HarvestError::Io(_) => "Io",
            },
            CliError::Oracle(_) => "OracleFailed",
            CliError::Rate(e) => match e {
                RateError::NotNestling => "NotNestling",
                RateError::Harvest(HarvestError::RegenerationStarvation { .. }) => {
                    "RegenerationStarvation"
                }
                _ => "RateFailed",
            },
            CliError::Tilted(_) => "TiltedFailed",
            CliError::Io { .. } => "Io",
        }
    }

    /// The machine-readable record printed to stderr on fatal exit.
    pub fn record(&self) -> serde_json::Value {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
        })
    }
}
