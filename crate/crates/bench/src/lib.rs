//! Experiment harness for the `amafqi` crate: seeded runs of FQI, AMAFQI and
//! AMAFQI-L on random multi-agent MDPs, with reward, approximation-gap and
//! work-count reports.

use std::path::PathBuf;

pub mod bundle;
pub mod config;
pub mod experiment;
pub mod output;
pub mod scaling;

pub use bundle::ModelBundle;
pub use config::{ExperimentConfig, Methods};
pub use experiment::{
    delta_metric, run_experiment, run_experiment_with_models, run_instance, Aggregate, DeltaReport, InstanceReport,
    Method, MethodReport, RunReport,
};
pub use scaling::{work_scaling_report, WorkRow};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "AMAFQI_OUTPUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] amafqi::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
