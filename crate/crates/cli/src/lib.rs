//! Experiment plumbing around the `strange_marl` library: config files,
//! run directories, CSV metrics, checkpoints and seed sweeps.

pub mod config;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod run;

pub use config::{parse_config, EnvSection, Overrides, RunConfig};
pub use error::{CliError, Result};
pub use manifest::{RunManifest, RunStatus};
pub use metrics::{aggregate_csv, format_sig, mean_ci95, read_metrics, write_metrics};
pub use run::{eval, resume, sweep, train, RunDir, TrainOptions};
