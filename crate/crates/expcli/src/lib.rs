//! Sweep runners for the importance-tempering experiments. Each runner
//! returns typed rows in sweep-grid order; [`output::write_records`] turns
//! them into CSV.

pub mod angle;
pub mod boundary;
pub mod config;
pub mod error;
pub mod fit;
pub mod gamma;
pub mod lambda;
pub mod lpm;
pub mod output;
pub mod overparam;
pub mod svm_check;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::{CliError, CliResult};
