//! Command-line pipeline around `shapecorr`: configuration handling, the
//! preprocess / corrupt / train / infer / evaluate / analyze commands and
//! the benchmark grid runner.

pub mod benchmark;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{load_config, ExperimentConfig};
pub use error::{CliError, CliResult};
