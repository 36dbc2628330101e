//! Configuration, sweeps and figure datasets for the `kerrcat` command.

pub mod config;
pub mod error;
pub mod modes;
pub mod pipeline;
pub mod plot;
pub mod sweep;

pub use config::{load_config, parse_config, Mode, RunConfig};
pub use error::{CliError, Result};
pub use sweep::{run_sweep, run_sweep_with, Manifest, SweepRecord};
