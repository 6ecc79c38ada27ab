//! Command-line front end for the flexti2v engine: JSON run configs,
//! condition loading, proxy metrics and result files.

pub mod config;
pub mod error;
pub mod metrics;
pub mod run;
pub mod table;

pub use config::{load_config, parse_config, Preset, RunConfig};
pub use error::Failure;
pub use run::{run, RunReport};

/// Environment variable that replaces the endpoint of a remote estimator.
pub const WORKER_ENV: &str = "FLEXTI2V_WORKER";
