//! Library surface of the batch runner so integration tests can drive the
//! same code paths as the `fra` binary.

pub mod config;
pub mod error;
pub mod imageio;
pub mod report;
pub mod runner;

pub use config::{parse_config, render_config, RunConfig};
pub use error::{CliError, Result};
