//! Command implementations behind the `fdtl` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod prices;
pub mod report;

pub use commands::{cmd_fit, cmd_ingest_prices, cmd_simulate, IngestArgs};
pub use config::RunConfig;
pub use error::{CliError, Result};
