//! Command-line front end: configuration, subcommands and exit codes.
//!
//! Exit codes: 0 success, 2 invalid input, 3 model or bridge failure, 4 I/O.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

pub use cli::{run, Cli};
pub use commands::{build_model, cmd_peaks, cmd_scan, cmd_thermo, cmd_weights, RunManifest};
pub use config::Config;
pub use error::{CliError, ErrorKind};
