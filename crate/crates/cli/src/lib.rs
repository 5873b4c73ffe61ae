//! Scenario runner: parse a TOML scenario, run its checks, emit a JSON report.

pub mod checks;
pub mod config;
pub mod context;
pub mod error;
pub mod run;

pub use config::{CheckKind, Scenario};
pub use context::{Context, Overrides};
pub use error::{ConfigError, RunError};
pub use run::{run_file, run_scenario, Report, RunOptions, Status};
