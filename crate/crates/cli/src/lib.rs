//! Scenario runner around `cumulant-core`: configuration, order and
//! parameter sweeps, file output and error tables.

pub mod cache;
pub mod config;
pub mod output;
pub mod scenario;
pub mod sweep;
pub mod table;

pub use config::{ModelKind, RunConfig, SweepAxis, SweepSection};
pub use scenario::{run_scenario, Job, ScenarioOutcome};
pub use sweep::{run_sweep, SweepOutcome};
