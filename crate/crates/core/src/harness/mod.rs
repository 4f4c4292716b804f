//! Scenarios as data: configuration, runs, baseline comparisons, and the
//! metrics and radial file formats.

pub mod baselines;
pub mod config;
pub mod export;
pub mod run;

pub use baselines::{compare_baselines, BaselineComparison, BaselineError, BaselineRow};
pub use config::{load_config, parse_config, ConfigError, ConfigErrorKind, ConfigErrors, LoadError, ScenarioConfig};
pub use export::{export_metrics, export_radial, MetricsFormat, RadialFormat};
pub use run::{build_world, generate_workload, run_scenario, MetricsReport, RunError, ScenarioRun};
