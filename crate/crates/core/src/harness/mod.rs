//! Experiment orchestration: strict config ingestion, config fingerprinting,
//! the resumable cell runner, the JSONL report store, and plot-data emission.

pub mod config;
pub mod fingerprint;
pub mod plots;
pub mod report;
pub mod runner;

pub use config::{load_config, validate_config, ExperimentConfig, SECRET_ENV_VAR};
pub use fingerprint::config_fingerprint;
pub use plots::{emit_plot_data, format_percent, perplexity_delta_table, PlotKind};
pub use report::{load_report, summary_table, CellRecord, ReportHeader, ReportWriter};
pub use runner::{cell_keys, prepare, run_experiment, Prepared, RunSummary};
