//! Experiment configuration, synthetic tasks, runs and reports.

mod config;
mod experiment;
mod report;
mod task;

pub use config::{
    parse_config, CostConfig, ExperimentConfig, Seeds, DEFAULT_FL_EPOCHS, DEFAULT_INITIAL_EPOCHS,
    DEFAULT_MAX_LOCAL_EPOCHS,
};
pub use experiment::{run_experiment, run_experiment_on_task, ExperimentOutcome, INITIAL_LABEL, REFERENCE_LABEL};
pub use report::{compare_runs, export_csv, format_sig6, read_report_csv, ReportRow, RunReport, CSV_COLUMNS, SUMMARY_ROUND};
pub use task::{generate_synthetic_task, EvalSplits, SyntheticTask, SyntheticTaskSpec, TaskClient};
