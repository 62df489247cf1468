//! Synthetic tasks, experiment runs and their report files.

mod dataset;
mod experiment;
mod report;
mod violin;

pub use dataset::{generate_dataset, Dataset, TaskKind, TaskSpec, MAX_CLASSES, MIN_CLASSES};
pub use experiment::{
    deviation_snapshot, evaluate, run_experiment, untrained_accuracy, ExperimentConfig, PlanChoice,
    RunReport, SNAPSHOT_MEASURE,
};
pub use report::{default_grid, run_grid, write_reports, GridCell};
pub use violin::{quantile_sorted, violin_rows, write_violin_csv, ViolinRow, VIOLIN_COLUMNS};
