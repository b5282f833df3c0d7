//! Experiment configuration, datasets and strategy comparisons.

mod config;
mod data;
mod experiment;
mod verify;

pub use config::{DatasetConfig, ExperimentConfig, RunKind, ScheduleKind};
pub use data::{generate_blobs, generate_spiral, idx_dataset, load_idx, Dataset};
pub use experiment::{batches_per_epoch, build_model, csv_name, make_batches, run_comparison, run_training, ComparisonReport, ReportRow, TrainRun};
pub use verify::{run_checks, Check};
