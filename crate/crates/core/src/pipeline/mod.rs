//! Tick-level simulation of pipelined training and its serial references.

mod exec;
mod metrics;
mod schedule;
mod stash;

pub use exec::{digest, run_delayed_serial, run_pipeline, run_sequential, Batch, EpochHook, EpochSummary, RunOptions, RunOutcome};
pub use metrics::{MetricRecord, RunMetrics, RunSummary};
pub use schedule::{Event, Phase, PipelineSchedule, TrainTick};
pub use stash::ActivationStash;
