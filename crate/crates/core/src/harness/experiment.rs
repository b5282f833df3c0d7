use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RunKind};
use super::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::pipeline::{run_pipeline, run_sequential, Batch, MetricRecord, PipelineSchedule, RunMetrics, RunOptions, RunOutcome};
use crate::planner::{derive_delays, weight_stash_bytes, WeightStrategy};

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub kind: RunKind,
    pub metrics: RunMetrics,
    pub outcome: RunOutcome,
    /// Stash bytes predicted by the planner for this model.
    pub predicted_weight_bytes: usize,
}

pub fn batches_per_epoch(data: &Dataset, batch: usize) -> usize {
    data.train_y.len().div_ceil(batch)
}

/// Training stream of all epochs, reshuffled every epoch.
pub fn make_batches(data: &Dataset, cfg: &ExperimentConfig) -> Vec<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stream_seed(2));
    let n = data.train_y.len();
    let mut out = Vec::with_capacity(cfg.epochs * batches_per_epoch(data, cfg.batch));
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(cfg.batch) {
            out.push(Batch {
                x: data.train_x.gather_rows(chunk),
                y: chunk.iter().map(|&i| data.train_y[i]).collect(),
            });
        }
    }
    out
}

pub fn build_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<Mlp> {
    let mut sizes = vec![data.dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(data.classes);
    Mlp::new(&sizes, cfg.stream_seed(0))
}

/// One training run of `kind` on `data`, recording metrics every epoch.
pub fn run_training(cfg: &ExperimentConfig, kind: RunKind, data: &Dataset) -> Result<TrainRun> {
    cfg.validate()?;
    let model = build_model(cfg, data)?;
    let batches = make_batches(data, cfg);
    let per_epoch = batches_per_epoch(data, cfg.batch);
    let warmup = cfg.warmup.unwrap_or(2 * per_epoch) as u64;
    let strategy = match kind {
        RunKind::Sequential => WeightStrategy::Latest,
        RunKind::Pipelined(s) => s,
    };
    let opts = RunOptions {
        warmup: 2 * warmup,
        epoch_len: per_epoch,
        ..RunOptions::new(cfg.sgd(batches.len()), strategy)
    };
    let label = kind.to_string();
    let mut metrics = RunMetrics::default();
    let mut hook = |s: &crate::pipeline::EpochSummary, m: &Mlp| -> Result<()> {
        let (_, train_acc) = m.evaluate(&data.train_x, &data.train_y)?;
        let (_, test_acc) = m.evaluate(&data.test_x, &data.test_y)?;
        metrics.records.push(MetricRecord {
            tick: s.tick,
            epoch: s.epoch,
            strategy: label.clone(),
            loss: s.loss,
            train_acc,
            test_acc,
            stashed_weight_bytes: s.stashed_weight_bytes,
            stashed_act_bytes: s.stashed_act_bytes,
        });
        Ok(())
    };
    let param_bytes = model.param_bytes();
    let (outcome, predicted) = match kind {
        RunKind::Sequential => (run_sequential(model, &batches, &opts, &mut hook), 0),
        RunKind::Pipelined(s) => {
            let partition = cfg.stage_partition()?;
            let predicted = weight_stash_bytes(&derive_delays(&partition), s, &param_bytes);
            let sched = PipelineSchedule::new(partition, batches.len());
            (run_pipeline(model, &sched, &batches, &opts, &mut hook), predicted)
        }
    };
    let outcome = outcome.map_err(|e| match e {
        Error::Diverged(msg) => Error::Diverged(format!("{kind}: {msg}")),
        e => e,
    })?;
    Ok(TrainRun {
        kind,
        metrics,
        outcome,
        predicted_weight_bytes: predicted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub status: String,
    pub final_test_acc: Option<f64>,
    pub final_train_acc: Option<f64>,
    pub epochs_to_threshold: Option<usize>,
    pub peak_weight_bytes: Option<usize>,
    pub predicted_weight_bytes: Option<usize>,
    pub peak_act_bytes: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
}

impl ComparisonReport {
    pub fn any_diverged(&self) -> bool {
        self.rows.iter().any(|r| r.status != "ok")
    }

    pub fn row(&self, strategy: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>9} {:>10} {:>12} {:>12} {:>10}\n",
            "strategy", "status", "test-acc", "train-acc", "w-stash-B", "predicted-B", "a-stash-B"
        );
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let u = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>8} {:>9} {:>10} {:>12} {:>12} {:>10}\n",
                r.strategy,
                r.status,
                f(r.final_test_acc),
                f(r.final_train_acc),
                u(r.peak_weight_bytes),
                u(r.predicted_weight_bytes),
                u(r.peak_act_bytes)
            ));
        }
        out
    }
}

/// File-name-safe form of a strategy label.
pub fn csv_name(kind: RunKind) -> String {
    format!("{}.csv", kind.to_string().replace([':', '/'], "-"))
}

/// Runs every strategy on the same data and seed. Per-strategy CSVs and
/// `report.csv` are written to `out` when given. Divergence is recorded in
/// the report rather than aborting the other runs.
pub fn run_comparison(cfg: &ExperimentConfig, kinds: &[RunKind], out: Option<&Path>) -> Result<ComparisonReport> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let results: Vec<Result<TrainRun>> = std::thread::scope(|scope| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&k| {
                let data = &data;
                scope.spawn(move || run_training(cfg, k, data))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut report = ComparisonReport::default();
    for (&kind, result) in kinds.iter().zip(results) {
        let row = match result {
            Ok(run) => {
                if let Some(dir) = out {
                    run.metrics.write_csv(&dir.join(csv_name(kind)))?;
                }
                let s = run.metrics.summary(&kind.to_string(), cfg.threshold);
                ReportRow {
                    strategy: kind.to_string(),
                    status: "ok".into(),
                    final_test_acc: Some(s.final_test_acc),
                    final_train_acc: Some(s.final_train_acc),
                    epochs_to_threshold: s.epochs_to_threshold,
                    peak_weight_bytes: Some(run.outcome.peak_weight_bytes),
                    predicted_weight_bytes: Some(run.predicted_weight_bytes),
                    peak_act_bytes: Some(run.outcome.peak_act_bytes),
                    error: None,
                }
            }
            Err(Error::Diverged(msg)) => ReportRow {
                strategy: kind.to_string(),
                status: "diverged".into(),
                final_test_acc: None,
                final_train_acc: None,
                epochs_to_threshold: None,
                peak_weight_bytes: None,
                predicted_weight_bytes: None,
                peak_act_bytes: None,
                error: Some(msg),
            },
            Err(e) => return Err(e),
        };
        report.rows.push(row);
    }
    if let Some(dir) = out {
        std::fs::write(dir.join("report.csv"), report.to_csv()?)?;
    }
    Ok(report)
}
