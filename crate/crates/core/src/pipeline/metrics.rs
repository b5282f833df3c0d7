use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One CSV row, written at the end of every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub tick: usize,
    pub epoch: usize,
    pub strategy: String,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub stashed_weight_bytes: usize,
    pub stashed_act_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub final_test_acc: f64,
    pub final_train_acc: f64,
    pub epochs_to_threshold: Option<usize>,
    pub peak_weight_bytes: usize,
    pub peak_act_bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<MetricRecord>,
}

impl RunMetrics {
    /// First epoch (1-based count) whose test accuracy reaches `threshold`.
    pub fn epochs_to(&self, threshold: f64) -> Option<usize> {
        self.records.iter().position(|r| r.test_acc >= threshold).map(|i| i + 1)
    }

    pub fn summary(&self, strategy: &str, threshold: f64) -> RunSummary {
        let last = self.records.last();
        RunSummary {
            strategy: strategy.to_string(),
            final_test_acc: last.map_or(0.0, |r| r.test_acc),
            final_train_acc: last.map_or(0.0, |r| r.train_acc),
            epochs_to_threshold: self.epochs_to(threshold),
            peak_weight_bytes: self.records.iter().map(|r| r.stashed_weight_bytes).max().unwrap_or(0),
            peak_act_bytes: self.records.iter().map(|r| r.stashed_act_bytes).max().unwrap_or(0),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}
