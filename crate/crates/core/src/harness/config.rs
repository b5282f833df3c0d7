use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{generate_blobs, generate_spiral, idx_dataset, Dataset};
use crate::error::{Error, Result};
use crate::nn::{LrSchedule, SgdConfig};
use crate::partition::StagePartition;
use crate::planner::WeightStrategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Spiral {
        classes: usize,
        samples: usize,
        noise: f64,
    },
    Blobs {
        classes: usize,
        samples: usize,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            _ => Err(Error::Config(format!("unknown schedule `{s}` (expected constant or cosine)"))),
        }
    }
}

/// Either the non-pipelined baseline or a pipelined run with a weight
/// strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunKind {
    Sequential,
    Pipelined(WeightStrategy),
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sequential => f.write_str("sequential"),
            Self::Pipelined(s) => s.fmt(f),
        }
    }
}

impl FromStr for RunKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Self::Sequential),
            _ => s.parse().map(Self::Pipelined),
        }
    }
}

impl Serialize for RunKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RunKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Hidden layer widths; input and output widths come from the dataset.
    pub hidden: Vec<usize>,
    /// Stage sizes such as `"2,1,1"`, or `per-layer` / `single`.
    pub partition: String,
    pub strategy: RunKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    pub epochs: usize,
    pub batch: usize,
    /// Microbatches before reconstruction is enabled; defaults to two passes
    /// over the training set.
    pub warmup: Option<usize>,
    pub seed: u64,
    /// Test accuracy used for the epochs-to-threshold summary.
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::Spiral {
                classes: 5,
                samples: 3000,
                noise: 0.2,
            },
            hidden: vec![64, 64, 64],
            partition: "per-layer".into(),
            strategy: RunKind::Pipelined(WeightStrategy::ExactStash),
            lr: 0.4,
            momentum: 0.0,
            weight_decay: 0.0,
            schedule: ScheduleKind::Cosine,
            epochs: 20,
            batch: 32,
            warmup: None,
            seed: 0,
            threshold: 0.9,
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML or JSON file, chosen by extension. Missing fields take
    /// their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut value: serde_json::Value = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        let mut merged = serde_json::to_value(Self::default())?;
        if let (Some(base), Some(over)) = (merged.as_object_mut(), value.as_object_mut()) {
            for (k, v) in std::mem::take(over) {
                base.insert(k, v);
            }
        }
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn stage_partition(&self) -> Result<StagePartition> {
        StagePartition::parse_for(&self.partition, self.num_layers())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if let DatasetConfig::Idx {
            images,
            labels,
            test_images,
            test_labels,
        } = &self.dataset
        {
            if test_images.is_some() != test_labels.is_some() {
                return Err(Error::Config("test_images and test_labels must be given together".into()));
            }
            for p in [Some(images), Some(labels), test_images.as_ref(), test_labels.as_ref()].into_iter().flatten() {
                if !p.exists() {
                    return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
                }
            }
        }
        self.stage_partition()?;
        self.sgd(1).validate()
    }

    /// Optimizer settings for a run of `total` microbatches.
    pub fn sgd(&self, total: usize) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule: match self.schedule {
                ScheduleKind::Constant => LrSchedule::Constant,
                ScheduleKind::Cosine => LrSchedule::Cosine { t_max: total.max(1) },
            },
        }
    }

    /// Seed for one of the independent random streams.
    pub fn stream_seed(&self, stream: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let seed = self.stream_seed(1);
        match &self.dataset {
            DatasetConfig::Spiral { classes, samples, noise } => generate_spiral(*classes, *samples, *noise, seed),
            DatasetConfig::Blobs { classes, samples, spread } => generate_blobs(*classes, *samples, *spread, seed),
            DatasetConfig::Idx {
                images,
                labels,
                test_images,
                test_labels,
            } => idx_dataset(images, labels, test_images.as_deref().zip(test_labels.as_deref()), seed),
        }
    }
}
