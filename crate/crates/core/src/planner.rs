//! Closed-form delay and storage planning.
//!
//! A layer with `S` stage boundaries downstream of it sees its gradient
//! `2S` pipeline iterations after the forward pass that produced it. With
//! one-forward-one-backward interleaving, each stage alternates forward and
//! backward slots, so only `S` weight versions are live besides the current
//! one and `S + 1` forward caches wait for their backward pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::StagePartition;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayAssignment {
    /// Delay elements between a layer's forward pass and its weight update.
    pub gradient_delay: Vec<usize>,
    pub weight_stash: Vec<usize>,
    pub activation_stash: Vec<usize>,
}

impl DelayAssignment {
    pub fn num_layers(&self) -> usize {
        self.gradient_delay.len()
    }

    /// Downstream stage count recovered from the gradient delay.
    pub fn stages_after(&self, layer: usize) -> usize {
        self.gradient_delay[layer] / 2
    }

    /// Iterations from a forward pass to the update that consumes its
    /// gradient, counting the update itself; zero for unpipelined layers.
    pub fn staleness(&self, layer: usize) -> usize {
        match self.gradient_delay[layer] {
            0 => 0,
            d => d + 1,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.gradient_delay.first().map_or(1, |d| d / 2 + 1)
    }

    /// Layers that actually see a delayed gradient.
    pub fn delayed_layers(&self) -> usize {
        self.gradient_delay.iter().filter(|&&d| d > 0).count()
    }
}

/// Per-layer delays for `partition`: `2 S(l)` gradient delay and `S(l)`
/// stashed versions.
pub fn derive_delays(partition: &StagePartition) -> DelayAssignment {
    let s: Vec<usize> = (0..partition.num_layers())
        .map(|l| partition.stages_after(l))
        .collect();
    DelayAssignment {
        gradient_delay: s.iter().map(|&s| 2 * s).collect(),
        weight_stash: s.clone(),
        activation_stash: s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "beta")]
pub enum WeightStrategy {
    ExactStash,
    Latest,
    FixedEma(f64),
    PipelineAwareEma,
}

impl WeightStrategy {
    pub const FIXED_EMA_DEFAULT_BETA: f64 = 0.9;

    pub fn uses_ema(self) -> bool {
        matches!(self, Self::FixedEma(_) | Self::PipelineAwareEma)
    }
}

impl fmt::Display for WeightStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ExactStash => f.write_str("stash"),
            Self::Latest => f.write_str("latest"),
            Self::FixedEma(b) => write!(f, "ema-fixed:{b}"),
            Self::PipelineAwareEma => f.write_str("ema-pipeline"),
        }
    }
}

impl FromStr for WeightStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownStrategy(s.to_string());
        Ok(match s {
            "stash" | "exact-stash" => Self::ExactStash,
            "latest" => Self::Latest,
            "ema-pipeline" | "pipeline-aware-ema" => Self::PipelineAwareEma,
            "ema-fixed" | "fixed-ema" => Self::FixedEma(Self::FIXED_EMA_DEFAULT_BETA),
            _ => {
                let beta = s
                    .strip_prefix("ema-fixed:")
                    .or_else(|| s.strip_prefix("fixed-ema:"))
                    .ok_or_else(unknown)?;
                let beta: f64 = beta.parse().map_err(|_| unknown())?;
                if !(0.0..1.0).contains(&beta) {
                    return Err(unknown());
                }
                Self::FixedEma(beta)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StorageCost {
    pub stashed_weight_copies: usize,
    pub stashed_activation_slots: usize,
    pub ema_accumulators: usize,
}

/// Extra weight copies held for `layer` under `strategy`.
pub fn weight_copies(a: &DelayAssignment, strategy: WeightStrategy, layer: usize) -> usize {
    match strategy {
        WeightStrategy::ExactStash => a.weight_stash[layer],
        _ => 0,
    }
}

pub fn has_accumulator(a: &DelayAssignment, strategy: WeightStrategy, layer: usize) -> bool {
    strategy.uses_ema() && a.stages_after(layer) > 0
}

pub fn storage_cost(a: &DelayAssignment, strategy: WeightStrategy) -> StorageCost {
    let layers = 0..a.num_layers();
    StorageCost {
        stashed_weight_copies: layers.clone().map(|l| weight_copies(a, strategy, l)).sum(),
        stashed_activation_slots: a.activation_stash.iter().map(|s| s + 1).sum(),
        ema_accumulators: layers.filter(|&l| has_accumulator(a, strategy, l)).count(),
    }
}

/// Predicted stash bytes for the given per-layer parameter byte counts.
pub fn weight_stash_bytes(a: &DelayAssignment, strategy: WeightStrategy, param_bytes: &[usize]) -> usize {
    (0..a.num_layers())
        .map(|l| weight_copies(a, strategy, l) * param_bytes[l])
        .sum()
}

/// Human-readable delay and storage table.
pub fn render_table(p: &StagePartition, a: &DelayAssignment, strategies: &[WeightStrategy]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "partition {p} ({} stages)", p.num_stages()).unwrap();
    writeln!(out, "{:>5} {:>5} {:>5} {:>6} {:>9} {:>7} {:>7}", "layer", "stage", "S", "delay", "staleness", "w-stash", "a-stash").unwrap();
    for l in 0..a.num_layers() {
        writeln!(
            out,
            "{:>5} {:>5} {:>5} {:>6} {:>9} {:>7} {:>7}",
            l,
            p.stage_of(l),
            a.stages_after(l),
            a.gradient_delay[l],
            a.staleness(l),
            a.weight_stash[l],
            a.activation_stash[l]
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "{:<16} {:>13} {:>11} {:>12}", "strategy", "weight-copies", "act-slots", "accumulators").unwrap();
    for &s in strategies {
        let c = storage_cost(a, s);
        writeln!(
            out,
            "{:<16} {:>13} {:>11} {:>12}",
            s.to_string(),
            c.stashed_weight_copies,
            c.stashed_activation_slots,
            c.ema_accumulators
        )
        .unwrap();
    }
    out
}
