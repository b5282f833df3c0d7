use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment of consecutive layers to pipeline stages.
///
/// `boundaries` holds the first layer of every stage, so it always starts at
/// zero and is strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPartition", into = "RawPartition")]
pub struct StagePartition {
    num_layers: usize,
    boundaries: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawPartition {
    num_layers: usize,
    boundaries: Vec<usize>,
}

impl TryFrom<RawPartition> for StagePartition {
    type Error = Error;
    fn try_from(r: RawPartition) -> Result<Self> {
        StagePartition::new(r.num_layers, r.boundaries)
    }
}

impl From<StagePartition> for RawPartition {
    fn from(p: StagePartition) -> Self {
        RawPartition {
            num_layers: p.num_layers,
            boundaries: p.boundaries,
        }
    }
}

impl StagePartition {
    pub fn new(num_layers: usize, boundaries: Vec<usize>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidPartition(m));
        if num_layers == 0 {
            return bad("no layers".into());
        }
        if boundaries.first() != Some(&0) {
            return bad("first stage must start at layer 0".into());
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("boundaries {boundaries:?} are not strictly increasing"));
        }
        if *boundaries.last().unwrap() >= num_layers {
            return bad(format!(
                "boundary {} out of range for {num_layers} layers",
                boundaries.last().unwrap()
            ));
        }
        Ok(Self {
            num_layers,
            boundaries,
        })
    }

    /// Stages with the given layer counts, input side first.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InvalidPartition(format!(
                "stage sizes {sizes:?} must be nonempty and positive"
            )));
        }
        let mut boundaries = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &s in sizes {
            boundaries.push(at);
            at += s;
        }
        Self::new(at, boundaries)
    }

    pub fn single_stage(num_layers: usize) -> Result<Self> {
        Self::new(num_layers, vec![0])
    }

    pub fn per_layer(num_layers: usize) -> Result<Self> {
        Self::new(num_layers, (0..num_layers).collect())
    }

    /// Every partition of `num_layers` layers (2^(L-1) of them).
    pub fn enumerate(num_layers: usize) -> Vec<Self> {
        if num_layers == 0 {
            return Vec::new();
        }
        (0..1usize << (num_layers - 1))
            .map(|mask| {
                let boundaries = std::iter::once(0)
                    .chain((1..num_layers).filter(|l| mask & (1 << (l - 1)) != 0))
                    .collect();
                Self {
                    num_layers,
                    boundaries,
                }
            })
            .collect()
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_stages(&self) -> usize {
        self.boundaries.len()
    }

    pub fn stage_of(&self, layer: usize) -> usize {
        assert!(layer < self.num_layers, "layer {layer} out of range");
        self.boundaries.partition_point(|&b| b <= layer) - 1
    }

    /// Stage boundaries strictly downstream of `layer`'s stage.
    pub fn stages_after(&self, layer: usize) -> usize {
        self.num_stages() - 1 - self.stage_of(layer)
    }

    pub fn layers_of(&self, stage: usize) -> Range<usize> {
        let end = self
            .boundaries
            .get(stage + 1)
            .copied()
            .unwrap_or(self.num_layers);
        self.boundaries[stage]..end
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.num_stages()).map(|s| self.layers_of(s).len()).collect()
    }

    /// Whether every boundary of `self` is also a boundary of `finer`.
    pub fn is_refined_by(&self, finer: &StagePartition) -> bool {
        self.num_layers == finer.num_layers
            && self.boundaries.iter().all(|b| finer.boundaries.contains(b))
    }
}

impl fmt::Display for StagePartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<String> = self.sizes().iter().map(|s| s.to_string()).collect();
        write!(f, "{}", sizes.join(","))
    }
}

/// Parses stage sizes such as `2,2,2`; `per-layer` and `single` need the
/// layer count and are handled by [`StagePartition::parse_for`].
impl FromStr for StagePartition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidPartition(format!("bad stage size `{p}` in `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_sizes(&sizes)
    }
}

impl StagePartition {
    /// Parses `per-layer`, `single`, or comma-separated stage sizes, checking
    /// the layer count.
    pub fn parse_for(s: &str, num_layers: usize) -> Result<Self> {
        let p = match s.trim() {
            "per-layer" => Self::per_layer(num_layers)?,
            "single" => Self::single_stage(num_layers)?,
            other => other.parse()?,
        };
        if p.num_layers != num_layers {
            return Err(Error::InvalidPartition(format!(
                "partition `{s}` covers {} layers, model has {num_layers}",
                p.num_layers
            )));
        }
        Ok(p)
    }
}
