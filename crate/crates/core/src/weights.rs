//! Weight versions for delayed gradients: exact snapshots, the latest
//! weights, and reconstruction from a running gradient average.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{Params, Tensor};
use crate::planner::WeightStrategy;

/// Decay of the running mean after `n` observations: `n / (n + 1)`.
pub fn beta(n: u64) -> f64 {
    n as f64 / (n as f64 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AveragerMode {
    /// Cumulative mean, `β(n) = n / (n + 1)`.
    Analytic,
    /// Exponential average with constant decay, starting from zero.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientAverager {
    mode: AveragerMode,
    mean: Option<Tensor>,
    count: u64,
}

impl GradientAverager {
    pub fn new(mode: AveragerMode) -> Self {
        Self {
            mode,
            mean: None,
            count: 0,
        }
    }

    pub fn analytic() -> Self {
        Self::new(AveragerMode::Analytic)
    }

    pub fn fixed(beta: f64) -> Self {
        Self::new(AveragerMode::Fixed(beta))
    }

    pub fn mode(&self) -> AveragerMode {
        self.mode
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, g: &Tensor) -> Result<()> {
        let (keep, take) = match self.mode {
            AveragerMode::Analytic => (beta(self.count), 1.0 / (self.count as f64 + 1.0)),
            AveragerMode::Fixed(b) => (b, 1.0 - b),
        };
        let next = match &self.mean {
            None if self.mode == AveragerMode::Analytic => g.clone(),
            None => g.scale(take),
            Some(m) => m.zip_map(g, |a, x| keep * a + take * x)?,
        };
        self.mean = Some(next);
        self.count += 1;
        Ok(())
    }

    pub fn mean(&self) -> Result<&Tensor> {
        self.mean.as_ref().ok_or(Error::NotWarmedUp)
    }

    /// `W + α k Ḡ` for an odd staleness `k`.
    pub fn reconstruct(&self, w: &Tensor, alpha: f64, k: usize) -> Result<Tensor> {
        reconstruct(w, self.mean()?, alpha, k)
    }
}

pub fn reconstruct(w: &Tensor, mean: &Tensor, alpha: f64, k: usize) -> Result<Tensor> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::BadStaleness(k));
    }
    let s = alpha * k as f64;
    w.zip_map(mean, |w, g| w + s * g)
}

/// Snapshots keyed by forward iteration, oldest first.
#[derive(Debug, Clone)]
pub struct StashBuffer {
    layer: usize,
    capacity: usize,
    entries: VecDeque<(usize, u64, Arc<Params>)>,
}

impl StashBuffer {
    pub fn new(layer: usize, capacity: usize) -> Self {
        Self {
            layer,
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores `snapshot` of weight `version` for `iteration`.
    pub fn push(&mut self, iteration: usize, version: u64, snapshot: Arc<Params>) -> Result<()> {
        if self.entries.len() == self.capacity {
            return Err(Error::StashOverflow {
                layer: self.layer,
                capacity: self.capacity,
            });
        }
        if self.entries.back().is_some_and(|&(i, _, _)| i >= iteration) {
            return Err(Error::Schedule(format!(
                "stash iterations must increase, got {iteration} after {}",
                self.entries.back().unwrap().0
            )));
        }
        self.entries.push_back((iteration, version, snapshot));
        Ok(())
    }

    /// Removes and returns the version and snapshot stored for `iteration`.
    pub fn take(&mut self, iteration: usize) -> Result<(u64, Arc<Params>)> {
        let pos = self
            .entries
            .iter()
            .position(|&(i, _, _)| i == iteration)
            .ok_or(Error::MissingSnapshot(iteration))?;
        let (_, v, p) = self.entries.remove(pos).unwrap();
        Ok((v, p))
    }

    /// Number of distinct stored versions other than `live`.
    pub fn distinct_versions_except(&self, live: u64) -> usize {
        let mut last = None;
        let mut n = 0;
        for &(_, v, _) in &self.entries {
            if v != live && last != Some(v) {
                n += 1;
            }
            last = Some(v);
        }
        n
    }
}

/// Per-layer supplier of the weights a delayed gradient is propagated
/// through.
#[derive(Debug, Clone)]
pub struct WeightProvider {
    strategy: WeightStrategy,
    staleness: usize,
    warmup: u64,
    stash: StashBuffer,
    averagers: Option<(GradientAverager, GradientAverager)>,
    started: bool,
}

impl WeightProvider {
    /// `staleness` is `2S + 1` (or 0 for an undelayed layer); `warmup` is the
    /// number of averager observations required before reconstruction.
    pub fn new(strategy: WeightStrategy, layer: usize, stages_after: usize, warmup: u64) -> Self {
        let staleness = if stages_after == 0 { 0 } else { 2 * stages_after + 1 };
        let averagers = match strategy {
            _ if staleness == 0 => None,
            WeightStrategy::PipelineAwareEma => Some((GradientAverager::analytic(), GradientAverager::analytic())),
            WeightStrategy::FixedEma(b) => Some((GradientAverager::fixed(b), GradientAverager::fixed(b))),
            _ => None,
        };
        Self {
            strategy,
            staleness,
            warmup: warmup.max(staleness as u64),
            stash: StashBuffer::new(layer, stages_after + 1),
            averagers,
            started: false,
        }
    }

    pub fn strategy(&self) -> WeightStrategy {
        self.strategy
    }

    pub fn staleness(&self) -> usize {
        self.staleness
    }

    fn stashes(&self) -> bool {
        self.strategy == WeightStrategy::ExactStash && self.staleness > 0
    }

    /// Called at the forward pass of `iteration` with the live weights.
    pub fn on_forward(&mut self, iteration: usize, version: u64, live: &Arc<Params>) -> Result<()> {
        if self.stashes() {
            self.stash.push(iteration, version, Arc::clone(live))?;
        }
        Ok(())
    }

    /// Feeds one tick of update history: the update applied this tick with
    /// its learning rate, or `None`. Ticks before the first update are
    /// ignored.
    pub fn observe(&mut self, applied: Option<(&Params, f64)>) -> Result<()> {
        let Some((aw, ab)) = self.averagers.as_mut() else {
            return Ok(());
        };
        match applied {
            Some((u, alpha)) => {
                self.started = true;
                let s = if alpha > 0.0 { -1.0 / alpha } else { 0.0 };
                aw.update(&u.w.scale(s))?;
                ab.update(&u.b.scale(s))?;
            }
            None if self.started => {
                aw.update(&Tensor::zeros(aw.mean()?.shape()))?;
                ab.update(&Tensor::zeros(ab.mean()?.shape()))?;
            }
            None => {}
        }
        Ok(())
    }

    pub fn warmed_up(&self) -> bool {
        self.averagers.as_ref().is_some_and(|(a, _)| a.count() >= self.warmup)
    }

    /// Weights for the backward pass of `iteration`, with the stored version
    /// when they come from the stash.
    pub fn provide(&mut self, iteration: usize, live: &Arc<Params>, alpha: f64) -> Result<(Arc<Params>, Option<u64>)> {
        if self.staleness == 0 {
            return Ok((Arc::clone(live), None));
        }
        match self.strategy {
            WeightStrategy::ExactStash => self.stash.take(iteration).map(|(v, p)| (p, Some(v))),
            WeightStrategy::Latest => Ok((Arc::clone(live), None)),
            WeightStrategy::FixedEma(_) | WeightStrategy::PipelineAwareEma => {
                if !self.warmed_up() {
                    return Ok((Arc::clone(live), None));
                }
                let (aw, ab) = self.averagers.as_ref().unwrap();
                let w = Params {
                    w: aw.reconstruct(&live.w, alpha, self.staleness)?,
                    b: ab.reconstruct(&live.b, alpha, self.staleness)?,
                };
                Ok((Arc::new(w), None))
            }
        }
    }

    pub fn stashed_copies(&self, live_version: u64) -> usize {
        self.stash.distinct_versions_except(live_version)
    }

    pub fn accumulators(&self) -> usize {
        usize::from(self.averagers.is_some())
    }
}

/// Applied parameter updates, oldest first.
#[derive(Debug, Clone, Default)]
pub struct UpdateLog {
    entries: Vec<Params>,
}

impl UpdateLog {
    pub fn push(&mut self, u: Params) {
        self.entries.push(u);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Weights `k` updates ago, recovered by undoing the last `k` logged updates
/// newest first.
pub fn exact_history_oracle(current: &Params, log: &UpdateLog, k: usize) -> Result<Params> {
    if log.len() < k {
        return Err(Error::LogGap {
            needed: k,
            have: log.len(),
        });
    }
    let mut w = current.clone();
    for u in log.entries.iter().rev().take(k) {
        w.w = w.w.sub(&u.w)?;
        w.b = w.b.sub(&u.b)?;
    }
    Ok(w)
}
