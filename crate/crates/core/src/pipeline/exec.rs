use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, VecDeque};
use std::hash::Hasher;
use std::sync::Arc;

use super::schedule::{Phase, PipelineSchedule};
use super::stash::ActivationStash;
use crate::error::{Error, Result};
use crate::nn::{backward_with, forward_with, sgd_step, softmax_ce, LayerGrads, Mlp, Params, SgdConfig, SgdState, Tensor};
use crate::planner::WeightStrategy;
use crate::weights::{exact_history_oracle, UpdateLog, WeightProvider};

/// One microbatch of inputs and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub sgd: SgdConfig,
    pub strategy: WeightStrategy,
    /// Averager observations (ticks) before reconstruction is enabled.
    pub warmup: u64,
    /// Microbatches per epoch; 0 treats the whole stream as one epoch.
    pub epoch_len: usize,
    /// Checks every stashed snapshot against the update log.
    pub check_history: bool,
}

impl RunOptions {
    pub fn new(sgd: SgdConfig, strategy: WeightStrategy) -> Self {
        Self {
            sgd,
            strategy,
            warmup: 0,
            epoch_len: 0,
            check_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub tick: usize,
    /// Mean training loss over the epoch's microbatches.
    pub loss: f64,
    pub stashed_weight_bytes: usize,
    pub stashed_act_bytes: usize,
}

pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochSummary, &Mlp) -> Result<()>;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Mlp,
    pub ticks: usize,
    /// Loss of every microbatch, in microbatch order.
    pub losses: Vec<f64>,
    /// Parameter digest after every tick that applied an update.
    pub trajectory: Vec<u64>,
    pub peak_weight_copies: Vec<usize>,
    pub peak_act_slots: Vec<usize>,
    pub peak_weight_bytes: usize,
    pub peak_act_bytes: usize,
    pub accumulators: usize,
    pub history_checks: usize,
}

/// Hash of every parameter's bit pattern.
pub fn digest(model: &Mlp) -> u64 {
    let mut h = DefaultHasher::new();
    for l in &model.layers {
        for v in l.params.w.data().iter().chain(l.params.b.data()) {
            h.write_u64(v.to_bits());
        }
    }
    h.finish()
}

struct Tracker<'a> {
    epoch_len: usize,
    losses: Vec<f64>,
    trajectory: Vec<u64>,
    hook: EpochHook<'a>,
}

impl<'a> Tracker<'a> {
    fn new(batches: usize, epoch_len: usize, hook: EpochHook<'a>) -> Self {
        Self {
            epoch_len: if epoch_len == 0 { batches.max(1) } else { epoch_len },
            losses: vec![f64::NAN; batches],
            trajectory: Vec::new(),
            hook,
        }
    }

    fn loss(&mut self, m: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("loss {loss} at microbatch {m}")));
        }
        self.losses[m] = loss;
        Ok(())
    }

    /// Records the trajectory; `finished` is the microbatch whose first-layer
    /// update was just applied, which closes its epoch when it is the last.
    fn after_updates(&mut self, tick: usize, model: &Mlp, finished: Option<usize>, w_bytes: usize, a_bytes: usize) -> Result<()> {
        self.trajectory.push(digest(model));
        let Some(m) = finished else { return Ok(()) };
        if (m + 1) % self.epoch_len != 0 && m + 1 != self.losses.len() {
            return Ok(());
        }
        let epoch = m / self.epoch_len;
        let span = &self.losses[epoch * self.epoch_len..=m];
        let summary = EpochSummary {
            epoch,
            tick,
            loss: span.iter().sum::<f64>() / span.len() as f64,
            stashed_weight_bytes: w_bytes,
            stashed_act_bytes: a_bytes,
        };
        (self.hook)(&summary, model)
    }
}

fn check_inputs(model: &Mlp, schedule: &PipelineSchedule, batches: &[Batch], opts: &RunOptions) -> Result<()> {
    opts.sgd.validate()?;
    if schedule.partition().num_layers() != model.num_layers() {
        return Err(Error::Schedule(format!(
            "partition covers {} layers, model has {}",
            schedule.partition().num_layers(),
            model.num_layers()
        )));
    }
    if schedule.microbatches() != batches.len() {
        return Err(Error::Schedule(format!(
            "schedule expects {} microbatches, stream has {}",
            schedule.microbatches(),
            batches.len()
        )));
    }
    Ok(())
}

fn take_box(slot: &mut Option<(usize, Tensor)>, m: usize) -> Result<Tensor> {
    match slot.take() {
        Some((k, t)) if k == m => Ok(t),
        other => Err(Error::Schedule(format!(
            "expected microbatch {m} in transfer slot, found {:?}",
            other.map(|(k, _)| k)
        ))),
    }
}

/// Pipelined training over `schedule` with the weight strategy of `opts`.
pub fn run_pipeline(mut model: Mlp, schedule: &PipelineSchedule, batches: &[Batch], opts: &RunOptions, hook: EpochHook) -> Result<RunOutcome> {
    check_inputs(&model, schedule, batches, opts)?;
    let part = schedule.partition();
    let assign = schedule.assignment();
    let layers = model.num_layers();
    let last = schedule.num_stages() - 1;
    let param_bytes = model.param_bytes();

    let mut providers: Vec<_> = (0..layers)
        .map(|l| WeightProvider::new(opts.strategy, l, assign.stages_after(l), opts.warmup))
        .collect();
    let mut acts: Vec<_> = (0..layers)
        .map(|l| ActivationStash::new(l, assign.activation_stash[l] + 1))
        .collect();
    let mut sgd = vec![SgdState::default(); layers];
    let mut versions = vec![0u64; layers];
    let mut live: Vec<Arc<Params>> = model.layers.iter().map(|l| Arc::new(l.params.clone())).collect();
    let mut logs = vec![UpdateLog::default(); if opts.check_history { layers } else { 0 }];
    let mut fwd_box: Vec<Option<(usize, Tensor)>> = vec![None; last + 1];
    let mut bwd_box: Vec<Option<(usize, Tensor)>> = vec![None; last + 1];
    let mut peak_copies = vec![0usize; layers];
    let mut history_checks = 0;
    let mut tracker = Tracker::new(batches.len(), opts.epoch_len, hook);

    for tick in 0..schedule.total_ticks() {
        let mut pending: Vec<(usize, usize, LayerGrads)> = Vec::new();
        for ev in schedule.tick(tick).events {
            let (s, m) = (ev.stage, ev.microbatch);
            match ev.phase {
                Phase::Fwd => {
                    let mut h = if s == 0 { batches[m].x.clone() } else { take_box(&mut fwd_box[s - 1], m)? };
                    for l in part.layers_of(s) {
                        let (y, cache) = forward_with(&live[l], model.layers[l].activation, &h)?;
                        acts[l].push(m, cache)?;
                        providers[l].on_forward(m, versions[l], &live[l])?;
                        h = y;
                    }
                    fwd_box[s] = Some((m, h));
                }
                Phase::Bwd => {
                    let mut dy = if s == last {
                        let logits = take_box(&mut fwd_box[last], m)?;
                        let (loss, d) = softmax_ce(&logits, &batches[m].y)?;
                        tracker.loss(m, loss)?;
                        d
                    } else {
                        take_box(&mut bwd_box[s + 1], m)?
                    };
                    let alpha = opts.sgd.lr_at(m);
                    for l in part.layers_of(s).rev() {
                        let cache = acts[l].take(m)?;
                        let (w, version) = providers[l].provide(m, &live[l], alpha)?;
                        if let (Some(v), true) = (version, opts.check_history) {
                            let back = (versions[l] - v) as usize;
                            if exact_history_oracle(&live[l], &logs[l], back)? != *w {
                                return Err(Error::Schedule(format!(
                                    "stashed weights of layer {l} for microbatch {m} disagree with the update log"
                                )));
                            }
                            history_checks += 1;
                        }
                        let g = backward_with(&w.w, model.layers[l].activation, &cache, &dy)?;
                        dy = g.dx.clone();
                        pending.push((l, m, g));
                    }
                    if s > 0 {
                        bwd_box[s] = Some((m, dy));
                    }
                }
                Phase::Update => {}
            }
        }
        for l in 0..layers {
            peak_copies[l] = peak_copies[l].max(providers[l].stashed_copies(versions[l]));
        }
        if pending.is_empty() {
            for p in &mut providers {
                p.observe(None)?;
            }
            continue;
        }
        let mut updated = vec![false; layers];
        let mut finished = None;
        for (l, m, g) in &pending {
            let (l, m) = (*l, *m);
            let u = sgd_step(&mut model.layers[l], &mut sgd[l], g, &opts.sgd, m)?;
            versions[l] += 1;
            live[l] = Arc::new(model.layers[l].params.clone());
            providers[l].observe(Some((&u, opts.sgd.lr_at(m))))?;
            if opts.check_history {
                logs[l].push(u);
            }
            updated[l] = true;
            if l == 0 {
                finished = Some(m);
            }
        }
        for l in (0..layers).filter(|&l| !updated[l]) {
            providers[l].observe(None)?;
        }
        for l in 0..layers {
            peak_copies[l] = peak_copies[l].max(providers[l].stashed_copies(versions[l]));
        }
        let w_bytes = (0..layers).map(|l| peak_copies[l] * param_bytes[l]).sum();
        let a_bytes = acts.iter().map(ActivationStash::peak_bytes).sum();
        tracker.after_updates(tick, &model, finished, w_bytes, a_bytes)?;
    }

    Ok(RunOutcome {
        ticks: schedule.total_ticks(),
        losses: tracker.losses,
        trajectory: tracker.trajectory,
        peak_weight_bytes: (0..layers).map(|l| peak_copies[l] * param_bytes[l]).sum(),
        peak_act_bytes: acts.iter().map(ActivationStash::peak_bytes).sum(),
        peak_act_slots: acts.iter().map(ActivationStash::peak).collect(),
        peak_weight_copies: peak_copies,
        accumulators: providers.iter().map(WeightProvider::accumulators).sum(),
        history_checks,
        model,
    })
}

/// Reference delayed-gradient training without pipeline machinery.
///
/// Microbatch `m` is computed in one go against the weight versions its
/// pipelined forward pass would have seen (layer `l` has received
/// `m - S(l)` updates), and each layer's gradient is applied at the tick the
/// pipeline would apply it.
pub fn run_delayed_serial(mut model: Mlp, schedule: &PipelineSchedule, batches: &[Batch], opts: &RunOptions, hook: EpochHook) -> Result<RunOutcome> {
    check_inputs(&model, schedule, batches, opts)?;
    let part = schedule.partition();
    let assign = schedule.assignment();
    let layers = model.num_layers();
    let depth = schedule.num_stages() - 1;
    let stages_after: Vec<usize> = (0..layers).map(|l| assign.stages_after(l)).collect();

    let mut history: Vec<VecDeque<Arc<Params>>> = model
        .layers
        .iter()
        .map(|l| VecDeque::from([Arc::new(l.params.clone())]))
        .collect();
    let mut base = vec![0usize; layers];
    let mut queue: BTreeMap<usize, Vec<(usize, usize, LayerGrads)>> = BTreeMap::new();
    let mut sgd = vec![SgdState::default(); layers];
    let mut tracker = Tracker::new(batches.len(), opts.epoch_len, hook);
    let mut next = 0;

    for tick in 0..schedule.total_ticks() {
        if tick >= depth && (tick - depth).is_multiple_of(2) && next < batches.len() {
            let m = next;
            next += 1;
            let weights: Vec<Arc<Params>> = (0..layers)
                .map(|l| Arc::clone(&history[l][m.saturating_sub(stages_after[l]) - base[l]]))
                .collect();
            let mut h = batches[m].x.clone();
            let mut caches = Vec::with_capacity(layers);
            for l in 0..layers {
                let (y, c) = forward_with(&weights[l], model.layers[l].activation, &h)?;
                caches.push(c);
                h = y;
            }
            let (loss, mut dy) = softmax_ce(&h, &batches[m].y)?;
            tracker.loss(m, loss)?;
            for l in (0..layers).rev() {
                let g = backward_with(&weights[l].w, model.layers[l].activation, &caches[l], &dy)?;
                dy = g.dx.clone();
                let at = schedule.backward_tick(part.stage_of(l), m);
                queue.entry(at).or_default().push((l, m, g));
            }
        }
        let Some(due) = queue.remove(&tick) else { continue };
        let mut finished = None;
        for (l, m, g) in &due {
            sgd_step(&mut model.layers[*l], &mut sgd[*l], g, &opts.sgd, *m)?;
            history[*l].push_back(Arc::new(model.layers[*l].params.clone()));
            if *l == 0 {
                finished = Some(*m);
            }
        }
        for l in 0..layers {
            while base[l] < next.saturating_sub(stages_after[l]) && history[l].len() > 1 {
                history[l].pop_front();
                base[l] += 1;
            }
        }
        tracker.after_updates(tick, &model, finished, 0, 0)?;
    }

    Ok(RunOutcome {
        ticks: schedule.total_ticks(),
        losses: tracker.losses,
        trajectory: tracker.trajectory,
        peak_weight_copies: vec![0; layers],
        peak_act_slots: vec![0; layers],
        peak_weight_bytes: 0,
        peak_act_bytes: 0,
        accumulators: 0,
        history_checks: 0,
        model,
    })
}

/// Plain minibatch SGD, one microbatch per step.
pub fn run_sequential(mut model: Mlp, batches: &[Batch], opts: &RunOptions, hook: EpochHook) -> Result<RunOutcome> {
    opts.sgd.validate()?;
    let layers = model.num_layers();
    let mut sgd = vec![SgdState::default(); layers];
    let mut tracker = Tracker::new(batches.len(), opts.epoch_len, hook);
    for (m, batch) in batches.iter().enumerate() {
        let (logits, caches) = model.forward(&batch.x)?;
        let (loss, mut dy) = softmax_ce(&logits, &batch.y)?;
        tracker.loss(m, loss)?;
        let mut grads = Vec::with_capacity(layers);
        for l in (0..layers).rev() {
            let g = model.layers[l].backward(&caches[l], &dy)?;
            dy = g.dx.clone();
            grads.push((l, g));
        }
        for (l, g) in &grads {
            sgd_step(&mut model.layers[*l], &mut sgd[*l], g, &opts.sgd, m)?;
        }
        tracker.after_updates(m, &model, Some(m), 0, 0)?;
    }
    Ok(RunOutcome {
        ticks: batches.len(),
        losses: tracker.losses,
        trajectory: tracker.trajectory,
        peak_weight_copies: vec![0; layers],
        peak_act_slots: vec![0; layers],
        peak_weight_bytes: 0,
        peak_act_bytes: 0,
        accumulators: 0,
        history_checks: 0,
        model,
    })
}
