use std::fmt;

use serde::Serialize;

use crate::partition::StagePartition;
use crate::planner::{derive_delays, DelayAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Fwd,
    Bwd,
    Update,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Event {
    pub stage: usize,
    pub phase: Phase,
    pub microbatch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrainTick {
    pub tick: usize,
    pub events: Vec<Event>,
}

/// One-forward-one-backward slot table.
///
/// With `n` downstream boundaries in total, stage `s` runs the forward pass
/// of microbatch `m` at tick `2m + s` and its backward pass (followed by the
/// weight update) at tick `2m + 2n - s + 1`. Forward and backward slots of a
/// stage have opposite parity, so each stage does at most one pass per tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineSchedule {
    partition: StagePartition,
    assignment: DelayAssignment,
    microbatches: usize,
}

impl PipelineSchedule {
    pub fn new(partition: StagePartition, microbatches: usize) -> Self {
        let assignment = derive_delays(&partition);
        Self {
            partition,
            assignment,
            microbatches,
        }
    }

    pub fn partition(&self) -> &StagePartition {
        &self.partition
    }

    pub fn assignment(&self) -> &DelayAssignment {
        &self.assignment
    }

    pub fn microbatches(&self) -> usize {
        self.microbatches
    }

    pub fn num_stages(&self) -> usize {
        self.partition.num_stages()
    }

    fn depth(&self) -> usize {
        self.num_stages() - 1
    }

    pub fn total_ticks(&self) -> usize {
        if self.microbatches == 0 {
            0
        } else {
            2 * self.microbatches + 2 * self.depth()
        }
    }

    pub fn forward_tick(&self, stage: usize, microbatch: usize) -> usize {
        2 * microbatch + stage
    }

    pub fn backward_tick(&self, stage: usize, microbatch: usize) -> usize {
        2 * microbatch + 2 * self.depth() - stage + 1
    }

    fn slot(&self, offset: isize, tick: usize) -> Option<usize> {
        let t = tick as isize - offset;
        (t >= 0 && t % 2 == 0 && ((t / 2) as usize) < self.microbatches).then_some((t / 2) as usize)
    }

    pub fn forward_slot(&self, stage: usize, tick: usize) -> Option<usize> {
        self.slot(stage as isize, tick)
    }

    pub fn backward_slot(&self, stage: usize, tick: usize) -> Option<usize> {
        self.slot(2 * self.depth() as isize - stage as isize + 1, tick)
    }

    /// Events of one tick: forwards input-most first, backwards output-most
    /// first, then updates in the same order as the backwards.
    pub fn tick(&self, tick: usize) -> TrainTick {
        let stages = self.num_stages();
        let mut events = Vec::new();
        for stage in 0..stages {
            if let Some(microbatch) = self.forward_slot(stage, tick) {
                events.push(Event { stage, phase: Phase::Fwd, microbatch });
            }
        }
        let bwd: Vec<Event> = (0..stages)
            .rev()
            .filter_map(|stage| {
                self.backward_slot(stage, tick)
                    .map(|microbatch| Event { stage, phase: Phase::Bwd, microbatch })
            })
            .collect();
        events.extend(&bwd);
        events.extend(bwd.iter().map(|e| Event { phase: Phase::Update, ..*e }));
        TrainTick { tick, events }
    }

    /// Compact slot table: one row per stage, `F<m>` / `B<m>` / `.` per tick.
    pub fn render(&self, ticks: usize) -> String {
        let mut out = String::new();
        for stage in 0..self.num_stages() {
            out.push_str(&format!("stage {stage:>2} |"));
            for t in 0..ticks.min(self.total_ticks()) {
                let cell = match (self.forward_slot(stage, t), self.backward_slot(stage, t)) {
                    (Some(m), _) => format!("F{m}"),
                    (_, Some(m)) => format!("B{m}"),
                    _ => ".".into(),
                };
                out.push_str(&format!(" {cell:>4}"));
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Fwd => "fwd",
            Phase::Bwd => "bwd",
            Phase::Update => "update",
        })
    }
}
