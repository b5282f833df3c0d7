//! Self-checks run by `pipesim verify`: the retiming derivation against the
//! closed form, and the pipeline against its serial references.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::build_training_graph;
use crate::nn::{Mlp, SgdConfig, Tensor};
use crate::partition::StagePartition;
use crate::pipeline::{run_delayed_serial, run_pipeline, run_sequential, Batch, PipelineSchedule, RunOptions};
use crate::planner::{derive_delays, WeightStrategy};
use crate::retime::{compact, insert_initial_delays};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, failures: Vec<String>, cases: usize) -> Self {
        Self {
            name: name.to_string(),
            passed: failures.is_empty(),
            detail: match failures.first() {
                None => format!("{cases} cases"),
                Some(f) => format!("{} of {cases} cases failed, first: {f}", failures.len()),
            },
        }
    }
}

fn random_batches(seed: u64, count: usize) -> Vec<Batch> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
            Batch {
                x: Tensor::new(vec![4, 2], x).expect("fixed shape"),
                y: (0..4).map(|_| r.gen_range(0..3)).collect(),
            }
        })
        .collect()
}

fn model(layers: usize, seed: u64) -> Result<Mlp> {
    let mut sizes = vec![2];
    sizes.extend(std::iter::repeat_n(6, layers - 1));
    sizes.push(3);
    Mlp::new(&sizes, seed)
}

fn retiming(max_layers: usize) -> Result<Check> {
    let mut failures = Vec::new();
    let mut cases = 0;
    for l in 1..=max_layers {
        let g = build_training_graph(l)?;
        for p in StagePartition::enumerate(l) {
            cases += 1;
            let (init, _) = insert_initial_delays(&g, &p)?;
            let c = compact(&init, &p)?;
            if c.assignment != derive_delays(&p) {
                failures.push(format!("partition {p}: {:?}", c.assignment.gradient_delay));
            } else if c.graph.simple_cycle_edges().iter().any(|cy| c.graph.cycle_delay(cy) != init.cycle_delay(cy)) {
                failures.push(format!("partition {p}: cycle delay changed"));
            }
        }
    }
    Ok(Check::new("retiming matches closed form", failures, cases))
}

fn oracle(max_layers: usize, seed: u64) -> Result<(Check, Check)> {
    let (mut eq, mut storage) = (Vec::new(), Vec::new());
    let mut cases = 0;
    let batches = random_batches(seed, 100);
    for l in 1..=max_layers.min(4) {
        for p in StagePartition::enumerate(l) {
            cases += 1;
            let m = model(l, seed)?;
            let sched = PipelineSchedule::new(p.clone(), batches.len());
            let mut opts = RunOptions::new(SgdConfig::plain(0.05), WeightStrategy::ExactStash);
            opts.check_history = true;
            let a = run_pipeline(m.clone(), &sched, &batches, &opts, &mut |_, _| Ok(()))?;
            let b = run_delayed_serial(m, &sched, &batches, &opts, &mut |_, _| Ok(()))?;
            if a.trajectory != b.trajectory {
                eq.push(format!("partition {p}"));
            }
            let plan = derive_delays(&p);
            let want: Vec<usize> = plan.activation_stash.iter().map(|s| s + 1).collect();
            if a.peak_weight_copies != plan.weight_stash || a.peak_act_slots != want {
                storage.push(format!("partition {p}: weights {:?}, activations {:?}", a.peak_weight_copies, a.peak_act_slots));
            }
        }
    }
    Ok((
        Check::new("pipeline equals delayed serial", eq, cases),
        Check::new("stash peaks match plan", storage, cases),
    ))
}

fn degenerate(seed: u64) -> Result<Check> {
    let batches = random_batches(seed + 1, 50);
    let mut failures = Vec::new();
    let strategies = [WeightStrategy::ExactStash, WeightStrategy::Latest, WeightStrategy::PipelineAwareEma];
    for s in strategies {
        let m = model(3, seed)?;
        let opts = RunOptions::new(SgdConfig::plain(0.05), s);
        let sched = PipelineSchedule::new(StagePartition::single_stage(3)?, batches.len());
        let a = run_pipeline(m.clone(), &sched, &batches, &opts, &mut |_, _| Ok(()))?;
        let b = run_sequential(m, &batches, &opts, &mut |_, _| Ok(()))?;
        if a.trajectory != b.trajectory {
            failures.push(s.to_string());
        }
    }
    Ok(Check::new("single stage equals sequential", failures, strategies.len()))
}

/// Runs every check over partitions of up to `max_layers` layers.
pub fn run_checks(max_layers: usize, seed: u64) -> Result<Vec<Check>> {
    let (eq, storage) = oracle(max_layers, seed)?;
    Ok(vec![retiming(max_layers)?, eq, storage, degenerate(seed)?])
}
