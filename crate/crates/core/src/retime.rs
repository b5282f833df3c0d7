//! Mechanical derivation of pipeline delays by retiming.
//!
//! Starting from the unpipelined training graph:
//!
//! 1. `n` delays go on the input and output feedforward cutsets, where `n`
//!    is the number of stage boundaries.
//! 2. The grad-to-update edge of a layer with `S` downstream boundaries
//!    gets `2S` delays (delayed-gradient adaptation; this changes the
//!    computed function, unlike every later step).
//! 3. For the stage being processed, a backward retiming moves the movable
//!    amount from the edges leaving its gradient nodes onto the edges
//!    entering them, and a forward retiming moves the same amount from the
//!    edges entering its forward/weight nodes onto the edges leaving them.
//! 4. One delay is left on the boundary to the next stage and the remainder
//!    is pushed through the next stage the same way, until nothing is left.
//!
//! A stage spanning several layers is retimed as a single region.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{node_id, ComputationGraph, EdgeId, EdgeTag, NodeId, NodeKind};
use crate::partition::StagePartition;
use crate::planner::DelayAssignment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    InsertCutsetDelay,
    InsertFeedbackDelay,
    RetimeBackwardCutset,
    RetimeForwardCutset,
    LeaveBoundaryDelay,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::InsertCutsetDelay => "insert-cutset-delay",
            StepKind::InsertFeedbackDelay => "insert-feedback-delay",
            StepKind::RetimeBackwardCutset => "retime-backward-cutset",
            StepKind::RetimeForwardCutset => "retime-forward-cutset",
            StepKind::LeaveBoundaryDelay => "leave-boundary-delay",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetimingStep {
    pub kind: StepKind,
    pub stage: Option<usize>,
    /// Edges touched by the step with the signed delay change on each.
    pub edges: Vec<(EdgeId, isize)>,
    pub delta: isize,
}

/// Renders a step against the graph it was applied to.
pub struct StepDisplay<'a> {
    step: &'a RetimingStep,
    graph: &'a ComputationGraph,
}

impl RetimingStep {
    pub fn display<'a>(&'a self, graph: &'a ComputationGraph) -> StepDisplay<'a> {
        StepDisplay { step: self, graph }
    }
}

impl fmt::Display for StepDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.step;
        write!(f, "{:<22}", s.kind.to_string())?;
        if let Some(stage) = s.stage {
            write!(f, " stage {stage}")?;
        }
        write!(f, " delta {:+}:", s.delta)?;
        if s.edges.is_empty() {
            return write!(f, " (no edges)");
        }
        for (i, &(e, d)) in s.edges.iter().enumerate() {
            let edge = &self.graph.edges[e];
            let sep = if i == 0 { " " } else { ", " };
            write!(
                f,
                "{sep}{}->{} {d:+}",
                self.graph.kind(edge.src),
                self.graph.kind(edge.dst)
            )?;
        }
        Ok(())
    }
}

fn check_partition(g: &ComputationGraph, p: &StagePartition) -> Result<()> {
    if p.num_layers() != g.num_layers {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} layers, graph has {}",
            p.num_layers(),
            g.num_layers
        )));
    }
    Ok(())
}

fn add_delays(g: &mut ComputationGraph, changes: &[(EdgeId, isize)]) {
    for &(e, d) in changes {
        g.edges[e].delay = g.edges[e].delay.checked_add_signed(d).expect("delay underflow");
    }
}

/// Places `n` delays on the input and output feedforward cutsets.
pub fn insert_cutset_delays(g: &ComputationGraph, p: &StagePartition) -> Result<(ComputationGraph, RetimingStep)> {
    check_partition(g, p)?;
    let n = p.num_stages() - 1;
    let last = g.num_layers - 1;
    let input = g
        .find_edge(NodeKind::Input, NodeKind::Forward(0), EdgeTag::ForwardAct)
        .ok_or_else(|| Error::InvalidGraph("missing input edge".into()))?;
    let output = g
        .find_edge(NodeKind::Forward(last), NodeKind::Output, EdgeTag::ForwardAct)
        .ok_or_else(|| Error::InvalidGraph("missing output edge".into()))?;
    let edges = if n == 0 { vec![] } else { vec![(input, n as isize), (output, n as isize)] };
    let mut out = g.clone();
    add_delays(&mut out, &edges);
    let step = RetimingStep {
        kind: StepKind::InsertCutsetDelay,
        stage: None,
        edges,
        delta: n as isize,
    };
    Ok((out, step))
}

/// Adds `2 S(l)` delays to every grad-to-update edge.
pub fn insert_feedback_delays(g: &ComputationGraph, p: &StagePartition) -> Result<(ComputationGraph, RetimingStep)> {
    check_partition(g, p)?;
    let mut edges = Vec::new();
    for l in 0..g.num_layers {
        let s = p.stages_after(l);
        if s == 0 {
            continue;
        }
        let e = g
            .find_edge(NodeKind::WeightGrad(l), NodeKind::WeightUpdate(l), EdgeTag::GradToUpdate)
            .ok_or_else(|| Error::InvalidGraph(format!("missing grad-to-update edge of layer {l}")))?;
        edges.push((e, 2 * s as isize));
    }
    let mut out = g.clone();
    add_delays(&mut out, &edges);
    let delta = edges.iter().map(|&(_, d)| d).sum();
    let step = RetimingStep {
        kind: StepKind::InsertFeedbackDelay,
        stage: None,
        edges,
        delta,
    };
    Ok((out, step))
}

/// Both insertion steps; the cutset delays go first.
pub fn insert_initial_delays(g: &ComputationGraph, p: &StagePartition) -> Result<(ComputationGraph, Vec<RetimingStep>)> {
    let (g, cut) = insert_cutset_delays(g, p)?;
    let (g, feedback) = insert_feedback_delays(&g, p)?;
    Ok((g, vec![cut, feedback]))
}

fn stage_nodes(p: &StagePartition, stage: usize, kinds: [fn(usize) -> NodeKind; 2]) -> Result<BTreeSet<NodeId>> {
    if stage >= p.num_stages() {
        return Err(Error::InvalidPartition(format!(
            "stage {stage} out of range for {} stages",
            p.num_stages()
        )));
    }
    Ok(p.layers_of(stage)
        .flat_map(|l| kinds.map(|k| node_id(k(l))))
        .collect())
}

/// Retimes `nodes` by `lag`: every edge entering the set gains `lag`
/// delays and every edge leaving it loses `lag`.
fn apply_lag(g: &ComputationGraph, nodes: &BTreeSet<NodeId>, lag: isize) -> Result<(ComputationGraph, Vec<(EdgeId, isize)>)> {
    let mut changes = Vec::new();
    for (i, e) in g.edges.iter().enumerate() {
        let d = match (nodes.contains(&e.src), nodes.contains(&e.dst)) {
            (false, true) => lag,
            (true, false) => -lag,
            _ => continue,
        };
        if d == 0 {
            continue;
        }
        if d < 0 && e.delay < d.unsigned_abs() {
            return Err(Error::IllegalRetiming {
                edge: i,
                available: e.delay,
                requested: d.unsigned_abs(),
            });
        }
        changes.push((i, d));
    }
    let mut out = g.clone();
    add_delays(&mut out, &changes);
    Ok((out, changes))
}

/// Moves `amount` delays from the edges leaving a stage's gradient nodes
/// (delta to the previous stage, grad-to-update) onto the edges entering
/// them (act-to-grad, weight-to-grad, delta from the next stage).
pub fn retime_backward_cutset(
    g: &ComputationGraph,
    p: &StagePartition,
    stage: usize,
    amount: usize,
) -> Result<(ComputationGraph, RetimingStep)> {
    check_partition(g, p)?;
    let nodes = stage_nodes(p, stage, [NodeKind::ActGrad, NodeKind::WeightGrad])?;
    let (out, edges) = apply_lag(g, &nodes, amount as isize)?;
    Ok((
        out,
        RetimingStep {
            kind: StepKind::RetimeBackwardCutset,
            stage: Some(stage),
            edges,
            delta: amount as isize,
        },
    ))
}

/// Moves `amount` delays from the edges entering a stage's forward and
/// weight nodes (activation from the previous stage, grad-to-update) onto
/// the edges leaving them (act-to-grad, weight-to-grad, activation to the
/// next stage).
pub fn retime_forward_cutset(
    g: &ComputationGraph,
    p: &StagePartition,
    stage: usize,
    amount: usize,
) -> Result<(ComputationGraph, RetimingStep)> {
    check_partition(g, p)?;
    let nodes = stage_nodes(p, stage, [NodeKind::Forward, NodeKind::WeightUpdate])?;
    let (out, edges) = apply_lag(g, &nodes, -(amount as isize))?;
    Ok((
        out,
        RetimingStep {
            kind: StepKind::RetimeForwardCutset,
            stage: Some(stage),
            edges,
            delta: amount as isize,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct Compaction {
    pub graph: ComputationGraph,
    pub assignment: DelayAssignment,
    pub trace: Vec<RetimingStep>,
}

/// Recursive delay compaction on a graph that already carries the initial
/// delays for `p`. Stages are processed from the input side outward.
pub fn compact(g: &ComputationGraph, p: &StagePartition) -> Result<Compaction> {
    check_partition(g, p)?;
    let mut graph = g.clone();
    let mut trace = Vec::new();
    let mut movable = p.num_stages() - 1;
    let mut stage = 0;
    let mut iterations = 0;
    while movable > 0 {
        iterations += 1;
        if iterations > p.num_stages() {
            return Err(Error::CompactionDiverged(p.num_stages()));
        }
        let (next, step) = retime_backward_cutset(&graph, p, stage, movable)?;
        trace.push(step);
        let (next, step) = retime_forward_cutset(&next, p, stage, movable)?;
        trace.push(step);
        graph = next;

        let first_next = p.layers_of(stage + 1).start;
        let boundary = graph
            .find_edge(NodeKind::Forward(first_next - 1), NodeKind::Forward(first_next), EdgeTag::ForwardAct)
            .expect("stage boundary edge");
        trace.push(RetimingStep {
            kind: StepKind::LeaveBoundaryDelay,
            stage: Some(stage),
            edges: vec![(boundary, 0)],
            delta: 1,
        });
        movable -= 1;
        stage += 1;
    }
    let assignment = extract_assignment(&graph);
    Ok(Compaction {
        graph,
        assignment,
        trace,
    })
}

/// Reads the per-layer delays off a graph.
///
/// The gradient delay of layer `l` is the delay around its round trip:
/// weight into the forward pass, forward to the network output, back down
/// the delta chain into the weight gradient, and into the update. Stash
/// depths are half the act-to-grad and weight-to-grad delays because a new
/// microbatch enters only every other iteration under 1F1B interleaving.
pub fn extract_assignment(g: &ComputationGraph) -> DelayAssignment {
    use NodeKind::*;
    let last = g.num_layers - 1;
    let mut a = DelayAssignment {
        gradient_delay: Vec::with_capacity(g.num_layers),
        weight_stash: Vec::with_capacity(g.num_layers),
        activation_stash: Vec::with_capacity(g.num_layers),
    };
    for l in 0..g.num_layers {
        let mut d = g.delay(WeightUpdate(l), Forward(l)) + g.delay(WeightGrad(l), WeightUpdate(l));
        d += (l..last).map(|j| g.delay(Forward(j), Forward(j + 1))).sum::<usize>();
        if l == last {
            d += g.delay(Forward(l), WeightGrad(l));
        } else {
            d += g.delay(Forward(last), ActGrad(last));
            d += (l + 2..=last).map(|j| g.delay(ActGrad(j), ActGrad(j - 1))).sum::<usize>();
            d += g.delay(ActGrad(l + 1), WeightGrad(l));
        }
        a.gradient_delay.push(d);
        a.weight_stash.push(g.delay(WeightUpdate(l), WeightGrad(l)) / 2);
        a.activation_stash.push(g.delay(Forward(l), WeightGrad(l)) / 2);
    }
    a
}

/// One line per step, for `--explain` output.
pub fn render_trace(graph: &ComputationGraph, trace: &[RetimingStep]) -> String {
    trace
        .iter()
        .map(|s| format!("{}\n", s.display(graph)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_training_graph;
    use crate::planner::derive_delays;
    use NodeKind::*;

    fn inserted(p: &StagePartition) -> ComputationGraph {
        let g = build_training_graph(p.num_layers()).unwrap();
        insert_initial_delays(&g, p).unwrap().0
    }

    #[test]
    fn feedback_delays_per_layer() {
        let p = StagePartition::per_layer(3).unwrap();
        let g = inserted(&p);
        let fb: Vec<_> = (0..3).map(|l| g.delay(WeightGrad(l), WeightUpdate(l))).collect();
        assert_eq!(fb, vec![4, 2, 0]);
        assert_eq!(g.delay(Input, Forward(0)), 2);
        assert_eq!(g.delay(Forward(2), Output), 2);
    }

    #[test]
    fn single_stage_inserts_nothing() {
        let p = StagePartition::single_stage(3).unwrap();
        let g = build_training_graph(3).unwrap();
        assert_eq!(inserted(&p), g);
    }

    #[test]
    fn grouped_feedback_delays() {
        let p = StagePartition::from_sizes(&[2, 2]).unwrap();
        let g = inserted(&p);
        let fb: Vec<_> = (0..4).map(|l| g.delay(WeightGrad(l), WeightUpdate(l))).collect();
        assert_eq!(fb, vec![2, 2, 0, 0]);
    }

    #[test]
    fn zero_amount_is_identity() {
        let p = StagePartition::per_layer(2).unwrap();
        let g = inserted(&p);
        assert_eq!(retime_backward_cutset(&g, &p, 1, 0).unwrap().0, g);
        assert_eq!(retime_forward_cutset(&g, &p, 0, 0).unwrap().0, g);
    }

    #[test]
    fn backward_retime_on_output_layer() {
        // Give the output layer's backward region something to move: one
        // delay on its grad-to-update edge.
        let p = StagePartition::per_layer(2).unwrap();
        let mut g = build_training_graph(2).unwrap();
        let g2u = g.find_edge(WeightGrad(1), WeightUpdate(1), EdgeTag::GradToUpdate).unwrap();
        let d1 = g.find_edge(ActGrad(1), ActGrad(0), EdgeTag::BackwardDelta).unwrap();
        let d2 = g.find_edge(ActGrad(1), WeightGrad(0), EdgeTag::BackwardDelta).unwrap();
        for e in [g2u, d1, d2] {
            g.edges[e].delay = 1;
        }
        let (r, _) = retime_backward_cutset(&g, &p, 1, 1).unwrap();
        assert_eq!(r.delay(Forward(1), ActGrad(1)), 1);
        assert_eq!(r.delay(Forward(1), WeightGrad(1)), 1);
        assert_eq!(r.delay(WeightUpdate(1), WeightGrad(1)), 1);
        assert_eq!(r.delay(WeightGrad(1), WeightUpdate(1)), 0);
        assert_eq!(r.delay(ActGrad(1), ActGrad(0)), 0);
    }

    #[test]
    fn illegal_retime_leaves_graph_alone() {
        let p = StagePartition::per_layer(2).unwrap();
        let g = build_training_graph(2).unwrap();
        let before = g.clone();
        let err = retime_backward_cutset(&g, &p, 0, 1).unwrap_err();
        assert!(matches!(err, Error::IllegalRetiming { available: 0, requested: 1, .. }));
        assert_eq!(g, before);
    }

    #[test]
    fn compaction_matches_closed_form() {
        for sizes in [&[1, 1, 1][..], &[2, 2], &[2, 2, 2], &[1, 3], &[4]] {
            let p = StagePartition::from_sizes(sizes).unwrap();
            let c = compact(&inserted(&p), &p).unwrap();
            assert_eq!(c.assignment, derive_delays(&p), "partition {p}");
        }
    }

    #[test]
    fn compacted_structure() {
        let p = StagePartition::per_layer(3).unwrap();
        let c = compact(&inserted(&p), &p).unwrap();
        let g = &c.graph;
        assert_eq!(c.assignment.gradient_delay, vec![4, 2, 0]);
        for l in 0..3 {
            assert_eq!(g.delay(WeightGrad(l), WeightUpdate(l)), 0, "feedback edge of layer {l}");
            assert_eq!(g.delay(Forward(l), ActGrad(l)), 2 * (2 - l));
            assert_eq!(g.delay(WeightUpdate(l), WeightGrad(l)), 2 * (2 - l));
        }
        assert_eq!(g.delay(Input, Forward(0)), 0);
        assert_eq!(g.delay(Forward(0), Forward(1)), 1);
        assert_eq!(g.delay(Forward(1), Forward(2)), 1);
        assert_eq!(g.delay(ActGrad(2), ActGrad(1)), 1);
        assert_eq!(g.delay(ActGrad(1), WeightGrad(0)), 1);
        g.validate().unwrap();
    }

    #[test]
    fn grouped_region_moves_as_one() {
        let p = StagePartition::from_sizes(&[2, 2]).unwrap();
        let g = inserted(&p);
        let (r, step) = retime_forward_cutset(&g, &p, 0, 1).unwrap();
        // The edge between the two grouped layers is internal and untouched.
        assert_eq!(r.delay(Forward(0), Forward(1)), 0);
        assert_eq!(r.delay(Forward(1), Forward(2)), 1);
        assert_eq!(r.delay(Input, Forward(0)), 0);
        assert!(step.edges.iter().all(|&(e, _)| {
            let e = &g.edges[e];
            !(e.src == node_id(Forward(0)) && e.dst == node_id(Forward(1)))
        }));
    }

    #[test]
    fn trace_is_one_line_per_step() {
        let p = StagePartition::per_layer(3).unwrap();
        let g0 = build_training_graph(3).unwrap();
        let (g, mut trace) = insert_initial_delays(&g0, &p).unwrap();
        let c = compact(&g, &p).unwrap();
        trace.extend(c.trace);
        let text = render_trace(&g0, &trace);
        assert_eq!(text.lines().count(), trace.len());
        assert!(text.lines().next().unwrap().starts_with("insert-cutset-delay"));
    }
}
