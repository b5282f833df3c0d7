use std::collections::{BTreeMap, VecDeque};
use std::fmt::Debug;

use super::{node_id, ComputationGraph, NodeId, NodeKind};
use crate::error::{Error, Result};

/// Per-node evaluation rules for [`simulate`].
///
/// Ordinary nodes are pure: `eval` maps the node's inputs (in edge-index
/// order) to its output. Weight-update nodes are registers: their output
/// during a step is their current state and `update` produces the state for
/// the next step. Returning `None` means the node is unbound.
pub trait NodeSemantics {
    type Value: Clone + Default + Debug;

    fn eval(&self, node: NodeId, kind: NodeKind, inputs: &[Self::Value]) -> Option<Self::Value>;

    fn update(
        &self,
        node: NodeId,
        kind: NodeKind,
        state: &Self::Value,
        inputs: &[Self::Value],
    ) -> Option<Self::Value>;
}

/// Forwards the first input; registers hold their state.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl NodeSemantics for PassThrough {
    type Value = i64;

    fn eval(&self, _: NodeId, _: NodeKind, inputs: &[i64]) -> Option<i64> {
        Some(inputs.first().copied().unwrap_or_default())
    }

    fn update(&self, _: NodeId, _: NodeKind, state: &i64, _: &[i64]) -> Option<i64> {
        Some(*state)
    }
}

type PureFn<V> = Box<dyn Fn(&[V]) -> V>;
type UpdateFn<V> = Box<dyn Fn(&V, &[V]) -> V>;

/// Semantics assembled node by node; nodes never bound make the simulation fail.
pub struct MapSemantics<V> {
    pure: BTreeMap<NodeId, PureFn<V>>,
    registers: BTreeMap<NodeId, UpdateFn<V>>,
}

impl<V> Default for MapSemantics<V> {
    fn default() -> Self {
        Self {
            pure: BTreeMap::new(),
            registers: BTreeMap::new(),
        }
    }
}

impl<V> MapSemantics<V> {
    pub fn bind(&mut self, node: NodeId, f: impl Fn(&[V]) -> V + 'static) -> &mut Self {
        self.pure.insert(node, Box::new(f));
        self
    }

    pub fn bind_register(&mut self, node: NodeId, f: impl Fn(&V, &[V]) -> V + 'static) -> &mut Self {
        self.registers.insert(node, Box::new(f));
        self
    }
}

impl<V: Clone + Default + Debug> NodeSemantics for MapSemantics<V> {
    type Value = V;

    fn eval(&self, node: NodeId, _: NodeKind, inputs: &[V]) -> Option<V> {
        self.pure.get(&node).map(|f| f(inputs))
    }

    fn update(&self, node: NodeId, _: NodeKind, state: &V, inputs: &[V]) -> Option<V> {
        self.registers.get(&node).map(|f| f(state, inputs))
    }
}

/// Evaluation order for one step: sources of zero-delay edges come first.
/// Edges into registers do not constrain the order because a register's
/// output does not depend on its inputs within the step.
fn step_order(g: &ComputationGraph) -> Result<Vec<NodeId>> {
    let n = g.node_count();
    let combinational = |e: &super::Edge| e.delay == 0 && !g.kind(e.dst).is_register();
    let mut indeg = vec![0usize; n];
    for e in g.edges.iter().filter(|e| combinational(e)) {
        indeg[e.dst] += 1;
    }
    let mut ready: VecDeque<NodeId> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_front() {
        order.push(v);
        for e in g.edges.iter().filter(|e| e.src == v && combinational(e)) {
            indeg[e.dst] -= 1;
            if indeg[e.dst] == 0 {
                ready.push_back(e.dst);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&v| indeg[v] > 0).unwrap();
        return Err(Error::CombinationalCycle(stuck));
    }
    Ok(order)
}

/// Cycle-accurate simulation of `g` for `steps` steps.
///
/// The input node emits `input_stream[t]` (the default value once the stream
/// is exhausted). Every delay element and every register starts at the
/// default value. Returns the value of the output node at each step.
pub fn simulate<S: NodeSemantics>(
    g: &ComputationGraph,
    input_stream: &[S::Value],
    steps: usize,
    semantics: &S,
) -> Result<Vec<S::Value>> {
    let order = step_order(g)?;
    let n = g.node_count();
    let input = node_id(NodeKind::Input);
    let output = node_id(NodeKind::Output);

    let mut in_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in g.edges.iter().enumerate() {
        in_edges[e.dst].push(i);
    }
    let mut lines: Vec<VecDeque<S::Value>> = g
        .edges
        .iter()
        .map(|e| std::iter::repeat_with(S::Value::default).take(e.delay).collect())
        .collect();
    let mut state: Vec<S::Value> = vec![S::Value::default(); n];
    let mut values: Vec<S::Value> = vec![S::Value::default(); n];
    let mut trace = Vec::with_capacity(steps);

    let gather = |node: NodeId, values: &[S::Value], lines: &[VecDeque<S::Value>]| -> Vec<S::Value> {
        in_edges[node]
            .iter()
            .map(|&ei| match lines[ei].front() {
                Some(v) => v.clone(),
                None => values[g.edges[ei].src].clone(),
            })
            .collect()
    };

    for t in 0..steps {
        for &v in &order {
            let kind = g.kind(v);
            values[v] = if v == input {
                input_stream.get(t).cloned().unwrap_or_default()
            } else if kind.is_register() {
                state[v].clone()
            } else {
                let args = gather(v, &values, &lines);
                semantics
                    .eval(v, kind, &args)
                    .ok_or(Error::UnboundSemantics(v))?
            };
        }
        for v in 0..n {
            let kind = g.kind(v);
            if kind.is_register() {
                let args = gather(v, &values, &lines);
                state[v] = semantics
                    .update(v, kind, &state[v], &args)
                    .ok_or(Error::UnboundSemantics(v))?;
            }
        }
        for (ei, line) in lines.iter_mut().enumerate() {
            if line.pop_front().is_some() {
                line.push_back(values[g.edges[ei].src].clone());
            }
        }
        trace.push(values[output].clone());
    }
    Ok(trace)
}
