//! Dataflow graph of one training iteration.
//!
//! Each layer contributes four nodes: the forward computation, the
//! activation-gradient node (the delta sent upstream), the weight-gradient
//! node, and the weight-update node. The weight-update node is the only
//! stateful node: it holds the layer's weights and emits the value it held at
//! the start of the step, so every feedback loop is broken by it even when
//! all edge delays are zero.
//!
//! The loss is folded into the last layer's gradient nodes, which read the
//! network output through their activation-to-gradient edges. The output
//! boundary is therefore the single edge into [`NodeKind::Output`].

mod cutset;
mod sim;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cutset::{find_feedforward_cutsets, Cutset, CutsetKind};
pub use sim::{simulate, MapSemantics, NodeSemantics, PassThrough};

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "layer", rename_all = "snake_case")]
pub enum NodeKind {
    Input,
    Output,
    Forward(usize),
    ActGrad(usize),
    WeightGrad(usize),
    WeightUpdate(usize),
}

impl NodeKind {
    pub fn layer(self) -> Option<usize> {
        match self {
            NodeKind::Input | NodeKind::Output => None,
            NodeKind::Forward(l)
            | NodeKind::ActGrad(l)
            | NodeKind::WeightGrad(l)
            | NodeKind::WeightUpdate(l) => Some(l),
        }
    }

    pub fn is_register(self) -> bool {
        matches!(self, NodeKind::WeightUpdate(_))
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Input => write!(f, "Input"),
            NodeKind::Output => write!(f, "Output"),
            NodeKind::Forward(l) => write!(f, "F{l}"),
            NodeKind::ActGrad(l) => write!(f, "dX{l}"),
            NodeKind::WeightGrad(l) => write!(f, "G{l}"),
            NodeKind::WeightUpdate(l) => write!(f, "W{l}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeTag {
    ForwardAct,
    BackwardDelta,
    ActToGrad,
    WeightToGrad,
    GradToUpdate,
    UpdateToWeight,
}

impl fmt::Display for EdgeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EdgeTag::ForwardAct => "forward-act",
            EdgeTag::BackwardDelta => "backward-delta",
            EdgeTag::ActToGrad => "act-to-grad",
            EdgeTag::WeightToGrad => "weight-to-grad",
            EdgeTag::GradToUpdate => "grad-to-update",
            EdgeTag::UpdateToWeight => "update-to-weight",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub delay: usize,
    pub tag: EdgeTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(flatten)]
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputationGraph {
    pub num_layers: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// Dense node ids: `Input` = 0, `Output` = 1, then four per layer.
pub fn node_id(kind: NodeKind) -> NodeId {
    match kind {
        NodeKind::Input => 0,
        NodeKind::Output => 1,
        NodeKind::Forward(l) => 2 + 4 * l,
        NodeKind::ActGrad(l) => 3 + 4 * l,
        NodeKind::WeightGrad(l) => 4 + 4 * l,
        NodeKind::WeightUpdate(l) => 5 + 4 * l,
    }
}

/// Builds the unpipelined L-layer training graph with zero delay on every edge.
pub fn build_training_graph(num_layers: usize) -> Result<ComputationGraph> {
    if num_layers == 0 {
        return Err(Error::NoLayers);
    }
    let mut nodes = vec![
        Node { id: 0, kind: NodeKind::Input },
        Node { id: 1, kind: NodeKind::Output },
    ];
    for l in 0..num_layers {
        for kind in [
            NodeKind::Forward(l),
            NodeKind::ActGrad(l),
            NodeKind::WeightGrad(l),
            NodeKind::WeightUpdate(l),
        ] {
            nodes.push(Node { id: node_id(kind), kind });
        }
    }

    let mut edges = Vec::new();
    let mut edge = |src: NodeKind, dst: NodeKind, tag: EdgeTag| {
        edges.push(Edge {
            src: node_id(src),
            dst: node_id(dst),
            delay: 0,
            tag,
        })
    };
    use NodeKind::*;
    edge(Input, Forward(0), EdgeTag::ForwardAct);
    for l in 1..num_layers {
        edge(Forward(l - 1), Forward(l), EdgeTag::ForwardAct);
    }
    edge(Forward(num_layers - 1), Output, EdgeTag::ForwardAct);
    for l in 0..num_layers {
        edge(Forward(l), ActGrad(l), EdgeTag::ActToGrad);
        edge(Forward(l), WeightGrad(l), EdgeTag::ActToGrad);
        edge(WeightUpdate(l), WeightGrad(l), EdgeTag::WeightToGrad);
        edge(WeightGrad(l), WeightUpdate(l), EdgeTag::GradToUpdate);
        edge(WeightUpdate(l), Forward(l), EdgeTag::UpdateToWeight);
    }
    for l in (0..num_layers - 1).rev() {
        edge(ActGrad(l + 1), ActGrad(l), EdgeTag::BackwardDelta);
        edge(ActGrad(l + 1), WeightGrad(l), EdgeTag::BackwardDelta);
    }

    let g = ComputationGraph {
        num_layers,
        nodes,
        edges,
    };
    debug_assert!(g.validate().is_ok());
    Ok(g)
}

impl ComputationGraph {
    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.nodes[id].kind
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Index of the first edge `src -> dst` with the given tag.
    pub fn find_edge(&self, src: NodeKind, dst: NodeKind, tag: EdgeTag) -> Option<EdgeId> {
        let (s, d) = (node_id(src), node_id(dst));
        self.edges
            .iter()
            .position(|e| e.src == s && e.dst == d && e.tag == tag)
    }

    /// Delay on the edge `src -> dst`; panics when the edge does not exist.
    pub fn delay(&self, src: NodeKind, dst: NodeKind) -> usize {
        let (s, d) = (node_id(src), node_id(dst));
        self.edges
            .iter()
            .find(|e| e.src == s && e.dst == d)
            .unwrap_or_else(|| panic!("no edge {src} -> {dst}"))
            .delay
    }

    pub fn in_edges(&self, node: NodeId) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.dst == node)
    }

    pub fn out_edges(&self, node: NodeId) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.src == node)
    }

    pub fn total_delay(&self) -> usize {
        self.edges.iter().map(|e| e.delay).sum()
    }

    /// Checks the structural invariants of a training graph.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidGraph(m));
        if self.num_layers == 0 {
            return Err(Error::NoLayers);
        }
        if self.nodes.len() != 4 * self.num_layers + 2 {
            return invalid(format!(
                "expected {} nodes for {} layers, found {}",
                4 * self.num_layers + 2,
                self.num_layers,
                self.nodes.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return invalid(format!("node at index {i} has id {}", n.id));
            }
            if let Some(l) = n.kind.layer() {
                if l >= self.num_layers {
                    return invalid(format!("node {i} references layer {l}"));
                }
            }
            if !seen.insert(n.kind) {
                return invalid(format!("duplicate node kind {}", n.kind));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.src >= self.nodes.len() || e.dst >= self.nodes.len() {
                return invalid(format!("edge {i} references a missing node"));
            }
        }
        for tag in [EdgeTag::ForwardAct, EdgeTag::BackwardDelta] {
            if let Some(n) = self.cycle_in_subgraph(|e| e.tag == tag) {
                return invalid(format!("{tag} edges form a cycle through node {n}"));
            }
        }
        for cycle in self.simple_cycles() {
            let registers = cycle
                .iter()
                .filter(|&&n| self.kind(n).is_register())
                .count();
            if registers != 1 {
                return invalid(format!(
                    "cycle {:?} passes through {registers} weight-update nodes",
                    cycle
                ));
            }
        }
        Ok(())
    }

    fn cycle_in_subgraph(&self, keep: impl Fn(&Edge) -> bool) -> Option<NodeId> {
        // Kahn's algorithm; leftover nodes lie on a cycle.
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for e in self.edges.iter().filter(|e| keep(e)) {
            indeg[e.dst] += 1;
        }
        let mut stack: Vec<_> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut done = 0;
        while let Some(v) = stack.pop() {
            done += 1;
            for e in self.edges.iter().filter(|e| e.src == v && keep(e)) {
                indeg[e.dst] -= 1;
                if indeg[e.dst] == 0 {
                    stack.push(e.dst);
                }
            }
        }
        (done < n).then(|| (0..n).find(|&v| indeg[v] > 0).unwrap())
    }

    /// Every simple directed cycle, as node sequences starting at the
    /// smallest node id. Exponential in general; meant for small graphs.
    pub fn simple_cycles(&self) -> Vec<Vec<NodeId>> {
        self.simple_cycle_edges()
            .into_iter()
            .map(|c| c.iter().map(|&e| self.edges[e].src).collect())
            .collect()
    }

    /// Every simple directed cycle as a list of edge ids.
    pub fn simple_cycle_edges(&self) -> Vec<Vec<EdgeId>> {
        let n = self.nodes.len();
        let mut adj: Vec<Vec<EdgeId>> = vec![Vec::new(); n];
        for (i, e) in self.edges.iter().enumerate() {
            adj[e.src].push(i);
        }
        let mut cycles = Vec::new();
        let mut on_path = vec![false; n];
        let mut path = Vec::new();
        for start in 0..n {
            self.cycles_from(start, start, &adj, &mut on_path, &mut path, &mut cycles);
        }
        cycles
    }

    fn cycles_from(
        &self,
        start: NodeId,
        v: NodeId,
        adj: &[Vec<EdgeId>],
        on_path: &mut [bool],
        path: &mut Vec<EdgeId>,
        out: &mut Vec<Vec<EdgeId>>,
    ) {
        on_path[v] = true;
        for &ei in &adj[v] {
            let w = self.edges[ei].dst;
            if w == start {
                path.push(ei);
                out.push(path.clone());
                path.pop();
            } else if w > start && !on_path[w] {
                path.push(ei);
                self.cycles_from(start, w, adj, on_path, path, out);
                path.pop();
            }
        }
        on_path[v] = false;
    }

    pub fn cycle_delay(&self, cycle: &[EdgeId]) -> usize {
        cycle.iter().map(|&e| self.edges[e].delay).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: ComputationGraph = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_layers() {
        assert!(matches!(build_training_graph(0), Err(Error::NoLayers)));
    }

    #[test]
    fn single_layer_graph() {
        let g = build_training_graph(1).unwrap();
        assert_eq!(g.node_count(), 6);
        // Input->F0, F0->Output, plus the five per-layer edges.
        assert_eq!(g.edges.len(), 7);
        assert!(g.edges.iter().all(|e| e.delay == 0));
        g.validate().unwrap();
    }

    #[test]
    fn three_layer_counts() {
        let g = build_training_graph(3).unwrap();
        assert_eq!(g.node_count(), 14);
        let fwd = g
            .edges
            .iter()
            .filter(|e| e.tag == EdgeTag::ForwardAct)
            .count();
        assert_eq!(fwd, 4);
    }

    #[test]
    fn every_cycle_of_two_layer_graph_hits_one_register() {
        let g = build_training_graph(2).unwrap();
        let cycles = g.simple_cycles();
        assert!(!cycles.is_empty());
        for c in &cycles {
            let regs: Vec<_> = c.iter().filter(|&&n| g.kind(n).is_register()).collect();
            assert_eq!(regs.len(), 1, "cycle {c:?}");
        }
        // Layer 1: W1->G1->W1 and W1->F1->G1->W1.
        // Layer 0: W0->G0->W0, W0->F0->G0->W0, W0->F0->F1->dX1->G0->W0.
        assert_eq!(cycles.len(), 5);
    }

    #[test]
    fn validation_catches_duplicate_kind() {
        let mut g = build_training_graph(2).unwrap();
        g.nodes[2].kind = NodeKind::Forward(1);
        assert!(matches!(g.validate(), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut g = build_training_graph(3).unwrap();
        g.edges[4].delay = 3;
        let back = ComputationGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(g, back);
        let v: serde_json::Value = serde_json::from_str(&g.to_json().unwrap()).unwrap();
        assert_eq!(v["num_layers"], 3);
        assert_eq!(v["edges"][0]["tag"], "forward-act");
        assert!(v["edges"][0].get("src").is_some());
    }
}
