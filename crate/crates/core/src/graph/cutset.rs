use std::collections::BTreeSet;

use super::{node_id, ComputationGraph, EdgeId, NodeId, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// From the cut side into the rest of the graph.
    Outward,
    Inward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutsetKind {
    InputBoundary,
    OutputBoundary,
    /// Between layer `l` and layer `l + 1`.
    LayerBoundary(usize),
    /// All edges incident to a single node.
    Node(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cutset {
    pub kind: CutsetKind,
    /// Nodes on one side of the cut.
    pub side: BTreeSet<NodeId>,
    pub edges: Vec<(EdgeId, Direction)>,
}

impl Cutset {
    /// Cut separating `side` from the remaining nodes.
    pub fn new(g: &ComputationGraph, side: BTreeSet<NodeId>, kind: CutsetKind) -> Self {
        let edges = g
            .edges
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match (side.contains(&e.src), side.contains(&e.dst)) {
                (true, false) => Some((i, Direction::Outward)),
                (false, true) => Some((i, Direction::Inward)),
                _ => None,
            })
            .collect();
        Cutset { kind, side, edges }
    }

    pub fn is_feedforward(&self) -> bool {
        !self.edges.is_empty() && self.edges.iter().all(|&(_, d)| d == self.edges[0].1)
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.edges.iter().map(|&(e, _)| e)
    }

    /// True when deleting the cut edges leaves exactly two weakly connected
    /// components.
    pub fn splits_in_two(&self, g: &ComputationGraph) -> bool {
        let cut: BTreeSet<EdgeId> = self.edge_ids().collect();
        let n = g.node_count();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        for root in 0..n {
            if comp[root] != usize::MAX {
                continue;
            }
            comp[root] = count;
            let mut stack = vec![root];
            while let Some(v) = stack.pop() {
                for (i, e) in g.edges.iter().enumerate() {
                    if cut.contains(&i) {
                        continue;
                    }
                    let w = if e.src == v {
                        e.dst
                    } else if e.dst == v {
                        e.src
                    } else {
                        continue;
                    };
                    if comp[w] == usize::MAX {
                        comp[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        count == 2
    }

    /// Output latency added by placing `k` delays on every edge of this
    /// (feedforward) cut: `k` when the cut lies between the input and the
    /// output, zero when both are on the same side.
    pub fn output_latency(&self, k: usize) -> usize {
        let input = self.side.contains(&node_id(NodeKind::Input));
        let output = self.side.contains(&node_id(NodeKind::Output));
        if input != output {
            k
        } else {
            0
        }
    }

    /// Copy of `g` with `k` extra delays on every cut edge.
    pub fn with_delay(&self, g: &ComputationGraph, k: usize) -> ComputationGraph {
        let mut out = g.clone();
        for e in self.edge_ids() {
            out.edges[e].delay += k;
        }
        out
    }
}

/// Structural boundary cuts of `g`: one cut per node (which covers the input
/// and output boundaries) and one per layer boundary.
pub fn boundary_cutsets(g: &ComputationGraph) -> Vec<Cutset> {
    let mut cuts = Vec::new();
    for node in &g.nodes {
        let kind = match node.kind {
            NodeKind::Input => CutsetKind::InputBoundary,
            NodeKind::Output => CutsetKind::OutputBoundary,
            _ => CutsetKind::Node(node.id),
        };
        cuts.push(Cutset::new(g, BTreeSet::from([node.id]), kind));
    }
    for l in 0..g.num_layers.saturating_sub(1) {
        let side = g
            .nodes
            .iter()
            .filter(|n| match n.kind {
                NodeKind::Input => true,
                NodeKind::Output => false,
                k => k.layer().unwrap() <= l,
            })
            .map(|n| n.id)
            .collect();
        cuts.push(Cutset::new(g, side, CutsetKind::LayerBoundary(l)));
    }
    cuts
}

/// All structural boundary cuts whose edges cross in one direction only.
pub fn find_feedforward_cutsets(g: &ComputationGraph) -> Vec<Cutset> {
    boundary_cutsets(g)
        .into_iter()
        .filter(|c| c.is_feedforward() && c.splits_in_two(g))
        .collect()
}
