//! Pipelined-backpropagation toolkit: derives per-layer gradient delays by
//! retiming the training dataflow graph and simulates delayed-gradient
//! training under several weight-versioning strategies.

pub mod error;
pub mod graph;
pub mod harness;
pub mod nn;
pub mod partition;
pub mod pipeline;
pub mod planner;
pub mod retime;
pub mod weights;

pub use error::{Error, Result};
pub use graph::{build_training_graph, ComputationGraph, NodeKind};
pub use partition::StagePartition;
pub use planner::{derive_delays, storage_cost, DelayAssignment, StorageCost, WeightStrategy};
