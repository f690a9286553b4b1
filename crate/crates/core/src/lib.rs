//! Dual-graph evidence engine.
//!
//! Execution traces are turned into a breadth semantic graph and a depth
//! causal graph; each graph scores evidence paths for a finite answer set,
//! and the two answer distributions are fused with an entropy gate,
//! calibrated, and explained by a minimal evidence chain.

use std::collections::BTreeSet;

pub mod breadth;
pub mod config;
pub mod depth;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod pipeline;
pub mod query;
pub mod theorem;
pub mod trace;
pub mod units;

pub use breadth::{build_breadth_graph, merge_breadth_graphs, BreadthGraph};
pub use depth::{build_depth_graph, merge_depth_graphs, DepthGraph};
pub use error::GraphError;
pub use fusion::{AnswerDistribution, HyperParams};
pub use pipeline::{run_query, Execution, FusionOutcome};
pub use query::{Answer, Query};
pub use trace::{parse_trace_file, validate_trace, Trace, TraceEvent};

/// Indices of edges withheld from one graph.
pub type EdgeSet = BTreeSet<usize>;
