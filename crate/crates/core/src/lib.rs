//! Shape-only abstract interpretation of tensor dataflow graphs.
//!
//! Graphs are evaluated over abstract shapes instead of tensor data, so
//! shape incompatibilities surface without running the computation.

pub mod check;
pub mod corpus;
pub mod domain;
pub mod fuzz;
pub mod graph;
pub mod ir;
pub mod ops;
pub mod oracle;
pub mod session;

pub use domain::{DesiredDim, DesiredShape, Dim, Shape, ShapeCategory};
pub use graph::{build_graph, GraphError, NodeSpec, ShapeGraph};
pub use ops::{Op, OpKind};
pub use session::{Diagnostic, DiagnosticKind, FeedSet, LoopOutcome, RunError, SessionState};
