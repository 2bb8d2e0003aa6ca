//! Session semantics: binding feeds, evaluating transfer functions in
//! topological order, and carrying variable shapes across repeated runs.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use serde_json::json;
use thiserror::Error;

use crate::domain::Shape;
use crate::graph::{GraphError, NodeSpec, ShapeGraph};
use crate::ops::{Op, OpKind};

/// Placeholder bindings for one run: placeholder id to the shape of the data
/// that would be fed.
pub type FeedSet = BTreeMap<String, Shape>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiagnosticKind {
    ShapeMismatch,
    UnboundPlaceholder,
    IllegalAttribute,
}

impl DiagnosticKind {
    pub fn name(self) -> &'static str {
        match self {
            DiagnosticKind::ShapeMismatch => "ShapeMismatch",
            DiagnosticKind::UnboundPlaceholder => "UnboundPlaceholder",
            DiagnosticKind::IllegalAttribute => "IllegalAttribute",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            DiagnosticKind::ShapeMismatch,
            DiagnosticKind::UnboundPlaceholder,
            DiagnosticKind::IllegalAttribute,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A detected shape error, located at a node and an iteration.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct Diagnostic {
    pub node_id: String,
    pub op: OpKind,
    pub input_shapes: Vec<Shape>,
    pub iteration: u64,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    fn new(
        node: &NodeSpec,
        input_shapes: Vec<Shape>,
        iteration: u64,
        kind: DiagnosticKind,
        detail: &str,
    ) -> Self {
        let shapes = input_shapes
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ");
        let message = format!(
            "{kind} at node '{}' ({}) in iteration {iteration}: {detail}; input shapes: {shapes}",
            node.id,
            node.kind(),
        );
        Diagnostic {
            node_id: node.id.clone(),
            op: node.kind(),
            input_shapes,
            iteration,
            kind,
            message,
        }
    }

    /// `{node, op, inputs, iteration, kind, message}`
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "node": self.node_id,
            "op": self.op.name(),
            "inputs": self.input_shapes.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "iteration": self.iteration,
            "kind": self.kind.name(),
            "message": self.message,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Diagnostic(Box<Diagnostic>),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("run requires at least one fetch")]
    NoFetches,
    #[error("run loop requires at least one feed set")]
    NoFeeds,
}

impl From<Diagnostic> for RunError {
    fn from(d: Diagnostic) -> Self {
        RunError::Diagnostic(Box::new(d))
    }
}

impl RunError {
    pub fn diagnostic(&self) -> Option<&Diagnostic> {
        match self {
            RunError::Diagnostic(d) => Some(d),
            _ => None,
        }
    }
}

/// Shapes of every evaluated node, in evaluation order.
pub type RunOutput = IndexMap<String, Shape>;

/// Successful completion of a run loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopOutcome {
    pub iterations: u64,
}

impl fmt::Display for LoopOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("no error detected")
    }
}

/// Re-asserts a shape on a tensor that already has one.
pub fn reassert_shape(
    node: &NodeSpec,
    declared: &Shape,
    reasserted: &Shape,
    iteration: u64,
) -> Result<Shape, Diagnostic> {
    match declared.meet(reasserted) {
        Shape::Bottom => Err(Diagnostic::new(
            node,
            vec![declared.clone(), reasserted.clone()],
            iteration,
            DiagnosticKind::IllegalAttribute,
            "shape conflicts with the shape already set",
        )),
        s => Ok(s),
    }
}

/// Mutable per-session state over an immutable graph.
///
/// Variable nodes read the shape recorded here at the start of each run.
/// Assign updates are committed when the run completes; a failed run leaves
/// the state untouched.
#[derive(Debug, Clone)]
pub struct SessionState<'g> {
    graph: &'g ShapeGraph,
    var_shapes: BTreeMap<String, Shape>,
    iteration: u64,
}

impl<'g> SessionState<'g> {
    pub fn new(graph: &'g ShapeGraph) -> Self {
        let var_shapes = graph
            .variables()
            .map(|n| {
                let shape = n.declared_shape().cloned().unwrap_or(Shape::RankUnknown);
                (n.id.clone(), shape)
            })
            .collect();
        SessionState {
            graph,
            var_shapes,
            iteration: 1,
        }
    }

    pub fn graph(&self) -> &'g ShapeGraph {
        self.graph
    }

    /// Iteration index the next run will carry.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn var_shape(&self, id: &str) -> Option<&Shape> {
        self.var_shapes.get(id)
    }

    pub fn var_shapes(&self) -> &BTreeMap<String, Shape> {
        &self.var_shapes
    }

    /// Evaluates the ancestor closure of `fetches`, stopping at the first
    /// node whose shape is bottom.
    pub fn run<S: AsRef<str>>(
        &mut self,
        fetches: &[S],
        feed: &FeedSet,
    ) -> Result<RunOutput, RunError> {
        if fetches.is_empty() {
            return Err(RunError::NoFetches);
        }
        let graph = self.graph;
        let order = graph.topo_order(fetches)?;
        let mut values: Vec<Option<Shape>> = vec![None; graph.len()];
        let mut output = RunOutput::with_capacity(order.len());
        let mut updates: Vec<(&str, Shape)> = Vec::new();

        for node in order {
            let shape = self.evaluate(node, &values, feed)?;
            if let Op::Assign { .. } = node.op {
                updates.push((node.inputs[0].as_str(), shape.clone()));
            }
            let pos = graph.position(&node.id).expect("node from topo order");
            values[pos] = Some(shape.clone());
            output.insert(node.id.clone(), shape);
        }

        for (var, shape) in updates {
            self.var_shapes.insert(var.to_string(), shape);
        }
        self.iteration += 1;
        Ok(output)
    }

    fn evaluate(
        &self,
        node: &NodeSpec,
        values: &[Option<Shape>],
        feed: &FeedSet,
    ) -> Result<Shape, Diagnostic> {
        let iteration = self.iteration;
        match &node.op {
            Op::Placeholder { shape: declared } => {
                let Some(fed) = feed.get(&node.id) else {
                    return Err(Diagnostic::new(
                        node,
                        vec![declared.clone()],
                        iteration,
                        DiagnosticKind::UnboundPlaceholder,
                        "placeholder must be fed before running",
                    ));
                };
                match declared.meet(fed) {
                    Shape::Bottom => Err(Diagnostic::new(
                        node,
                        vec![declared.clone(), fed.clone()],
                        iteration,
                        DiagnosticKind::ShapeMismatch,
                        &format!(
                            "cannot feed value of shape {fed} for placeholder of shape {declared}"
                        ),
                    )),
                    s => Ok(s),
                }
            }
            Op::Variable { .. } => Ok(self
                .var_shapes
                .get(&node.id)
                .cloned()
                .unwrap_or(Shape::RankUnknown)),
            op => {
                let inputs: Vec<Shape> = self
                    .graph
                    .input_indices(&node.id)
                    .expect("node belongs to graph")
                    .iter()
                    .map(|&i| values[i].clone().expect("inputs evaluated first"))
                    .collect();
                if let Op::SetShape { shape } = op {
                    return reassert_shape(node, &inputs[0], shape, iteration);
                }
                match op.transfer(&inputs) {
                    Shape::Bottom => {
                        let (kind, detail) = failure_detail(op);
                        Err(Diagnostic::new(node, inputs, iteration, kind, detail))
                    }
                    s => Ok(s),
                }
            }
        }
    }

    /// Runs `repeat` passes over `feeds`, one run per feed set, keeping
    /// variable shapes between runs.
    pub fn run_loop<S: AsRef<str>>(
        &mut self,
        fetches: &[S],
        feeds: &[FeedSet],
        repeat: u64,
    ) -> Result<LoopOutcome, RunError> {
        let total = repeat.saturating_mul(feeds.len() as u64);
        self.run_iterations(fetches, feeds, total, |_, _| {})
    }

    /// Runs exactly `total` iterations, cycling through `feeds`, and hands
    /// each successful run's shapes to `observe`.
    pub fn run_iterations<S: AsRef<str>>(
        &mut self,
        fetches: &[S],
        feeds: &[FeedSet],
        total: u64,
        mut observe: impl FnMut(u64, &RunOutput),
    ) -> Result<LoopOutcome, RunError> {
        if feeds.is_empty() {
            return Err(RunError::NoFeeds);
        }
        for feed in feeds.iter().cycle().take(total as usize) {
            let iteration = self.iteration;
            let out = self.run(fetches, feed)?;
            observe(iteration, &out);
        }
        Ok(LoopOutcome { iterations: total })
    }
}

fn failure_detail(op: &Op) -> (DiagnosticKind, &'static str) {
    match op {
        Op::Reshape { desired: None } => (
            DiagnosticKind::IllegalAttribute,
            "reshape requires a target shape",
        ),
        Op::Reshape { .. } => (
            DiagnosticKind::ShapeMismatch,
            "input element count is incompatible with the target shape",
        ),
        Op::Assign { .. } => (
            DiagnosticKind::ShapeMismatch,
            "assigned value does not match the variable shape",
        ),
        Op::MatMul => (
            DiagnosticKind::ShapeMismatch,
            "matmul needs rank-2 operands with matching inner dimensions",
        ),
        Op::Conv2d { .. } => (
            DiagnosticKind::ShapeMismatch,
            "conv2d needs rank-4 input and filter with matching channels and a window that fits",
        ),
        Op::Pool2d { .. } => (
            DiagnosticKind::ShapeMismatch,
            "pooling needs a rank-4 input larger than the window",
        ),
        Op::Elementwise(_) => (
            DiagnosticKind::ShapeMismatch,
            "operands cannot be broadcast together",
        ),
        Op::Concat { .. } => (
            DiagnosticKind::ShapeMismatch,
            "concat operands disagree in rank or in a non-concatenated dimension",
        ),
        Op::Transpose { .. } => (
            DiagnosticKind::ShapeMismatch,
            "perm is not a permutation of the input axes",
        ),
        Op::Squeeze { .. } => (
            DiagnosticKind::ShapeMismatch,
            "squeezed axis is not known to have size 1",
        ),
        _ => (DiagnosticKind::ShapeMismatch, "shapes are incompatible"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, tests::harmonic_graph};
    use crate::ops::UnaryKind;

    const U: Option<u64> = None;

    fn feed(pairs: &[(&str, Shape)]) -> FeedSet {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    fn dense_graph() -> ShapeGraph {
        build_graph(vec![
            NodeSpec::new(
                "x",
                Op::Placeholder {
                    shape: Shape::partial([U, Some(784)]),
                },
                &[],
            ),
            NodeSpec::new(
                "w",
                Op::Variable {
                    shape: Shape::known([784, 10]),
                },
                &[],
            ),
            NodeSpec::new("logits", Op::MatMul, &["x", "w"]),
            NodeSpec::new("out", Op::Identity(UnaryKind::Softmax), &["logits"]),
        ])
        .unwrap()
    }

    #[test]
    fn swapped_feed_is_reported_at_placeholder() {
        let g = dense_graph();
        let mut s = SessionState::new(&g);
        let err = s
            .run(&["out"], &feed(&[("x", Shape::known([50, 10]))]))
            .unwrap_err();
        let d = err.diagnostic().unwrap();
        assert_eq!(d.node_id, "x");
        assert_eq!(d.kind, DiagnosticKind::ShapeMismatch);
        assert_eq!(d.iteration, 1);
        assert_eq!(
            d.input_shapes,
            vec![Shape::partial([U, Some(784)]), Shape::known([50, 10])]
        );
        assert!(d.message.contains("'x'") && d.message.contains("placeholder"));
        assert!(d.message.contains("[null,784]") && d.message.contains("[50,10]"));
        assert_eq!(s.iteration(), 1);
    }

    #[test]
    fn dense_graph_runs_clean() {
        let g = dense_graph();
        let mut s = SessionState::new(&g);
        let out = s
            .run_loop(&["out"], &[feed(&[("x", Shape::known([100, 784]))])], 3)
            .unwrap();
        assert_eq!(out.iterations, 3);
        assert_eq!(out.to_string(), "no error detected");
        assert_eq!(s.iteration(), 4);
    }

    #[test]
    fn harmonic_graph_is_all_scalars() {
        let g = harmonic_graph();
        let mut s = SessionState::new(&g);
        let out = s.run(&["harmonic"], &FeedSet::new()).unwrap();
        assert_eq!(out.len(), 7);
        assert!(out.values().all(|v| *v == Shape::scalar()));
        assert!(s.run_loop(&["harmonic"], &[FeedSet::new()], 1).is_ok());
    }

    #[test]
    fn missing_feed_is_unbound() {
        let g = dense_graph();
        let mut s = SessionState::new(&g);
        let err = s.run(&["out"], &FeedSet::new()).unwrap_err();
        assert_eq!(
            err.diagnostic().unwrap().kind,
            DiagnosticKind::UnboundPlaceholder
        );
        // the variable alone does not need the feed
        assert!(s.run(&["w"], &FeedSet::new()).is_ok());
    }

    #[test]
    fn run_argument_errors() {
        let g = dense_graph();
        let mut s = SessionState::new(&g);
        assert_eq!(
            s.run::<&str>(&[], &FeedSet::new()).unwrap_err(),
            RunError::NoFetches
        );
        assert_eq!(s.run_loop(&["w"], &[], 1).unwrap_err(), RunError::NoFeeds);
        assert!(matches!(
            s.run(&["ghost"], &FeedSet::new()).unwrap_err(),
            RunError::Graph(GraphError::UnknownFetch(_))
        ));
    }

    /// Variable `store` starts [4,3]; each run computes transpose(input x store)
    /// and assigns it back without validation, so the second run multiplies
    /// [3,4] by [3,3].
    fn second_batch_graph() -> ShapeGraph {
        build_graph(vec![
            NodeSpec::new(
                "input",
                Op::Placeholder {
                    shape: Shape::known([3, 4]),
                },
                &[],
            ),
            NodeSpec::new(
                "store",
                Op::Variable {
                    shape: Shape::known([4, 3]),
                },
                &[],
            ),
            NodeSpec::new("prod", Op::MatMul, &["input", "store"]),
            NodeSpec::new("t", Op::Transpose { perm: None }, &["prod"]),
            NodeSpec::new("update", Op::Assign { validate: false }, &["store", "t"]),
        ])
        .unwrap()
    }

    #[test]
    fn error_appears_on_second_iteration() {
        let g = second_batch_graph();
        let mut s = SessionState::new(&g);
        let feeds = [feed(&[("input", Shape::known([3, 4]))])];
        let err = s.run_loop(&["update"], &feeds, 5).unwrap_err();
        let d = err.diagnostic().unwrap();
        assert_eq!((d.node_id.as_str(), d.iteration), ("prod", 2));
        assert_eq!(
            d.input_shapes,
            vec![Shape::known([3, 4]), Shape::known([3, 3])]
        );
        assert_eq!(s.var_shape("store"), Some(&Shape::known([3, 3])));
    }

    #[test]
    fn validated_assign_rejects_shape_change() {
        let g = build_graph(vec![
            NodeSpec::new(
                "v",
                Op::Variable {
                    shape: Shape::known([2, 2]),
                },
                &[],
            ),
            NodeSpec::new(
                "c",
                Op::Constant {
                    shape: Shape::known([3]),
                },
                &[],
            ),
            NodeSpec::new("a", Op::Assign { validate: true }, &["v", "c"]),
        ])
        .unwrap();
        let mut s = SessionState::new(&g);
        let d = s.run(&["a"], &FeedSet::new()).unwrap_err();
        assert_eq!(d.diagnostic().unwrap().node_id, "a");
        assert_eq!(s.var_shape("v"), Some(&Shape::known([2, 2])));
    }

    #[test]
    fn assign_outside_closure_does_not_fire() {
        let g = second_batch_graph();
        let mut s = SessionState::new(&g);
        let feeds = [feed(&[("input", Shape::known([3, 4]))])];
        s.run_loop(&["prod"], &feeds, 4).unwrap();
        assert_eq!(s.var_shape("store"), Some(&Shape::known([4, 3])));
    }

    #[test]
    fn set_shape_refines_or_rejects() {
        let node = NodeSpec::new(
            "p",
            Op::SetShape {
                shape: Shape::RankUnknown,
            },
            &["x"],
        );
        assert_eq!(
            reassert_shape(
                &node,
                &Shape::partial([U, Some(10)]),
                &Shape::known([32, 10]),
                1
            ),
            Ok(Shape::known([32, 10]))
        );
        assert_eq!(
            reassert_shape(&node, &Shape::RankUnknown, &Shape::known([5]), 1),
            Ok(Shape::known([5]))
        );
        let d =
            reassert_shape(&node, &Shape::known([64, 10]), &Shape::known([32, 10]), 3).unwrap_err();
        assert_eq!((d.kind, d.iteration), (DiagnosticKind::IllegalAttribute, 3));
    }

    #[test]
    fn set_shape_node_in_graph() {
        let g = build_graph(vec![
            NodeSpec::new(
                "x",
                Op::Placeholder {
                    shape: Shape::partial([U, Some(10)]),
                },
                &[],
            ),
            NodeSpec::new(
                "fix",
                Op::SetShape {
                    shape: Shape::known([32, 10]),
                },
                &["x"],
            ),
        ])
        .unwrap();
        let mut s = SessionState::new(&g);
        let ok = s
            .run(&["fix"], &feed(&[("x", Shape::partial([U, Some(10)]))]))
            .unwrap();
        assert_eq!(ok["fix"], Shape::known([32, 10]));
        let err = s
            .run(&["fix"], &feed(&[("x", Shape::known([64, 10]))]))
            .unwrap_err();
        let d = err.diagnostic().unwrap();
        assert_eq!(
            (d.node_id.as_str(), d.kind),
            ("fix", DiagnosticKind::IllegalAttribute)
        );
    }

    #[test]
    fn diagnostic_json_schema() {
        let g = dense_graph();
        let mut s = SessionState::new(&g);
        let err = s
            .run(&["out"], &feed(&[("x", Shape::known([50, 10]))]))
            .unwrap_err();
        let v = err.diagnostic().unwrap().to_json();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(
            sorted,
            ["inputs", "iteration", "kind", "message", "node", "op"]
        );
        assert_eq!(v["inputs"][1], "[50,10]");
        assert_eq!(v["kind"], "ShapeMismatch");
    }
}
