//! The shape computational graph: validated DAG of operation nodes and its
//! deterministic topological ordering.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::domain::Shape;
use crate::ops::{Arity, Op, OpKind};

/// One operation node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub id: String,
    pub op: Op,
    pub inputs: Vec<String>,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, op: Op, inputs: &[&str]) -> Self {
        NodeSpec {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn kind(&self) -> OpKind {
        self.op.kind()
    }

    pub fn declared_shape(&self) -> Option<&Shape> {
        self.op.declared_shape()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate node id '{0}'")]
    DuplicateId(String),
    #[error("node '{node}' references unknown input '{missing}'")]
    Reference { node: String, missing: String },
    #[error("unknown fetch '{0}'")]
    UnknownFetch(String),
    #[error("graph contains a cycle through node '{node}'")]
    Cycle { node: String },
    #[error("node '{node}' ({op}) expects {expected} inputs, got {found}")]
    Arity {
        node: String,
        op: OpKind,
        expected: Arity,
        found: usize,
    },
    #[error("assign node '{node}' must target a variable, but '{target}' is a {op}")]
    AssignTarget {
        node: String,
        target: String,
        op: OpKind,
    },
}

/// Immutable, acyclic graph of [`NodeSpec`]s.
#[derive(Debug, Clone)]
pub struct ShapeGraph {
    nodes: Vec<NodeSpec>,
    index: HashMap<String, usize>,
    // input edges resolved to node indices
    input_idx: Vec<Vec<usize>>,
    consumers: Vec<Vec<usize>>,
}

impl PartialEq for ShapeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
    }
}

/// Validates node specs and builds the graph.
pub fn build_graph(specs: Vec<NodeSpec>) -> Result<ShapeGraph, GraphError> {
    let mut index = HashMap::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        if index.insert(spec.id.clone(), i).is_some() {
            return Err(GraphError::DuplicateId(spec.id.clone()));
        }
    }

    let mut input_idx = Vec::with_capacity(specs.len());
    let mut consumers = vec![Vec::new(); specs.len()];
    for (i, spec) in specs.iter().enumerate() {
        let arity = spec.kind().arity();
        if !arity.accepts(spec.inputs.len()) {
            return Err(GraphError::Arity {
                node: spec.id.clone(),
                op: spec.kind(),
                expected: arity,
                found: spec.inputs.len(),
            });
        }
        let mut resolved = Vec::with_capacity(spec.inputs.len());
        for input in &spec.inputs {
            let &j = index.get(input).ok_or_else(|| GraphError::Reference {
                node: spec.id.clone(),
                missing: input.clone(),
            })?;
            resolved.push(j);
            consumers[j].push(i);
        }
        if let Op::Assign { .. } = spec.op {
            let target = &specs[resolved[0]];
            if target.kind() != OpKind::Variable {
                return Err(GraphError::AssignTarget {
                    node: spec.id.clone(),
                    target: target.id.clone(),
                    op: target.kind(),
                });
            }
        }
        input_idx.push(resolved);
    }

    let graph = ShapeGraph {
        nodes: specs,
        index,
        input_idx,
        consumers,
    };
    graph.check_acyclic()?;
    Ok(graph)
}

impl ShapeGraph {
    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Ids of all variable nodes, in declaration order.
    pub fn variables(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().filter(|n| n.kind() == OpKind::Variable)
    }

    fn check_acyclic(&self) -> Result<(), GraphError> {
        let mut indegree: Vec<usize> = self.input_idx.iter().map(Vec::len).collect();
        let mut stack: Vec<usize> = (0..self.len()).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(i) = stack.pop() {
            visited += 1;
            for &c in &self.consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    stack.push(c);
                }
            }
        }
        if visited == self.len() {
            return Ok(());
        }
        // Every remaining node has a remaining input, so walking inputs from
        // any of them must revisit a node that lies on a cycle.
        let start = (0..self.len())
            .filter(|&i| indegree[i] > 0)
            .min_by(|&a, &b| self.nodes[a].id.cmp(&self.nodes[b].id))
            .expect("unvisited node exists");
        let mut seen = vec![false; self.len()];
        let mut cur = start;
        while !seen[cur] {
            seen[cur] = true;
            cur = *self.input_idx[cur]
                .iter()
                .find(|&&j| indegree[j] > 0)
                .expect("remaining node has a remaining input");
        }
        Err(GraphError::Cycle {
            node: self.nodes[cur].id.clone(),
        })
    }

    /// Ancestor closure of `fetches` in dependency order.
    ///
    /// Among nodes that are ready at the same time, the lexicographically
    /// smallest id goes first.
    pub fn topo_order<S: AsRef<str>>(&self, fetches: &[S]) -> Result<Vec<&NodeSpec>, GraphError> {
        let mut in_closure = vec![false; self.len()];
        let mut stack = Vec::with_capacity(fetches.len());
        for f in fetches {
            let &i = self
                .index
                .get(f.as_ref())
                .ok_or_else(|| GraphError::UnknownFetch(f.as_ref().to_string()))?;
            stack.push(i);
        }
        while let Some(i) = stack.pop() {
            if in_closure[i] {
                continue;
            }
            in_closure[i] = true;
            stack.extend(
                self.input_idx[i]
                    .iter()
                    .copied()
                    .filter(|&j| !in_closure[j]),
            );
        }

        let mut pending: Vec<usize> = self.input_idx.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<(&str, usize)> = (0..self.len())
            .filter(|&i| in_closure[i] && pending[i] == 0)
            .map(|i| (self.nodes[i].id.as_str(), i))
            .collect();
        let mut order = Vec::new();
        while let Some((_, i)) = ready.pop_first() {
            order.push(&self.nodes[i]);
            for &c in &self.consumers[i] {
                if !in_closure[c] {
                    continue;
                }
                pending[c] -= 1;
                if pending[c] == 0 {
                    ready.insert((self.nodes[c].id.as_str(), c));
                }
            }
        }
        Ok(order)
    }

    pub(crate) fn input_indices(&self, id: &str) -> Option<&[usize]> {
        self.index.get(id).map(|&i| self.input_idx[i].as_slice())
    }

    pub(crate) fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}
