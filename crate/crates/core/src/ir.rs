//! JSON program format: graphs, feeds and run plans.
//!
//! ```json
//! {
//!   "version": 1,
//!   "graphs": {
//!     "main": [
//!       {"id": "x", "op": "placeholder", "shape": [null, 784]},
//!       {"id": "w", "op": "variable", "shape": [784, 10]},
//!       {"id": "y", "op": "matmul", "inputs": ["x", "w"]}
//!     ]
//!   },
//!   "runs": [{"graph": "main", "fetches": ["y"], "feeds": [{"x": [100, 784]}], "repeat": 1}]
//! }
//! ```
//!
//! Shape literals: an integer is a known dim, `null` an unknown dim, and the
//! string `"?"` in place of the list an unknown rank.

use indexmap::IndexMap;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::domain::{DesiredShape, Dim, Shape, MAX_DIM};
use crate::graph::{build_graph, GraphError, NodeSpec, ShapeGraph};
use crate::ops::{Op, OpKind, Padding, Window};
use crate::session::FeedSet;

pub const IR_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("graph '{graph}': {source}")]
    Graph {
        graph: String,
        #[source]
        source: GraphError,
    },
}

fn schema_err<T>(path: &str, message: impl Into<String>) -> Result<T, IrError> {
    Err(IrError::Schema {
        path: path.to_string(),
        message: message.into(),
    })
}

/// One `session.run` loop over a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPlan {
    pub graph: String,
    pub fetches: Vec<String>,
    /// Never empty; a plan without feeds gets a single empty feed set.
    pub feeds: Vec<FeedSet>,
    pub repeat: u64,
}

/// A validated program.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramIR {
    pub version: u64,
    pub graphs: IndexMap<String, ShapeGraph>,
    pub runs: Vec<RunPlan>,
}

impl ProgramIR {
    pub fn graph(&self, name: &str) -> Option<&ShapeGraph> {
        self.graphs.get(name)
    }

    /// Canonical JSON form; parsing it yields an equal program.
    pub fn to_json(&self) -> Value {
        let graphs: Map<String, Value> = self
            .graphs
            .iter()
            .map(|(name, g)| {
                (
                    name.clone(),
                    Value::Array(g.nodes().iter().map(node_to_json).collect()),
                )
            })
            .collect();
        let runs: Vec<Value> = self
            .runs
            .iter()
            .map(|r| {
                let mut m = Map::new();
                m.insert("graph".into(), r.graph.clone().into());
                m.insert("fetches".into(), r.fetches.clone().into());
                let feeds: Vec<Value> = r
                    .feeds
                    .iter()
                    .map(|f| {
                        Value::Object(
                            f.iter()
                                .map(|(k, s)| (k.clone(), shape_to_json(s)))
                                .collect(),
                        )
                    })
                    .collect();
                m.insert("feeds".into(), feeds.into());
                m.insert("repeat".into(), r.repeat.into());
                Value::Object(m)
            })
            .collect();
        let mut root = Map::new();
        root.insert("version".into(), self.version.into());
        root.insert("graphs".into(), Value::Object(graphs));
        root.insert("runs".into(), runs.into());
        Value::Object(root)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("json values serialize")
    }
}

pub fn shape_to_json(s: &Shape) -> Value {
    match s {
        Shape::RankUnknown => Value::String("?".into()),
        // not representable; never produced for declared or fed shapes
        Shape::Bottom => Value::Null,
        Shape::RankKnown(dims) => Value::Array(
            dims.iter()
                .map(|d| match d {
                    Dim::Known(n) => Value::from(*n),
                    Dim::Unknown => Value::Null,
                })
                .collect(),
        ),
    }
}

fn node_to_json(node: &NodeSpec) -> Value {
    let mut m = Map::new();
    m.insert("id".into(), node.id.clone().into());
    m.insert("op".into(), node.kind().name().into());
    if !node.inputs.is_empty() {
        m.insert("inputs".into(), node.inputs.clone().into());
    }
    let mut attrs = Map::new();
    match &node.op {
        Op::Placeholder { .. } | Op::Constant { .. } | Op::Variable { .. } => {}
        Op::Assign { validate } => {
            attrs.insert("validate".into(), (*validate).into());
        }
        Op::SetShape { shape } => {
            attrs.insert("shape".into(), shape_to_json(shape));
        }
        Op::Reshape { desired } => {
            if let Some(d) = desired {
                attrs.insert("shape".into(), d.to_ints().into());
            }
        }
        Op::Reduce {
            axis, keep_dims, ..
        } => {
            if let Some(a) = axis {
                attrs.insert("axis".into(), (*a).into());
            }
            attrs.insert("keep_dims".into(), (*keep_dims).into());
        }
        Op::Conv2d { strides, padding } => {
            attrs.insert("strides".into(), strides.to_nhwc().to_vec().into());
            attrs.insert("padding".into(), padding.name().into());
        }
        Op::Pool2d {
            ksize,
            strides,
            padding,
            ..
        } => {
            attrs.insert("ksize".into(), ksize.to_nhwc().to_vec().into());
            attrs.insert("strides".into(), strides.to_nhwc().to_vec().into());
            attrs.insert("padding".into(), padding.name().into());
        }
        Op::Transpose { perm } => {
            if let Some(p) = perm {
                attrs.insert("perm".into(), p.clone().into());
            }
        }
        Op::Concat { axis } | Op::ExpandDims { axis } | Op::ArgMax { axis } => {
            attrs.insert("axis".into(), (*axis).into());
        }
        Op::Squeeze { axes } => {
            if let Some(a) = axes {
                attrs.insert("axes".into(), a.clone().into());
            }
        }
        Op::OneHot { depth } => {
            attrs.insert("depth".into(), (*depth).into());
        }
        Op::MatMul | Op::Elementwise(_) | Op::Identity(_) | Op::Flatten => {}
    }
    if !attrs.is_empty() {
        m.insert("attrs".into(), Value::Object(attrs));
    }
    if let Some(shape) = node.declared_shape() {
        m.insert("shape".into(), shape_to_json(shape));
    }
    Value::Object(m)
}

/// Parses and fully validates a program.
pub fn parse_ir(text: &[u8]) -> Result<ProgramIR, IrError> {
    let root: Value = serde_json::from_slice(text).map_err(|e| IrError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    program_from_json(&root)
}

pub fn parse_ir_str(text: &str) -> Result<ProgramIR, IrError> {
    parse_ir(text.as_bytes())
}

pub fn program_from_json(root: &Value) -> Result<ProgramIR, IrError> {
    let obj = expect_object(root, "$")?;
    reject_unknown_keys(obj, "$", &["version", "graphs", "runs"])?;

    let version = match obj.get("version") {
        Some(v) => expect_u64(v, "$.version")?,
        None => return schema_err("$", "missing field 'version'"),
    };
    if version != IR_VERSION {
        return schema_err(
            "$.version",
            format!("unsupported version {version}, expected {IR_VERSION}"),
        );
    }

    let Some(graphs_val) = obj.get("graphs") else {
        return schema_err("$", "missing field 'graphs'");
    };
    let graphs_obj = expect_object(graphs_val, "$.graphs")?;
    if graphs_obj.is_empty() {
        return schema_err("$.graphs", "at least one graph is required");
    }
    let mut graphs = IndexMap::new();
    for (name, nodes_val) in graphs_obj {
        let path = format!("$.graphs.{name}");
        let nodes = expect_array(nodes_val, &path)?;
        let specs = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| parse_node(n, &format!("{path}[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let graph = build_graph(specs).map_err(|source| IrError::Graph {
            graph: name.clone(),
            source,
        })?;
        graphs.insert(name.clone(), graph);
    }

    let mut runs = Vec::new();
    if let Some(runs_val) = obj.get("runs") {
        for (i, r) in expect_array(runs_val, "$.runs")?.iter().enumerate() {
            runs.push(parse_run(r, &format!("$.runs[{i}]"), &graphs)?);
        }
    }

    Ok(ProgramIR {
        version,
        graphs,
        runs,
    })
}

fn parse_run(
    v: &Value,
    path: &str,
    graphs: &IndexMap<String, ShapeGraph>,
) -> Result<RunPlan, IrError> {
    let obj = expect_object(v, path)?;
    reject_unknown_keys(obj, path, &["graph", "fetches", "feeds", "repeat"])?;
    let graph_name = match obj.get("graph") {
        Some(g) => expect_str(g, &format!("{path}.graph"))?.to_string(),
        None => return schema_err(path, "missing field 'graph'"),
    };
    let Some(graph) = graphs.get(&graph_name) else {
        return schema_err(
            &format!("{path}.graph"),
            format!("unknown graph '{graph_name}'"),
        );
    };

    let fetches_path = format!("{path}.fetches");
    let fetches = match obj.get("fetches") {
        Some(f) => expect_str_list(f, &fetches_path)?,
        None => return schema_err(path, "missing field 'fetches'"),
    };
    if fetches.is_empty() {
        return schema_err(&fetches_path, "at least one fetch is required");
    }
    for (i, f) in fetches.iter().enumerate() {
        if !graph.contains(f) {
            return schema_err(
                &format!("{fetches_path}[{i}]"),
                format!("unknown node '{f}'"),
            );
        }
    }

    let mut feeds = Vec::new();
    if let Some(feeds_val) = obj.get("feeds") {
        for (i, f) in expect_array(feeds_val, &format!("{path}.feeds"))?
            .iter()
            .enumerate()
        {
            let fpath = format!("{path}.feeds[{i}]");
            let mut set = FeedSet::new();
            for (id, lit) in expect_object(f, &fpath)? {
                let kpath = format!("{fpath}.{id}");
                match graph.node(id).map(NodeSpec::kind) {
                    Some(OpKind::Placeholder) => {}
                    Some(other) => {
                        return schema_err(
                            &kpath,
                            format!("only placeholders can be fed, '{id}' is a {other}"),
                        )
                    }
                    None => return schema_err(&kpath, format!("unknown node '{id}'")),
                }
                set.insert(id.clone(), parse_shape(lit, &kpath)?);
            }
            feeds.push(set);
        }
    }
    if feeds.is_empty() {
        feeds.push(FeedSet::new());
    }

    let repeat = match obj.get("repeat") {
        Some(r) => expect_u64(r, &format!("{path}.repeat"))?,
        None => 1,
    };
    if repeat == 0 {
        return schema_err(&format!("{path}.repeat"), "repeat must be positive");
    }

    Ok(RunPlan {
        graph: graph_name,
        fetches,
        feeds,
        repeat,
    })
}

fn parse_node(v: &Value, path: &str) -> Result<NodeSpec, IrError> {
    let obj = expect_object(v, path)?;
    reject_unknown_keys(obj, path, &["id", "op", "inputs", "attrs", "shape"])?;
    let id = match obj.get("id") {
        Some(i) => expect_str(i, &format!("{path}.id"))?.to_string(),
        None => return schema_err(path, "missing field 'id'"),
    };
    let op_name = match obj.get("op") {
        Some(o) => expect_str(o, &format!("{path}.op"))?,
        None => return schema_err(path, "missing field 'op'"),
    };
    let Some(kind) = OpKind::from_name(op_name) else {
        return schema_err(
            &format!("{path}.op"),
            format!("unknown op kind '{op_name}'"),
        );
    };
    let inputs = match obj.get("inputs") {
        Some(i) => expect_str_list(i, &format!("{path}.inputs"))?,
        None => Vec::new(),
    };
    let empty = Map::new();
    let attrs_path = format!("{path}.attrs");
    let attrs = match obj.get("attrs") {
        Some(a) => expect_object(a, &attrs_path)?,
        None => &empty,
    };
    let attrs = Attrs {
        map: attrs,
        path: &attrs_path,
    };
    let shape_path = format!("{path}.shape");
    let declared = obj
        .get("shape")
        .map(|s| parse_shape(s, &shape_path))
        .transpose()?;
    if declared.is_some() && !kind.is_source() {
        return schema_err(
            &shape_path,
            format!("'{kind}' nodes do not take a declared shape"),
        );
    }

    let op = build_op(kind, &attrs, declared, path)?;
    Ok(NodeSpec { id, op, inputs })
}

struct Attrs<'a> {
    map: &'a Map<String, Value>,
    path: &'a str,
}

impl Attrs<'_> {
    fn allow(&self, keys: &[&str]) -> Result<(), IrError> {
        reject_unknown_keys(self.map, self.path, keys)
    }

    fn sub(&self, key: &str) -> String {
        format!("{}.{key}", self.path)
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.map.get(key)
    }

    fn required(&self, key: &str) -> Result<&Value, IrError> {
        self.map.get(key).map_or_else(
            || schema_err(self.path, format!("missing attribute '{key}'")),
            Ok,
        )
    }

    fn int(&self, key: &str) -> Result<Option<i64>, IrError> {
        self.get(key)
            .map(|v| expect_i64(v, &self.sub(key)))
            .transpose()
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, IrError> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(_) => schema_err(&self.sub(key), "expected a boolean"),
        }
    }

    fn int_list(&self, key: &str) -> Result<Option<Vec<i64>>, IrError> {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        let path = self.sub(key);
        expect_array(v, &path)?
            .iter()
            .enumerate()
            .map(|(i, e)| expect_i64(e, &format!("{path}[{i}]")))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn window(&self, key: &str) -> Result<Window, IrError> {
        let path = self.sub(key);
        let entries = expect_array(self.required(key)?, &path)?
            .iter()
            .enumerate()
            .map(|(i, e)| expect_u64(e, &format!("{path}[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        Window::from_nhwc(&entries).or_else(|e| schema_err(&path, e.to_string()))
    }

    fn padding(&self) -> Result<Padding, IrError> {
        let path = self.sub("padding");
        let name = expect_str(self.required("padding")?, &path)?;
        Padding::from_name(name).map_or_else(
            || {
                schema_err(
                    &path,
                    format!("padding must be SAME or VALID, got '{name}'"),
                )
            },
            Ok,
        )
    }
}

fn build_op(
    kind: OpKind,
    attrs: &Attrs<'_>,
    declared: Option<Shape>,
    path: &str,
) -> Result<Op, IrError> {
    let need_shape = |declared: Option<Shape>| {
        declared.map_or_else(
            || schema_err(path, format!("'{kind}' nodes require a 'shape'")),
            Ok,
        )
    };
    let op = match kind {
        OpKind::Placeholder => {
            attrs.allow(&[])?;
            Op::Placeholder {
                shape: need_shape(declared)?,
            }
        }
        OpKind::Variable => {
            attrs.allow(&[])?;
            Op::Variable {
                shape: need_shape(declared)?,
            }
        }
        OpKind::Constant => {
            attrs.allow(&["value"])?;
            let from_value = attrs
                .get("value")
                .map(|v| literal_shape(v, &attrs.sub("value")))
                .transpose()?;
            let shape = match (declared, from_value) {
                (Some(d), Some(v)) if d.meet(&v) != v => {
                    return schema_err(
                        &attrs.sub("value"),
                        format!("value of shape {v} contradicts declared shape {d}"),
                    )
                }
                (_, Some(v)) => v,
                (Some(d), None) => d,
                (None, None) => {
                    return schema_err(path, "constants require a 'shape' or a 'value' attribute")
                }
            };
            Op::Constant { shape }
        }
        OpKind::Assign => {
            attrs.allow(&["validate"])?;
            Op::Assign {
                validate: attrs.bool_or("validate", true)?,
            }
        }
        OpKind::SetShape => {
            attrs.allow(&["shape"])?;
            Op::SetShape {
                shape: parse_shape(attrs.required("shape")?, &attrs.sub("shape"))?,
            }
        }
        OpKind::Reshape => {
            attrs.allow(&["shape"])?;
            let desired = attrs
                .int_list("shape")?
                .map(|d| {
                    DesiredShape::from_ints(&d)
                        .or_else(|e| schema_err(&attrs.sub("shape"), e.to_string()))
                })
                .transpose()?;
            Op::Reshape { desired }
        }
        OpKind::Reduce(kind) => {
            attrs.allow(&["axis", "keep_dims"])?;
            Op::Reduce {
                kind,
                axis: attrs.int("axis")?,
                keep_dims: attrs.bool_or("keep_dims", false)?,
            }
        }
        OpKind::MatMul => {
            attrs.allow(&[])?;
            Op::MatMul
        }
        OpKind::Conv2d => {
            attrs.allow(&["strides", "padding"])?;
            Op::Conv2d {
                strides: attrs.window("strides")?,
                padding: attrs.padding()?,
            }
        }
        OpKind::Pool2d(kind) => {
            attrs.allow(&["ksize", "strides", "padding"])?;
            Op::Pool2d {
                kind,
                ksize: attrs.window("ksize")?,
                strides: attrs.window("strides")?,
                padding: attrs.padding()?,
            }
        }
        OpKind::Elementwise(k) => {
            attrs.allow(&[])?;
            Op::Elementwise(k)
        }
        OpKind::Identity(k) => {
            attrs.allow(&[])?;
            Op::Identity(k)
        }
        OpKind::Transpose => {
            attrs.allow(&["perm"])?;
            Op::Transpose {
                perm: attrs.int_list("perm")?,
            }
        }
        OpKind::Concat | OpKind::ExpandDims => {
            attrs.allow(&["axis"])?;
            let axis = expect_i64(attrs.required("axis")?, &attrs.sub("axis"))?;
            if kind == OpKind::Concat {
                Op::Concat { axis }
            } else {
                Op::ExpandDims { axis }
            }
        }
        OpKind::Squeeze => {
            attrs.allow(&["axes"])?;
            Op::Squeeze {
                axes: attrs.int_list("axes")?,
            }
        }
        OpKind::ArgMax => {
            attrs.allow(&["axis"])?;
            Op::ArgMax {
                axis: attrs.int("axis")?.unwrap_or(0),
            }
        }
        OpKind::OneHot => {
            attrs.allow(&["depth"])?;
            let depth = expect_u64(attrs.required("depth")?, &attrs.sub("depth"))?;
            if depth > MAX_DIM {
                return schema_err(&attrs.sub("depth"), format!("depth exceeds {MAX_DIM}"));
            }
            Op::OneHot { depth }
        }
        OpKind::Flatten => {
            attrs.allow(&[])?;
            Op::Flatten
        }
    };
    Ok(op)
}

/// Parses a shape literal: `[2, null, 3]` or `"?"`.
pub fn parse_shape(v: &Value, path: &str) -> Result<Shape, IrError> {
    match v {
        Value::String(s) if s == "?" => Ok(Shape::RankUnknown),
        Value::Array(items) => {
            let mut dims = Vec::with_capacity(items.len());
            let mut count: u64 = 1;
            for (i, item) in items.iter().enumerate() {
                let ipath = format!("{path}[{i}]");
                match item {
                    Value::Null => dims.push(Dim::Unknown),
                    other => {
                        let n = expect_u64(other, &ipath)?;
                        if n > MAX_DIM {
                            return schema_err(&ipath, format!("dimension {n} exceeds {MAX_DIM}"));
                        }
                        count = match count.checked_mul(n) {
                            Some(c) => c,
                            None => return schema_err(path, "element count overflows 64 bits"),
                        };
                        dims.push(Dim::Known(n));
                    }
                }
            }
            Ok(Shape::RankKnown(dims))
        }
        _ => schema_err(
            path,
            "expected a shape literal (list of integers/null, or \"?\")",
        ),
    }
}

/// Shape of a nested-list literal; ragged nesting is rejected.
fn literal_shape(v: &Value, path: &str) -> Result<Shape, IrError> {
    fn dims_of(v: &Value, path: &str) -> Result<Vec<u64>, IrError> {
        match v {
            Value::Number(_) | Value::Bool(_) => Ok(Vec::new()),
            Value::Array(items) => {
                let Some(first) = items.first() else {
                    return Ok(vec![0]);
                };
                let inner = dims_of(first, &format!("{path}[0]"))?;
                for (i, item) in items.iter().enumerate().skip(1) {
                    if dims_of(item, &format!("{path}[{i}]"))? != inner {
                        return schema_err(&format!("{path}[{i}]"), "ragged literal");
                    }
                }
                let mut dims = vec![items.len() as u64];
                dims.extend(inner);
                Ok(dims)
            }
            _ => schema_err(path, "literal entries must be numbers or lists"),
        }
    }
    Ok(Shape::known(dims_of(v, path)?))
}

fn reject_unknown_keys(
    obj: &Map<String, Value>,
    path: &str,
    allowed: &[&str],
) -> Result<(), IrError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => schema_err(path, format!("unexpected field '{k}'")),
        None => Ok(()),
    }
}

fn expect_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, IrError> {
    v.as_object()
        .map_or_else(|| schema_err(path, "expected an object"), Ok)
}

fn expect_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, IrError> {
    v.as_array()
        .map_or_else(|| schema_err(path, "expected a list"), Ok)
}

fn expect_str<'a>(v: &'a Value, path: &str) -> Result<&'a str, IrError> {
    v.as_str()
        .map_or_else(|| schema_err(path, "expected a string"), Ok)
}

fn expect_u64(v: &Value, path: &str) -> Result<u64, IrError> {
    v.as_u64()
        .map_or_else(|| schema_err(path, "expected a non-negative integer"), Ok)
}

fn expect_i64(v: &Value, path: &str) -> Result<i64, IrError> {
    v.as_i64()
        .map_or_else(|| schema_err(path, "expected an integer"), Ok)
}

fn expect_str_list(v: &Value, path: &str) -> Result<Vec<String>, IrError> {
    expect_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, e)| expect_str(e, &format!("{path}[{i}]")).map(str::to_string))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{BinaryKind, ReduceKind};
    use proptest::prelude::*;

    const MINIMAL: &str = r#"{"version":1,"graphs":{"main":[{"id":"c","op":"constant","shape":[]}]},"runs":[{"graph":"main","fetches":["c"]}]}"#;

    fn schema_path(err: IrError) -> String {
        match err {
            IrError::Schema { path, .. } => path,
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn parses_minimal_program() {
        let ir = parse_ir_str(MINIMAL).unwrap();
        assert_eq!(ir.version, 1);
        let g = ir.graph("main").unwrap();
        assert_eq!(
            g.node("c").unwrap().declared_shape(),
            Some(&Shape::scalar())
        );
        assert_eq!(ir.runs[0].feeds, vec![FeedSet::new()]);
        assert_eq!(ir.runs[0].repeat, 1);
    }

    #[test]
    fn null_encodes_unknown_dim() {
        let text = r#"{"version":1,"graphs":{"g":[{"id":"x","op":"placeholder","shape":[null,784]},
            {"id":"r","op":"placeholder","shape":"?"}]}}"#;
        let ir = parse_ir_str(text).unwrap();
        let g = ir.graph("g").unwrap();
        assert_eq!(
            g.node("x").unwrap().declared_shape(),
            Some(&Shape::partial([None, Some(784)]))
        );
        assert_eq!(
            g.node("r").unwrap().declared_shape(),
            Some(&Shape::RankUnknown)
        );
    }

    #[test]
    fn unknown_op_is_schema_error() {
        let text = r#"{"version":1,"graphs":{"main":[{"id":"c","op":"conv3d"}]}}"#;
        let err = parse_ir_str(text).unwrap_err();
        assert!(err.to_string().contains("conv3d"));
        assert_eq!(schema_path(err), "$.graphs.main[0].op");
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(
            parse_ir_str(&MINIMAL[..40]).unwrap_err(),
            IrError::Parse { .. }
        ));
    }

    #[test]
    fn structural_errors_carry_paths() {
        let cases = [
            (r#"{"version":2,"graphs":{"g":[]}}"#, "$.version"),
            (r#"{"version":1,"graphs":{}}"#, "$.graphs"),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"x","op":"placeholder"}]}}"#,
                "$.graphs.g[0]",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"x","op":"placeholder","shape":[1,-2]}]}}"#,
                "$.graphs.g[0].shape[1]",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"x","op":"relu","inputs":["x"],"shape":[1]}]}}"#,
                "$.graphs.g[0].shape",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"c","op":"constant","shape":[]},{"id":"p","op":"max_pool","inputs":["c"],"attrs":{"ksize":[1,2,2],"strides":[1,1,1,1],"padding":"SAME"}}]}}"#,
                "$.graphs.g[1].attrs.ksize",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"c","op":"constant","shape":[]},{"id":"p","op":"conv2d","inputs":["c","c"],"attrs":{"strides":[1,1,1,1],"padding":"FULL"}}]}}"#,
                "$.graphs.g[1].attrs.padding",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"c","op":"constant","shape":[]},{"id":"r","op":"reshape","inputs":["c"],"attrs":{"shape":[-1,-1]}}]}}"#,
                "$.graphs.g[1].attrs.shape",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"c","op":"constant","shape":[],"attrs":{"axis":1}}]}}"#,
                "$.graphs.g[0].attrs",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"c","op":"constant","attrs":{"value":[[1,2],[3]]}}]}}"#,
                "$.graphs.g[0].attrs.value[1]",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"c","op":"constant","shape":[]}]},"runs":[{"graph":"h","fetches":["c"]}]}"#,
                "$.runs[0].graph",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"c","op":"constant","shape":[]}]},"runs":[{"graph":"g","fetches":[]}]}"#,
                "$.runs[0].fetches",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"c","op":"constant","shape":[]}]},"runs":[{"graph":"g","fetches":["d"]}]}"#,
                "$.runs[0].fetches[0]",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"c","op":"constant","shape":[]}]},"runs":[{"graph":"g","fetches":["c"],"feeds":[{"c":[]}]}]}"#,
                "$.runs[0].feeds[0].c",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"c","op":"constant","shape":[]}]},"runs":[{"graph":"g","fetches":["c"],"repeat":0}]}"#,
                "$.runs[0].repeat",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"x","op":"placeholder","shape":[4294967296]}]}}"#,
                "$.graphs.g[0].shape[0]",
            ),
            (
                r#"{"version":1,"graphs":{"g":[{"id":"x","op":"placeholder","shape":[2147483647,2147483647,2147483647]}]}}"#,
                "$.graphs.g[0].shape",
            ),
        ];
        for (text, path) in cases {
            assert_eq!(schema_path(parse_ir_str(text).unwrap_err()), path, "{text}");
        }
    }

    #[test]
    fn graph_errors_are_delegated() {
        let text = r#"{"version":1,"graphs":{"g":[{"id":"a","op":"relu","inputs":["a"]}]}}"#;
        assert_eq!(
            parse_ir_str(text).unwrap_err(),
            IrError::Graph {
                graph: "g".into(),
                source: GraphError::Cycle { node: "a".into() }
            }
        );
    }

    #[test]
    fn constant_value_literal_gives_shape() {
        let text = r#"{"version":1,"graphs":{"g":[
            {"id":"s","op":"constant","attrs":{"value":11}},
            {"id":"m","op":"constant","attrs":{"value":[[1,2,3],[4,5,6]]}},
            {"id":"e","op":"constant","attrs":{"value":[]}}]}}"#;
        let ir = parse_ir_str(text).unwrap();
        let g = ir.graph("g").unwrap();
        assert_eq!(
            g.node("s").unwrap().declared_shape(),
            Some(&Shape::scalar())
        );
        assert_eq!(
            g.node("m").unwrap().declared_shape(),
            Some(&Shape::known([2, 3]))
        );
        assert_eq!(
            g.node("e").unwrap().declared_shape(),
            Some(&Shape::known([0]))
        );
    }

    #[test]
    fn attributes_and_defaults() {
        let text = r#"{"version":1,"graphs":{"g":[
            {"id":"x","op":"placeholder","shape":[2,3]},
            {"id":"r","op":"reduce_sum","inputs":["x"],"attrs":{"axis":-1}},
            {"id":"a","op":"argmax","inputs":["x"]},
            {"id":"b","op":"add","inputs":["x","r"]}]}}"#;
        let ir = parse_ir_str(text).unwrap();
        let g = ir.graph("g").unwrap();
        assert_eq!(
            g.node("r").unwrap().op,
            Op::Reduce {
                kind: ReduceKind::Sum,
                axis: Some(-1),
                keep_dims: false
            }
        );
        assert_eq!(g.node("a").unwrap().op, Op::ArgMax { axis: 0 });
        assert_eq!(g.node("b").unwrap().op, Op::Elementwise(BinaryKind::Add));
    }

    fn literal(dims: &[Option<u64>]) -> String {
        let parts: Vec<String> = dims
            .iter()
            .map(|d| d.map_or("null".to_string(), |n| n.to_string()))
            .collect();
        format!("[{}]", parts.join(","))
    }

    fn arb_program() -> impl Strategy<Value = String> {
        let dims = prop::collection::vec(prop::option::of(1u64..9), 1..4);
        (
            dims.clone(),
            dims,
            any::<bool>(),
            prop::option::of(-2i64..2),
            1u64..4,
        )
            .prop_map(|(a, b, validate, axis, repeat)| {
                let axis = axis.map_or(String::new(), |a| format!(r#","axis":{a}"#));
                format!(
                    r#"{{"version":1,"graphs":{{"g":[
                        {{"id":"x","op":"placeholder","shape":{}}},
                        {{"id":"v","op":"variable","shape":{}}},
                        {{"id":"s","op":"add","inputs":["x","v"]}},
                        {{"id":"m","op":"reduce_mean","inputs":["s"],"attrs":{{"keep_dims":true{axis}}}}},
                        {{"id":"p","op":"max_pool","inputs":["x"],"attrs":{{"ksize":[1,2,2,1],"strides":[1,1,2,1],"padding":"VALID"}}}},
                        {{"id":"r","op":"reshape","inputs":["x"],"attrs":{{"shape":[-1,2]}}}},
                        {{"id":"u","op":"assign","inputs":["v","s"],"attrs":{{"validate":{validate}}}}}
                    ]}},"runs":[{{"graph":"g","fetches":["m","u"],"feeds":[{{"x":{}}},{{"x":"?"}}],"repeat":{repeat}}}]}}"#,
                    literal(&a),
                    literal(&b),
                    literal(&a),
                )
            })
    }

    proptest! {
        #[test]
        fn serialization_round_trips(text in arb_program()) {
            let ir = parse_ir_str(&text).unwrap();
            let once = ir.to_json_string();
            let reparsed = parse_ir_str(&once).unwrap();
            prop_assert_eq!(&reparsed, &ir);
            prop_assert_eq!(reparsed.to_json_string(), once);
        }
    }
}
