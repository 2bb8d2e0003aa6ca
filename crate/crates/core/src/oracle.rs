//! Concrete reference interpreter.
//!
//! Executes programs on real zero-filled tensors, sampling sizes for unknown
//! dimensions. Shape errors here are ground truth for testing the abstract
//! interpreter, so the implementations below avoid the abstract transfer
//! functions entirely and derive output shapes from the computation itself.

use std::collections::{BTreeMap, HashMap};

use ndarray::{concatenate, s, ArrayD, ArrayView1, ArrayView4, ArrayViewD, Axis, Ix4, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{DesiredDim, Dim, Shape};
use crate::graph::{NodeSpec, ShapeGraph};
use crate::ir::{ProgramIR, RunPlan};
use crate::ops::{BinaryKind, Op, Padding, PoolKind, ReduceKind, UnaryKind, Window};

/// Largest tensor the oracle will materialize.
pub const MAX_ELEMENTS: usize = 1 << 28;

/// Upper bound for sampled sizes of unknown dims.
pub const MAX_SAMPLED_DIM: u64 = 6;

/// Zero-filled tensor whose contents never influence shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteTensor(ArrayD<f32>);

impl ConcreteTensor {
    pub fn zeros(shape: &[u64]) -> Result<Self, OpFailure> {
        let dims: Vec<usize> = shape.iter().map(|&d| d as usize).collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c <= MAX_ELEMENTS);
        if count.is_none() {
            return Err(OpFailure::TooLarge(shape.to_vec()));
        }
        Ok(ConcreteTensor(ArrayD::zeros(IxDyn(&dims))))
    }

    pub fn shape(&self) -> Vec<u64> {
        self.0.shape().iter().map(|&d| d as u64).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn array(&self) -> &ArrayD<f32> {
        &self.0
    }
}

/// Why a concrete op could not execute.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpFailure {
    #[error("{0}")]
    Shape(String),
    #[error("tensor of shape {0:?} is too large for the oracle")]
    TooLarge(Vec<u64>),
}

fn fail<T>(msg: impl Into<String>) -> Result<T, OpFailure> {
    Err(OpFailure::Shape(msg.into()))
}

/// Replaces unknown dims with sizes in `1..=6`; an unknown rank is sampled
/// in `0..=4` first. Draws are taken in axis order from a generator seeded
/// with `seed`, so equal seeds give equal samples for the same positions.
pub fn concretize(shape: &Shape, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = match shape {
        Shape::RankKnown(dims) => dims.clone(),
        Shape::RankUnknown | Shape::Bottom => vec![Dim::Unknown; rng.random_range(0..=4)],
    };
    dims.iter()
        .map(|d| match d {
            Dim::Known(n) => *n,
            Dim::Unknown => rng.random_range(1..=MAX_SAMPLED_DIM),
        })
        .collect()
}

/// Whether a concrete shape satisfies a declaration.
fn conforms(concrete: &[u64], declared: &Shape) -> bool {
    match declared {
        Shape::RankUnknown => true,
        Shape::Bottom => false,
        Shape::RankKnown(dims) => {
            dims.len() == concrete.len()
                && dims.iter().zip(concrete).all(|(d, &c)| match d {
                    Dim::Known(n) => *n == c,
                    Dim::Unknown => true,
                })
        }
    }
}

fn normalize(axis: i64, rank: usize) -> Result<usize, OpFailure> {
    let r = rank as i64;
    let a = if axis < 0 { axis + r } else { axis };
    if (0..r).contains(&a) {
        Ok(a as usize)
    } else {
        fail(format!("axis {axis} out of range for rank {rank}"))
    }
}

fn wrap(a: ArrayD<f32>) -> Result<ConcreteTensor, OpFailure> {
    if a.is_standard_layout() {
        Ok(ConcreteTensor(a))
    } else {
        Ok(ConcreteTensor(a.as_standard_layout().into_owned()))
    }
}

/// Executes one non-source op on concrete inputs.
pub fn execute_op(op: &Op, inputs: &[ConcreteTensor]) -> Result<ConcreteTensor, OpFailure> {
    let arr = |i: usize| &inputs[i].0;
    match op {
        Op::Placeholder { .. } | Op::Constant { .. } | Op::Variable { .. } => {
            fail("source ops are bound by the driver")
        }
        Op::Assign { validate } => {
            if *validate && arr(0).shape() != arr(1).shape() {
                return fail(format!(
                    "cannot assign value of shape {:?} to variable of shape {:?}",
                    arr(1).shape(),
                    arr(0).shape()
                ));
            }
            wrap(arr(1).clone())
        }
        Op::SetShape { shape } => {
            if !conforms(&inputs[0].shape(), shape) {
                return fail(format!(
                    "shape {:?} is incompatible with {shape}",
                    arr(0).shape()
                ));
            }
            wrap(arr(0).clone())
        }
        Op::Reshape { desired } => {
            let Some(desired) = desired else {
                return fail("reshape without a target shape");
            };
            let total = arr(0).len();
            let fixed = desired.entries().iter().try_fold(1usize, |acc, d| match d {
                DesiredDim::Size(n) => acc.checked_mul(*n as usize),
                DesiredDim::Wildcard => Some(acc),
            });
            let Some(fixed) = fixed else {
                return fail("target shape is too large");
            };
            let target: Vec<usize> = desired
                .entries()
                .iter()
                .map(|d| match d {
                    DesiredDim::Size(n) => Ok(*n as usize),
                    DesiredDim::Wildcard if total % fixed == 0 => Ok(total / fixed),
                    DesiredDim::Wildcard => {
                        fail(format!("cannot infer -1: {total} elements over {fixed}"))
                    }
                })
                .collect::<Result<_, _>>()?;
            match arr(0).clone().into_shape_with_order(IxDyn(&target)) {
                Ok(a) => wrap(a),
                Err(e) => fail(format!(
                    "cannot reshape {:?} into {target:?}: {e}",
                    arr(0).shape()
                )),
            }
        }
        Op::Reduce {
            kind,
            axis,
            keep_dims,
        } => reduce(arr(0), *kind, *axis, *keep_dims),
        Op::MatMul => {
            let (a, b) = (arr(0), arr(1));
            if a.ndim() != 2 || b.ndim() != 2 {
                return fail("matmul operands must be matrices");
            }
            let a2 = a
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .expect("rank 2");
            let b2 = b
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .expect("rank 2");
            if a2.ncols() != b2.nrows() {
                return fail(format!(
                    "inner dimensions differ: {} vs {}",
                    a2.ncols(),
                    b2.nrows()
                ));
            }
            wrap(a2.dot(&b2).into_dyn())
        }
        Op::Conv2d { strides, padding } => conv2d(arr(0), arr(1), *strides, *padding),
        Op::Pool2d {
            kind,
            ksize,
            strides,
            padding,
        } => pool2d(arr(0), *kind, *ksize, *strides, *padding),
        Op::Elementwise(kind) => elementwise(arr(0), arr(1), *kind),
        Op::Identity(kind) => wrap(unary(arr(0), *kind)),
        Op::Transpose { perm } => {
            let a = arr(0).clone();
            let Some(perm) = perm else {
                return wrap(a.reversed_axes());
            };
            let mut seen = vec![false; a.ndim()];
            if perm.len() != a.ndim() {
                return fail(format!("perm {perm:?} does not match rank {}", a.ndim()));
            }
            for &p in perm {
                if p < 0 || p as usize >= a.ndim() || seen[p as usize] {
                    return fail(format!("perm {perm:?} is not a permutation"));
                }
                seen[p as usize] = true;
            }
            let axes: Vec<usize> = perm.iter().map(|&p| p as usize).collect();
            wrap(a.permuted_axes(axes))
        }
        Op::Concat { axis } => {
            let rank = arr(0).ndim();
            if inputs.iter().any(|t| t.0.ndim() != rank) {
                return fail("concat operands differ in rank");
            }
            let ax = normalize(*axis, rank)?;
            let views: Vec<ArrayViewD<'_, f32>> = inputs.iter().map(|t| t.0.view()).collect();
            match concatenate(Axis(ax), &views) {
                Ok(a) => wrap(a),
                Err(e) => fail(format!("concat failed: {e}")),
            }
        }
        Op::ExpandDims { axis } => {
            let ax = normalize(*axis, arr(0).ndim() + 1)?;
            wrap(arr(0).clone().insert_axis(Axis(ax)))
        }
        Op::Squeeze { axes } => {
            let a = arr(0);
            let drop: Vec<usize> = match axes {
                None => (0..a.ndim()).filter(|&i| a.len_of(Axis(i)) == 1).collect(),
                Some(axes) => {
                    let mut drop = Vec::new();
                    for &axis in axes {
                        let ax = normalize(axis, a.ndim())?;
                        if drop.contains(&ax) {
                            return fail(format!("axis {axis} squeezed twice"));
                        }
                        if a.len_of(Axis(ax)) != 1 {
                            return fail(format!(
                                "cannot squeeze axis {axis} of size {}",
                                a.len_of(Axis(ax))
                            ));
                        }
                        drop.push(ax);
                    }
                    drop
                }
            };
            let mut out = a.clone();
            let mut drop = drop;
            drop.sort_unstable();
            for ax in drop.into_iter().rev() {
                out = out.index_axis_move(Axis(ax), 0);
            }
            wrap(out)
        }
        Op::ArgMax { axis } => {
            let a = arr(0);
            let ax = normalize(*axis, a.ndim())?;
            wrap(a.map_axis(Axis(ax), |lane: ArrayView1<'_, f32>| {
                lane.iter()
                    .enumerate()
                    .fold((0usize, f32::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0 as f32
            }))
        }
        Op::OneHot { depth } => {
            let mut shape = inputs[0].shape();
            shape.push(*depth);
            let mut out = ConcreteTensor::zeros(&shape)?;
            let d = *depth as usize;
            if d > 0 {
                for (lane, &idx) in out
                    .0
                    .lanes_mut(Axis(shape.len() - 1))
                    .into_iter()
                    .zip(arr(0).iter())
                {
                    let mut lane = lane;
                    let i = idx as usize;
                    if i < d {
                        lane[i] = 1.0;
                    }
                }
            }
            Ok(out)
        }
        Op::Flatten => {
            let a = arr(0);
            if a.ndim() == 0 {
                return fail("cannot flatten a scalar");
            }
            let lead = a.len_of(Axis(0));
            let rest: usize = a.shape()[1..].iter().product();
            match a.clone().into_shape_with_order(IxDyn(&[lead, rest])) {
                Ok(a) => wrap(a),
                Err(e) => fail(format!("flatten failed: {e}")),
            }
        }
    }
}

fn unary(a: &ArrayD<f32>, kind: UnaryKind) -> ArrayD<f32> {
    match kind {
        UnaryKind::Identity | UnaryKind::Cast => a.clone(),
        UnaryKind::Relu => a.mapv(|v| v.max(0.0)),
        UnaryKind::Dropout => a.mapv(|v| v * 2.0),
        UnaryKind::Tanh => a.mapv(f32::tanh),
        UnaryKind::Sigmoid => a.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        UnaryKind::Softmax => {
            if a.ndim() == 0 {
                return a.mapv(|_| 1.0);
            }
            let last = Axis(a.ndim() - 1);
            let mut out = a.mapv(f32::exp);
            for mut lane in out.lanes_mut(last) {
                let sum: f32 = lane.sum();
                lane.mapv_inplace(|v| v / sum);
            }
            out
        }
    }
}

fn elementwise(
    a: &ArrayD<f32>,
    b: &ArrayD<f32>,
    kind: BinaryKind,
) -> Result<ConcreteTensor, OpFailure> {
    // Candidate result shape; ndarray's broadcasting then decides legality.
    let rank = a.ndim().max(b.ndim());
    let padded = |s: &[usize]| {
        let mut v = vec![1usize; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (padded(a.shape()), padded(b.shape()));
    let target: Vec<usize> = pa
        .iter()
        .zip(&pb)
        .map(|(&x, &y)| if x == 1 { y } else { x })
        .collect();
    let (Some(av), Some(bv)) = (a.broadcast(IxDyn(&target)), b.broadcast(IxDyn(&target))) else {
        return fail(format!(
            "cannot broadcast {:?} with {:?}",
            a.shape(),
            b.shape()
        ));
    };
    let out = match kind {
        BinaryKind::Add | BinaryKind::BiasAdd => &av + &bv,
        BinaryKind::Sub => &av - &bv,
        BinaryKind::Mul => &av * &bv,
        BinaryKind::Div => &av / &bv,
    };
    wrap(out)
}

fn reduce(
    a: &ArrayD<f32>,
    kind: ReduceKind,
    axis: Option<i64>,
    keep_dims: bool,
) -> Result<ConcreteTensor, OpFailure> {
    let fold = |lane: ArrayView1<'_, f32>| match kind {
        ReduceKind::Sum => lane.sum(),
        ReduceKind::Mean => lane.mean().unwrap_or(f32::NAN),
        ReduceKind::Max => lane.fold(f32::NEG_INFINITY, |m, &v| m.max(v)),
    };
    let Some(axis) = axis else {
        let flat = a.iter().copied().collect::<ndarray::Array1<f32>>();
        let value = fold(flat.view());
        let shape: Vec<usize> = if keep_dims { vec![1; a.ndim()] } else { vec![] };
        return wrap(ArrayD::from_elem(IxDyn(&shape), value));
    };
    let ax = normalize(axis, a.ndim())?;
    let reduced = a.map_axis(Axis(ax), fold);
    wrap(if keep_dims {
        reduced.insert_axis(Axis(ax))
    } else {
        reduced
    })
}

/// Window start offsets along one axis, relative to the unpadded input.
///
/// VALID: every start whose window fits inside the input; at least one must.
/// SAME: one window per stride step over the input, centered by splitting the
/// padding with the extra element after.
fn window_starts(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<Vec<i64>, OpFailure> {
    match padding {
        Padding::Valid => {
            if kernel > input {
                return fail(format!(
                    "window of size {kernel} does not fit input of size {input}"
                ));
            }
            Ok((0..=input - kernel)
                .step_by(stride)
                .map(|p| p as i64)
                .collect())
        }
        Padding::Same => {
            let positions: Vec<usize> = (0..input).step_by(stride).collect();
            let out = positions.len();
            let needed = if out == 0 {
                0
            } else {
                (out - 1) * stride + kernel
            };
            let pad_before = needed.saturating_sub(input) / 2;
            Ok(positions
                .iter()
                .map(|&p| p as i64 - pad_before as i64)
                .collect())
        }
    }
}

fn as4(a: &ArrayD<f32>) -> ArrayView4<'_, f32> {
    a.view().into_dimensionality::<Ix4>().expect("rank checked")
}

fn conv2d(
    x: &ArrayD<f32>,
    f: &ArrayD<f32>,
    strides: Window,
    padding: Padding,
) -> Result<ConcreteTensor, OpFailure> {
    if x.ndim() != 4 || f.ndim() != 4 {
        return fail("conv2d needs rank-4 input and filter");
    }
    let (x, f) = (as4(x), as4(f));
    let (n, h, w, c) = x.dim();
    let (kh, kw, cin, cout) = f.dim();
    if c != cin {
        return fail(format!("input has {c} channels but filter expects {cin}"));
    }
    let rows = window_starts(h, kh, strides.h() as usize, padding)?;
    let cols = window_starts(w, kw, strides.w() as usize, padding)?;
    let out =
        ConcreteTensor::zeros(&[n as u64, rows.len() as u64, cols.len() as u64, cout as u64])?;
    let mut out4 = out.0.into_dimensionality::<Ix4>().expect("rank 4");
    for b in 0..n {
        for (oi, &r0) in rows.iter().enumerate() {
            for (oj, &c0) in cols.iter().enumerate() {
                let mut acc = out4.slice_mut(s![b, oi, oj, ..]);
                for di in 0..kh {
                    let r = r0 + di as i64;
                    if r < 0 || r as usize >= h {
                        continue;
                    }
                    for dj in 0..kw {
                        let cc = c0 + dj as i64;
                        if cc < 0 || cc as usize >= w {
                            continue;
                        }
                        let pixel = x.slice(s![b, r as usize, cc as usize, ..]);
                        let taps = f.slice(s![di, dj, .., ..]);
                        acc += &pixel.dot(&taps);
                    }
                }
            }
        }
    }
    wrap(out4.into_dyn())
}

fn pool2d(
    x: &ArrayD<f32>,
    kind: PoolKind,
    ksize: Window,
    strides: Window,
    padding: Padding,
) -> Result<ConcreteTensor, OpFailure> {
    if x.ndim() != 4 {
        return fail("pooling needs a rank-4 input");
    }
    let x = as4(x);
    let (n, h, w, c) = x.dim();
    let (kh, kw) = (ksize.h() as usize, ksize.w() as usize);
    let rows = window_starts(h, kh, strides.h() as usize, padding)?;
    let cols = window_starts(w, kw, strides.w() as usize, padding)?;
    let out = ConcreteTensor::zeros(&[n as u64, rows.len() as u64, cols.len() as u64, c as u64])?;
    let mut out4 = out.0.into_dimensionality::<Ix4>().expect("rank 4");
    let clip = |start: i64, k: usize, limit: usize| {
        let lo = start.max(0) as usize;
        let hi = ((start + k as i64).max(0) as usize).min(limit);
        lo..hi.max(lo)
    };
    for b in 0..n {
        for (oi, &r0) in rows.iter().enumerate() {
            for (oj, &c0) in cols.iter().enumerate() {
                let window = x.slice(s![b, clip(r0, kh, h), clip(c0, kw, w), ..]);
                for ch in 0..c {
                    let lane = window.index_axis(Axis(2), ch);
                    out4[[b, oi, oj, ch]] = match kind {
                        PoolKind::Max => lane.fold(f32::NEG_INFINITY, |m, &v| m.max(v)),
                        PoolKind::Avg => lane.mean().unwrap_or(0.0),
                    };
                }
            }
        }
    }
    wrap(out4.into_dyn())
}

/// First failure of a concrete execution.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("node '{node}' failed in iteration {iteration}: {failure}")]
pub struct ConcreteError {
    pub node: String,
    pub iteration: u64,
    pub failure: OpFailure,
}

/// Concrete outcome of one run plan: shapes of every evaluated node in the
/// last completed iteration, or the first error.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub graph: String,
    pub outcome: Result<BTreeMap<String, Vec<u64>>, ConcreteError>,
}

/// Concrete counterpart of a session: variable tensors persist across runs.
pub struct ConcreteSession<'g> {
    graph: &'g ShapeGraph,
    seed: u64,
    variables: HashMap<String, ConcreteTensor>,
    iteration: u64,
}

impl<'g> ConcreteSession<'g> {
    pub fn new(graph: &'g ShapeGraph, seed: u64) -> Self {
        ConcreteSession {
            graph,
            seed,
            variables: HashMap::new(),
            iteration: 1,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    fn source(
        &mut self,
        node: &NodeSpec,
        feed: &BTreeMap<String, Shape>,
    ) -> Result<ConcreteTensor, OpFailure> {
        match &node.op {
            Op::Placeholder { shape: declared } => {
                let Some(fed) = feed.get(&node.id) else {
                    return fail("placeholder was not fed");
                };
                let concrete = concretize(&fill_from(fed, declared), self.seed);
                if !conforms(&concrete, declared) {
                    return fail(format!(
                        "fed shape {concrete:?} does not match declared {declared}"
                    ));
                }
                ConcreteTensor::zeros(&concrete)
            }
            Op::Constant { shape } => ConcreteTensor::zeros(&concretize(shape, self.seed)),
            Op::Variable { shape } => match self.variables.get(&node.id) {
                Some(t) => Ok(t.clone()),
                None => {
                    let t = ConcreteTensor::zeros(&concretize(shape, self.seed))?;
                    self.variables.insert(node.id.clone(), t.clone());
                    Ok(t)
                }
            },
            _ => unreachable!("not a source op"),
        }
    }

    /// One iteration. Variables read their value from before the run; assigns
    /// take effect once the whole run succeeds.
    pub fn run<S: AsRef<str>>(
        &mut self,
        fetches: &[S],
        feed: &BTreeMap<String, Shape>,
    ) -> Result<BTreeMap<String, Vec<u64>>, ConcreteError> {
        let graph = self.graph;
        let order = graph.topo_order(fetches).expect("fetches validated");
        // Tensors are dropped after their last consumer; only shapes are kept.
        let mut pending: HashMap<&str, usize> = HashMap::with_capacity(order.len());
        for node in &order {
            for input in &node.inputs {
                *pending.entry(input.as_str()).or_default() += 1;
            }
        }
        let mut values: HashMap<&str, ConcreteTensor> = HashMap::new();
        let mut shapes = BTreeMap::new();
        let mut updates = Vec::new();
        for node in order {
            let result = if node.kind().is_source() {
                self.source(node, feed)
            } else {
                let inputs: Vec<ConcreteTensor> = node
                    .inputs
                    .iter()
                    .map(|i| values[i.as_str()].clone())
                    .collect();
                execute_op(&node.op, &inputs)
            };
            let tensor = result.map_err(|failure| ConcreteError {
                node: node.id.clone(),
                iteration: self.iteration,
                failure,
            })?;
            for input in &node.inputs {
                let left = pending.get_mut(input.as_str()).expect("counted");
                *left -= 1;
                if *left == 0 {
                    values.remove(input.as_str());
                }
            }
            shapes.insert(node.id.clone(), tensor.shape());
            if let Op::Assign { .. } = node.op {
                updates.push((node.inputs[0].clone(), tensor.clone()));
            }
            if pending.contains_key(node.id.as_str()) {
                values.insert(node.id.as_str(), tensor);
            }
        }
        self.variables.extend(updates);
        self.iteration += 1;
        Ok(shapes)
    }
}

/// Known dims of `fed`, completed from `declared` where the feed is unknown
/// and the ranks agree.
fn fill_from(fed: &Shape, declared: &Shape) -> Shape {
    match (fed, declared) {
        (Shape::RankUnknown, d) => d.clone(),
        (Shape::RankKnown(f), Shape::RankKnown(d)) if f.len() == d.len() => Shape::RankKnown(
            f.iter()
                .zip(d)
                .map(|(a, b)| if a.is_known() { *a } else { *b })
                .collect(),
        ),
        (f, _) => f.clone(),
    }
}

/// Executes every run plan of `ir` on concrete tensors. Plans over the same
/// graph share one session.
pub fn concrete_run(ir: &ProgramIR, seed: u64) -> Vec<OracleRun> {
    concrete_run_with(ir, seed, |_, _, _| {})
}

/// Like [`concrete_run`], handing the shapes of every successful iteration
/// to `observe`.
pub fn concrete_run_with(
    ir: &ProgramIR,
    seed: u64,
    mut observe: impl FnMut(&RunPlan, u64, &BTreeMap<String, Vec<u64>>),
) -> Vec<OracleRun> {
    let mut sessions: HashMap<&str, ConcreteSession<'_>> = HashMap::new();
    let mut runs = Vec::with_capacity(ir.runs.len());
    for plan in &ir.runs {
        let graph = ir
            .graph(&plan.graph)
            .expect("validated run references a graph");
        let session = sessions
            .entry(plan.graph.as_str())
            .or_insert_with(|| ConcreteSession::new(graph, seed));
        let total = plan.repeat.saturating_mul(plan.feeds.len() as u64) as usize;
        let mut outcome = Ok(BTreeMap::new());
        for feed in plan.feeds.iter().cycle().take(total) {
            let iteration = session.iteration();
            outcome = session.run(&plan.fetches, feed);
            match &outcome {
                Ok(shapes) => observe(plan, iteration, shapes),
                Err(_) => break,
            }
        }
        runs.push(OracleRun {
            graph: plan.graph.clone(),
            outcome,
        });
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_ir_str;
    use crate::ops::PoolKind;
    use crate::DesiredShape;

    fn t(shape: &[u64]) -> ConcreteTensor {
        ConcreteTensor::zeros(shape).unwrap()
    }

    fn out_shape(op: &Op, inputs: &[&[u64]]) -> Result<Vec<u64>, OpFailure> {
        let inputs: Vec<ConcreteTensor> = inputs.iter().map(|s| t(s)).collect();
        execute_op(op, &inputs).map(|o| o.shape())
    }

    #[test]
    fn concretize_samples_only_unknowns() {
        for seed in 0..50 {
            let s = concretize(&Shape::partial([None, Some(784)]), seed);
            assert_eq!(s.len(), 2);
            assert!((1..=6).contains(&s[0]) && s[1] == 784);
            assert_eq!(concretize(&Shape::known([3, 4]), seed), vec![3, 4]);
            let r = concretize(&Shape::RankUnknown, seed);
            assert!(r.len() <= 4 && r.iter().all(|d| (1..=6).contains(d)));
            assert_eq!(concretize(&Shape::RankUnknown, seed), r);
        }
    }

    #[test]
    fn leading_unknowns_share_a_sample() {
        for seed in 0..20 {
            let a = concretize(&Shape::partial([None, Some(784)]), seed);
            let b = concretize(&Shape::partial([None, Some(10)]), seed);
            assert_eq!(a[0], b[0]);
        }
    }

    #[test]
    fn buffer_length_matches_shape() {
        let x = t(&[2, 3, 4]);
        assert_eq!(x.len(), 24);
        assert!(t(&[0, 5]).is_empty());
        assert!(matches!(
            ConcreteTensor::zeros(&[1 << 20, 1 << 20]),
            Err(OpFailure::TooLarge(_))
        ));
    }

    #[test]
    fn conv_and_pool_shapes() {
        let same = Padding::Same;
        let valid = Padding::Valid;
        let conv = |s, p| Op::Conv2d {
            strides: Window::new(s, s),
            padding: p,
        };
        assert_eq!(
            out_shape(&conv(1, same), &[&[2, 28, 28, 1], &[5, 5, 1, 32]]),
            Ok(vec![2, 28, 28, 32])
        );
        assert_eq!(
            out_shape(&conv(2, valid), &[&[1, 7, 7, 3], &[3, 3, 3, 8]]),
            Ok(vec![1, 3, 3, 8])
        );
        assert!(out_shape(&conv(1, same), &[&[1, 28, 28, 4], &[3, 3, 5, 8]]).is_err());
        let pool = |k, s, p| Op::Pool2d {
            kind: PoolKind::Max,
            ksize: Window::new(k, k),
            strides: Window::new(s, s),
            padding: p,
        };
        assert_eq!(
            out_shape(&pool(2, 2, same), &[&[2, 28, 28, 32]]),
            Ok(vec![2, 14, 14, 32])
        );
        assert_eq!(
            out_shape(&pool(3, 2, valid), &[&[1, 7, 7, 3]]),
            Ok(vec![1, 3, 3, 3])
        );
        assert!(out_shape(&pool(2, 2, same), &[&[5, 5]]).is_err());
    }

    #[test]
    fn matmul_and_reshape() {
        assert_eq!(out_shape(&Op::MatMul, &[&[3, 4], &[4, 5]]), Ok(vec![3, 5]));
        assert!(out_shape(&Op::MatMul, &[&[3, 4], &[5, 6]]).is_err());
        for b in 1..=5 {
            assert_eq!(
                out_shape(&Op::MatMul, &[&[b, 784], &[784, 10]]),
                Ok(vec![b, 10])
            );
        }
        let reshape = |d: &[i64]| Op::Reshape {
            desired: Some(DesiredShape::from_ints(d).unwrap()),
        };
        assert_eq!(out_shape(&reshape(&[4, -1]), &[&[2, 6]]), Ok(vec![4, 3]));
        assert!(out_shape(&reshape(&[5, -1]), &[&[2, 6]]).is_err());
        assert!(out_shape(&reshape(&[5, 2]), &[&[2, 6]]).is_err());
    }

    #[test]
    fn argmax_over_empty_axis_does_not_panic() {
        assert_eq!(out_shape(&Op::ArgMax { axis: 1 }, &[&[3, 0]]), Ok(vec![3]));
        assert_eq!(out_shape(&Op::OneHot { depth: 0 }, &[&[2]]), Ok(vec![2, 0]));
    }

    const SECOND_BATCH: &str = r#"{"version":1,"graphs":{"g":[
        {"id":"input","op":"placeholder","shape":[3,4]},
        {"id":"store","op":"variable","shape":[4,3]},
        {"id":"prod","op":"matmul","inputs":["input","store"]},
        {"id":"t","op":"transpose","inputs":["prod"]},
        {"id":"update","op":"assign","inputs":["store","t"],"attrs":{"validate":false}}]},
        "runs":[{"graph":"g","fetches":["update"],"feeds":[{"input":[3,4]}],"repeat":3}]}"#;

    #[test]
    fn second_batch_fails_concretely_on_iteration_two() {
        let ir = parse_ir_str(SECOND_BATCH).unwrap();
        for seed in 0..5 {
            let runs = concrete_run(&ir, seed);
            let err = runs[0].outcome.as_ref().unwrap_err();
            assert_eq!((err.node.as_str(), err.iteration), ("prod", 2));
        }
    }

    #[test]
    fn feed_mismatch_fails_at_placeholder() {
        let text = r#"{"version":1,"graphs":{"g":[
            {"id":"x","op":"placeholder","shape":[null,784]},
            {"id":"w","op":"variable","shape":[784,10]},
            {"id":"y","op":"matmul","inputs":["x","w"]}]},
            "runs":[{"graph":"g","fetches":["y"],"feeds":[{"x":[50,10]}]}]}"#;
        let runs = concrete_run(&parse_ir_str(text).unwrap(), 7);
        let err = runs[0].outcome.as_ref().unwrap_err();
        assert_eq!((err.node.as_str(), err.iteration), ("x", 1));
    }

    #[test]
    fn partly_known_feed_takes_declared_dims() {
        let text = r#"{"version":1,"graphs":{"g":[
            {"id":"x","op":"placeholder","shape":[null,784]},
            {"id":"r","op":"relu","inputs":["x"]}]},
            "runs":[{"graph":"g","fetches":["r"],"feeds":[{"x":[null,null]}]}]}"#;
        let runs = concrete_run(&parse_ir_str(text).unwrap(), 3);
        let shapes = runs[0].outcome.as_ref().unwrap();
        assert_eq!(shapes["r"][1], 784);
    }
}
