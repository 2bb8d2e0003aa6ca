//! Shape transfer functions for every supported operation.
//!
//! Each transfer function is total: illegal inputs produce [`Shape::Bottom`]
//! rather than an error, and `Bottom` inputs always yield `Bottom`.

use std::fmt;

use thiserror::Error;

use crate::domain::{DesiredDim, DesiredShape, Dim, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceKind {
    Mean,
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    BiasAdd,
}

/// Ops that return their input shape unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryKind {
    Identity,
    Relu,
    Dropout,
    Tanh,
    Sigmoid,
    Softmax,
    Cast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    pub fn name(self) -> &'static str {
        match self {
            Padding::Same => "SAME",
            Padding::Valid => "VALID",
        }
    }

    pub fn from_name(s: &str) -> Option<Padding> {
        match s {
            "SAME" => Some(Padding::Same),
            "VALID" => Some(Padding::Valid),
            _ => None,
        }
    }
}

/// Operation kind without attributes, as reported in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Placeholder,
    Constant,
    Variable,
    Assign,
    SetShape,
    Reshape,
    Reduce(ReduceKind),
    MatMul,
    Conv2d,
    Pool2d(PoolKind),
    Elementwise(BinaryKind),
    Identity(UnaryKind),
    Transpose,
    Concat,
    ExpandDims,
    Squeeze,
    ArgMax,
    OneHot,
    Flatten,
}

/// How many inputs an op takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exactly(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exactly(k) => write!(f, "{k}"),
            Arity::AtLeast(k) => write!(f, "at least {k}"),
        }
    }
}

impl OpKind {
    pub const ALL: [OpKind; 32] = [
        OpKind::Placeholder,
        OpKind::Constant,
        OpKind::Variable,
        OpKind::Assign,
        OpKind::SetShape,
        OpKind::Reshape,
        OpKind::Reduce(ReduceKind::Mean),
        OpKind::Reduce(ReduceKind::Sum),
        OpKind::Reduce(ReduceKind::Max),
        OpKind::MatMul,
        OpKind::Conv2d,
        OpKind::Pool2d(PoolKind::Max),
        OpKind::Pool2d(PoolKind::Avg),
        OpKind::Elementwise(BinaryKind::Add),
        OpKind::Elementwise(BinaryKind::Sub),
        OpKind::Elementwise(BinaryKind::Mul),
        OpKind::Elementwise(BinaryKind::Div),
        OpKind::Elementwise(BinaryKind::BiasAdd),
        OpKind::Identity(UnaryKind::Identity),
        OpKind::Identity(UnaryKind::Relu),
        OpKind::Identity(UnaryKind::Dropout),
        OpKind::Identity(UnaryKind::Tanh),
        OpKind::Identity(UnaryKind::Sigmoid),
        OpKind::Identity(UnaryKind::Softmax),
        OpKind::Identity(UnaryKind::Cast),
        OpKind::Transpose,
        OpKind::Concat,
        OpKind::ExpandDims,
        OpKind::Squeeze,
        OpKind::ArgMax,
        OpKind::OneHot,
        OpKind::Flatten,
    ];

    /// Name used in the JSON IR.
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Placeholder => "placeholder",
            OpKind::Constant => "constant",
            OpKind::Variable => "variable",
            OpKind::Assign => "assign",
            OpKind::SetShape => "set_shape",
            OpKind::Reshape => "reshape",
            OpKind::Reduce(ReduceKind::Mean) => "reduce_mean",
            OpKind::Reduce(ReduceKind::Sum) => "reduce_sum",
            OpKind::Reduce(ReduceKind::Max) => "reduce_max",
            OpKind::MatMul => "matmul",
            OpKind::Conv2d => "conv2d",
            OpKind::Pool2d(PoolKind::Max) => "max_pool",
            OpKind::Pool2d(PoolKind::Avg) => "avg_pool",
            OpKind::Elementwise(BinaryKind::Add) => "add",
            OpKind::Elementwise(BinaryKind::Sub) => "sub",
            OpKind::Elementwise(BinaryKind::Mul) => "mul",
            OpKind::Elementwise(BinaryKind::Div) => "div",
            OpKind::Elementwise(BinaryKind::BiasAdd) => "bias_add",
            OpKind::Identity(UnaryKind::Identity) => "identity",
            OpKind::Identity(UnaryKind::Relu) => "relu",
            OpKind::Identity(UnaryKind::Dropout) => "dropout",
            OpKind::Identity(UnaryKind::Tanh) => "tanh",
            OpKind::Identity(UnaryKind::Sigmoid) => "sigmoid",
            OpKind::Identity(UnaryKind::Softmax) => "softmax",
            OpKind::Identity(UnaryKind::Cast) => "cast",
            OpKind::Transpose => "transpose",
            OpKind::Concat => "concat",
            OpKind::ExpandDims => "expand_dims",
            OpKind::Squeeze => "squeeze",
            OpKind::ArgMax => "argmax",
            OpKind::OneHot => "one_hot",
            OpKind::Flatten => "flatten",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name() == name)
    }

    pub fn arity(self) -> Arity {
        match self {
            OpKind::Placeholder | OpKind::Constant | OpKind::Variable => Arity::Exactly(0),
            OpKind::Assign | OpKind::MatMul | OpKind::Conv2d | OpKind::Elementwise(_) => {
                Arity::Exactly(2)
            }
            OpKind::Concat => Arity::AtLeast(1),
            _ => Arity::Exactly(1),
        }
    }

    pub fn is_source(self) -> bool {
        matches!(
            self,
            OpKind::Placeholder | OpKind::Constant | OpKind::Variable
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttrError {
    #[error("expected 4 entries, got {0}")]
    WindowLength(usize),
    #[error("first and last entries must be 1 (NHWC), got {0:?}")]
    WindowBatchOrChannel([u64; 4]),
    #[error("spatial entries must be >= 1, got {0:?}")]
    WindowZero([u64; 4]),
}

/// Spatial kernel size or stride of a 2-D window, stored in NHWC order as
/// `[1, h, w, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    h: u64,
    w: u64,
}

impl Window {
    pub fn new(h: u64, w: u64) -> Self {
        assert!(h >= 1 && w >= 1, "window entries must be >= 1");
        Window { h, w }
    }

    pub fn from_nhwc(entries: &[u64]) -> Result<Self, AttrError> {
        let arr: [u64; 4] = entries
            .try_into()
            .map_err(|_| AttrError::WindowLength(entries.len()))?;
        if arr[0] != 1 || arr[3] != 1 {
            return Err(AttrError::WindowBatchOrChannel(arr));
        }
        if arr[1] == 0 || arr[2] == 0 {
            return Err(AttrError::WindowZero(arr));
        }
        Ok(Window {
            h: arr[1],
            w: arr[2],
        })
    }

    pub fn h(self) -> u64 {
        self.h
    }

    pub fn w(self) -> u64 {
        self.w
    }

    pub fn to_nhwc(self) -> [u64; 4] {
        [1, self.h, self.w, 1]
    }
}

/// An operation together with its static attributes.
///
/// Sources (`Placeholder`, `Constant`, `Variable`) carry their declared shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Placeholder {
        shape: Shape,
    },
    Constant {
        shape: Shape,
    },
    Variable {
        shape: Shape,
    },
    /// Inputs: `[variable, value]`.
    Assign {
        validate: bool,
    },
    SetShape {
        shape: Shape,
    },
    Reshape {
        desired: Option<DesiredShape>,
    },
    Reduce {
        kind: ReduceKind,
        axis: Option<i64>,
        keep_dims: bool,
    },
    MatMul,
    /// Inputs: `[input, filter]`.
    Conv2d {
        strides: Window,
        padding: Padding,
    },
    Pool2d {
        kind: PoolKind,
        ksize: Window,
        strides: Window,
        padding: Padding,
    },
    Elementwise(BinaryKind),
    Identity(UnaryKind),
    Transpose {
        perm: Option<Vec<i64>>,
    },
    Concat {
        axis: i64,
    },
    ExpandDims {
        axis: i64,
    },
    Squeeze {
        axes: Option<Vec<i64>>,
    },
    ArgMax {
        axis: i64,
    },
    OneHot {
        depth: u64,
    },
    Flatten,
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Placeholder { .. } => OpKind::Placeholder,
            Op::Constant { .. } => OpKind::Constant,
            Op::Variable { .. } => OpKind::Variable,
            Op::Assign { .. } => OpKind::Assign,
            Op::SetShape { .. } => OpKind::SetShape,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Reduce { kind, .. } => OpKind::Reduce(*kind),
            Op::MatMul => OpKind::MatMul,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Pool2d { kind, .. } => OpKind::Pool2d(*kind),
            Op::Elementwise(k) => OpKind::Elementwise(*k),
            Op::Identity(k) => OpKind::Identity(*k),
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Concat { .. } => OpKind::Concat,
            Op::ExpandDims { .. } => OpKind::ExpandDims,
            Op::Squeeze { .. } => OpKind::Squeeze,
            Op::ArgMax { .. } => OpKind::ArgMax,
            Op::OneHot { .. } => OpKind::OneHot,
            Op::Flatten => OpKind::Flatten,
        }
    }

    /// Declared shape of a source op.
    pub fn declared_shape(&self) -> Option<&Shape> {
        match self {
            Op::Placeholder { shape } | Op::Constant { shape } | Op::Variable { shape } => {
                Some(shape)
            }
            _ => None,
        }
    }

    /// Output shape for the given input shapes.
    pub fn transfer(&self, inputs: &[Shape]) -> Shape {
        if inputs.iter().any(Shape::is_bottom) || !self.kind().arity().accepts(inputs.len()) {
            return Shape::Bottom;
        }
        match self {
            Op::Placeholder { shape } | Op::Constant { shape } | Op::Variable { shape } => {
                shape.clone()
            }
            Op::Assign { validate } => assign_transfer(&inputs[0], &inputs[1], *validate),
            Op::SetShape { shape } => inputs[0].meet(shape),
            Op::Reshape { desired } => reshape_transfer(&inputs[0], desired.as_ref()),
            Op::Reduce {
                axis, keep_dims, ..
            } => reduce_transfer(&inputs[0], *axis, *keep_dims),
            Op::MatMul => matmul_transfer(&inputs[0], &inputs[1]),
            Op::Conv2d { strides, padding } => {
                conv2d_transfer(&inputs[0], &inputs[1], *strides, *padding)
            }
            Op::Pool2d {
                ksize,
                strides,
                padding,
                ..
            } => pool2d_transfer(&inputs[0], *ksize, *strides, *padding),
            Op::Elementwise(_) => elementwise_transfer(&inputs[0], &inputs[1]),
            Op::Identity(_) => identity_transfer(&inputs[0]),
            Op::Transpose { perm } => transpose_transfer(&inputs[0], perm.as_deref()),
            Op::Concat { axis } => concat_transfer(inputs, *axis),
            Op::ExpandDims { axis } => expand_dims_transfer(&inputs[0], *axis),
            Op::Squeeze { axes } => squeeze_transfer(&inputs[0], axes.as_deref()),
            Op::ArgMax { axis } => argmax_transfer(&inputs[0], *axis),
            Op::OneHot { depth } => one_hot_transfer(&inputs[0], *depth),
            Op::Flatten => flatten_transfer(&inputs[0]),
        }
    }
}

/// Maps a possibly negative axis into `0..rank`.
pub(crate) fn normalize_axis(axis: i64, rank: usize) -> Option<usize> {
    let r = rank as i64;
    if axis >= -r && axis < r {
        Some(if axis < 0 { axis + r } else { axis } as usize)
    } else {
        None
    }
}

pub fn assign_transfer(current: &Shape, value: &Shape, validate: bool) -> Shape {
    if current.is_bottom() {
        return Shape::Bottom;
    }
    if validate {
        current.meet(value)
    } else {
        value.clone()
    }
}

/// `desired == None` models an unknown target shape, which is always illegal.
pub fn reshape_transfer(input: &Shape, desired: Option<&DesiredShape>) -> Shape {
    let Some(desired) = desired else {
        return Shape::Bottom;
    };
    if input.is_bottom() {
        return Shape::Bottom;
    }
    let mut fixed = 1u64;
    for d in desired.entries() {
        if let DesiredDim::Size(n) = d {
            match fixed.checked_mul(*n) {
                Some(p) => fixed = p,
                None => return Shape::Bottom,
            }
        }
    }
    let count = input.element_count();
    if input.is_fully_known() && count.is_none() {
        // element count overflowed
        return Shape::Bottom;
    }
    let wildcard = if desired.has_wildcard() {
        match count {
            Some(c) if c % fixed != 0 => return Shape::Bottom,
            Some(c) => Dim::Known(c / fixed),
            None => Dim::Unknown,
        }
    } else {
        if count.is_some_and(|c| c != fixed) {
            return Shape::Bottom;
        }
        Dim::Unknown
    };
    Shape::RankKnown(
        desired
            .entries()
            .iter()
            .map(|d| match d {
                DesiredDim::Size(n) => Dim::Known(*n),
                DesiredDim::Wildcard => wildcard,
            })
            .collect(),
    )
}

pub fn reduce_transfer(input: &Shape, axis: Option<i64>, keep_dims: bool) -> Shape {
    let dims = match input {
        Shape::Bottom => return Shape::Bottom,
        Shape::RankUnknown if axis.is_none() && !keep_dims => return Shape::scalar(),
        Shape::RankUnknown => return Shape::RankUnknown,
        Shape::RankKnown(dims) => dims,
    };
    let Some(axis) = axis else {
        return if keep_dims {
            Shape::RankKnown(vec![Dim::Known(1); dims.len()])
        } else {
            Shape::scalar()
        };
    };
    let Some(ax) = normalize_axis(axis, dims.len()) else {
        return Shape::Bottom;
    };
    let mut out = dims.clone();
    if keep_dims {
        out[ax] = Dim::Known(1);
    } else {
        out.remove(ax);
    }
    Shape::RankKnown(out)
}

/// Bottom if any operand is rank-known with a rank other than `rank`.
fn rank_violation(operands: &[&Shape], rank: usize) -> bool {
    operands.iter().any(|s| s.rank().is_some_and(|r| r != rank))
}

pub fn matmul_transfer(a: &Shape, b: &Shape) -> Shape {
    if a.is_bottom() || b.is_bottom() || rank_violation(&[a, b], 2) {
        return Shape::Bottom;
    }
    let (Shape::RankKnown(a), Shape::RankKnown(b)) = (a, b) else {
        return Shape::RankUnknown;
    };
    if a[1].meet(b[0]).is_none() {
        return Shape::Bottom;
    }
    Shape::RankKnown(vec![a[0], b[1]])
}

/// Output size of one spatial axis of a strided window.
fn window_extent(input: Dim, kernel: Dim, stride: u64, padding: Padding) -> Option<Dim> {
    match (padding, input, kernel) {
        (Padding::Same, Dim::Known(n), _) => Some(Dim::Known(n.div_ceil(stride))),
        (Padding::Valid, Dim::Known(n), Dim::Known(k)) => {
            if n < k {
                None
            } else {
                Some(Dim::Known((n - k + 1).div_ceil(stride)))
            }
        }
        _ => Some(Dim::Unknown),
    }
}

pub fn conv2d_transfer(input: &Shape, filter: &Shape, strides: Window, padding: Padding) -> Shape {
    if input.is_bottom() || filter.is_bottom() || rank_violation(&[input, filter], 4) {
        return Shape::Bottom;
    }
    let (Shape::RankKnown(x), Shape::RankKnown(f)) = (input, filter) else {
        return Shape::RankUnknown;
    };
    if x[3].meet(f[2]).is_none() {
        return Shape::Bottom;
    }
    let h = window_extent(x[1], f[0], strides.h, padding);
    let w = window_extent(x[2], f[1], strides.w, padding);
    match (h, w) {
        (Some(h), Some(w)) => Shape::RankKnown(vec![x[0], h, w, f[3]]),
        _ => Shape::Bottom,
    }
}

pub fn pool2d_transfer(input: &Shape, ksize: Window, strides: Window, padding: Padding) -> Shape {
    if input.is_bottom() || rank_violation(&[input], 4) {
        return Shape::Bottom;
    }
    let Shape::RankKnown(x) = input else {
        return Shape::RankUnknown;
    };
    let h = window_extent(x[1], Dim::Known(ksize.h), strides.h, padding);
    let w = window_extent(x[2], Dim::Known(ksize.w), strides.w, padding);
    match (h, w) {
        (Some(h), Some(w)) => Shape::RankKnown(vec![x[0], h, w, x[3]]),
        _ => Shape::Bottom,
    }
}

pub fn elementwise_transfer(a: &Shape, b: &Shape) -> Shape {
    a.broadcast(b)
}

pub fn identity_transfer(input: &Shape) -> Shape {
    input.clone()
}

pub fn concat_transfer(inputs: &[Shape], axis: i64) -> Shape {
    if inputs.is_empty() || inputs.iter().any(Shape::is_bottom) {
        return Shape::Bottom;
    }
    let ranked: Vec<&[Dim]> = inputs.iter().filter_map(Shape::dims).collect();
    let Some(first) = ranked.first() else {
        return Shape::RankUnknown;
    };
    let rank = first.len();
    if ranked.iter().any(|d| d.len() != rank) {
        return Shape::Bottom;
    }
    let Some(ax) = normalize_axis(axis, rank) else {
        return Shape::Bottom;
    };
    let mut out = vec![Dim::Unknown; rank];
    for dims in &ranked {
        for (i, d) in dims.iter().enumerate() {
            if i == ax {
                continue;
            }
            match out[i].meet(*d) {
                Some(m) => out[i] = m,
                None => return Shape::Bottom,
            }
        }
    }
    let all_ranked = ranked.len() == inputs.len();
    out[ax] = if all_ranked {
        ranked
            .iter()
            .try_fold(0u64, |acc, d| acc.checked_add(d[ax].known()?))
            .map_or(Dim::Unknown, Dim::Known)
    } else {
        Dim::Unknown
    };
    Shape::RankKnown(out)
}

pub fn transpose_transfer(input: &Shape, perm: Option<&[i64]>) -> Shape {
    let Some(perm) = perm else {
        return match input {
            Shape::RankKnown(dims) => Shape::RankKnown(dims.iter().rev().copied().collect()),
            other => other.clone(),
        };
    };
    if input.is_bottom() || !is_permutation(perm) {
        return Shape::Bottom;
    }
    match input {
        Shape::RankKnown(dims) if dims.len() != perm.len() => Shape::Bottom,
        Shape::RankKnown(dims) => {
            Shape::RankKnown(perm.iter().map(|&p| dims[p as usize]).collect())
        }
        _ => Shape::RankKnown(vec![Dim::Unknown; perm.len()]),
    }
}

fn is_permutation(perm: &[i64]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p < 0 || p as usize >= perm.len() || seen[p as usize] {
            return false;
        }
        seen[p as usize] = true;
    }
    true
}

pub fn expand_dims_transfer(input: &Shape, axis: i64) -> Shape {
    let dims = match input {
        Shape::RankKnown(dims) => dims,
        other => return other.clone(),
    };
    let Some(ax) = normalize_axis(axis, dims.len() + 1) else {
        return Shape::Bottom;
    };
    let mut out = dims.clone();
    out.insert(ax, Dim::Known(1));
    Shape::RankKnown(out)
}

/// With no axes, removes every size-1 axis; the result is rank-unknown when an
/// unknown axis might also be size 1. Named axes must be known to be 1.
pub fn squeeze_transfer(input: &Shape, axes: Option<&[i64]>) -> Shape {
    let dims = match input {
        Shape::RankKnown(dims) => dims,
        other => return other.clone(),
    };
    let Some(axes) = axes else {
        if dims.iter().any(|d| !d.is_known()) {
            return Shape::RankUnknown;
        }
        return Shape::RankKnown(
            dims.iter()
                .copied()
                .filter(|d| *d != Dim::Known(1))
                .collect(),
        );
    };
    let mut drop = vec![false; dims.len()];
    for &axis in axes {
        let Some(ax) = normalize_axis(axis, dims.len()) else {
            return Shape::Bottom;
        };
        if drop[ax] || dims[ax] != Dim::Known(1) {
            return Shape::Bottom;
        }
        drop[ax] = true;
    }
    Shape::RankKnown(
        dims.iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(d, _)| *d)
            .collect(),
    )
}

pub fn argmax_transfer(input: &Shape, axis: i64) -> Shape {
    let dims = match input {
        Shape::RankKnown(dims) => dims,
        other => return other.clone(),
    };
    let Some(ax) = normalize_axis(axis, dims.len()) else {
        return Shape::Bottom;
    };
    let mut out = dims.clone();
    out.remove(ax);
    Shape::RankKnown(out)
}

pub fn one_hot_transfer(input: &Shape, depth: u64) -> Shape {
    match input {
        Shape::RankKnown(dims) => {
            let mut out = dims.clone();
            out.push(Dim::Known(depth));
            Shape::RankKnown(out)
        }
        other => other.clone(),
    }
}

/// `[d0, d1*...*dn]`; rank-1 input becomes `[d0, 1]`.
pub fn flatten_transfer(input: &Shape) -> Shape {
    let dims = match input {
        Shape::Bottom => return Shape::Bottom,
        Shape::RankUnknown => return Shape::RankKnown(vec![Dim::Unknown; 2]),
        Shape::RankKnown(dims) => dims,
    };
    let Some((&lead, rest)) = dims.split_first() else {
        return Shape::Bottom;
    };
    let inner = if rest.iter().all(|d| d.is_known()) {
        match rest
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(d.known().unwrap_or(0)))
        {
            Some(p) => Dim::Known(p),
            None => return Shape::Bottom,
        }
    } else {
        Dim::Unknown
    };
    Shape::RankKnown(vec![lead, inner])
}
