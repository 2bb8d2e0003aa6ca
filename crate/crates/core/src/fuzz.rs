//! Random program generation and differential comparison with the oracle.
//!
//! Generated graphs mimic small training pipelines: batched placeholders
//! flow through layers whose weights are variables or constants. Most
//! attribute choices are consistent with the operand shapes, the rest are
//! deliberately wrong so that both verdicts show up.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::check::check_with;
use crate::domain::{DesiredShape, Dim, Shape};
use crate::graph::{build_graph, NodeSpec};
use crate::ir::{ProgramIR, RunPlan};
use crate::ops::{BinaryKind, Op, Padding, PoolKind, ReduceKind, UnaryKind, Window};
use crate::oracle::{concrete_run_with, execute_op, ConcreteTensor};
use crate::session::{FeedSet, RunOutput};

/// How much of each shape the generated program leaves unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeMode {
    /// Feeds are fully known. Arbitrary, possibly ill-formed programs.
    FullyKnown,
    /// Placeholders leave their batch axis unknown. Programs only use ops
    /// whose legality does not depend on the batch size.
    BatchUnknown,
}

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub max_nodes: usize,
    pub mode: ShapeMode,
    /// Probability of an attribute or feed that is likely wrong.
    pub noise: f64,
}

impl GenConfig {
    pub fn new(mode: ShapeMode) -> Self {
        GenConfig {
            max_nodes: 20,
            mode,
            noise: 0.12,
        }
    }
}

const NOMINAL_LIMIT: usize = 4096;

struct Info {
    /// Concrete shape under the nominal feed; `None` if that fails.
    shape: Option<Vec<u64>>,
    /// Axis 0 is the batch axis.
    batched: bool,
}

struct Builder<'r, R: Rng> {
    rng: &'r mut R,
    config: GenConfig,
    specs: Vec<NodeSpec>,
    info: Vec<Info>,
    placeholders: Vec<(usize, Vec<u64>)>,
}

impl<'r, R: Rng> Builder<'r, R> {
    fn strict(&self) -> bool {
        self.config.mode == ShapeMode::BatchUnknown
    }

    fn noisy(&mut self) -> bool {
        !self.strict() && self.rng.random_bool(self.config.noise)
    }

    fn full(&self) -> bool {
        self.specs.len() >= self.config.max_nodes
    }

    fn push(&mut self, op: Op, inputs: &[usize], batched: bool) -> usize {
        let shape = match &op {
            Op::Placeholder { shape } | Op::Constant { shape } | Op::Variable { shape } => {
                let fed = self
                    .placeholders
                    .iter()
                    .find(|(i, _)| *i == self.specs.len());
                fed.map(|(_, s)| s.clone()).or_else(|| shape.to_concrete())
            }
            _ => {
                let tensors: Option<Vec<ConcreteTensor>> = inputs
                    .iter()
                    .map(|&i| {
                        self.info[i]
                            .shape
                            .as_ref()
                            .and_then(|s| ConcreteTensor::zeros(s).ok())
                    })
                    .collect();
                tensors
                    .and_then(|t| execute_op(&op, &t).ok())
                    .map(|t| t.shape())
                    .filter(|s| s.iter().product::<u64>() as usize <= NOMINAL_LIMIT)
            }
        };
        let batched = batched && shape.as_ref().is_some_and(|s| !s.is_empty());
        let id = format!("{}{}", op.kind().name(), self.specs.len());
        let names: Vec<&str> = inputs.iter().map(|&i| self.specs[i].id.as_str()).collect();
        let spec = NodeSpec::new(id, op, &names);
        self.specs.push(spec);
        self.info.push(Info { shape, batched });
        self.specs.len() - 1
    }

    fn live(&mut self, pred: impl Fn(&Info) -> bool) -> Option<usize> {
        let candidates: Vec<usize> = (0..self.info.len())
            .filter(|&i| self.info[i].shape.is_some() && pred(&self.info[i]))
            .collect();
        candidates.choose(self.rng).copied()
    }

    fn shape(&self, i: usize) -> &[u64] {
        self.info[i].shape.as_deref().expect("live node")
    }

    fn dim(&mut self) -> u64 {
        self.rng.random_range(1..=6)
    }

    /// Fresh weight-like source of the given shape.
    fn weight(&mut self, shape: Vec<u64>) -> usize {
        let shape = Shape::known(shape);
        let op = if self.rng.random_bool(0.7) {
            Op::Variable { shape }
        } else {
            Op::Constant { shape }
        };
        self.push(op, &[], false)
    }

    fn placeholder(&mut self, batch: u64) {
        let rest: Vec<u64> = match self.rng.random_range(0..4) {
            0 => vec![],
            1 => vec![self.dim()],
            2 => vec![self.dim(), self.dim()],
            _ => {
                let h = self.rng.random_range(2..=6);
                let w = self.rng.random_range(2..=6);
                vec![h, w, self.rng.random_range(1..=3)]
            }
        };
        let unknown_batch = self.strict() || self.rng.random_bool(0.5);
        let declared = Shape::RankKnown(
            std::iter::once(if unknown_batch {
                Dim::Unknown
            } else {
                Dim::Known(batch)
            })
            .chain(rest.iter().map(|&d| Dim::Known(d)))
            .collect(),
        );
        let mut nominal = vec![batch];
        nominal.extend(&rest);
        self.placeholders.push((self.specs.len(), nominal));
        self.push(Op::Placeholder { shape: declared }, &[], true);
    }

    fn step(&mut self) -> Option<usize> {
        match self.rng.random_range(0..100) {
            0..=9 => self.unary(),
            10..=24 => self.binary(),
            25..=36 => self.matmul(),
            37..=42 => self.conv(),
            43..=47 => self.pool(),
            48..=55 => self.reshape(),
            56..=61 => self.reduce(),
            62..=64 => self.argmax(),
            65..=68 => self.transpose(),
            69..=73 => self.concat(),
            74..=76 => self.expand_dims(),
            77..=79 => self.squeeze(),
            80..=81 => self.one_hot(),
            82..=85 => self.flatten(),
            86..=89 => self.set_shape(),
            _ => self.assign(),
        }
    }

    fn unary(&mut self) -> Option<usize> {
        let a = self.live(|_| true)?;
        let kinds = [
            UnaryKind::Identity,
            UnaryKind::Relu,
            UnaryKind::Dropout,
            UnaryKind::Tanh,
            UnaryKind::Sigmoid,
            UnaryKind::Softmax,
            UnaryKind::Cast,
        ];
        let kind = *kinds.choose(self.rng)?;
        let batched = self.info[a].batched;
        Some(self.push(Op::Identity(kind), &[a], batched))
    }

    fn binary(&mut self) -> Option<usize> {
        let kinds = [
            BinaryKind::Add,
            BinaryKind::Sub,
            BinaryKind::Mul,
            BinaryKind::Div,
            BinaryKind::BiasAdd,
        ];
        let kind = *kinds.choose(self.rng)?;
        let a = self.live(|_| true)?;
        let sa = self.shape(a).to_vec();
        let batched = self.info[a].batched;
        let b = if self.noisy() {
            self.live(|_| true)?
        } else if self.rng.random_bool(0.5) {
            let partner =
                self.live(|i| i.batched == batched && i.shape.as_deref() == Some(&sa[..]));
            partner.unwrap_or(a)
        } else {
            let max_len = if batched {
                sa.len().checked_sub(1)?
            } else {
                sa.len()
            };
            let len = self.rng.random_range(0..=max_len);
            let mut bias = sa[sa.len() - len..].to_vec();
            for d in bias.iter_mut() {
                if self.rng.random_bool(0.2) {
                    *d = 1;
                }
            }
            if self.full() {
                return None;
            }
            self.weight(bias)
        };
        let inputs = if self.rng.random_bool(0.5) {
            [a, b]
        } else {
            [b, a]
        };
        let out_batched = self.info[a].batched || self.info[b].batched;
        Some(self.push(Op::Elementwise(kind), &inputs, out_batched))
    }

    fn matmul(&mut self) -> Option<usize> {
        let a = self.live(|i| i.shape.as_ref().is_some_and(|s| s.len() == 2))?;
        let cols = self.shape(a)[1];
        let rows = if self.noisy() { cols + 1 } else { cols };
        let existing = self.live(|i| {
            !i.batched
                && i.shape
                    .as_ref()
                    .is_some_and(|s| s.len() == 2 && s[0] == rows)
        });
        let w = match existing {
            Some(w) if self.rng.random_bool(0.3) => w,
            _ => {
                if self.full() {
                    return None;
                }
                let out = self.dim();
                self.weight(vec![rows, out])
            }
        };
        let batched = self.info[a].batched;
        Some(self.push(Op::MatMul, &[a, w], batched))
    }

    fn padding(&mut self) -> Padding {
        if self.rng.random_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        }
    }

    fn window(&mut self, max: u64) -> Window {
        Window::new(
            self.rng.random_range(1..=max),
            self.rng.random_range(1..=max),
        )
    }

    fn conv(&mut self) -> Option<usize> {
        let a = self.live(|i| i.shape.as_ref().is_some_and(|s| s.len() == 4))?;
        if self.specs.len() + 1 >= self.config.max_nodes {
            return None;
        }
        let c = self.shape(a)[3];
        let cin = if self.noisy() { c + 1 } else { c };
        let (kh, kw, cout) = (
            self.rng.random_range(1..=3),
            self.rng.random_range(1..=3),
            self.rng.random_range(1..=4),
        );
        let filter = self.weight(vec![kh, kw, cin, cout]);
        let strides = self.window(2);
        let padding = self.padding();
        let batched = self.info[a].batched;
        Some(self.push(Op::Conv2d { strides, padding }, &[a, filter], batched))
    }

    fn pool(&mut self) -> Option<usize> {
        let noisy = self.noisy();
        let a = self.live(|i| noisy || i.shape.as_ref().is_some_and(|s| s.len() == 4))?;
        let kind = if self.rng.random_bool(0.5) {
            PoolKind::Max
        } else {
            PoolKind::Avg
        };
        let ksize = self.window(3);
        let strides = self.window(3);
        let padding = self.padding();
        let batched = self.info[a].batched;
        Some(self.push(
            Op::Pool2d {
                kind,
                ksize,
                strides,
                padding,
            },
            &[a],
            batched,
        ))
    }

    fn reshape(&mut self) -> Option<usize> {
        let a = self.live(|_| true)?;
        let s = self.shape(a).to_vec();
        let batched = self.info[a].batched && !s.is_empty();
        if self.strict() && batched {
            let mut rest: Vec<i64> = s[1..].iter().map(|&d| d as i64).collect();
            match self.rng.random_range(0..4) {
                0 => rest = vec![rest.iter().product()],
                1 => rest.reverse(),
                2 => rest.insert(self.rng.random_range(0..=rest.len()), 1),
                _ => {}
            }
            let mut desired = vec![-1];
            desired.extend(rest);
            let desired = DesiredShape::from_ints(&desired).ok()?;
            return Some(self.push(
                Op::Reshape {
                    desired: Some(desired),
                },
                &[a],
                true,
            ));
        }
        let total: u64 = s.iter().product();
        let divisors: Vec<u64> = (1..=total.max(1))
            .filter(|d| total.is_multiple_of(*d))
            .collect();
        let d = *divisors.choose(self.rng)?;
        let mut desired: Vec<i64> = match self.rng.random_range(0..4) {
            0 => vec![-1],
            1 => vec![d as i64, -1],
            2 => vec![-1, d as i64],
            _ => vec![d as i64, (total / d).max(1) as i64],
        };
        if self.noisy() {
            let i = self.rng.random_range(0..desired.len());
            desired[i] = if desired[i] == -1 { 7 } else { desired[i] + 1 };
        }
        let keeps_batch = batched && desired.len() > 1 && desired[0] as u64 == s[0];
        let desired = DesiredShape::from_ints(&desired).ok()?;
        Some(self.push(
            Op::Reshape {
                desired: Some(desired),
            },
            &[a],
            keeps_batch,
        ))
    }

    fn axis(&mut self, rank: usize) -> i64 {
        if rank == 0 || self.noisy() {
            return self.rng.random_range(-3..=3);
        }
        let r = rank as i64;
        self.rng.random_range(-r..r)
    }

    fn reduce(&mut self) -> Option<usize> {
        let a = self.live(|_| true)?;
        let rank = self.shape(a).len();
        let kind = *[ReduceKind::Mean, ReduceKind::Sum, ReduceKind::Max].choose(self.rng)?;
        let axis = if self.rng.random_bool(0.3) {
            None
        } else {
            Some(self.axis(rank))
        };
        let keep_dims = self.rng.random_bool(0.3);
        let batched =
            self.info[a].batched && axis.is_some_and(|x| x.rem_euclid(rank.max(1) as i64) != 0);
        Some(self.push(
            Op::Reduce {
                kind,
                axis,
                keep_dims,
            },
            &[a],
            batched,
        ))
    }

    fn argmax(&mut self) -> Option<usize> {
        let noisy = self.noisy();
        let a = self.live(|i| noisy || i.shape.as_ref().is_some_and(|s| !s.is_empty()))?;
        let rank = self.shape(a).len();
        let axis = self.axis(rank);
        let batched = self.info[a].batched && axis.rem_euclid(rank.max(1) as i64) != 0;
        Some(self.push(Op::ArgMax { axis }, &[a], batched))
    }

    fn transpose(&mut self) -> Option<usize> {
        let a = self.live(|_| true)?;
        let rank = self.shape(a).len();
        let batched = self.info[a].batched;
        let mut perm: Vec<i64> = (0..rank as i64).collect();
        if self.strict() && batched && rank > 0 {
            perm[1..].shuffle(self.rng);
        } else if self.rng.random_bool(0.3) {
            let keeps = batched && rank <= 1;
            return Some(self.push(Op::Transpose { perm: None }, &[a], keeps));
        } else {
            perm.shuffle(self.rng);
        }
        if self.noisy() {
            perm.push(rank as i64);
        }
        let keeps = batched && perm.first() == Some(&0);
        Some(self.push(Op::Transpose { perm: Some(perm) }, &[a], keeps))
    }

    fn concat(&mut self) -> Option<usize> {
        let noisy = self.noisy();
        let strict = self.strict();
        let a = self.live(|i| {
            let rank = i.shape.as_ref().map_or(0, Vec::len);
            noisy
                || if strict && i.batched {
                    rank >= 2
                } else {
                    rank >= 1
                }
        })?;
        let s = self.shape(a).to_vec();
        let batched = self.info[a].batched;
        let rank = s.len() as i64;
        let axis = if noisy {
            self.rng.random_range(-2..=2)
        } else if strict && batched {
            self.rng.random_range(1..rank)
        } else {
            self.rng.random_range(-rank..rank)
        };
        let ax = axis.rem_euclid(rank.max(1)) as usize;
        let matches = |i: &Info| {
            i.batched == batched
                && i.shape.as_ref().is_some_and(|t| {
                    t.len() == s.len()
                        && t.iter()
                            .zip(&s)
                            .enumerate()
                            .all(|(k, (x, y))| k == ax || x == y)
                })
        };
        let mut inputs = vec![a];
        for _ in 0..self.rng.random_range(1..=2) {
            let b = if noisy {
                self.live(|_| true)?
            } else {
                self.live(matches).unwrap_or(a)
            };
            inputs.push(b);
        }
        inputs.shuffle(self.rng);
        Some(self.push(Op::Concat { axis }, &inputs, batched))
    }

    fn expand_dims(&mut self) -> Option<usize> {
        let a = self.live(|_| true)?;
        let rank = self.shape(a).len() as i64;
        let batched = self.info[a].batched;
        let axis = if self.noisy() {
            rank + 2
        } else if self.strict() && batched {
            let ax = self.rng.random_range(1..=rank);
            if self.rng.random_bool(0.5) {
                ax - rank - 1
            } else {
                ax
            }
        } else {
            self.rng.random_range(-rank - 1..=rank)
        };
        let keeps = batched && axis.rem_euclid(rank + 1) != 0;
        Some(self.push(Op::ExpandDims { axis }, &[a], keeps))
    }

    fn squeeze(&mut self) -> Option<usize> {
        let a = self.live(|_| true)?;
        let s = self.shape(a).to_vec();
        let batched = self.info[a].batched;
        let start = usize::from(self.strict() && batched);
        let ones: Vec<i64> = (start..s.len())
            .filter(|&k| s[k] == 1)
            .map(|k| k as i64)
            .collect();
        let axes = if self.noisy() {
            Some(vec![self.rng.random_range(0..=s.len() as i64)])
        } else if start == 0 && self.rng.random_bool(0.4) {
            None
        } else {
            Some(
                ones.into_iter()
                    .filter(|_| self.rng.random_bool(0.7))
                    .collect(),
            )
        };
        let keeps = batched
            && match &axes {
                None => s.first().is_some_and(|&d| d != 1),
                Some(axes) => !axes.contains(&0),
            };
        Some(self.push(Op::Squeeze { axes }, &[a], keeps))
    }

    fn one_hot(&mut self) -> Option<usize> {
        let a = self.live(|i| i.shape.as_ref().is_some_and(|s| s.len() <= 2))?;
        let depth = self.rng.random_range(1..=6);
        let batched = self.info[a].batched;
        Some(self.push(Op::OneHot { depth }, &[a], batched))
    }

    fn flatten(&mut self) -> Option<usize> {
        let noisy = self.noisy();
        let a = self.live(|i| noisy || i.shape.as_ref().is_some_and(|s| !s.is_empty()))?;
        let batched = self.info[a].batched;
        Some(self.push(Op::Flatten, &[a], batched))
    }

    fn set_shape(&mut self) -> Option<usize> {
        let a = self.live(|_| true)?;
        let s = self.shape(a).to_vec();
        let batched = self.info[a].batched;
        let mut dims: Vec<Dim> = s
            .iter()
            .map(|&d| {
                if self.rng.random_bool(0.4) {
                    Dim::Unknown
                } else {
                    Dim::Known(d)
                }
            })
            .collect();
        if self.strict() && batched && !dims.is_empty() {
            dims[0] = Dim::Unknown;
        }
        let shape = if self.noisy() {
            match dims.first_mut() {
                Some(d) if self.rng.random_bool(0.5) => {
                    *d = Dim::Known(s[0] + 1);
                    Shape::RankKnown(dims)
                }
                _ => {
                    dims.push(Dim::Known(1));
                    Shape::RankKnown(dims)
                }
            }
        } else if self.rng.random_bool(0.1) {
            Shape::RankUnknown
        } else {
            Shape::RankKnown(dims)
        };
        Some(self.push(Op::SetShape { shape }, &[a], batched))
    }

    fn assign(&mut self) -> Option<usize> {
        let strict = self.strict();
        let value = self.live(|i| !(strict && i.batched))?;
        let vs = self.shape(value).to_vec();
        let validate = self.rng.random_bool(0.5);
        let mismatched = self.rng.random_bool(0.3);
        let existing: Vec<usize> = (0..self.specs.len())
            .filter(|&i| matches!(self.specs[i].op, Op::Variable { .. }))
            .filter(|&i| mismatched != (self.info[i].shape.as_deref() == Some(&vs[..])))
            .collect();
        let var = match existing.choose(self.rng) {
            Some(&v) => v,
            None if self.full() => return None,
            None => {
                let mut shape = vs.clone();
                if mismatched {
                    shape.push(self.rng.random_range(1..=3));
                }
                self.push(
                    Op::Variable {
                        shape: Shape::known(shape),
                    },
                    &[],
                    false,
                )
            }
        };
        Some(self.push(Op::Assign { validate }, &[var, value], false))
    }
}

/// Generates a single-graph program with one run plan.
pub fn random_program(rng: &mut impl Rng, config: GenConfig) -> ProgramIR {
    let mut b = Builder {
        rng,
        config,
        specs: Vec::new(),
        info: Vec::new(),
        placeholders: Vec::new(),
    };
    let batch = b.rng.random_range(1..=6);
    for _ in 0..b.rng.random_range(1..=2) {
        b.placeholder(batch);
    }
    let mut attempts = 0;
    while b.specs.len() + 3 <= b.config.max_nodes && attempts < 200 {
        attempts += 1;
        if b.specs.len() + 1 < b.config.max_nodes && b.rng.random_bool(0.05) {
            let batch_free = b.dim();
            let s = vec![batch_free];
            let i = b.weight(s);
            b.info[i].batched = false;
        }
        let _ = b.step();
    }
    let n = b.specs.len();
    let mut fetches = vec![b.specs[n - 1].id.clone()];
    for _ in 0..b.rng.random_range(0..=2) {
        let i = b.rng.random_range(0..n);
        fetches.push(b.specs[i].id.clone());
    }
    for i in 0..n {
        if matches!(b.specs[i].op, Op::Assign { .. }) && b.rng.random_bool(0.7) {
            fetches.push(b.specs[i].id.clone());
        }
    }
    fetches.dedup();
    let feeds = random_feeds(&mut b);
    let repeat = b.rng.random_range(1..=3);
    let graph = build_graph(b.specs).expect("generated graphs are well formed");
    let mut graphs = IndexMap::new();
    graphs.insert("main".to_string(), graph);
    ProgramIR {
        version: 1,
        graphs,
        runs: vec![RunPlan {
            graph: "main".to_string(),
            fetches,
            feeds,
            repeat,
        }],
    }
}

fn random_feeds<R: Rng>(b: &mut Builder<'_, R>) -> Vec<FeedSet> {
    let sets = b.rng.random_range(1..=2);
    let mut feeds = Vec::with_capacity(sets);
    for k in 0..sets {
        let batch = if k == 0 || b.strict() {
            None
        } else {
            Some(b.dim())
        };
        let leave_unknown = b.strict() && b.rng.random_bool(0.5);
        let mut feed = FeedSet::new();
        for (i, nominal) in b.placeholders.clone() {
            let declared = b.specs[i].declared_shape().cloned().expect("placeholder");
            let mut dims: Vec<Dim> = nominal.iter().map(|&d| Dim::Known(d)).collect();
            if let Some(batch) = batch {
                if !declared.dims().expect("ranked")[0].is_known() {
                    dims[0] = Dim::Known(batch);
                }
            }
            if leave_unknown {
                dims[0] = Dim::Unknown;
            }
            let corrupt = b.rng.random_bool(b.config.noise / 2.0);
            if corrupt {
                match b.rng.random_range(0..3) {
                    0 => continue,
                    1 => dims.push(Dim::Known(1)),
                    _ => {
                        let first = usize::from(b.strict());
                        if dims.len() <= first {
                            continue;
                        }
                        let j = b.rng.random_range(first..dims.len());
                        dims[j] = Dim::Known(dims[j].known().unwrap_or(1) + 1);
                    }
                }
            }
            feed.insert(b.specs[i].id.clone(), Shape::RankKnown(dims));
        }
        feeds.push(feed);
    }
    feeds
}

/// Counts from one differential comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DiffStats {
    pub runs: usize,
    pub abstract_errors: usize,
    pub concrete_errors: usize,
    pub iterations_compared: usize,
}

impl std::ops::AddAssign for DiffStats {
    fn add_assign(&mut self, o: DiffStats) {
        self.runs += o.runs;
        self.abstract_errors += o.abstract_errors;
        self.concrete_errors += o.concrete_errors;
        self.iterations_compared += o.iterations_compared;
    }
}

/// Checks `ir` abstractly and concretely with one sampling seed.
///
/// Every concrete shape must be admitted by the abstract shape of the same
/// node and iteration, and an abstract success must be a concrete success.
/// With `exact`, shapes and verdicts (node and iteration) must coincide.
pub fn differential(ir: &ProgramIR, seed: u64, exact: bool) -> Result<DiffStats, String> {
    let mut abstract_shapes: BTreeMap<(String, u64), RunOutput> = BTreeMap::new();
    let report = check_with(ir, Default::default(), |plan, it, out| {
        abstract_shapes.insert((plan.graph.clone(), it), out.clone());
    });
    let mut concrete_shapes = BTreeMap::new();
    let oracle = concrete_run_with(ir, seed, |plan, it, out| {
        concrete_shapes.insert((plan.graph.clone(), it), out.clone());
    });
    let mut stats = DiffStats::default();
    for (key, concrete) in &concrete_shapes {
        let Some(abs) = abstract_shapes.get(key) else {
            if exact {
                return Err(format!("iteration {} ran concretely only", key.1));
            }
            continue;
        };
        stats.iterations_compared += 1;
        if abs.len() != concrete.len() {
            return Err(format!("iteration {}: evaluated node sets differ", key.1));
        }
        for (node, c) in concrete {
            let a = abs
                .get(node)
                .ok_or_else(|| format!("iteration {}: node '{node}' missing abstractly", key.1))?;
            let ok = if exact {
                a.to_concrete().as_deref() == Some(&c[..])
            } else {
                a.admits(c)
            };
            if !ok {
                return Err(format!(
                    "iteration {}: node '{node}' is {a} abstractly but {c:?} concretely",
                    key.1
                ));
            }
        }
    }
    for (abs, conc) in report.runs.iter().zip(&oracle) {
        stats.runs += 1;
        let diag = match &abs.outcome {
            Ok(_) => None,
            Err(e) => Some(
                e.diagnostic()
                    .ok_or_else(|| format!("run could not execute: {e}"))?,
            ),
        };
        stats.abstract_errors += usize::from(diag.is_some());
        stats.concrete_errors += usize::from(conc.outcome.is_err());
        match (diag, &conc.outcome) {
            (None, Ok(_)) => {}
            (None, Err(e)) => {
                return Err(format!("abstract run passed but the oracle failed: {e}"))
            }
            (Some(d), Ok(_)) if exact => return Err(format!("oracle passed but: {}", d.message)),
            (Some(_), Ok(_)) => {}
            (Some(d), Err(e)) if exact && (d.node_id != e.node || d.iteration != e.iteration) => {
                return Err(format!("verdicts disagree: {} / {e}", d.message))
            }
            (Some(_), Err(_)) => {}
        }
    }
    if exact && abstract_shapes.len() != concrete_shapes.len() {
        return Err("abstract run completed iterations the oracle did not".to_string());
    }
    Ok(stats)
}
