//! The abstract domain: per-axis known/unknown dimensions, rank-unknown
//! shapes, and the error element.

use std::fmt;

use thiserror::Error;

/// Largest dimension size accepted from external input.
pub const MAX_DIM: u64 = (1 << 31) - 1;

/// Size of a single axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Known(u64),
    Unknown,
}

impl Dim {
    pub fn known(self) -> Option<u64> {
        match self {
            Dim::Known(n) => Some(n),
            Dim::Unknown => None,
        }
    }

    pub fn is_known(self) -> bool {
        matches!(self, Dim::Known(_))
    }

    /// Greatest lower bound of two dims; `None` when both are known and differ.
    pub fn meet(self, other: Dim) -> Option<Dim> {
        match (self, other) {
            (Dim::Unknown, d) | (d, Dim::Unknown) => Some(d),
            (Dim::Known(a), Dim::Known(b)) if a == b => Some(Dim::Known(a)),
            _ => None,
        }
    }
}

impl From<u64> for Dim {
    fn from(n: u64) -> Self {
        Dim::Known(n)
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Known(n) => write!(f, "{n}"),
            Dim::Unknown => f.write_str("null"),
        }
    }
}

/// Abstract tensor shape.
///
/// `RankKnown(vec![])` is the scalar shape. `Bottom` is the error element and
/// is absorbing under every transfer function.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Shape {
    RankKnown(Vec<Dim>),
    RankUnknown,
    Bottom,
}

/// Coarse classification of a shape, as used by the reshape and reduce tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeCategory {
    Known,
    PartlyKnown,
    Unknown,
    Bottom,
}

impl fmt::Display for ShapeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeCategory::Known => "Known",
            ShapeCategory::PartlyKnown => "Partly known",
            ShapeCategory::Unknown => "Unknown",
            ShapeCategory::Bottom => "⊥",
        })
    }
}

impl Shape {
    pub fn scalar() -> Shape {
        Shape::RankKnown(Vec::new())
    }

    /// Fully known shape from concrete sizes.
    pub fn known<I: IntoIterator<Item = u64>>(dims: I) -> Shape {
        Shape::RankKnown(dims.into_iter().map(Dim::Known).collect())
    }

    /// Shape from optional sizes, `None` standing for an unknown axis.
    pub fn partial<I: IntoIterator<Item = Option<u64>>>(dims: I) -> Shape {
        Shape::RankKnown(
            dims.into_iter()
                .map(|d| d.map_or(Dim::Unknown, Dim::Known))
                .collect(),
        )
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            Shape::RankKnown(dims) => Some(dims.len()),
            _ => None,
        }
    }

    pub fn dims(&self) -> Option<&[Dim]> {
        match self {
            Shape::RankKnown(dims) => Some(dims),
            _ => None,
        }
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, Shape::Bottom)
    }

    pub fn is_fully_known(&self) -> bool {
        match self {
            Shape::RankKnown(dims) => dims.iter().all(|d| d.is_known()),
            _ => false,
        }
    }

    pub fn category(&self) -> ShapeCategory {
        match self {
            Shape::Bottom => ShapeCategory::Bottom,
            Shape::RankUnknown => ShapeCategory::Unknown,
            s if s.is_fully_known() => ShapeCategory::Known,
            _ => ShapeCategory::PartlyKnown,
        }
    }

    /// Concrete sizes when the shape is fully known.
    pub fn to_concrete(&self) -> Option<Vec<u64>> {
        self.dims()?.iter().map(|d| d.known()).collect()
    }

    /// Product of the dims of a fully known shape.
    ///
    /// Absent for partly known, rank-unknown and bottom shapes, and when the
    /// product does not fit in 64 bits.
    pub fn element_count(&self) -> Option<u64> {
        self.dims()?
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(d.known()?))
    }

    /// Whether `concrete` belongs to the concretization of this shape.
    pub fn admits(&self, concrete: &[u64]) -> bool {
        match self {
            Shape::Bottom => false,
            Shape::RankUnknown => true,
            Shape::RankKnown(dims) => {
                dims.len() == concrete.len()
                    && dims
                        .iter()
                        .zip(concrete)
                        .all(|(d, &c)| d.known().is_none_or(|n| n == c))
            }
        }
    }

    /// Most precise shape consistent with both operands; `Bottom` on conflict.
    pub fn meet(&self, other: &Shape) -> Shape {
        match (self, other) {
            (Shape::Bottom, _) | (_, Shape::Bottom) => Shape::Bottom,
            (Shape::RankUnknown, s) | (s, Shape::RankUnknown) => s.clone(),
            (Shape::RankKnown(a), Shape::RankKnown(b)) => {
                if a.len() != b.len() {
                    return Shape::Bottom;
                }
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.meet(*y))
                    .collect::<Option<Vec<_>>>()
                    .map_or(Shape::Bottom, Shape::RankKnown)
            }
        }
    }

    /// Right-aligned broadcasting of two shapes.
    pub fn broadcast(&self, other: &Shape) -> Shape {
        let (a, b) = match (self, other) {
            (Shape::Bottom, _) | (_, Shape::Bottom) => return Shape::Bottom,
            (Shape::RankUnknown, _) | (_, Shape::RankUnknown) => return Shape::RankUnknown,
            (Shape::RankKnown(a), Shape::RankKnown(b)) => (a, b),
        };
        let rank = a.len().max(b.len());
        let mut out = Vec::with_capacity(rank);
        for i in 0..rank {
            let x = axis_from_right(a, rank - 1 - i);
            let y = axis_from_right(b, rank - 1 - i);
            let d = match (x, y) {
                (Dim::Known(1), d) | (d, Dim::Known(1)) => d,
                (Dim::Known(p), Dim::Known(q)) if p == q => Dim::Known(p),
                (Dim::Known(_), Dim::Known(_)) => return Shape::Bottom,
                _ => Dim::Unknown,
            };
            out.push(d);
        }
        Shape::RankKnown(out)
    }
}

// Axis `k` counted from the right; missing leading axes behave as size 1.
fn axis_from_right(dims: &[Dim], k: usize) -> Dim {
    if k < dims.len() {
        dims[dims.len() - 1 - k]
    } else {
        Dim::Known(1)
    }
}

/// Formats in the IR literal syntax: `[null,784]`, `"?"`, or `⊥`.
impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Bottom => f.write_str("⊥"),
            Shape::RankUnknown => f.write_str("\"?\""),
            Shape::RankKnown(dims) => {
                f.write_str("[")?;
                for (i, d) in dims.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{d}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// One entry of a reshape target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesiredDim {
    Size(u64),
    Wildcard,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DesiredShapeError {
    #[error("desired shape has more than one -1 entry")]
    MultipleWildcards,
    #[error("desired shape entry {0} must be >= 1 or -1")]
    InvalidEntry(i64),
}

/// Reshape target: sizes with at most one wildcard (`-1`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DesiredShape(Vec<DesiredDim>);

impl DesiredShape {
    pub fn new(entries: Vec<DesiredDim>) -> Result<Self, DesiredShapeError> {
        let mut wildcards = 0;
        for e in &entries {
            match *e {
                DesiredDim::Wildcard => wildcards += 1,
                DesiredDim::Size(0) => return Err(DesiredShapeError::InvalidEntry(0)),
                DesiredDim::Size(_) => {}
            }
        }
        if wildcards > 1 {
            return Err(DesiredShapeError::MultipleWildcards);
        }
        Ok(DesiredShape(entries))
    }

    /// Parses the framework convention where `-1` is the wildcard.
    pub fn from_ints(entries: &[i64]) -> Result<Self, DesiredShapeError> {
        let dims = entries
            .iter()
            .map(|&e| match e {
                -1 => Ok(DesiredDim::Wildcard),
                n if n >= 1 => Ok(DesiredDim::Size(n as u64)),
                n => Err(DesiredShapeError::InvalidEntry(n)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        DesiredShape::new(dims)
    }

    pub fn entries(&self) -> &[DesiredDim] {
        &self.0
    }

    pub fn has_wildcard(&self) -> bool {
        self.0.contains(&DesiredDim::Wildcard)
    }

    pub fn to_ints(&self) -> Vec<i64> {
        self.0
            .iter()
            .map(|d| match d {
                DesiredDim::Size(n) => *n as i64,
                DesiredDim::Wildcard => -1,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const U: Option<u64> = None;

    #[test]
    fn meet_examples() {
        let a = Shape::partial([U, Some(784)]);
        assert_eq!(a.meet(&Shape::known([100, 784])), Shape::known([100, 784]));
        assert_eq!(
            Shape::known([100, 784]).meet(&Shape::RankUnknown),
            Shape::known([100, 784])
        );
        assert_eq!(a.meet(&Shape::known([100, 10])), Shape::Bottom);
        assert_eq!(Shape::known([3]).meet(&Shape::known([3, 1])), Shape::Bottom);
    }

    #[test]
    fn element_count_examples() {
        assert_eq!(Shape::known([2, 6]).element_count(), Some(12));
        assert_eq!(Shape::scalar().element_count(), Some(1));
        assert_eq!(Shape::partial([U, Some(6)]).element_count(), None);
        assert_eq!(Shape::RankUnknown.element_count(), None);
        assert_eq!(Shape::Bottom.element_count(), None);
    }

    #[test]
    fn broadcast_examples() {
        let b =
            |x: &[u64], y: &[u64]| Shape::known(x.to_vec()).broadcast(&Shape::known(y.to_vec()));
        assert_eq!(b(&[2, 3], &[3]), Shape::known([2, 3]));
        assert_eq!(b(&[2, 1], &[1, 5]), Shape::known([2, 5]));
        assert_eq!(b(&[2, 3], &[4, 3]), Shape::Bottom);
        assert_eq!(b(&[0], &[1]), Shape::known([0]));
        assert_eq!(b(&[0], &[2]), Shape::Bottom);
        assert_eq!(
            Shape::partial([U, Some(3)]).broadcast(&Shape::known([5, 3])),
            Shape::partial([U, Some(3)])
        );
        assert_eq!(
            Shape::RankUnknown.broadcast(&Shape::known([1])),
            Shape::RankUnknown
        );
        assert_eq!(Shape::RankUnknown.broadcast(&Shape::Bottom), Shape::Bottom);
    }

    #[test]
    fn display_uses_literal_syntax() {
        assert_eq!(Shape::partial([U, Some(784)]).to_string(), "[null,784]");
        assert_eq!(Shape::scalar().to_string(), "[]");
        assert_eq!(Shape::RankUnknown.to_string(), "\"?\"");
    }

    #[test]
    fn desired_shape_validation() {
        assert!(DesiredShape::from_ints(&[4, -1]).unwrap().has_wildcard());
        assert_eq!(
            DesiredShape::from_ints(&[-1, -1]),
            Err(DesiredShapeError::MultipleWildcards)
        );
        assert_eq!(
            DesiredShape::from_ints(&[0, 2]),
            Err(DesiredShapeError::InvalidEntry(0))
        );
        assert_eq!(
            DesiredShape::from_ints(&[-2]),
            Err(DesiredShapeError::InvalidEntry(-2))
        );
    }

    fn arb_dim() -> impl Strategy<Value = Dim> {
        prop_oneof![(0u64..4).prop_map(Dim::Known), Just(Dim::Unknown)]
    }

    pub(crate) fn arb_shape() -> impl Strategy<Value = Shape> {
        prop_oneof![
            6 => prop::collection::vec(arb_dim(), 0..4).prop_map(Shape::RankKnown),
            1 => Just(Shape::RankUnknown),
            1 => Just(Shape::Bottom),
        ]
    }

    fn concretizations(s: &Shape) -> Vec<Vec<u64>> {
        // Enumerates members with dims in 0..4 and, for rank-unknown, rank < 3.
        fn expand(dims: &[Dim]) -> Vec<Vec<u64>> {
            dims.iter().fold(vec![vec![]], |acc, d| {
                let choices: Vec<u64> = match d {
                    Dim::Known(n) => vec![*n],
                    Dim::Unknown => (0..4).collect(),
                };
                acc.into_iter()
                    .flat_map(|p| {
                        choices.iter().map(move |c| {
                            let mut q = p.clone();
                            q.push(*c);
                            q
                        })
                    })
                    .collect()
            })
        }
        match s {
            Shape::Bottom => vec![],
            Shape::RankKnown(d) => expand(d),
            Shape::RankUnknown => (0..3)
                .flat_map(|r| expand(&vec![Dim::Unknown; r]))
                .collect(),
        }
    }

    proptest! {
        #[test]
        fn meet_is_commutative_idempotent_with_identity(a in arb_shape(), b in arb_shape()) {
            prop_assert_eq!(a.meet(&b), b.meet(&a));
            prop_assert_eq!(a.meet(&a), a.clone());
            prop_assert_eq!(a.meet(&Shape::RankUnknown), a.clone());
            prop_assert_eq!(a.meet(&Shape::Bottom), Shape::Bottom);
        }

        #[test]
        fn meet_is_associative(a in arb_shape(), b in arb_shape(), c in arb_shape()) {
            prop_assert_eq!(a.meet(&b).meet(&c), a.meet(&b.meet(&c)));
        }

        #[test]
        fn meet_concretization_is_contained(a in arb_shape(), b in arb_shape()) {
            let m = a.meet(&b);
            for c in concretizations(&m) {
                prop_assert!(a.admits(&c) && b.admits(&c));
            }
        }

        #[test]
        fn element_count_present_iff_fully_known(a in arb_shape()) {
            prop_assert_eq!(a.element_count().is_some(), a.is_fully_known());
        }

        #[test]
        fn broadcast_is_commutative(a in arb_shape(), b in arb_shape()) {
            prop_assert_eq!(a.broadcast(&b), b.broadcast(&a));
        }
    }

    // Reference broadcast over plain size vectors, written independently of
    // the abstract implementation.
    fn reference_broadcast(a: &[u64], b: &[u64]) -> Option<Vec<u64>> {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        while a.len() < b.len() {
            a.insert(0, 1);
        }
        while b.len() < a.len() {
            b.insert(0, 1);
        }
        a.iter()
            .zip(&b)
            .map(|(&x, &y)| {
                if x == y {
                    Some(x)
                } else if x == 1 {
                    Some(y)
                } else if y == 1 {
                    Some(x)
                } else {
                    None
                }
            })
            .collect()
    }

    fn all_shapes(max_rank: usize, max_dim: u64) -> Vec<Vec<u64>> {
        let mut out = vec![vec![]];
        let mut layer = vec![vec![]];
        for _ in 0..max_rank {
            layer = layer
                .iter()
                .flat_map(|p: &Vec<u64>| {
                    (0..=max_dim).map(move |d| {
                        let mut q = p.clone();
                        q.push(d);
                        q
                    })
                })
                .collect();
            out.extend(layer.iter().cloned());
        }
        out
    }

    #[test]
    fn broadcast_matches_reference_exhaustively() {
        let shapes = all_shapes(4, 5);
        assert_eq!(shapes.len(), 1555);
        let abstracts: Vec<Shape> = shapes.iter().map(|s| Shape::known(s.clone())).collect();
        for (x, ax) in shapes.iter().zip(&abstracts) {
            for (y, ay) in shapes.iter().zip(&abstracts) {
                let expected = reference_broadcast(x, y).map_or(Shape::Bottom, Shape::known);
                assert_eq!(ax.broadcast(ay), expected, "{x:?} vs {y:?}");
            }
        }
    }
}
