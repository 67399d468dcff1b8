//! Small value types shared by every module: elements, element sets and
//! packed binary relations over a universe of at most [`MAX_L`] elements.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Largest supported universe size.
pub const MAX_L: usize = 4;

/// A universe element, always `< l`.
pub type Elem = u8;

/// A subset of `{0..MAX_L-1}` stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElemSet(pub u8);

impl ElemSet {
    pub const EMPTY: ElemSet = ElemSet(0);

    pub fn full(l: usize) -> ElemSet {
        ElemSet(((1u16 << l) - 1) as u8)
    }

    pub fn singleton(a: Elem) -> ElemSet {
        ElemSet(1 << a)
    }

    pub fn from_elems<I: IntoIterator<Item = Elem>>(it: I) -> ElemSet {
        let mut s = 0u8;
        for a in it {
            s |= 1 << a;
        }
        ElemSet(s)
    }

    #[inline]
    pub fn contains(self, a: Elem) -> bool {
        (a as usize) < 8 && self.0 & (1 << a) != 0
    }

    #[inline]
    pub fn insert(&mut self, a: Elem) {
        self.0 |= 1 << a;
    }

    #[inline]
    pub fn remove(&mut self, a: Elem) {
        self.0 &= !(1 << a);
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: ElemSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: ElemSet) -> ElemSet {
        ElemSet(self.0 | other.0)
    }

    pub fn intersect(self, other: ElemSet) -> ElemSet {
        ElemSet(self.0 & other.0)
    }

    pub fn minus(self, other: ElemSet) -> ElemSet {
        ElemSet(self.0 & !other.0)
    }

    pub fn min(self) -> Option<Elem> {
        if self.0 == 0 {
            None
        } else {
            Some(self.0.trailing_zeros() as Elem)
        }
    }

    pub fn iter(self) -> impl Iterator<Item = Elem> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let a = bits.trailing_zeros() as Elem;
                bits &= bits - 1;
                Some(a)
            }
        })
    }

    pub fn to_vec(self) -> Vec<Elem> {
        self.iter().collect()
    }

    /// All subsets of `self`, in increasing mask order.
    pub fn subsets(self) -> Vec<ElemSet> {
        let mut out = Vec::new();
        let mut sub: u8 = 0;
        loop {
            out.push(ElemSet(sub));
            if sub == self.0 {
                break;
            }
            sub = (sub.wrapping_sub(self.0)) & self.0;
        }
        out
    }
}

impl fmt::Debug for ElemSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, a) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}

/// Binary relation on `{0..MAX_L-1}`; pair `(a,b)` is bit `a*4+b`.
///
/// Numeric order of the mask is the packed-encoding order used for
/// every "smallest index" tie break.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinRel(pub u16);

impl BinRel {
    pub const EMPTY: BinRel = BinRel(0);

    #[inline]
    fn bit(a: Elem, b: Elem) -> u16 {
        1 << (a as u16 * 4 + b as u16)
    }

    pub fn from_pairs<I: IntoIterator<Item = (Elem, Elem)>>(it: I) -> BinRel {
        let mut r = BinRel(0);
        for (a, b) in it {
            r.insert(a, b);
        }
        r
    }

    pub fn product(x: ElemSet, y: ElemSet) -> BinRel {
        let mut r = 0u16;
        for a in x.iter() {
            r |= (y.0 as u16) << (a as u16 * 4);
        }
        BinRel(r)
    }

    pub fn diagonal(x: ElemSet) -> BinRel {
        BinRel::from_pairs(x.iter().map(|a| (a, a)))
    }

    #[inline]
    pub fn contains(self, a: Elem, b: Elem) -> bool {
        self.0 & Self::bit(a, b) != 0
    }

    #[inline]
    pub fn insert(&mut self, a: Elem, b: Elem) {
        self.0 |= Self::bit(a, b);
    }

    #[inline]
    pub fn remove(&mut self, a: Elem, b: Elem) {
        self.0 &= !Self::bit(a, b);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Image of `a`: `{b : (a,b) ∈ R}`.
    #[inline]
    pub fn row(self, a: Elem) -> ElemSet {
        ElemSet(((self.0 >> (a as u16 * 4)) & 0xF) as u8)
    }

    /// Preimage of `b`: `{a : (a,b) ∈ R}`.
    pub fn col(self, b: Elem) -> ElemSet {
        let mut s = ElemSet::EMPTY;
        for a in 0..MAX_L as Elem {
            if self.contains(a, b) {
                s.insert(a);
            }
        }
        s
    }

    pub fn pairs(self) -> impl Iterator<Item = (Elem, Elem)> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let k = bits.trailing_zeros() as u8;
                bits &= bits - 1;
                Some((k / 4, k % 4))
            }
        })
    }

    pub fn first_projection(self) -> ElemSet {
        let mut s = ElemSet::EMPTY;
        for a in 0..MAX_L as Elem {
            if !self.row(a).is_empty() {
                s.insert(a);
            }
        }
        s
    }

    pub fn second_projection(self) -> ElemSet {
        let mut s = 0u8;
        for a in 0..MAX_L as u16 {
            s |= ((self.0 >> (a * 4)) & 0xF) as u8;
        }
        ElemSet(s)
    }

    pub fn transpose(self) -> BinRel {
        BinRel::from_pairs(self.pairs().map(|(a, b)| (b, a)))
    }

    pub fn intersect(self, other: BinRel) -> BinRel {
        BinRel(self.0 & other.0)
    }

    pub fn union(self, other: BinRel) -> BinRel {
        BinRel(self.0 | other.0)
    }

    pub fn is_subset(self, other: BinRel) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn restrict(self, x: ElemSet, y: ElemSet) -> BinRel {
        self.intersect(BinRel::product(x, y))
    }

    /// Relational composition `self ∘ other`: `{(a,c) : ∃b (a,b)∈self, (b,c)∈other}`.
    pub fn compose(self, other: BinRel) -> BinRel {
        let mut out = 0u16;
        for a in 0..MAX_L as Elem {
            let row = self.row(a);
            let mut img = 0u8;
            for b in row.iter() {
                img |= other.row(b).0;
            }
            out |= (img as u16) << (a as u16 * 4);
        }
        BinRel(out)
    }

    /// `{a : (a,a) ∈ R}`.
    pub fn diagonal_part(self) -> ElemSet {
        ElemSet::from_elems((0..MAX_L as Elem).filter(|&a| self.contains(a, a)))
    }

    pub fn is_reflexive_on(self, x: ElemSet) -> bool {
        x.iter().all(|a| self.contains(a, a))
    }

    pub fn is_symmetric(self) -> bool {
        self == self.transpose()
    }

    pub fn is_transitive(self) -> bool {
        self.compose(self).is_subset(self)
    }

    /// True iff `self` is an equivalence relation with field exactly `x`.
    pub fn is_equivalence_on(self, x: ElemSet) -> bool {
        self.is_subset(BinRel::product(x, x))
            && self.is_reflexive_on(x)
            && self.is_symmetric()
            && self.is_transitive()
    }

    /// Classes of an equivalence relation on `x`, ordered by minimum element.
    pub fn classes(self, x: ElemSet) -> Vec<ElemSet> {
        let mut seen = ElemSet::EMPTY;
        let mut out = Vec::new();
        for a in x.iter() {
            if !seen.contains(a) {
                let c = self.row(a).intersect(x);
                seen = seen.union(c);
                out.push(c);
            }
        }
        out
    }
}

impl fmt::Debug for BinRel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, (a, b)) in self.pairs().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "({a},{b})")?;
        }
        write!(f, "}}")
    }
}

/// Configurable desk-scale limits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    /// Largest universe size accepted.
    pub max_domain: usize,
    /// Largest variable count accepted by the solver.
    pub max_vars: usize,
    /// Budget for explicit enumerations (solution sets, clones, subsets).
    pub enum_budget: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_domain: MAX_L, max_vars: 16, enum_budget: 2_000_000 }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("desk-scale limit exceeded: {0}")]
    Limit(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
