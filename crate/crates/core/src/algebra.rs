//! Finite algebras over small universes: operation tables, the special WNU
//! identities, subpower closure, polymorphism tests and term search.

use crate::types::{BinRel, Elem, ElemSet, Error, Result, MAX_L};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// A total `k`-ary operation on `{0..l-1}`, row-major:
/// tuple `(x_0..x_{k-1})` lives at `Σ x_i·l^(k-1-i)`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct OperationTable {
    pub l: usize,
    pub arity: usize,
    pub table: Vec<Elem>,
}

impl OperationTable {
    pub fn new(l: usize, arity: usize, table: Vec<Elem>) -> Result<Self> {
        if l == 0 || l > MAX_L {
            return Err(Error::Limit(format!("universe size {l} outside 1..={MAX_L}")));
        }
        if arity == 0 || arity > 4 {
            return Err(Error::Limit(format!("operation arity {arity} outside 1..=4")));
        }
        let expect = l.pow(arity as u32);
        if table.len() != expect {
            return Err(Error::Validation(format!(
                "operation table has {} entries, expected {expect}",
                table.len()
            )));
        }
        if let Some(pos) = table.iter().position(|&v| v as usize >= l) {
            return Err(Error::Validation(format!("table entry {pos} has value {} ≥ {l}", table[pos])));
        }
        Ok(OperationTable { l, arity, table })
    }

    pub fn from_fn(l: usize, arity: usize, f: impl Fn(&[Elem]) -> Elem) -> Self {
        let mut table = Vec::with_capacity(l.pow(arity as u32));
        for t in all_tuples(l, arity) {
            table.push(f(&t));
        }
        OperationTable { l, arity, table }
    }

    pub fn projection(l: usize, arity: usize, i: usize) -> Self {
        Self::from_fn(l, arity, |t| t[i])
    }

    #[inline]
    pub fn index(&self, args: &[Elem]) -> usize {
        let mut idx = 0usize;
        for &a in args {
            idx = idx * self.l + a as usize;
        }
        idx
    }

    #[inline]
    pub fn apply(&self, args: &[Elem]) -> Elem {
        self.table[self.index(args)]
    }
}

/// All `k`-tuples over `{0..l-1}` in row-major order.
pub fn all_tuples(l: usize, k: usize) -> Vec<Vec<Elem>> {
    tuples_over(&(0..l as Elem).collect::<Vec<_>>(), k)
}

/// All `k`-tuples over the listed elements, lexicographic in list order.
pub fn tuples_over(elems: &[Elem], k: usize) -> Vec<Vec<Elem>> {
    let mut out = vec![Vec::with_capacity(k)];
    for _ in 0..k {
        let mut next = Vec::with_capacity(out.len() * elems.len());
        for t in &out {
            for &a in elems {
                let mut u = t.clone();
                u.push(a);
                next.push(u);
            }
        }
        out = next;
    }
    out
}

/// A first violated identity of the special WNU definition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WnuViolation {
    Idempotence { x: Elem },
    WeakNearUnanimity { x: Elem, y: Elem, position: usize },
    Special { x: Elem, y: Elem },
}

impl std::fmt::Display for WnuViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WnuViolation::Idempotence { x } => write!(f, "Ω({x},…,{x}) ≠ {x}"),
            WnuViolation::WeakNearUnanimity { x, y, position } => {
                write!(f, "Ω with y={y} at position {position} (x={x}) differs from position 0")
            }
            WnuViolation::Special { x, y } => write!(f, "Ω(x,…,x,Ω(x,…,x,y)) ≠ Ω(x,…,x,y) for x={x}, y={y}"),
        }
    }
}

fn near_unanimous(m: usize, x: Elem, y: Elem, pos: usize) -> Vec<Elem> {
    let mut t = vec![x; m];
    t[pos] = y;
    t
}

/// Returns the first violated identity, or `None` for an idempotent special WNU.
pub fn wnu_violation(op: &OperationTable) -> Option<WnuViolation> {
    let (l, m) = (op.l, op.arity);
    for x in 0..l as Elem {
        if op.apply(&vec![x; m]) != x {
            return Some(WnuViolation::Idempotence { x });
        }
    }
    if m < 2 {
        return None;
    }
    for x in 0..l as Elem {
        for y in 0..l as Elem {
            let base = op.apply(&near_unanimous(m, x, y, 0));
            for pos in 1..m {
                if op.apply(&near_unanimous(m, x, y, pos)) != base {
                    return Some(WnuViolation::WeakNearUnanimity { x, y, position: pos });
                }
            }
            let inner = op.apply(&near_unanimous(m, x, y, m - 1));
            if op.apply(&near_unanimous(m, x, inner, m - 1)) != inner {
                return Some(WnuViolation::Special { x, y });
            }
        }
    }
    None
}

pub fn is_idempotent_special_wnu(op: &OperationTable) -> Result<bool> {
    OperationTable::new(op.l, op.arity, op.table.clone())?;
    Ok(wnu_violation(op).is_none())
}

/// An `r`-ary relation over `{0..l-1}` as a packed bit vector keyed by the
/// mixed-radix tuple index.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct RelationTable {
    pub arity: usize,
    pub l: usize,
    pub signature: Vec<ElemSet>,
    pub bits: Vec<u64>,
}

impl RelationTable {
    pub fn empty(l: usize, arity: usize) -> Self {
        let n = l.pow(arity as u32);
        RelationTable { arity, l, signature: vec![ElemSet::full(l); arity], bits: vec![0; n.div_ceil(64)] }
    }

    pub fn with_signature(l: usize, signature: Vec<ElemSet>) -> Self {
        let mut r = Self::empty(l, signature.len());
        r.signature = signature;
        r
    }

    pub fn from_tuples<I: IntoIterator<Item = Vec<Elem>>>(l: usize, arity: usize, it: I) -> Result<Self> {
        let mut r = Self::empty(l, arity);
        for t in it {
            r.try_insert(&t)?;
        }
        Ok(r)
    }

    pub fn full(l: usize, signature: Vec<ElemSet>) -> Self {
        let mut r = Self::with_signature(l, signature.clone());
        let lists: Vec<Vec<Elem>> = signature.iter().map(|s| s.to_vec()).collect();
        for t in cartesian(&lists) {
            r.insert(&t);
        }
        r
    }

    pub fn from_binrel(l: usize, rel: BinRel) -> Self {
        let mut r = Self::empty(l, 2);
        for (a, b) in rel.pairs() {
            r.insert(&[a, b]);
        }
        r
    }

    pub fn to_binrel(&self) -> Option<BinRel> {
        if self.arity != 2 {
            return None;
        }
        Some(BinRel::from_pairs(self.tuples().map(|t| (t[0], t[1]))))
    }

    #[inline]
    fn index(&self, t: &[Elem]) -> usize {
        t.iter().fold(0usize, |acc, &a| acc * self.l + a as usize)
    }

    fn untuple(&self, mut idx: usize) -> Vec<Elem> {
        let mut t = vec![0; self.arity];
        for c in (0..self.arity).rev() {
            t[c] = (idx % self.l) as Elem;
            idx /= self.l;
        }
        t
    }

    pub fn try_insert(&mut self, t: &[Elem]) -> Result<()> {
        if t.len() != self.arity {
            return Err(Error::Validation(format!("tuple of length {} in arity-{} relation", t.len(), self.arity)));
        }
        for (c, &a) in t.iter().enumerate() {
            if !self.signature[c].contains(a) || a as usize >= self.l {
                return Err(Error::Validation(format!("tuple {t:?} leaves signature at coordinate {c}")));
            }
        }
        self.insert(t);
        Ok(())
    }

    #[inline]
    pub fn insert(&mut self, t: &[Elem]) {
        let i = self.index(t);
        self.bits[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn contains(&self, t: &[Elem]) -> bool {
        if t.iter().any(|&a| a as usize >= self.l) {
            return false;
        }
        let i = self.index(t);
        self.bits[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn tuples(&self) -> impl Iterator<Item = Vec<Elem>> + '_ {
        self.bits.iter().enumerate().flat_map(move |(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    None
                } else {
                    let k = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    Some(w * 64 + k)
                }
            })
            .map(move |i| self.untuple(i))
        })
    }

    pub fn is_subset(&self, other: &RelationTable) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }

    pub fn intersect(&self, other: &RelationTable) -> RelationTable {
        let mut r = self.clone();
        for (a, b) in r.bits.iter_mut().zip(&other.bits) {
            *a &= *b;
        }
        r
    }

    /// Projection onto the listed coordinates (in that order).
    pub fn project(&self, coords: &[usize]) -> RelationTable {
        let sig = coords.iter().map(|&c| self.signature[c]).collect();
        let mut r = RelationTable::with_signature(self.l, sig);
        for t in self.tuples() {
            let u: Vec<Elem> = coords.iter().map(|&c| t[c]).collect();
            r.insert(&u);
        }
        r
    }
}

/// Cartesian product of element lists.
pub fn cartesian(lists: &[Vec<Elem>]) -> Vec<Vec<Elem>> {
    let mut out = vec![Vec::with_capacity(lists.len())];
    for list in lists {
        let mut next = Vec::with_capacity(out.len() * list.len());
        for t in &out {
            for &a in list {
                let mut u = t.clone();
                u.push(a);
                next.push(u);
            }
        }
        out = next;
    }
    out
}

/// Applies `op` to `k` equal-length tuples coordinatewise.
#[inline]
pub fn apply_to_tuples(op: &OperationTable, args: &[&[Elem]]) -> Vec<Elem> {
    let r = args[0].len();
    let mut buf = [0 as Elem; 8];
    (0..r)
        .map(|c| {
            for (i, t) in args.iter().enumerate() {
                buf[i] = t[c];
            }
            op.apply(&buf[..args.len()])
        })
        .collect()
}

/// True iff every choice of `k` tuples of `rel` is mapped into `rel`.
pub fn preserves(op: &OperationTable, rel: &RelationTable) -> Result<bool> {
    if op.l != rel.l {
        return Err(Error::Validation(format!("operation over {} elements, relation over {}", op.l, rel.l)));
    }
    let tuples: Vec<Vec<Elem>> = rel.tuples().collect();
    if tuples.is_empty() {
        return Ok(true);
    }
    let k = op.arity;
    let mut idx = vec![0usize; k];
    loop {
        let args: Vec<&[Elem]> = idx.iter().map(|&i| tuples[i].as_slice()).collect();
        if !rel.contains(&apply_to_tuples(op, &args)) {
            return Ok(false);
        }
        if !odometer(&mut idx, tuples.len()) {
            return Ok(true);
        }
    }
}

/// Fast path of [`preserves`] for packed binary relations.
pub fn preserves_binrel(op: &OperationTable, rel: BinRel) -> bool {
    let pairs: Vec<(Elem, Elem)> = rel.pairs().collect();
    if pairs.is_empty() {
        return true;
    }
    let k = op.arity;
    let mut idx = vec![0usize; k];
    let mut xs = [0 as Elem; 8];
    let mut ys = [0 as Elem; 8];
    loop {
        for (i, &p) in idx.iter().enumerate() {
            xs[i] = pairs[p].0;
            ys[i] = pairs[p].1;
        }
        if !rel.contains(op.apply(&xs[..k]), op.apply(&ys[..k])) {
            return false;
        }
        if !odometer(&mut idx, pairs.len()) {
            return true;
        }
    }
}

/// Advances a base-`n` counter; false once it wraps around.
#[inline]
pub(crate) fn odometer(idx: &mut [usize], n: usize) -> bool {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < n {
            return true;
        }
        idx[d] = 0;
    }
    false
}

/// An algebra `(D, Ω)` with universe a subset of `{0..l-1}`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct FiniteAlgebra {
    pub universe: ElemSet,
    pub op: OperationTable,
}

impl FiniteAlgebra {
    pub fn new(universe: ElemSet, op: OperationTable) -> Result<Self> {
        if universe.is_empty() {
            return Err(Error::Validation("empty universe".into()));
        }
        if !universe.is_subset(ElemSet::full(op.l)) {
            return Err(Error::Validation(format!("universe {universe:?} exceeds {{0..{}}}", op.l - 1)));
        }
        let alg = FiniteAlgebra { universe, op };
        if !alg.closes(universe) {
            return Err(Error::Validation(format!("universe {universe:?} not closed under the operation")));
        }
        Ok(alg)
    }

    pub fn full(op: OperationTable) -> Self {
        FiniteAlgebra { universe: ElemSet::full(op.l), op }
    }

    pub fn l(&self) -> usize {
        self.op.l
    }

    pub fn arity(&self) -> usize {
        self.op.arity
    }

    pub fn size(&self) -> usize {
        self.universe.len()
    }

    /// Same operation, smaller universe (no closure check).
    pub fn restrict(&self, universe: ElemSet) -> FiniteAlgebra {
        FiniteAlgebra { universe, op: self.op.clone() }
    }

    /// True iff `b` is closed under the operation.
    pub fn closes(&self, b: ElemSet) -> bool {
        let elems = b.to_vec();
        if elems.is_empty() {
            return true;
        }
        let m = self.op.arity;
        let mut idx = vec![0usize; m];
        let mut args = [0 as Elem; 8];
        loop {
            for (i, &p) in idx.iter().enumerate() {
                args[i] = elems[p];
            }
            if !b.contains(self.op.apply(&args[..m])) {
                return false;
            }
            if !odometer(&mut idx, elems.len()) {
                return true;
            }
        }
    }

    pub fn preserves_binrel(&self, rel: BinRel) -> bool {
        preserves_binrel(&self.op, rel)
    }
}

/// Outcome of a subuniverse test; the empty set counts as trivially closed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubuniverseCheck {
    pub closed: bool,
    pub trivial: bool,
}

pub fn is_subuniverse(b: ElemSet, alg: &FiniteAlgebra) -> Result<SubuniverseCheck> {
    if !b.is_subset(alg.universe) {
        return Err(Error::Validation(format!("{b:?} is not inside the universe {:?}", alg.universe)));
    }
    Ok(SubuniverseCheck { closed: alg.closes(b), trivial: b.is_empty() })
}

/// Result of closing a set of tuples under coordinatewise application.
#[derive(Clone, Debug)]
pub struct Closure {
    pub elems: Vec<Vec<Elem>>,
    /// For each element, the argument indices it was produced from
    /// (`None` for generators).
    pub parents: Vec<Option<Vec<usize>>>,
    /// Generator position of each generator element.
    pub gen_of: Vec<Option<usize>>,
    /// Number of element indices present at the end of each round.
    pub round_ends: Vec<usize>,
    pub complete: bool,
    /// First element accepted by the stop predicate, if any.
    pub hit: Option<usize>,
}

impl Closure {
    pub fn rounds(&self) -> usize {
        self.round_ends.len().saturating_sub(1)
    }

    /// Term over the generators (variables `0..gens`) producing element `idx`.
    pub fn term(&self, idx: usize, gens: usize) -> Term {
        let mut nodes: Vec<TermNode> = (0..gens).map(TermNode::Var).collect();
        let mut memo: HashMap<usize, usize> =
            self.gen_of.iter().enumerate().filter_map(|(e, g)| g.map(|g| (e, g))).collect();
        let root = self.term_rec(idx, &mut nodes, &mut memo);
        // Root must be last for evaluation.
        if root != nodes.len() - 1 {
            nodes.push(nodes[root].clone());
        }
        Term { arity: gens, nodes }
    }

    fn term_rec(&self, idx: usize, nodes: &mut Vec<TermNode>, memo: &mut HashMap<usize, usize>) -> usize {
        if let Some(&n) = memo.get(&idx) {
            return n;
        }
        let parents = self.parents[idx].as_ref().expect("non-generator has parents").clone();
        let kids: Vec<usize> = parents.iter().map(|&p| self.term_rec(p, nodes, memo)).collect();
        nodes.push(TermNode::App(kids));
        let id = nodes.len() - 1;
        memo.insert(idx, id);
        id
    }
}

/// Closes `gens` (equal-length tuples) under coordinatewise `op`.
///
/// Stops early when `stop` accepts a new element, or with
/// `complete = false` once more than `cap` elements exist, or after
/// `max_rounds` rounds.
pub fn closure(
    op: &OperationTable,
    gens: Vec<Vec<Elem>>,
    cap: usize,
    max_rounds: Option<usize>,
    stop: Option<&dyn Fn(&[Elem]) -> bool>,
) -> Closure {
    let m = op.arity;
    let mut index: HashMap<Vec<Elem>, usize> = HashMap::new();
    let mut elems = Vec::new();
    let mut parents = Vec::new();
    let mut gen_of = Vec::new();
    let mut hit = None;
    for (gi, g) in gens.into_iter().enumerate() {
        if !index.contains_key(&g) {
            if hit.is_none() && stop.is_some_and(|f| f(&g)) {
                hit = Some(elems.len());
            }
            index.insert(g.clone(), elems.len());
            elems.push(g);
            parents.push(None);
            gen_of.push(Some(gi));
        }
    }
    let mut round_ends = vec![elems.len()];
    if hit.is_some() || elems.is_empty() {
        return Closure { elems, parents, gen_of: gen_of.clone(), round_ends, complete: hit.is_none(), hit };
    }
    let width = elems[0].len();
    let mut prev_end = 0usize;
    let mut buf = [0 as Elem; 8];
    loop {
        if max_rounds.is_some_and(|r| round_ends.len() > r) {
            return Closure { elems, parents, gen_of: gen_of.clone(), round_ends, complete: false, hit };
        }
        let end = elems.len();
        let mut idx = vec![0usize; m];
        let mut fresh = false;
        loop {
            // Semi-naive: at least one argument from the previous round.
            if idx.iter().any(|&i| i >= prev_end) {
                let mut t = Vec::with_capacity(width);
                for c in 0..width {
                    for (k, &i) in idx.iter().enumerate() {
                        buf[k] = elems[i][c];
                    }
                    t.push(op.apply(&buf[..m]));
                }
                if !index.contains_key(&t) {
                    let stop_here = stop.is_some_and(|f| f(&t));
                    index.insert(t.clone(), elems.len());
                    elems.push(t);
                    parents.push(Some(idx.clone()));
                    gen_of.push(None);
                    fresh = true;
                    if stop_here {
                        round_ends.push(elems.len());
                        let h = elems.len() - 1;
                        return Closure { elems, parents, gen_of: gen_of.clone(), round_ends, complete: false, hit: Some(h) };
                    }
                    if elems.len() > cap {
                        round_ends.push(elems.len());
                        return Closure { elems, parents, gen_of: gen_of.clone(), round_ends, complete: false, hit };
                    }
                }
            }
            if !odometer(&mut idx, end) {
                break;
            }
        }
        if !fresh {
            return Closure { elems, parents, gen_of: gen_of.clone(), round_ends, complete: true, hit };
        }
        round_ends.push(elems.len());
        prev_end = end;
    }
}

/// Result of [`generate_subuniverse`].
#[derive(Clone, Debug)]
pub struct Generated {
    pub relation: RelationTable,
    /// Closure rounds until the fixpoint (0 when the seed was closed).
    pub rounds: usize,
}

/// `Sg(seed)`: least superset of `seed` closed under componentwise `op`.
pub fn generate_subuniverse(seed: &RelationTable, op: &OperationTable) -> Result<Generated> {
    if seed.l != op.l {
        return Err(Error::Validation("seed and operation over different universes".into()));
    }
    let c = closure(op, seed.tuples().collect(), usize::MAX, None, None);
    let mut rel = RelationTable::empty(seed.l, seed.arity);
    for t in &c.elems {
        rel.insert(t);
    }
    Ok(Generated { relation: rel, rounds: c.rounds() })
}

/// `Sg` for packed binary relations; returns the closure and round count.
pub fn generate_binrel(seed: BinRel, op: &OperationTable) -> (BinRel, usize) {
    let gens: Vec<Vec<Elem>> = seed.pairs().map(|(a, b)| vec![a, b]).collect();
    let c = closure(op, gens, usize::MAX, None, None);
    (BinRel::from_pairs(c.elems.iter().map(|t| (t[0], t[1]))), c.rounds())
}

/// A term over Ω as a DAG; node `i` is a variable or Ω applied to earlier
/// nodes. The last node is the root.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Term {
    pub arity: usize,
    pub nodes: Vec<TermNode>,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum TermNode {
    Var(usize),
    App(Vec<usize>),
}

impl Term {
    pub fn projection(arity: usize, i: usize) -> Term {
        let mut nodes: Vec<TermNode> = (0..arity).map(TermNode::Var).collect();
        nodes.push(TermNode::Var(i));
        Term { arity, nodes }
    }

    /// Checks node references and arities against `m`.
    pub fn well_formed(&self, m: usize) -> bool {
        !self.nodes.is_empty()
            && self.nodes.iter().enumerate().all(|(i, n)| match n {
                TermNode::Var(v) => *v < self.arity,
                TermNode::App(kids) => kids.len() == m && kids.iter().all(|&k| k < i),
            })
    }

    pub fn eval(&self, op: &OperationTable, args: &[Elem]) -> Elem {
        let mut vals = Vec::with_capacity(self.nodes.len());
        let mut buf = [0 as Elem; 8];
        for n in &self.nodes {
            let v = match n {
                TermNode::Var(i) => args[*i],
                TermNode::App(kids) => {
                    for (k, &c) in kids.iter().enumerate() {
                        buf[k] = vals[c];
                    }
                    op.apply(&buf[..kids.len()])
                }
            };
            vals.push(v);
        }
        *vals.last().expect("nonempty term")
    }

    pub fn table(&self, op: &OperationTable) -> OperationTable {
        OperationTable::from_fn(op.l, self.arity, |t| self.eval(op, t))
    }

    /// Depth of the root (variables have depth 0).
    pub fn depth(&self) -> usize {
        let mut d = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            d.push(match n {
                TermNode::Var(_) => 0,
                TermNode::App(kids) => 1 + kids.iter().map(|&k| d[k]).max().unwrap_or(0),
            });
        }
        *d.last().unwrap_or(&0)
    }
}

/// One member of a clone fragment: its table and a generating term.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CloneMember {
    pub table: OperationTable,
    pub term: Term,
}

/// The `k`-ary part of the clone generated by `alg.op`, as the subpower of
/// `D^(D^k)` generated by the projections; `None` past `cap` members.
pub fn clone_part(alg: &FiniteAlgebra, k: usize, cap: usize) -> Option<Vec<CloneMember>> {
    let points = tuples_over(&alg.universe.to_vec(), k);
    let gens: Vec<Vec<Elem>> = (0..k).map(|i| points.iter().map(|p| p[i]).collect()).collect();
    let c = closure(&alg.op, gens, cap, None, None);
    if !c.complete {
        return None;
    }
    Some(
        (0..c.elems.len())
            .map(|i| {
                let term = c.term(i, k);
                CloneMember { table: term.table(&alg.op), term }
            })
            .collect(),
    )
}

/// Searches for a `k`-ary term whose value on each listed input tuple lies
/// in the matching allowed set. Exact: the closure is run to its fixpoint.
pub fn find_term(alg: &FiniteAlgebra, k: usize, inputs: &[Vec<Elem>], allowed: &[ElemSet], cap: usize) -> Result<Option<Term>> {
    if inputs.is_empty() {
        return Ok(Some(Term::projection(k, 0)));
    }
    let gens: Vec<Vec<Elem>> = (0..k).map(|i| inputs.iter().map(|p| p[i]).collect()).collect();
    let ok = |t: &[Elem]| t.iter().zip(allowed).all(|(&a, s)| s.contains(a));
    let c = closure(&alg.op, gens, cap, None, Some(&ok));
    match c.hit {
        Some(h) => Ok(Some(c.term(h, k))),
        None if c.complete => Ok(None),
        None => Err(Error::Limit(format!("term search exceeded {cap} elements"))),
    }
}

/// Outcome of bounded term search for a given table.
#[derive(Clone, Debug)]
pub enum TermSearch {
    Found(Term),
    NotWithinDepth(usize),
}

/// Looks for a term of depth at most `max_depth` computing `target` on `alg`.
pub fn term_search(alg: &FiniteAlgebra, target: &OperationTable, max_depth: usize, cap: usize) -> TermSearch {
    let k = target.arity;
    let points = tuples_over(&alg.universe.to_vec(), k);
    let want: Vec<Elem> = points.iter().map(|p| target.apply(p)).collect();
    let gens: Vec<Vec<Elem>> = (0..k).map(|i| points.iter().map(|p| p[i]).collect()).collect();
    let is_target = |t: &[Elem]| t == want.as_slice();
    let c = closure(&alg.op, gens, cap, Some(max_depth), Some(&is_target));
    match c.hit {
        Some(h) => TermSearch::Found(c.term(h, k)),
        None => TermSearch::NotWithinDepth(max_depth),
    }
}

/// Enumerates all `k`-ary tables on `{0..l-1}` preserving every relation in
/// `filter`, by backtracking over table entries.
pub fn enumerate_operations(l: usize, k: usize, filter: &[RelationTable], budget: usize) -> Result<Vec<OperationTable>> {
    if l > MAX_L || k > 3 || l == 0 || k == 0 {
        return Err(Error::Limit(format!("enumerate_operations supports l ≤ {MAX_L}, k ≤ 3 (got l={l}, k={k})")));
    }
    let n = l.pow(k as u32);
    // Each check: (entry indices, relation id); fires when its largest entry is set.
    let mut checks_at: Vec<Vec<(Vec<usize>, usize)>> = vec![Vec::new(); n];
    for (rid, rel) in filter.iter().enumerate() {
        if rel.l != l {
            return Err(Error::Validation("filter relation over a different universe".into()));
        }
        let tuples: Vec<Vec<Elem>> = rel.tuples().collect();
        if tuples.is_empty() {
            continue;
        }
        let mut idx = vec![0usize; k];
        loop {
            let entries: Vec<usize> = (0..rel.arity)
                .map(|c| idx.iter().fold(0usize, |acc, &t| acc * l + tuples[t][c] as usize))
                .collect();
            let last = *entries.iter().max().expect("arity ≥ 1");
            checks_at[last].push((entries, rid));
            if !odometer(&mut idx, tuples.len()) {
                break;
            }
        }
    }
    let mut out = Vec::new();
    let mut table = vec![0 as Elem; n];
    let mut nodes = 0usize;
    fn rec(
        pos: usize,
        l: usize,
        k: usize,
        table: &mut Vec<Elem>,
        checks_at: &[Vec<(Vec<usize>, usize)>],
        filter: &[RelationTable],
        out: &mut Vec<OperationTable>,
        nodes: &mut usize,
        budget: usize,
    ) -> Result<()> {
        if pos == table.len() {
            out.push(OperationTable { l, arity: k, table: table.clone() });
            if out.len() > budget {
                return Err(Error::Limit(format!("more than {budget} operations")));
            }
            return Ok(());
        }
        for v in 0..l as Elem {
            *nodes += 1;
            if *nodes > budget.saturating_mul(64) {
                return Err(Error::Limit(format!("search exceeded {} nodes", budget.saturating_mul(64))));
            }
            table[pos] = v;
            let ok = checks_at[pos].iter().all(|(entries, rid)| {
                let t: Vec<Elem> = entries.iter().map(|&e| table[e]).collect();
                filter[*rid].contains(&t)
            });
            if ok {
                rec(pos + 1, l, k, table, checks_at, filter, out, nodes, budget)?;
            }
        }
        Ok(())
    }
    rec(0, l, k, &mut table, &checks_at, filter, &mut out, &mut nodes, budget)?;
    Ok(out)
}

/// A (partial) assignment of elements to variable indices.
pub type Assignment = BTreeMap<usize, Elem>;

/// `usepol`: combines `k` assignments on a common index set pointwise.
pub fn apply_componentwise(op: &OperationTable, assignments: &[Assignment]) -> Result<Assignment> {
    if assignments.len() != op.arity {
        return Err(Error::Validation(format!("{} assignments for a {}-ary operation", assignments.len(), op.arity)));
    }
    let keys: Vec<usize> = assignments[0].keys().copied().collect();
    for a in assignments {
        if a.len() != keys.len() || !a.keys().zip(&keys).all(|(x, y)| x == y) {
            return Err(Error::Validation("assignments have different index sets".into()));
        }
    }
    let mut out = Assignment::new();
    let mut buf = vec![0 as Elem; op.arity];
    for &i in &keys {
        for (k, a) in assignments.iter().enumerate() {
            buf[k] = a[&i];
        }
        out.insert(i, op.apply(&buf));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maj() -> OperationTable {
        OperationTable::from_fn(2, 3, |t| if t[0] == t[1] || t[0] == t[2] { t[0] } else { t[1] })
    }

    fn xor3() -> OperationTable {
        OperationTable::from_fn(2, 3, |t| t[0] ^ t[1] ^ t[2])
    }

    #[test]
    fn wnu_checks() {
        assert!(is_idempotent_special_wnu(&maj()).unwrap());
        assert!(is_idempotent_special_wnu(&xor3()).unwrap());
        let p = OperationTable::projection(2, 3, 0);
        assert!(!is_idempotent_special_wnu(&p).unwrap());
        let bad = OperationTable { l: 2, arity: 3, table: vec![0; 7] };
        assert!(is_idempotent_special_wnu(&bad).is_err());
    }

    #[test]
    fn preserves_examples() {
        let le = RelationTable::from_binrel(2, BinRel::from_pairs([(0, 0), (0, 1), (1, 1)]));
        assert!(preserves(&maj(), &le).unwrap());
        let r = RelationTable::from_binrel(2, BinRel::from_pairs([(0, 0), (0, 1), (1, 0)]));
        assert!(!preserves(&xor3(), &r).unwrap());
        let full = RelationTable::full(2, vec![ElemSet::full(2); 3]);
        assert!(preserves(&xor3(), &full).unwrap());
    }

    #[test]
    fn sg_examples() {
        let seed = RelationTable::from_tuples(2, 2, [vec![1, 0], vec![0, 1]]).unwrap();
        let g = generate_subuniverse(&seed, &maj()).unwrap();
        assert_eq!(g.relation, seed);
        assert_eq!(g.rounds, 0);
        let g2 = generate_subuniverse(&seed, &xor3()).unwrap();
        assert_eq!(g2.relation.len(), 2);
    }

    #[test]
    fn terms_evaluate() {
        let alg = FiniteAlgebra::full(maj());
        let pol3 = clone_part(&alg, 3, 1000).unwrap();
        assert_eq!(pol3.len(), 4);
        for m in &pol3 {
            assert_eq!(m.term.table(&alg.op), m.table);
        }
        let t = term_search(&alg, &maj(), 3, 1000);
        assert!(matches!(t, TermSearch::Found(ref term) if term.depth() == 1));
    }

    #[test]
    fn enumerate_filtered() {
        let all16: Vec<RelationTable> = (0u16..16)
            .map(|m| {
                let mut r = BinRel(0);
                for bit in 0..4 {
                    if m & (1 << bit) != 0 {
                        r.insert(bit / 2, bit % 2);
                    }
                }
                RelationTable::from_binrel(2, r)
            })
            .collect();
        let ops = enumerate_operations(2, 2, &all16, 1000).unwrap();
        assert_eq!(ops.len(), 2);
        let delta = RelationTable::from_binrel(2, BinRel::diagonal(ElemSet::full(2)));
        assert_eq!(enumerate_operations(2, 1, &[delta], 100).unwrap().len(), 4);
        assert!(enumerate_operations(2, 4, &[], 10).is_err());
    }

    #[test]
    fn usepol() {
        let h: Assignment = [(0, 1), (1, 0)].into_iter().collect();
        let h2: Assignment = [(0, 0), (1, 0)].into_iter().collect();
        assert_eq!(apply_componentwise(&maj(), &[h.clone(), h.clone(), h2]).unwrap(), h);
    }
}
