//! The precomputed catalog of a fixed template: subuniverses, invariant
//! binary relations, congruences with their flags, quotients, clone
//! fragments, bridges and the four-way classification of subuniverses.

use crate::algebra::{
    clone_part, find_term, generate_binrel, odometer, tuples_over, wnu_violation, CloneMember, FiniteAlgebra,
    OperationTable, RelationTable, Term,
};
use crate::types::{BinRel, Elem, ElemSet, Error, Result, MAX_L};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

/// Element budget for any single term search.
pub const TERM_SEARCH_CAP: usize = 200_000;
/// Largest ternary clone fragment materialized in the catalog.
pub const POL3_CAP: usize = 4_000;
/// Largest number of invariant relations explored per bridge family.
pub const BRIDGE_CAP: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CongruenceFlags {
    pub maximal: bool,
    pub minimal: bool,
    pub pc: bool,
    pub linear: bool,
    pub irreducible: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CongruenceRecord {
    pub relation: BinRel,
    pub flags: CongruenceFlags,
    /// Least invariant strict superset stable under the congruence.
    pub sigma_star: Option<BinRel>,
}

/// `D/σ` with classes named by their minimum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotientAlgebra {
    pub parent: ElemSet,
    pub congruence: BinRel,
    pub classes: Vec<ElemSet>,
    /// The factor algebra acting on class minima.
    pub algebra: FiniteAlgebra,
    /// All invariant binary relations of the factor algebra.
    pub quotient_relations: Vec<BinRel>,
}

impl QuotientAlgebra {
    pub fn reps(&self) -> ElemSet {
        self.algebra.universe
    }

    pub fn rep(&self, a: Elem) -> Elem {
        rep_of(&self.classes, a)
    }

    pub fn class_of(&self, a: Elem) -> ElemSet {
        self.classes.iter().copied().find(|c| c.contains(a)).unwrap_or(ElemSet::singleton(a))
    }
}

fn rep_of(classes: &[ElemSet], a: Elem) -> Elem {
    classes.iter().find(|c| c.contains(a)).and_then(|&c| c.min()).unwrap_or(a)
}

/// Isomorphism onto a product of prime cyclic groups under the `m`-ary sum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearIso {
    pub primes: Vec<u8>,
    /// Coordinates of each universe element.
    pub map: BTreeMap<Elem, Vec<u8>>,
}

impl LinearIso {
    pub fn inverse(&self, coords: &[u8]) -> Option<Elem> {
        self.map.iter().find(|(_, v)| v.as_slice() == coords).map(|(&a, _)| a)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeRecord {
    pub rho: RelationTable,
    pub source: BinRel,
    pub target: BinRel,
    pub reflexive: bool,
    pub optimal: bool,
    pub rho_tilde: BinRel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubuniverseKind {
    BinaryAbsorbing { term: Term },
    Central { term: Term },
    Pc { congruences: Vec<BinRel> },
    Linear { cong_lin: BinRel },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubuniverseClassification {
    pub b: ElemSet,
    pub d: ElemSet,
    pub kinds: Vec<SubuniverseKind>,
    pub trivial: bool,
    pub minimal_ba: bool,
    pub minimal_central: bool,
    pub minimal_pc: bool,
    pub minimal_linear: bool,
}

impl SubuniverseClassification {
    pub fn ba_term(&self) -> Option<&Term> {
        self.kinds.iter().find_map(|k| match k {
            SubuniverseKind::BinaryAbsorbing { term } => Some(term),
            _ => None,
        })
    }

    pub fn central_term(&self) -> Option<&Term> {
        self.kinds.iter().find_map(|k| match k {
            SubuniverseKind::Central { term } => Some(term),
            _ => None,
        })
    }

    pub fn is_pc(&self) -> bool {
        self.kinds.iter().any(|k| matches!(k, SubuniverseKind::Pc { .. }))
    }

    pub fn is_linear(&self) -> bool {
        self.kinds.iter().any(|k| matches!(k, SubuniverseKind::Linear { .. }))
    }
}

/// Everything the catalog knows about one subuniverse `D` of `A`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DomainEntry {
    pub universe: ElemSet,
    /// Nonempty subuniverses of `D`, by mask.
    pub subuniverses: Vec<ElemSet>,
    pub congruences: Vec<CongruenceRecord>,
    /// Aligned with `congruences`.
    pub quotients: Vec<QuotientAlgebra>,
    pub pc_congruences: Vec<BinRel>,
    pub cong_pc: BinRel,
    pub pc_subuniverses_i: Vec<ElemSet>,
    pub pc_subuniverses_ii: Vec<ElemSet>,
    pub linear_iso: Option<LinearIso>,
    pub linear_congruences: Vec<BinRel>,
    pub cong_lin: BinRel,
    pub linear_subuniverses: Vec<ElemSet>,
    /// One entry per nonempty subuniverse `B` of `D`.
    pub classification: Vec<SubuniverseClassification>,
}

impl DomainEntry {
    pub fn classification_of(&self, b: ElemSet) -> Option<&SubuniverseClassification> {
        self.classification.iter().find(|c| c.b == b)
    }

    pub fn congruence(&self, rel: BinRel) -> Option<usize> {
        self.congruences.iter().position(|c| c.relation == rel)
    }

    pub fn quotient_by(&self, rel: BinRel) -> Option<&QuotientAlgebra> {
        self.congruence(rel).map(|i| &self.quotients[i])
    }

    /// Minimal nontrivial BA subuniverse of smallest mask.
    pub fn min_ba(&self) -> Option<&SubuniverseClassification> {
        self.classification.iter().find(|c| !c.trivial && c.minimal_ba)
    }

    pub fn min_central(&self) -> Option<&SubuniverseClassification> {
        self.classification.iter().find(|c| !c.trivial && c.minimal_central)
    }

    pub fn min_pc(&self) -> Option<&SubuniverseClassification> {
        self.classification.iter().find(|c| !c.trivial && c.minimal_pc)
    }

    pub fn has_ba(&self) -> bool {
        self.classification.iter().any(|c| !c.trivial && c.ba_term().is_some())
    }

    pub fn has_central(&self) -> bool {
        self.classification.iter().any(|c| !c.trivial && c.central_term().is_some())
    }

    pub fn nabla(&self) -> BinRel {
        BinRel::product(self.universe, self.universe)
    }

    pub fn delta(&self) -> BinRel {
        BinRel::diagonal(self.universe)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TemplateCatalog {
    pub algebra: FiniteAlgebra,
    pub digest: String,
    /// Nonempty subuniverses of `A`, by mask.
    pub gamma1: Vec<ElemSet>,
    /// All invariant binary relations on `A`, by mask (empty included).
    pub gamma2: Vec<BinRel>,
    pub pol2: Vec<CloneMember>,
    /// `None` when the ternary fragment exceeds [`POL3_CAP`].
    pub pol3: Option<Vec<CloneMember>>,
    /// Aligned with `gamma1`.
    pub domains: Vec<DomainEntry>,
    pub bridges: Vec<BridgeRecord>,
    /// False when some bridge family hit [`BRIDGE_CAP`].
    pub bridges_complete: bool,
}

impl TemplateCatalog {
    pub fn l(&self) -> usize {
        self.algebra.l()
    }

    pub fn domain(&self, d: ElemSet) -> Option<&DomainEntry> {
        self.gamma1.binary_search(&d).ok().map(|i| &self.domains[i])
    }

    pub fn is_subuniverse(&self, d: ElemSet) -> bool {
        d.is_empty() || self.gamma1.binary_search(&d).is_ok()
    }

    pub fn gamma2_index(&self, r: BinRel) -> Option<usize> {
        self.gamma2.binary_search(&r).ok()
    }

    pub fn is_invariant(&self, r: BinRel) -> bool {
        self.gamma2_index(r).is_some()
    }

    /// Invariant relations strictly above `r` inside `x × y`.
    pub fn weaker_than(&self, r: BinRel, x: ElemSet, y: ElemSet) -> Vec<BinRel> {
        let frame = BinRel::product(x, y);
        self.gamma2.iter().copied().filter(|&s| r.is_subset(s) && s != r && s.is_subset(frame)).collect()
    }

    /// Optimal reflexive bridge congruence `opt(σ)` on `d`.
    pub fn opt(&self, d: ElemSet, sigma: BinRel) -> Option<BinRel> {
        let frame = BinRel::product(d, d);
        self.bridges
            .iter()
            .find(|b| b.optimal && b.source == sigma && b.target == sigma && b.rho_tilde.is_subset(frame))
            .map(|b| b.rho_tilde)
    }

    /// Existence of a reflexive bridge between two congruences of `d`.
    pub fn adjacent(&self, d: ElemSet, s1: BinRel, s2: BinRel) -> bool {
        if s1 == s2 && s1 == BinRel::product(d, d) {
            return false;
        }
        self.bridges.iter().any(|b| b.reflexive && b.source == s1 && b.target == s2)
    }
}

/// Canonical digest of an algebra.
pub fn algebra_digest(alg: &FiniteAlgebra) -> String {
    let mut h = Sha256::new();
    h.update(format!("wnu-template/v1;l={};m={};u={};", alg.l(), alg.arity(), alg.universe.0).as_bytes());
    h.update(&alg.op.table);
    hex::encode(h.finalize())
}

/// All nonempty subuniverses of `alg`.
pub fn subuniverses(alg: &FiniteAlgebra) -> Vec<ElemSet> {
    alg.universe.subsets().into_iter().filter(|b| !b.is_empty() && alg.closes(*b)).collect()
}

/// All invariant binary relations inside `x × y` via closure-system search.
pub fn invariant_binrels(op: &OperationTable, x: ElemSet, y: ElemSet) -> Vec<BinRel> {
    let frame: Vec<(Elem, Elem)> = BinRel::product(x, y).pairs().collect();
    let mut seen: HashSet<BinRel> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(BinRel::EMPTY);
    queue.push_back(BinRel::EMPTY);
    while let Some(r) = queue.pop_front() {
        for &(a, b) in &frame {
            if r.contains(a, b) {
                continue;
            }
            let mut seed = r;
            seed.insert(a, b);
            let (s, _) = generate_binrel(seed, op);
            if seen.insert(s) {
                queue.push_back(s);
            }
        }
    }
    let mut out: Vec<BinRel> = seen.into_iter().collect();
    out.sort();
    out
}

/// Set partitions of `d`, as equivalence relations.
pub fn equivalences(d: ElemSet) -> Vec<BinRel> {
    let elems = d.to_vec();
    let mut out = Vec::new();
    fn rec(i: usize, elems: &[Elem], blocks: &mut Vec<ElemSet>, out: &mut Vec<BinRel>) {
        if i == elems.len() {
            let mut r = BinRel::EMPTY;
            for b in blocks.iter() {
                r = r.union(BinRel::product(*b, *b));
            }
            out.push(r);
            return;
        }
        for k in 0..blocks.len() {
            blocks[k].insert(elems[i]);
            rec(i + 1, elems, blocks, out);
            blocks[k].remove(elems[i]);
        }
        blocks.push(ElemSet::singleton(elems[i]));
        rec(i + 1, elems, blocks, out);
        blocks.pop();
    }
    rec(0, &elems, &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// Ω-compatible equivalence relations on `d`, with flags (PC/linear set later).
pub fn enumerate_congruences(alg: &FiniteAlgebra, d: ElemSet) -> Vec<CongruenceRecord> {
    let sub = alg.restrict(d);
    let congs: Vec<BinRel> = equivalences(d).into_iter().filter(|&r| sub.preserves_binrel(r)).collect();
    let nabla = BinRel::product(d, d);
    let delta = BinRel::diagonal(d);
    let invariant = invariant_binrels(&alg.op, d, d);
    congs
        .iter()
        .map(|&s| {
            let maximal = s != nabla && !congs.iter().any(|&t| s.is_subset(t) && t != s && t != nabla);
            let minimal = s != delta && !congs.iter().any(|&t| t.is_subset(s) && t != s && t != delta);
            let stable_above: Vec<BinRel> = invariant
                .iter()
                .copied()
                .filter(|&r| s.is_subset(r) && r != s && s.compose(r).compose(s) == r)
                .collect();
            let sigma_star = if stable_above.is_empty() {
                None
            } else {
                let meet = stable_above.iter().fold(nabla, |acc, &r| acc.intersect(r));
                (meet != s).then_some(meet)
            };
            CongruenceRecord {
                relation: s,
                flags: CongruenceFlags { maximal, minimal, pc: false, linear: false, irreducible: sigma_star.is_some() },
                sigma_star,
            }
        })
        .collect()
}

/// First tuple of classes on which Ω/σ depends on representatives.
pub fn quotient_violation(alg: &FiniteAlgebra, d: ElemSet, sigma: BinRel) -> Option<Vec<Elem>> {
    if !sigma.is_equivalence_on(d) {
        return Some(Vec::new());
    }
    let classes = sigma.classes(d);
    let m = alg.arity();
    let elems = d.to_vec();
    let mut idx = vec![0usize; m];
    let mut args = vec![0 as Elem; m];
    let mut reps = vec![0 as Elem; m];
    loop {
        for (k, &i) in idx.iter().enumerate() {
            args[k] = elems[i];
            reps[k] = rep_of(&classes, elems[i]);
        }
        let v = alg.op.apply(&args);
        let w = alg.op.apply(&reps);
        if !d.contains(v) || rep_of(&classes, v) != rep_of(&classes, w) {
            return Some(args.clone());
        }
        if !odometer(&mut idx, elems.len()) {
            return None;
        }
    }
}

/// `D/σ`; errors with a violating argument tuple when σ is not a congruence.
pub fn quotient(alg: &FiniteAlgebra, d: ElemSet, sigma: BinRel) -> Result<QuotientAlgebra> {
    if let Some(t) = quotient_violation(alg, d, sigma) {
        return Err(Error::Validation(format!("{sigma:?} is not a congruence of {d:?}: violated at {t:?}")));
    }
    let classes = sigma.classes(d);
    let reps = ElemSet::from_elems(classes.iter().filter_map(|&c| c.min()));
    let l = alg.l();
    let op = OperationTable::from_fn(l, alg.arity(), |t| {
        let r: Vec<Elem> = t.iter().map(|&a| rep_of(&classes, a)).collect();
        rep_of(&classes, alg.op.apply(&r))
    });
    let algebra = FiniteAlgebra { universe: reps, op };
    let quotient_relations = invariant_binrels(&algebra.op, reps, reps);
    Ok(QuotientAlgebra { parent: d, congruence: sigma, classes, algebra, quotient_relations })
}

fn is_prime(p: usize) -> bool {
    p >= 2 && (2..p).all(|d| p % d != 0)
}

/// Ordered prime factorizations of `n` into at most `MAX_L.ilog2()` factors.
fn prime_shapes(n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    fn rec(n: usize, min: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if n == 1 {
            out.push(cur.clone());
            return;
        }
        for p in min..=n {
            if is_prime(p) && n % p == 0 {
                cur.push(p as u8);
                rec(n / p, p, cur, out);
                cur.pop();
            }
        }
    }
    rec(n, 2, &mut Vec::new(), &mut out);
    out.retain(|s| s.len() <= (MAX_L as u32).ilog2().max(1) as usize);
    out
}

fn permutations(elems: &[Elem]) -> Vec<Vec<Elem>> {
    if elems.len() <= 1 {
        return vec![elems.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..elems.len() {
        let mut rest = elems.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

fn group_points(primes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for &p in primes {
        let mut next = Vec::new();
        for v in &out {
            for x in 0..p {
                let mut w = v.clone();
                w.push(x);
                next.push(w);
            }
        }
        out = next;
    }
    out
}

/// Searches for an isomorphism from `alg` (on its universe) to a product of
/// prime cyclic groups under the `m`-ary sum.
pub fn is_linear_algebra(alg: &FiniteAlgebra) -> Option<LinearIso> {
    let elems = alg.universe.to_vec();
    let n = elems.len();
    if n == 1 {
        return Some(LinearIso { primes: Vec::new(), map: [(elems[0], Vec::new())].into_iter().collect() });
    }
    let m = alg.arity();
    let tuples = tuples_over(&elems, m);
    for primes in prime_shapes(n) {
        let points = group_points(&primes);
        for perm in permutations(&elems) {
            let map: BTreeMap<Elem, Vec<u8>> = perm.iter().copied().zip(points.iter().cloned()).collect();
            let ok = tuples.iter().all(|t| {
                let v = alg.op.apply(t);
                let Some(img) = map.get(&v) else { return false };
                primes.iter().enumerate().all(|(c, &p)| {
                    let s: u32 = t.iter().map(|a| map[a][c] as u32).sum();
                    (s % p as u32) as u8 == img[c]
                })
            });
            if ok {
                return Some(LinearIso { primes: primes.clone(), map });
            }
        }
    }
    None
}

/// Ω preserves `rel` (tuples over the universe) on the algebra's universe.
fn preserves_tuples(op: &OperationTable, rel: &[Vec<Elem>], member: &dyn Fn(&[Elem]) -> bool) -> bool {
    if rel.is_empty() {
        return true;
    }
    let m = op.arity;
    let r = rel[0].len();
    let mut idx = vec![0usize; m];
    let mut buf = [0 as Elem; 8];
    let mut out = vec![0 as Elem; r];
    loop {
        for (c, o) in out.iter_mut().enumerate() {
            for (k, &i) in idx.iter().enumerate() {
                buf[k] = rel[i][c];
            }
            *o = op.apply(&buf[..m]);
        }
        if !member(&out) {
            return false;
        }
        if !odometer(&mut idx, rel.len()) {
            return true;
        }
    }
}

/// Polynomial completeness of a finite idempotent algebra with at most four
/// elements, decided by checking that Ω preserves none of the relations whose
/// polymorphism clones are the maximal clones containing all constants.
pub fn is_pc_algebra(alg: &FiniteAlgebra) -> Result<bool> {
    let u = alg.universe;
    let q = u.len();
    if q <= 1 {
        return Ok(true);
    }
    if q > 4 {
        return Err(Error::Limit(format!("PC test supports at most 4 elements, got {q}")));
    }
    let op = &alg.op;
    let elems = u.to_vec();
    // Reflexive binary relations: congruences, bounded orders, binary central relations.
    let delta = BinRel::diagonal(u);
    let nabla = BinRel::product(u, u);
    for (a, b) in nabla.pairs() {
        if a != b {
            let mut seed = delta;
            seed.insert(a, b);
            if generate_binrel(seed, op).0 != nabla {
                return Ok(false);
            }
        }
    }
    // Affine relation x + y = z + u for the unique elementary abelian group on q points.
    if q == 2 || q == 3 || q == 4 {
        let pos = |a: Elem| elems.iter().position(|&e| e == a).expect("in universe") as u8;
        let add = |x: u8, y: u8| if q == 4 { x ^ y } else { (x + y) % q as u8 };
        let neg = |x: u8| if q == 4 { x } else { (q as u8 - x) % q as u8 };
        let m = op.arity;
        let tuples = tuples_over(&elems, m);
        let mut affine = true;
        'outer: for x in &tuples {
            for y in &tuples {
                for z in &tuples {
                    let w: Vec<Elem> =
                        (0..m).map(|i| elems[add(add(pos(x[i]), neg(pos(y[i]))), pos(z[i])) as usize]).collect();
                    let lhs = add(add(pos(op.apply(x)), neg(pos(op.apply(y)))), pos(op.apply(z)));
                    if lhs != pos(op.apply(&w)) {
                        affine = false;
                        break 'outer;
                    }
                }
            }
        }
        if affine {
            return Ok(false);
        }
    }
    let triples = tuples_over(&elems, 3);
    // Ternary central relations (only q = 4 admits non-full ones of arity 3).
    if q == 4 {
        for &c in &elems {
            let central = |t: &[Elem]| t[0] == t[1] || t[1] == t[2] || t[0] == t[2] || t.contains(&c);
            let rel: Vec<Vec<Elem>> = triples.iter().filter(|t| central(t)).cloned().collect();
            if preserves_tuples(op, &rel, &central) {
                return Ok(false);
            }
        }
    }
    // h-regular relations for 3 ≤ h ≤ q.
    for h in 3..=q {
        let parts: Vec<BinRel> = equivalences(u).into_iter().filter(|e| e.classes(u).len() == h).collect();
        for part in parts {
            let classes = part.classes(u);
            let block = |a: Elem| classes.iter().position(|c| c.contains(a)).expect("covered");
            let regular = |t: &[Elem]| {
                let mut seen = 0u8;
                for &a in t {
                    let bit = 1 << block(a);
                    if seen & bit != 0 {
                        return true;
                    }
                    seen |= bit;
                }
                false
            };
            let rel: Vec<Vec<Elem>> = tuples_over(&elems, h).into_iter().filter(|t| regular(t)).collect();
            if preserves_tuples(op, &rel, &regular) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Binary absorption witness: a term `T` with `T(a,b), T(b,a) ∈ B` for
/// `a ∈ D`, `b ∈ B`.
pub fn is_binary_absorbing(b: ElemSet, alg: &FiniteAlgebra) -> Result<Option<Term>> {
    let d = alg.universe;
    if b.is_empty() || !b.is_subset(d) || !alg.closes(b) {
        return Err(Error::Validation(format!("{b:?} is not a nonempty subuniverse of {d:?}")));
    }
    let mut inputs = BTreeSet::new();
    for a in d.iter() {
        for x in b.iter() {
            inputs.insert(vec![a, x]);
            inputs.insert(vec![x, a]);
        }
    }
    let inputs: Vec<Vec<Elem>> = inputs.into_iter().collect();
    let allowed = vec![b; inputs.len()];
    find_term(alg, 2, &inputs, &allowed, TERM_SEARCH_CAP)
}

/// True iff `(a,a) ∉ Sg({a}×C ∪ C×{a})` for every `a ∈ D∖C`; also returns
/// the largest number of closure rounds used.
pub fn central_exclusion(c: ElemSet, alg: &FiniteAlgebra) -> (bool, usize) {
    let mut rounds = 0;
    for a in alg.universe.minus(c).iter() {
        let mut seed = BinRel::EMPTY;
        for x in c.iter() {
            seed.insert(a, x);
            seed.insert(x, a);
        }
        let (closed, r) = generate_binrel(seed, &alg.op);
        rounds = rounds.max(r);
        if closed.contains(a, a) {
            return (false, rounds);
        }
    }
    (true, rounds)
}

/// Ternary absorption inputs for `C` inside `D`.
pub fn ternary_absorption_inputs(c: ElemSet, d: ElemSet) -> Vec<Vec<Elem>> {
    let mut inputs = BTreeSet::new();
    for x in c.iter() {
        for y in c.iter() {
            for a in d.iter() {
                inputs.insert(vec![x, y, a]);
                inputs.insert(vec![x, a, y]);
                inputs.insert(vec![a, x, y]);
            }
        }
    }
    inputs.into_iter().collect()
}

/// Central witness: an absorbing ternary term, provided the Sg exclusion holds.
pub fn is_central(c: ElemSet, alg: &FiniteAlgebra) -> Result<Option<Term>> {
    let d = alg.universe;
    if c.is_empty() || !c.is_subset(d) || !alg.closes(c) {
        return Err(Error::Validation(format!("{c:?} is not a nonempty subuniverse of {d:?}")));
    }
    let (excluded, rounds) = central_exclusion(c, alg);
    let l = alg.l();
    if rounds > l * l {
        return Err(Error::Internal(format!("Sg closure needed {rounds} > l² rounds")));
    }
    if !excluded {
        return Ok(None);
    }
    let inputs = ternary_absorption_inputs(c, d);
    let allowed = vec![c; inputs.len()];
    find_term(alg, 3, &inputs, &allowed, TERM_SEARCH_CAP)
}

/// PC congruence test: proper, polynomially complete quotient without
/// nontrivial binary absorbing or central subuniverses.
fn is_pc_quotient(q: &QuotientAlgebra) -> Result<bool> {
    let alg = &q.algebra;
    if alg.universe.len() < 2 || !is_pc_algebra(alg)? {
        return Ok(false);
    }
    for b in subuniverses(alg) {
        if b == alg.universe {
            continue;
        }
        if is_binary_absorbing(b, alg)?.is_some() || is_central(b, alg)?.is_some() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Bijection search for an isomorphism between two algebras on given universes.
fn isomorphic(a: &FiniteAlgebra, b_elems: &[Vec<Elem>], b_op: &dyn Fn(&[&[Elem]]) -> Vec<Elem>) -> bool {
    let elems = a.universe.to_vec();
    if elems.len() != b_elems.len() {
        return false;
    }
    let m = a.arity();
    let tuples = tuples_over(&elems, m);
    for perm in permutations(&elems) {
        let h: BTreeMap<Elem, &Vec<Elem>> = perm.iter().copied().zip(b_elems.iter()).collect();
        let ok = tuples.iter().all(|t| {
            let imgs: Vec<&[Elem]> = t.iter().map(|x| h[x].as_slice()).collect();
            let lhs = h[&a.op.apply(t)];
            *lhs == b_op(&imgs)
        });
        if ok {
            return true;
        }
    }
    false
}

fn is_block_of_some(e: ElemSet, congruences: &[CongruenceRecord], d: ElemSet) -> Vec<BinRel> {
    congruences.iter().filter(|c| c.relation.classes(d).contains(&e)).map(|c| c.relation).collect()
}

pub struct PcStructure {
    pub pc_congruences: Vec<BinRel>,
    pub cong_pc: BinRel,
    pub pc_subuniverses_i: Vec<ElemSet>,
    pub pc_subuniverses_ii: Vec<ElemSet>,
}

/// PC congruences, their meet and the PC subuniverses under both definitions.
pub fn pc_structure(alg: &FiniteAlgebra, d: ElemSet, congruences: &[CongruenceRecord], quotients: &[QuotientAlgebra]) -> Result<PcStructure> {
    let sub = alg.restrict(d);
    let mut pc = Vec::new();
    for (c, q) in congruences.iter().zip(quotients) {
        if is_pc_quotient(q)? {
            pc.push(c.relation);
        }
    }
    let nabla = BinRel::product(d, d);
    let cong_pc = pc.iter().fold(nabla, |acc, &s| acc.intersect(s));
    let subs = subuniverses(&sub);
    let mut def_i = Vec::new();
    let mut def_ii = Vec::new();
    let s = (MAX_L as u32).ilog2() as usize;
    for &e in &subs {
        if e == d {
            def_i.push(e);
            def_ii.push(e);
            continue;
        }
        let blocks_of = is_block_of_some(e, congruences, d);
        let inside_pc_class = pc.iter().any(|&sg| BinRel::product(e, e).is_subset(sg));
        if inside_pc_class && !blocks_of.is_empty() {
            def_i.push(e);
        }
        let mut ok_ii = false;
        'theta: for &theta in &blocks_of {
            let qt = &quotients[congruences.iter().position(|c| c.relation == theta).expect("listed")];
            for k in 1..=s.max(1) {
                let mut idx = vec![0usize; k];
                if pc.is_empty() {
                    break;
                }
                loop {
                    if idx.windows(2).all(|w| w[0] < w[1]) {
                        let factors: Vec<&QuotientAlgebra> =
                            idx.iter().map(|&i| &quotients[congruences.iter().position(|c| c.relation == pc[i]).expect("listed")]).collect();
                        let lists: Vec<Vec<Elem>> = factors.iter().map(|f| f.reps().to_vec()).collect();
                        let points = crate::algebra::cartesian(&lists);
                        let op = |args: &[&[Elem]]| -> Vec<Elem> {
                            (0..factors.len())
                                .map(|c| {
                                    let xs: Vec<Elem> = args.iter().map(|t| t[c]).collect();
                                    factors[c].algebra.op.apply(&xs)
                                })
                                .collect()
                        };
                        if isomorphic(&qt.algebra, &points, &op) {
                            ok_ii = true;
                            break 'theta;
                        }
                    }
                    if !odometer(&mut idx, pc.len()) {
                        break;
                    }
                }
            }
        }
        if ok_ii {
            def_ii.push(e);
        }
    }
    Ok(PcStructure { pc_congruences: pc, cong_pc, pc_subuniverses_i: def_i, pc_subuniverses_ii: def_ii })
}

pub struct LinearStructure {
    pub linear_iso: Option<LinearIso>,
    pub linear_congruences: Vec<BinRel>,
    pub cong_lin: BinRel,
    pub linear_subuniverses: Vec<ElemSet>,
}

/// Linear congruences, their meet `CongLin` and the subuniverses stable under it.
pub fn linear_structure(alg: &FiniteAlgebra, d: ElemSet, congruences: &[CongruenceRecord], quotients: &[QuotientAlgebra]) -> Result<LinearStructure> {
    let sub = alg.restrict(d);
    let linear_iso = is_linear_algebra(&sub);
    let lin: Vec<BinRel> = congruences
        .iter()
        .zip(quotients)
        .filter(|(_, q)| is_linear_algebra(&q.algebra).is_some())
        .map(|(c, _)| c.relation)
        .collect();
    let cong_lin = lin.iter().fold(BinRel::product(d, d), |acc, &s| acc.intersect(s));
    if !lin.contains(&cong_lin) {
        return Err(Error::Internal(format!("meet of linear congruences {cong_lin:?} on {d:?} is not linear")));
    }
    let linear_subuniverses = subuniverses(&sub)
        .into_iter()
        .filter(|&b| cong_lin.compose(BinRel::diagonal(b)).compose(cong_lin).diagonal_part() == b)
        .collect();
    Ok(LinearStructure { linear_iso, linear_congruences: lin, cong_lin, linear_subuniverses })
}

/// Full classification of `b` inside the catalog entry for `d`.
fn classify_in(alg: &FiniteAlgebra, entry: &DomainEntry, b: ElemSet) -> Result<SubuniverseClassification> {
    let sub = alg.restrict(entry.universe);
    let mut kinds = Vec::new();
    if let Some(term) = is_binary_absorbing(b, &sub)? {
        kinds.push(SubuniverseKind::BinaryAbsorbing { term });
    }
    if let Some(term) = is_central(b, &sub)? {
        kinds.push(SubuniverseKind::Central { term });
    }
    if entry.pc_subuniverses_i.contains(&b) {
        let congruences = entry.pc_congruences.iter().copied().filter(|&s| BinRel::product(b, b).is_subset(s)).collect();
        kinds.push(SubuniverseKind::Pc { congruences });
    }
    if entry.linear_subuniverses.contains(&b) {
        kinds.push(SubuniverseKind::Linear { cong_lin: entry.cong_lin });
    }
    Ok(SubuniverseClassification {
        b,
        d: entry.universe,
        kinds,
        trivial: b == entry.universe,
        minimal_ba: false,
        minimal_central: false,
        minimal_pc: false,
        minimal_linear: false,
    })
}

fn set_minimality(cls: &mut [SubuniverseClassification]) {
    let snapshot: Vec<(ElemSet, bool, bool, bool, bool)> = cls
        .iter()
        .map(|c| (c.b, c.ba_term().is_some(), c.central_term().is_some(), c.is_pc(), c.is_linear()))
        .collect();
    for c in cls.iter_mut() {
        let below = |f: fn(&(ElemSet, bool, bool, bool, bool)) -> bool| {
            snapshot.iter().any(|s| s.0 != c.b && s.0.is_subset(c.b) && f(s))
        };
        c.minimal_ba = c.ba_term().is_some() && !below(|s| s.1);
        c.minimal_central = c.central_term().is_some() && !below(|s| s.2);
        c.minimal_pc = c.is_pc() && !below(|s| s.3);
        c.minimal_linear = c.is_linear() && !below(|s| s.4);
    }
}

/// Classification of `b` as a subuniverse of `d`, computed from scratch.
pub fn classify(cat: &TemplateCatalog, b: ElemSet, d: ElemSet) -> Result<SubuniverseClassification> {
    let entry = cat.domain(d).ok_or_else(|| Error::Validation(format!("{d:?} is not a subuniverse")))?;
    if !entry.subuniverses.contains(&b) {
        return Err(Error::Validation(format!("{b:?} is not a subuniverse of {d:?}")));
    }
    let mut all: Vec<SubuniverseClassification> =
        entry.subuniverses.iter().map(|&x| classify_in(&cat.algebra, entry, x)).collect::<Result<_>>()?;
    set_minimality(&mut all);
    Ok(all.into_iter().find(|c| c.b == b).expect("listed"))
}

/// Bridge-shaped points of `(D/σ_i)² × (D/σ_j)²` with an incremental
/// closure under the two quotient operations.
struct BridgeFrame<'a> {
    q1: &'a QuotientAlgebra,
    q2: &'a QuotientAlgebra,
    points: Vec<[Elem; 4]>,
    index: Vec<Option<usize>>,
}

type PointSet = [u64; 4];

fn pset_insert(s: &mut PointSet, i: usize) -> bool {
    let fresh = s[i / 64] & (1 << (i % 64)) == 0;
    s[i / 64] |= 1 << (i % 64);
    fresh
}

fn pset_contains(s: &PointSet, i: usize) -> bool {
    s[i / 64] & (1 << (i % 64)) != 0
}

fn key(t: &[Elem; 4]) -> usize {
    t[0] as usize * 64 + t[1] as usize * 16 + t[2] as usize * 4 + t[3] as usize
}

impl<'a> BridgeFrame<'a> {
    fn new(q1: &'a QuotientAlgebra, q2: &'a QuotientAlgebra) -> Self {
        let r1 = q1.reps().to_vec();
        let r2 = q2.reps().to_vec();
        let mut points = Vec::new();
        let mut index = vec![None; 256];
        for &a in &r1 {
            for &b in &r1 {
                for &c in &r2 {
                    for &e in &r2 {
                        if (a == b) == (c == e) {
                            index[key(&[a, b, c, e])] = Some(points.len());
                            points.push([a, b, c, e]);
                        }
                    }
                }
            }
        }
        BridgeFrame { q1, q2, points, index }
    }

    /// Closure of a closed `base` plus `extra`; `None` once it leaves the frame.
    fn close(&self, base: &[usize], extra: &[usize]) -> Option<(PointSet, Vec<usize>)> {
        let m = self.q1.algebra.arity();
        let mut set: PointSet = [0; 4];
        let mut list: Vec<usize> = Vec::with_capacity(base.len() + extra.len());
        for &i in base {
            pset_insert(&mut set, i);
            list.push(i);
        }
        let mut prev_end = list.len();
        for &i in extra {
            if pset_insert(&mut set, i) {
                list.push(i);
            }
        }
        if base.is_empty() {
            prev_end = 0;
        }
        let mut buf = [0 as Elem; 8];
        loop {
            let end = list.len();
            if end == prev_end {
                break;
            }
            let mut idx = vec![0usize; m];
            loop {
                if idx.iter().any(|&i| i >= prev_end) {
                    let mut t = [0 as Elem; 4];
                    for (c, slot) in t.iter_mut().enumerate() {
                        for (k, &i) in idx.iter().enumerate() {
                            buf[k] = self.points[list[i]][c];
                        }
                        let op = if c < 2 { &self.q1.algebra.op } else { &self.q2.algebra.op };
                        *slot = op.apply(&buf[..m]);
                    }
                    let p = self.index[key(&t)]?;
                    if pset_insert(&mut set, p) {
                        list.push(p);
                    }
                }
                if !odometer(&mut idx, end) {
                    break;
                }
            }
            prev_end = end;
        }
        list.sort_unstable();
        Some((set, list))
    }

    /// Both halves contain their congruence.
    fn covers_diagonals(&self, list: &[usize]) -> bool {
        let has = |c: usize, a: Elem| list.iter().any(|&i| self.points[i][c] == a && self.points[i][c + 1] == a);
        self.q1.reps().iter().all(|a| has(0, a)) && self.q2.reps().iter().all(|a| has(2, a))
    }

    fn record(&self, d: ElemSet, list: &[usize], l: usize) -> BridgeRecord {
        let mut rho = RelationTable::empty(l, 4);
        for &i in list {
            let t = self.points[i];
            for a in self.q1.class_of(t[0]).iter() {
                for b in self.q1.class_of(t[1]).iter() {
                    for c in self.q2.class_of(t[2]).iter() {
                        for e in self.q2.class_of(t[3]).iter() {
                            rho.insert(&[a, b, c, e]);
                        }
                    }
                }
            }
        }
        let reflexive = d.iter().all(|a| rho.contains(&[a, a, a, a]));
        let mut rho_tilde = BinRel::EMPTY;
        for x in d.iter() {
            for y in d.iter() {
                if rho.contains(&[x, x, y, y]) {
                    rho_tilde.insert(x, y);
                }
            }
        }
        BridgeRecord { rho, source: self.q1.congruence, target: self.q2.congruence, reflexive, optimal: false, rho_tilde }
    }
}

/// Bridges between two congruences of `d`: every `Sg(p)` that is a bridge,
/// every one-generated reflexive bridge `Sg(diag ∪ {p})`, and, when
/// `optimize` is set, the reflexive bridges with inclusion-maximal `ρ̃`
/// (flagged optimal). Any reflexive bridge contains some `Sg(diag ∪ {p})`,
/// so adjacency read off this list is exact; extending by `(x,x,y,y)`
/// points one at a time reaches every achievable `ρ̃`, so optimality is exact
/// too. `complete = false` past [`BRIDGE_CAP`] extension states.
pub fn bridges(d: ElemSet, q1: &QuotientAlgebra, q2: &QuotientAlgebra, l: usize, optimize: bool) -> (Vec<BridgeRecord>, bool) {
    let frame = BridgeFrame::new(q1, q2);
    let strict: Vec<usize> = (0..frame.points.len()).filter(|&i| frame.points[i][0] != frame.points[i][1]).collect();
    let diag: Vec<usize> = d
        .iter()
        .filter_map(|a| frame.index[key(&[q1.rep(a), q1.rep(a), q2.rep(a), q2.rep(a)])])
        .collect();
    let mut found: BTreeMap<Vec<usize>, ()> = BTreeMap::new();
    for &p in &strict {
        if let Some((_, list)) = frame.close(&[], &[p]) {
            if frame.covers_diagonals(&list) {
                found.insert(list, ());
            }
        }
    }
    let Some((_, base)) = frame.close(&[], &diag) else {
        return (Vec::new(), true);
    };
    let mut reflexive_roots = Vec::new();
    for &p in &strict {
        if let Some((_, list)) = frame.close(&base, &[p]) {
            found.insert(list.clone(), ());
            if !reflexive_roots.contains(&list) {
                reflexive_roots.push(list);
            }
        }
    }
    let mut complete = true;
    let mut optimal_lists: Vec<Vec<usize>> = Vec::new();
    if optimize && q1.congruence == q2.congruence {
        let ext: Vec<usize> = (0..frame.points.len())
            .filter(|&i| {
                let t = frame.points[i];
                t[0] == t[1] && t[2] == t[3]
            })
            .collect();
        let mut seen: HashSet<PointSet> = HashSet::new();
        let mut queue: VecDeque<(PointSet, Vec<usize>)> = VecDeque::new();
        for r in &reflexive_roots {
            let (set, list) = frame.close(r, &[]).expect("already closed");
            if seen.insert(set) {
                queue.push_back((set, list));
            }
        }
        let mut states: Vec<Vec<usize>> = Vec::new();
        while let Some((set, list)) = queue.pop_front() {
            for &x in &ext {
                if pset_contains(&set, x) {
                    continue;
                }
                if let Some((s2, l2)) = frame.close(&list, &[x]) {
                    if !seen.contains(&s2) {
                        if seen.len() >= BRIDGE_CAP {
                            complete = false;
                            break;
                        }
                        seen.insert(s2);
                        queue.push_back((s2, l2));
                    }
                }
            }
            states.push(list);
            if !complete {
                break;
            }
        }
        let tilde = |list: &[usize]| -> BinRel {
            BinRel::from_pairs(list.iter().map(|&i| frame.points[i]).filter(|t| t[0] == t[1]).map(|t| (t[0], t[2])))
        };
        let tildes: Vec<BinRel> = states.iter().map(|s| tilde(s)).collect();
        let mut kept: Vec<BinRel> = Vec::new();
        for (s, &t) in states.iter().zip(&tildes) {
            if !tildes.iter().any(|&u| t.is_subset(u) && u != t) && !kept.contains(&t) {
                kept.push(t);
                optimal_lists.push(s.clone());
            }
        }
        for s in &optimal_lists {
            found.insert(s.clone(), ());
        }
    }
    let mut out: Vec<BridgeRecord> = found
        .keys()
        .map(|list| {
            let mut r = frame.record(d, list, l);
            r.optimal = optimal_lists.contains(list);
            r
        })
        .collect();
    out.sort_by(|a, b| a.rho.bits.cmp(&b.rho.bits));
    (out, complete)
}

/// Builds the full catalog for a template algebra on `{0..l-1}`.
pub fn build_catalog(alg: &FiniteAlgebra) -> Result<TemplateCatalog> {
    if alg.l() > MAX_L {
        return Err(Error::Limit(format!("l = {} exceeds {MAX_L}", alg.l())));
    }
    if alg.universe != ElemSet::full(alg.l()) {
        return Err(Error::Validation("template algebra must act on the whole of {0..l-1}".into()));
    }
    if let Some(v) = wnu_violation(&alg.op) {
        return Err(Error::Validation(format!("not an idempotent special WNU: {v}")));
    }
    let l = alg.l();
    let gamma1 = subuniverses(alg);
    let full = ElemSet::full(l);
    let gamma2 = invariant_binrels(&alg.op, full, full);
    let pol2 = clone_part(alg, 2, TERM_SEARCH_CAP)
        .ok_or_else(|| Error::Limit("binary clone fragment too large".into()))?;
    let pol3 = clone_part(alg, 3, POL3_CAP);
    let mut domains = Vec::with_capacity(gamma1.len());
    for &d in &gamma1 {
        let sub = alg.restrict(d);
        let mut congruences = enumerate_congruences(alg, d);
        let quotients: Vec<QuotientAlgebra> =
            congruences.iter().map(|c| quotient(alg, d, c.relation)).collect::<Result<_>>()?;
        let pc = pc_structure(alg, d, &congruences, &quotients)?;
        let lin = linear_structure(alg, d, &congruences, &quotients)?;
        for c in congruences.iter_mut() {
            c.flags.pc = pc.pc_congruences.contains(&c.relation);
            c.flags.linear = lin.linear_congruences.contains(&c.relation);
        }
        let mut entry = DomainEntry {
            universe: d,
            subuniverses: subuniverses(&sub),
            congruences,
            quotients,
            pc_congruences: pc.pc_congruences,
            cong_pc: pc.cong_pc,
            pc_subuniverses_i: pc.pc_subuniverses_i,
            pc_subuniverses_ii: pc.pc_subuniverses_ii,
            linear_iso: lin.linear_iso,
            linear_congruences: lin.linear_congruences,
            cong_lin: lin.cong_lin,
            linear_subuniverses: lin.linear_subuniverses,
            classification: Vec::new(),
        };
        let mut cls: Vec<SubuniverseClassification> =
            entry.subuniverses.iter().map(|&b| classify_in(alg, &entry, b)).collect::<Result<_>>()?;
        set_minimality(&mut cls);
        entry.classification = cls;
        domains.push(entry);
    }
    let mut all_bridges = Vec::new();
    let mut bridges_complete = true;
    for entry in &domains {
        let d = entry.universe;
        let proper: Vec<usize> =
            (0..entry.congruences.len()).filter(|&i| entry.congruences[i].relation != entry.nabla()).collect();
        for &i in &proper {
            for &j in &proper {
                let optimize = i == j && entry.congruences[i].flags.irreducible;
                let (bs, complete) = bridges(d, &entry.quotients[i], &entry.quotients[j], l, optimize);
                bridges_complete &= complete;
                all_bridges.extend(bs);
            }
        }
    }
    Ok(TemplateCatalog {
        digest: algebra_digest(alg),
        algebra: alg.clone(),
        gamma1,
        gamma2,
        pol2,
        pol3,
        domains,
        bridges: all_bridges,
        bridges_complete,
    })
}

impl TemplateCatalog {
    /// One-of-four: every domain with at least two elements has a nontrivial
    /// BA or central subuniverse, or a proper PC or linear congruence.
    pub fn one_of_four_violations(&self) -> Vec<ElemSet> {
        self.domains
            .iter()
            .filter(|e| e.universe.len() >= 2)
            .filter(|e| {
                let nabla = e.nabla();
                !(e.has_ba()
                    || e.has_central()
                    || !e.pc_congruences.is_empty()
                    || e.linear_congruences.iter().any(|&s| s != nabla))
            })
            .map(|e| e.universe)
            .collect()
    }
}

/// On-disk template: one operation table, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateFile {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub l: usize,
    pub arity: usize,
    pub table: Vec<Elem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universe: Option<Vec<Elem>>,
}

impl TemplateFile {
    pub fn from_algebra(alg: &FiniteAlgebra, name: Option<&str>) -> TemplateFile {
        let full = alg.universe == ElemSet::full(alg.l());
        TemplateFile {
            version: 1,
            name: name.map(str::to_string),
            l: alg.l(),
            arity: alg.arity(),
            table: alg.op.table.clone(),
            universe: (!full).then(|| alg.universe.to_vec()),
        }
    }

    pub fn to_algebra(&self) -> Result<FiniteAlgebra> {
        if self.version != 1 {
            return Err(Error::Parse(format!("unsupported template version {}", self.version)));
        }
        let op = OperationTable::new(self.l, self.arity, self.table.clone())?;
        let universe = match &self.universe {
            Some(u) => {
                if u.iter().any(|&a| a as usize >= self.l) {
                    return Err(Error::Validation(format!("universe {u:?} exceeds {{0..{}}}", self.l - 1)));
                }
                ElemSet::from_elems(u.iter().copied())
            }
            None => ElemSet::full(self.l),
        };
        FiniteAlgebra::new(universe, op)
    }
}

pub fn parse_template(text: &str) -> Result<FiniteAlgebra> {
    let file: TemplateFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.to_algebra()
}
