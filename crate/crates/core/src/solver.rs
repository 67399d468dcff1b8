//! The solve loop: consistency repairs, one-of-four reductions, minimal
//! strategies, the linear phase over products of prime fields and the
//! `size(D)` termination measure.

use crate::algebra::Term;
use crate::consistency::{
    cycle_violation, irreducible_violation, is_1_consistent, path_relation, propagate, weakened_violation,
};
use crate::instance::{reduce, Homomorphism, Instance, ReductionKind, ReductionVector};
use crate::template::{is_linear_algebra, LinearIso, QuotientAlgebra, TemplateCatalog};
use crate::types::{BinRel, Elem, ElemSet, Error, Limits, Result, MAX_L};
use crate::witness::{OneOfFourWitness, StepKind, Trace, TraceStep};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;

/// `size(D)`: distinct domain sizes, largest first, and the counts
/// `⟨k_l,…,k_0⟩` of distinct domains of each size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeMeasure {
    pub tuple: Vec<usize>,
    /// `counts[i]` is the number of distinct domains of size `i`.
    pub counts: Vec<usize>,
    /// `Σ counts[i]·(n+1)^i`; comparable between measures of equal `n`.
    pub encoding: u128,
}

impl Ord for SizeMeasure {
    fn cmp(&self, other: &Self) -> Ordering {
        self.counts.iter().rev().cmp(other.counts.iter().rev())
    }
}

impl PartialOrd for SizeMeasure {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn size_measure(domains: &[ElemSet]) -> SizeMeasure {
    let mut distinct: Vec<ElemSet> = domains.to_vec();
    distinct.sort();
    distinct.dedup();
    let mut tuple: Vec<usize> = distinct.iter().map(|d| d.len()).collect();
    tuple.sort_unstable_by(|a, b| b.cmp(a));
    let mut counts = vec![0usize; MAX_L + 1];
    for &s in &tuple {
        counts[s] += 1;
    }
    let base = domains.len() as u128 + 1;
    let encoding = counts.iter().rev().fold(0u128, |acc, &k| acc * base + k as u128);
    SizeMeasure { tuple, counts, encoding }
}

/// A one-of-four reduction `D → D^(1)` applied to `before`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyStep {
    pub reduction: ReductionVector,
    pub before: Instance,
    pub minimal: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub steps: Vec<StrategyStep>,
    /// Every step is flagged minimal.
    pub minimal: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StrategyViolation {
    pub step: usize,
    pub reason: String,
}

fn kind_of(k: &ReductionKind) -> Option<u8> {
    match k {
        ReductionKind::BinaryAbsorbing => Some(0),
        ReductionKind::Central => Some(1),
        ReductionKind::Pc => Some(2),
        _ => None,
    }
}

/// `b` is a subuniverse of `d` of the given type (`d` itself always is).
pub fn has_kind(cat: &TemplateCatalog, d: ElemSet, b: ElemSet, kind: &ReductionKind) -> bool {
    if b == d {
        return true;
    }
    let Some(c) = cat.domain(d).and_then(|e| e.classification_of(b)) else { return false };
    match kind {
        ReductionKind::BinaryAbsorbing => c.ba_term().is_some(),
        ReductionKind::Central => c.central_term().is_some(),
        ReductionKind::Pc => c.is_pc(),
        ReductionKind::Linear => c.is_linear(),
        ReductionKind::Consistency => false,
    }
}

/// `b` is inclusion-minimal among nonempty subuniverses of `d` of that type.
pub fn is_minimal_of_kind(cat: &TemplateCatalog, d: ElemSet, b: ElemSet, kind: &ReductionKind) -> bool {
    let Some(e) = cat.domain(d) else { return false };
    has_kind(cat, d, b, kind)
        && !e.subuniverses.iter().any(|&s| s != b && s.is_subset(b) && has_kind(cat, d, s, kind))
}

/// Checks each step: 1-consistent result, components of the declared type,
/// and minimality of every component when flagged.
pub fn validate_strategy(inst: &Instance, strategy: &Strategy, cat: &TemplateCatalog) -> std::result::Result<(), StrategyViolation> {
    let fail = |step: usize, reason: String| Err(StrategyViolation { step, reason });
    for (k, s) in strategy.steps.iter().enumerate() {
        let b = &s.before;
        if b.n() != inst.n() || b.constraints.len() != inst.constraints.len() {
            return fail(k, "step instance does not match the variables and constraints".into());
        }
        if b.domains.iter().zip(&inst.domains).any(|(x, y)| !x.is_subset(*y)) {
            return fail(k, "step domains are not inside the original ones".into());
        }
        if kind_of(&s.reduction.kind).is_none() {
            return fail(k, format!("{:?} is not a one-of-four type", s.reduction.kind));
        }
        let red = &s.reduction.domains;
        if red.len() != b.n() {
            return fail(k, "reduction length mismatch".into());
        }
        for (v, (&d, &r)) in b.domains.iter().zip(red).enumerate() {
            if r.is_empty() || !r.is_subset(d) {
                return fail(k, format!("component {v} is empty or not inside its domain"));
            }
            if !cat.is_subuniverse(r) || !has_kind(cat, d, r, &s.reduction.kind) {
                return fail(k, format!("component {v} = {r:?} is not a {:?} subuniverse of {d:?}", s.reduction.kind));
            }
            if s.minimal && !is_minimal_of_kind(cat, d, r, &s.reduction.kind) {
                return fail(k, format!("component {v} = {r:?} is not minimal"));
            }
        }
        if red == &b.domains {
            return fail(k, "reduction changes nothing".into());
        }
        let after = reduce(b, red).expect("same length");
        if !is_1_consistent(&after) {
            return fail(k, "reduced instance is not 1-consistent".into());
        }
    }
    if strategy.minimal && strategy.steps.iter().any(|s| !s.minimal) {
        return fail(strategy.steps.len(), "strategy flagged minimal with a non-minimal step".into());
    }
    Ok(())
}

/// Greatest 1-consistent reduction inside `start` that reduces equal domains
/// of `inst` equally: propagation alternated with intersection over groups of
/// equal domains.
fn keyed_fixpoint(inst: &Instance, start: &[ElemSet]) -> Vec<ElemSet> {
    let mut cur = start.to_vec();
    loop {
        let log = propagate(inst, &cur);
        let prop = log.domains().to_vec();
        if prop.iter().any(|d| d.is_empty()) {
            return prop;
        }
        let mut meet: BTreeMap<ElemSet, ElemSet> = BTreeMap::new();
        for (v, &d) in inst.domains.iter().enumerate() {
            meet.entry(d).and_modify(|m| *m = m.intersect(prop[v])).or_insert(prop[v]);
        }
        let next: Vec<ElemSet> = inst.domains.iter().map(|d| meet[d]).collect();
        if next == prop {
            return next;
        }
        cur = next;
    }
}

/// 1-consistent reduction inside `start`: keyed when possible, plain propagation otherwise.
fn one_consistent_inside(inst: &Instance, start: &[ElemSet]) -> Vec<ElemSet> {
    let keyed = keyed_fixpoint(inst, start);
    if keyed.iter().all(|d| !d.is_empty()) {
        return keyed;
    }
    propagate(inst, start).domains().to_vec()
}

/// The chosen subuniverse behind a one-of-four reduction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneOfFourChoice {
    pub kind: ReductionKind,
    pub var: usize,
    pub subuniverse: ElemSet,
    pub witness: OneOfFourWitness,
}

/// A consistency repair or a one-of-four reduction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Move {
    Propagate(crate::consistency::PropagationLog),
    Cycle(crate::consistency::CycleViolation),
    Irreducible(crate::consistency::IrreducibleViolation),
    Weakened { var: usize, domain: ElemSet },
    OneOfFour { choice: OneOfFourChoice, reduction: ReductionVector },
}

impl Move {
    /// Domains after the move.
    pub fn domains(&self, inst: &Instance) -> Vec<ElemSet> {
        let mut d = inst.domains.clone();
        match self {
            Move::Propagate(log) => return log.domains().to_vec(),
            Move::Cycle(v) => d[v.var] = d[v.var].intersect(v.diagonal),
            Move::Irreducible(v) => d[v.var] = v.projection,
            Move::Weakened { var, domain } => d[*var] = *domain,
            Move::OneOfFour { reduction, .. } => return reduction.domains.clone(),
        }
        d
    }
}

fn choose_one_of_four(inst: &Instance, cat: &TemplateCatalog) -> Result<Option<OneOfFourChoice>> {
    let entry = |v: usize| {
        cat.domain(inst.domains[v])
            .ok_or_else(|| Error::Validation(format!("domain {:?} of variable {v} is not a subuniverse", inst.domains[v])))
    };
    for v in 0..inst.n() {
        if let Some(c) = entry(v)?.min_ba() {
            let term = c.ba_term().expect("flagged").clone();
            return Ok(Some(OneOfFourChoice {
                kind: ReductionKind::BinaryAbsorbing,
                var: v,
                subuniverse: c.b,
                witness: OneOfFourWitness::Term(term),
            }));
        }
    }
    for v in 0..inst.n() {
        if let Some(c) = entry(v)?.min_central() {
            let term = c.central_term().expect("flagged").clone();
            return Ok(Some(OneOfFourChoice {
                kind: ReductionKind::Central,
                var: v,
                subuniverse: c.b,
                witness: OneOfFourWitness::Term(term),
            }));
        }
    }
    for v in 0..inst.n() {
        if let Some(c) = entry(v)?.min_pc() {
            let sigma = c
                .kinds
                .iter()
                .find_map(|k| match k {
                    crate::template::SubuniverseKind::Pc { congruences } => congruences.first().copied(),
                    _ => None,
                })
                .unwrap_or(BinRel::product(inst.domains[v], inst.domains[v]));
            return Ok(Some(OneOfFourChoice { kind: ReductionKind::Pc, var: v, subuniverse: c.b, witness: OneOfFourWitness::Congruence(sigma) }));
        }
    }
    Ok(None)
}

/// The maximal 1-consistent reduction inside the chosen subuniverse, applied
/// to every variable whose domain equals the chosen one.
fn reduction_for(inst: &Instance, choice: &OneOfFourChoice) -> Result<ReductionVector> {
    let d = inst.domains[choice.var];
    let start: Vec<ElemSet> = inst.domains.iter().map(|&e| if e == d { choice.subuniverse } else { e }).collect();
    let mut domains = one_consistent_inside(inst, &start);
    if domains.iter().any(|e| e.is_empty()) {
        let mut only = inst.domains.clone();
        only[choice.var] = choice.subuniverse;
        domains = one_consistent_inside(inst, &only);
    }
    if domains.iter().any(|e| e.is_empty()) {
        return Err(Error::Internal(format!(
            "no 1-consistent {:?} reduction inside {:?} for variable {}",
            choice.kind, choice.subuniverse, choice.var
        )));
    }
    Ok(ReductionVector { domains, kind: choice.kind.clone() })
}

/// Next step in the fixed order: propagation, cycle-consistency,
/// irreducibility, weakened instance, then BA, central and PC reductions.
pub fn next_move(inst: &Instance, cat: &TemplateCatalog) -> Result<Option<Move>> {
    let log = propagate(inst, &inst.domains);
    if log.changing_rounds() > 0 {
        return Ok(Some(Move::Propagate(log)));
    }
    if inst.has_empty_domain() {
        return Ok(None);
    }
    if let Some(v) = cycle_violation(inst) {
        return Ok(Some(Move::Cycle(v)));
    }
    if let Some(v) = irreducible_violation(inst)? {
        return Ok(Some(Move::Irreducible(v)));
    }
    if let Some((var, domain)) = weakened_violation(inst, cat) {
        return Ok(Some(Move::Weakened { var, domain }));
    }
    match choose_one_of_four(inst, cat)? {
        Some(choice) => {
            let reduction = reduction_for(inst, &choice)?;
            Ok(Some(Move::OneOfFour { choice, reduction }))
        }
        None => Ok(None),
    }
}

/// The next reduction vector, `None` when only the linear phase is left.
pub fn find_next_reduction(inst: &Instance, cat: &TemplateCatalog) -> Result<Option<ReductionVector>> {
    Ok(next_move(inst, cat)?.map(|m| match &m {
        Move::OneOfFour { reduction, .. } => reduction.clone(),
        _ => ReductionVector { domains: m.domains(inst), kind: ReductionKind::Consistency },
    }))
}

/// Descends from a 1-consistent one-of-four reduction towards a minimal one
/// of the same type, keeping 1-consistency; returns whether minimality was reached.
pub fn minimize_reduction(inst: &Instance, red: &ReductionVector, cat: &TemplateCatalog) -> (ReductionVector, bool) {
    let kind = &red.kind;
    let mut cur = red.domains.clone();
    'outer: loop {
        let mut stuck = false;
        for v in 0..inst.n() {
            let d = inst.domains[v];
            if is_minimal_of_kind(cat, d, cur[v], kind) {
                continue;
            }
            stuck = true;
            let entry = cat.domain(d).expect("domain in catalog");
            let candidates: Vec<ElemSet> = entry
                .subuniverses
                .iter()
                .copied()
                .filter(|&s| s != cur[v] && s.is_subset(cur[v]) && has_kind(cat, d, s, kind))
                .collect();
            for b in candidates {
                let grouped: Vec<ElemSet> = (0..inst.n())
                    .map(|y| if inst.domains[y] == d && cur[y] == cur[v] { b } else { cur[y] })
                    .collect();
                let mut single = cur.clone();
                single[v] = b;
                for start in [grouped, single] {
                    let next = one_consistent_inside(inst, &start);
                    if next.iter().all(|e| !e.is_empty())
                        && next.iter().zip(&inst.domains).all(|(&r, &e)| has_kind(cat, e, r, kind))
                    {
                        cur = next;
                        continue 'outer;
                    }
                }
            }
        }
        let red = ReductionVector { domains: cur, kind: kind.clone() };
        return (red, !stuck);
    }
}

/// Per-variable quotient by `CongLin` with its prime-field coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearFactor {
    pub var: usize,
    pub congruence: BinRel,
    pub classes: Vec<ElemSet>,
    pub iso: LinearIso,
    /// First slot of this variable in the system.
    pub offset: usize,
}

impl LinearFactor {
    pub fn coords(&self, a: Elem) -> Vec<u8> {
        let rep = self.classes.iter().find(|c| c.contains(a)).and_then(|&c| c.min()).unwrap_or(a);
        self.iso.map[&rep].clone()
    }

    pub fn class_of_coords(&self, coords: &[u8]) -> Option<ElemSet> {
        let rep = self.iso.inverse(coords)?;
        self.classes.iter().copied().find(|c| c.contains(rep))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub var: usize,
    pub coord: usize,
    pub prime: u8,
}

/// `Σ coeff·x_slot = rhs` over `Z_prime`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equation {
    pub prime: u8,
    pub coeffs: Vec<(usize, u8)>,
    pub rhs: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub slots: Vec<Slot>,
    pub equations: Vec<Equation>,
}

/// A row combination deriving `0 = c` with `c ≠ 0`; `coefficients` is
/// aligned with the system's equations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearCertificate {
    pub prime: u8,
    pub coefficients: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaussOutcome {
    Inconsistent(LinearCertificate),
    AffineBasis { particular: Vec<u8>, basis: Vec<Vec<u8>> },
}

fn inv_mod(a: u8, p: u8) -> u8 {
    (1..p).find(|&x| (a as u32 * x as u32) % p as u32 == 1).expect("nonzero mod prime")
}

fn sub_mod(a: u8, b: u8, p: u8) -> u8 {
    ((a as u32 + p as u32 - b as u32) % p as u32) as u8
}

fn mul_mod(a: u8, b: u8, p: u8) -> u8 {
    (a as u32 * b as u32 % p as u32) as u8
}

/// Reduced row echelon form in place; returns pivot columns. `extra` rows
/// travel along with the row operations.
fn rref(rows: &mut [Vec<u8>], extra: &mut [Vec<u8>], width: usize, p: u8) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut rank = 0;
    for col in 0..width {
        let Some(r) = (rank..rows.len()).find(|&r| rows[r][col] != 0) else { continue };
        rows.swap(rank, r);
        extra.swap(rank, r);
        let inv = inv_mod(rows[rank][col], p);
        for x in rows[rank].iter_mut() {
            *x = mul_mod(*x, inv, p);
        }
        for x in extra[rank].iter_mut() {
            *x = mul_mod(*x, inv, p);
        }
        for r2 in 0..rows.len() {
            if r2 != rank && rows[r2][col] != 0 {
                let f = rows[r2][col];
                for c in 0..rows[r2].len() {
                    rows[r2][c] = sub_mod(rows[r2][c], mul_mod(f, rows[rank][c], p), p);
                }
                for c in 0..extra[r2].len() {
                    extra[r2][c] = sub_mod(extra[r2][c], mul_mod(f, extra[rank][c], p), p);
                }
            }
        }
        pivots.push(col);
        rank += 1;
    }
    pivots
}

/// Gaussian elimination per prime block.
pub fn gaussian_solve(sys: &LinearSystem) -> Result<GaussOutcome> {
    for (k, e) in sys.equations.iter().enumerate() {
        if e.coeffs.iter().any(|&(s, _)| s >= sys.slots.len() || sys.slots[s].prime != e.prime) {
            return Err(Error::Validation(format!("equation {k} mixes primes or names an unknown slot")));
        }
    }
    let mut primes: Vec<u8> = sys.slots.iter().map(|s| s.prime).chain(sys.equations.iter().map(|e| e.prime)).collect();
    primes.sort_unstable();
    primes.dedup();
    let mut particular = vec![0u8; sys.slots.len()];
    let mut basis = Vec::new();
    for &p in &primes {
        let cols: Vec<usize> = (0..sys.slots.len()).filter(|&s| sys.slots[s].prime == p).collect();
        let pos: BTreeMap<usize, usize> = cols.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        let eqs: Vec<usize> = (0..sys.equations.len()).filter(|&k| sys.equations[k].prime == p).collect();
        let w = cols.len();
        let mut rows: Vec<Vec<u8>> = eqs
            .iter()
            .map(|&k| {
                let e = &sys.equations[k];
                let mut row = vec![0u8; w + 1];
                for &(s, c) in &e.coeffs {
                    row[pos[&s]] = (row[pos[&s]] + c % p) % p;
                }
                row[w] = e.rhs % p;
                row
            })
            .collect();
        let mut combos: Vec<Vec<u8>> = eqs
            .iter()
            .map(|&k| {
                let mut c = vec![0u8; sys.equations.len()];
                c[k] = 1;
                c
            })
            .collect();
        let pivots = rref(&mut rows, &mut combos, w, p);
        if let Some(r) = (pivots.len()..rows.len()).find(|&r| rows[r][w] != 0) {
            return Ok(GaussOutcome::Inconsistent(LinearCertificate { prime: p, coefficients: combos[r].clone() }));
        }
        for (r, &c) in pivots.iter().enumerate() {
            particular[cols[c]] = rows[r][w];
        }
        for f in (0..w).filter(|f| !pivots.contains(f)) {
            let mut v = vec![0u8; sys.slots.len()];
            v[cols[f]] = 1;
            for (r, &c) in pivots.iter().enumerate() {
                v[cols[c]] = sub_mod(0, rows[r][f], p);
            }
            basis.push(v);
        }
    }
    Ok(GaussOutcome::AffineBasis { particular, basis })
}

/// Replays a certificate: the combination must cancel every slot and leave a nonzero constant.
pub fn check_certificate(sys: &LinearSystem, cert: &LinearCertificate) -> bool {
    let p = cert.prime;
    if cert.coefficients.len() != sys.equations.len() || p < 2 {
        return false;
    }
    let mut acc = vec![0u8; sys.slots.len()];
    let mut rhs = 0u8;
    for (e, &c) in sys.equations.iter().zip(&cert.coefficients) {
        if c % p == 0 {
            continue;
        }
        if e.prime != p {
            return false;
        }
        for &(s, a) in &e.coeffs {
            acc[s] = (acc[s] + mul_mod(c % p, a % p, p)) % p;
        }
        rhs = (rhs + mul_mod(c % p, e.rhs % p, p)) % p;
    }
    acc.iter().all(|&x| x == 0) && rhs != 0
}

/// Equations over `Z_p` whose solutions are exactly the affine hull of
/// `points`; errors when `points` is not itself affine.
fn affine_equations(points: &[Vec<u8>], width: usize, p: u8) -> Result<Vec<(Vec<u8>, u8)>> {
    let mut pts = points.to_vec();
    pts.sort();
    pts.dedup();
    let Some(s0) = pts.first().cloned() else { return Ok(Vec::new()) };
    let mut diffs: Vec<Vec<u8>> = pts.iter().map(|q| (0..width).map(|c| sub_mod(q[c], s0[c], p)).collect()).collect();
    let mut none: Vec<Vec<u8>> = vec![Vec::new(); diffs.len()];
    let pivots = rref(&mut diffs, &mut none, width, p);
    let rank = pivots.len();
    if (p as u128).pow(rank as u32) != pts.len() as u128 {
        return Err(Error::Internal(format!("{} points over Z_{p} do not form an affine subspace", pts.len())));
    }
    let mut out = Vec::new();
    for f in (0..width).filter(|f| !pivots.contains(f)) {
        let mut w = vec![0u8; width];
        w[f] = 1;
        for (r, &c) in pivots.iter().enumerate() {
            w[c] = sub_mod(0, diffs[r][f], p);
        }
        let rhs = (0..width).fold(0u8, |acc, c| (acc + mul_mod(w[c], s0[c], p)) % p);
        out.push((w, rhs));
    }
    Ok(out)
}

fn quotient_for<'a>(cat: &'a TemplateCatalog, d: ElemSet) -> Result<(BinRel, &'a QuotientAlgebra)> {
    let e = cat.domain(d).ok_or_else(|| Error::Validation(format!("{d:?} is not a subuniverse")))?;
    let q = e.quotient_by(e.cong_lin).ok_or_else(|| Error::Internal(format!("CongLin of {d:?} is not a listed congruence")))?;
    Ok((e.cong_lin, q))
}

/// `Θ_L`: every domain factored by its `CongLin`, coordinatized, and every
/// constraint turned into the equations of the affine subspace it defines.
pub fn linear_system(inst: &Instance, cat: &TemplateCatalog) -> Result<(LinearSystem, Vec<LinearFactor>)> {
    let mut slots = Vec::new();
    let mut factors = Vec::with_capacity(inst.n());
    for v in 0..inst.n() {
        let d = inst.domains[v];
        let (congruence, q) = quotient_for(cat, d)?;
        let iso = is_linear_algebra(&q.algebra)
            .ok_or_else(|| Error::Internal(format!("{d:?}/CongLin is not linear")))?;
        let offset = slots.len();
        for (coord, &prime) in iso.primes.iter().enumerate() {
            slots.push(Slot { var: v, coord, prime });
        }
        factors.push(LinearFactor { var: v, congruence, classes: q.classes.clone(), iso, offset });
    }
    let mut equations = Vec::new();
    for c in &inst.constraints {
        let r = c.rel.restrict(inst.domains[c.i], inst.domains[c.j]);
        let mut vars = vec![c.i];
        if c.j != c.i {
            vars.push(c.j);
        }
        let cols: Vec<usize> =
            vars.iter().flat_map(|&v| (0..factors[v].iso.primes.len()).map(move |k| (v, k))).map(|(v, k)| factors[v].offset + k).collect();
        let tuples: Vec<Vec<u8>> = if c.is_loop() {
            r.diagonal_part().iter().map(|a| factors[c.i].coords(a)).collect()
        } else {
            r.pairs().map(|(a, b)| [factors[c.i].coords(a), factors[c.j].coords(b)].concat()).collect()
        };
        if tuples.is_empty() {
            continue;
        }
        let mut primes: Vec<u8> = cols.iter().map(|&s| slots[s].prime).collect();
        primes.sort_unstable();
        primes.dedup();
        let mut sizes = 1u128;
        let mut distinct = tuples.clone();
        distinct.sort();
        distinct.dedup();
        for &p in &primes {
            let sub: Vec<usize> = (0..cols.len()).filter(|&k| slots[cols[k]].prime == p).collect();
            let proj: Vec<Vec<u8>> = tuples.iter().map(|t| sub.iter().map(|&k| t[k]).collect()).collect();
            let mut uniq = proj.clone();
            uniq.sort();
            uniq.dedup();
            sizes *= uniq.len() as u128;
            for (w, rhs) in affine_equations(&proj, sub.len(), p)? {
                let coeffs: Vec<(usize, u8)> = sub.iter().zip(&w).filter(|(_, &a)| a != 0).map(|(&k, &a)| (cols[k], a)).collect();
                equations.push(Equation { prime: p, coeffs, rhs });
            }
        }
        if sizes != distinct.len() as u128 {
            return Err(Error::Internal(format!("constraint ({},{}) is not a product over its prime blocks", c.i, c.j)));
        }
    }
    Ok((LinearSystem { slots, equations }, factors))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveOutcome {
    Accept(Homomorphism),
    Reject(Trace),
}

impl SolveOutcome {
    pub fn is_accept(&self) -> bool {
        matches!(self, SolveOutcome::Accept(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolveReport {
    pub outcome: SolveOutcome,
    /// One-of-four steps of this run and every class descent below it.
    pub strategy: Strategy,
}

struct Run<'a> {
    cat: &'a TemplateCatalog,
    limits: Limits,
    strategy: Strategy,
    depth: usize,
}

struct Recorder {
    cur: Instance,
    digest: String,
    steps: Vec<TraceStep>,
}

impl Recorder {
    fn new(inst: &Instance) -> Recorder {
        Recorder { cur: inst.clone(), digest: inst.digest(), steps: Vec::new() }
    }

    fn push(&mut self, kind: StepKind, domains: Option<&[ElemSet]>) {
        let before = self.digest.clone();
        if let Some(d) = domains {
            self.cur = reduce(&self.cur, d).expect("same length");
            self.digest = self.cur.digest();
        }
        self.steps.push(TraceStep { before, after: self.digest.clone(), kind });
    }
}

impl<'a> Run<'a> {
    fn solve(&mut self, inst: &Instance) -> Result<std::result::Result<Homomorphism, Trace>> {
        let cap = inst.n() * self.cat.l() + 1;
        if self.depth > cap {
            return Err(Error::Internal(format!("class descent deeper than {cap}")));
        }
        let mut rec = Recorder::new(inst);
        let trace = |rec: Recorder, cat: &TemplateCatalog| Trace::new(&cat.digest, inst, rec.steps);
        loop {
            if let Some(v) = rec.cur.domains.iter().position(|d| d.is_empty()) {
                rec.push(StepKind::EmptyDomain { var: v }, None);
                return Ok(Err(trace(rec, self.cat)));
            }
            if rec.cur.domains.iter().all(|d| d.len() == 1) {
                let h: Homomorphism = rec.cur.domains.iter().map(|&d| d.min().expect("singleton")).collect();
                if rec.cur.is_solution(&h) {
                    return Ok(Ok(h));
                }
            }
            let Some(mv) = next_move(&rec.cur, self.cat)? else {
                if rec.cur.has_empty_domain() {
                    continue;
                }
                return self.linear_phase(rec, inst);
            };
            match mv {
                Move::Propagate(log) => {
                    for d in &log.deletions {
                        let mut dom = rec.cur.domains.clone();
                        dom[d.var].remove(d.value);
                        let c = log_constraint(&rec.cur, d.constraint);
                        rec.push(
                            StepKind::ConsistencyDeletion { var: d.var, value: d.value, constraint: c, round: d.round },
                            Some(&dom),
                        );
                    }
                }
                Move::Cycle(v) => {
                    let (_, rel) = path_relation(&rec.cur, v.var, &v.path).expect("solver path");
                    let mut dom = rec.cur.domains.clone();
                    dom[v.var] = dom[v.var].intersect(rel.diagonal_part());
                    rec.push(StepKind::CycleRepair { var: v.var, path: v.path.clone(), domain: dom[v.var] }, Some(&dom));
                }
                Move::Irreducible(v) => {
                    let mut dom = rec.cur.domains.clone();
                    dom[v.var] = v.projection;
                    let cs = v.constraints.iter().map(|&k| log_constraint(&rec.cur, k)).collect();
                    rec.push(StepKind::IrreducibleRepair { constraints: cs, var: v.var, domain: v.projection }, Some(&dom));
                }
                Move::Weakened { var, domain } => {
                    let mut dom = rec.cur.domains.clone();
                    dom[var] = domain;
                    rec.push(StepKind::WeakenedRepair { var, domain }, Some(&dom));
                }
                Move::OneOfFour { choice, reduction } => {
                    let (min, minimal) = minimize_reduction(&rec.cur, &reduction, self.cat);
                    let before_measure = size_measure(&rec.cur.domains);
                    let after_measure = size_measure(&min.domains);
                    if after_measure >= before_measure && min.respects_equal_domains(&rec.cur) {
                        return Err(Error::Internal("size measure did not decrease under a keyed reduction".into()));
                    }
                    self.strategy.steps.push(StrategyStep { reduction: min.clone(), before: rec.cur.clone(), minimal });
                    let kind = one_of_four_step(&rec.cur, choice, &min.domains);
                    rec.push(kind, Some(&min.domains));
                }
            }
        }
    }

    fn linear_phase(&mut self, mut rec: Recorder, inst: &Instance) -> Result<std::result::Result<Homomorphism, Trace>> {
        let (sys, factors) = linear_system(&rec.cur, self.cat)?;
        match gaussian_solve(&sys)? {
            GaussOutcome::Inconsistent(cert) => {
                rec.push(StepKind::LinearReject { certificate: cert }, None);
                Ok(Err(Trace::new(&self.cat.digest, inst, rec.steps)))
            }
            GaussOutcome::AffineBasis { particular, basis } => {
                let points = enumerate_affine(&sys, &particular, &basis, self.limits.enum_budget)?;
                let mut branches = Vec::with_capacity(points.len());
                for pt in points {
                    let classes = point_classes(&rec.cur, &factors, &pt)?;
                    let sub = reduce(&rec.cur, &classes)?;
                    self.depth += 1;
                    let res = self.solve(&sub)?;
                    self.depth -= 1;
                    match res {
                        Ok(h) => return Ok(Ok(h)),
                        Err(t) => branches.push(crate::witness::ClassBranch { domains: classes, trace: t }),
                    }
                }
                rec.push(StepKind::ClassDescent { branches }, None);
                Ok(Err(Trace::new(&self.cat.digest, inst, rec.steps)))
            }
        }
    }
}

/// The trace step recording a one-of-four reduction of `inst` to `domains`.
pub fn one_of_four_step(inst: &Instance, choice: OneOfFourChoice, domains: &[ElemSet]) -> StepKind {
    StepKind::OneOfFour {
        reduction: choice.kind,
        var: choice.var,
        subuniverse: choice.subuniverse,
        witness: choice.witness,
        domains: domains.to_vec(),
        precondition_digest: inst.digest(),
    }
}

fn log_constraint(inst: &Instance, k: usize) -> (usize, usize) {
    let c = inst.constraints[k];
    (c.i, c.j)
}

/// Every point of an affine space given by a particular solution and a basis.
pub fn enumerate_affine(sys: &LinearSystem, particular: &[u8], basis: &[Vec<u8>], budget: usize) -> Result<Vec<Vec<u8>>> {
    let prime_of = |v: &Vec<u8>| -> u8 {
        v.iter().position(|&x| x != 0).map(|s| sys.slots[s].prime).unwrap_or(2)
    };
    let mut total: u128 = 1;
    for b in basis {
        total = total.saturating_mul(prime_of(b) as u128);
    }
    if total > budget as u128 {
        return Err(Error::Limit(format!("{total} affine points exceed the enumeration budget {budget}")));
    }
    let mut out = vec![particular.to_vec()];
    for b in basis {
        let p = prime_of(b);
        let mut next = Vec::with_capacity(out.len() * p as usize);
        for v in &out {
            for t in 0..p {
                let w: Vec<u8> = v
                    .iter()
                    .enumerate()
                    .map(|(s, &x)| {
                        let q = sys.slots[s].prime;
                        (x + mul_mod(t % q, b[s], q)) % q
                    })
                    .collect();
                next.push(w);
            }
        }
        out = next;
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Domains cut down to the `CongLin` classes named by a point.
pub fn point_classes(inst: &Instance, factors: &[LinearFactor], pt: &[u8]) -> Result<Vec<ElemSet>> {
    factors
        .iter()
        .map(|f| {
            let k = f.iso.primes.len();
            let class = f
                .class_of_coords(&pt[f.offset..f.offset + k])
                .ok_or_else(|| Error::Internal(format!("point has no class for variable {}", f.var)))?;
            Ok(class.intersect(inst.domains[f.var]))
        })
        .collect()
}

/// Runs the solver with explicit limits.
pub fn solve_with(inst: &Instance, cat: &TemplateCatalog, limits: Limits) -> Result<SolveReport> {
    crate::instance::validate_or_err(inst, cat)?;
    if inst.n() > limits.max_vars {
        return Err(Error::Limit(format!("{} variables exceed max_vars = {}", inst.n(), limits.max_vars)));
    }
    if cat.l() > limits.max_domain {
        return Err(Error::Limit(format!("l = {} exceeds max_domain = {}", cat.l(), limits.max_domain)));
    }
    let mut run = Run { cat, limits, strategy: Strategy::default(), depth: 0 };
    let res = run.solve(inst)?;
    run.strategy.minimal = run.strategy.steps.iter().all(|s| s.minimal);
    let outcome = match res {
        Ok(h) => {
            if !inst.is_solution(&h) {
                return Err(Error::Internal(format!("accepted assignment {h:?} is not a solution")));
            }
            SolveOutcome::Accept(h)
        }
        Err(t) => SolveOutcome::Reject(t),
    };
    Ok(SolveReport { outcome, strategy: run.strategy })
}

pub fn solve(inst: &Instance, cat: &TemplateCatalog) -> Result<SolveOutcome> {
    Ok(solve_with(inst, cat, Limits::default())?.outcome)
}

/// Ternary witness term re-check used by trace verification: `T(a,b), T(b,a) ∈ B`
/// for binary terms, every one-off-`B` argument for higher arities.
pub fn term_absorbs(term: &Term, cat: &TemplateCatalog, d: ElemSet, b: ElemSet) -> bool {
    let op = &cat.algebra.op;
    let k = term.arity;
    if k == 0 || !term.well_formed(op.arity) {
        return false;
    }
    let de = d.to_vec();
    let be = b.to_vec();
    for pos in 0..k {
        for &a in &de {
            let mut args = vec![0 as Elem; k];
            let lists: Vec<Vec<Elem>> = (0..k).map(|i| if i == pos { vec![a] } else { be.clone() }).collect();
            for t in crate::algebra::cartesian(&lists) {
                args.copy_from_slice(&t);
                if !b.contains(term.eval(op, &args)) {
                    return false;
                }
            }
        }
    }
    true
}
