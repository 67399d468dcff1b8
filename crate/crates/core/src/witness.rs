//! Rejection traces and their independent verifier, a corruption catalog,
//! the CNF encoding of `¬HOM` for digraphs, and brute-force oracles.

use crate::algebra::Term;
use crate::consistency::{is_1_consistent, is_cycle_consistent, is_irreducible, path_relation, weakened_instance, PathStep};
use crate::instance::{reduce, Homomorphism, Instance, InstanceFile, ReductionKind};
use crate::solver::{
    check_certificate, enumerate_affine, gaussian_solve, has_kind, linear_system, point_classes, term_absorbs,
    GaussOutcome, LinearCertificate,
};
use crate::template::{central_exclusion, TemplateCatalog};
use crate::types::{BinRel, Elem, ElemSet, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;

pub const TRACE_VERSION: u32 = 1;

/// Justification of a one-of-four step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OneOfFourWitness {
    /// Absorbing term (binary for BA, ternary for central).
    Term(Term),
    /// PC congruence whose class contains the subuniverse.
    Congruence(BinRel),
}

/// One branch of a class descent: the domains cut to one point's classes
/// and the rejection of that subinstance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBranch {
    pub domains: Vec<ElemSet>,
    pub trace: Trace,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum StepKind {
    ConsistencyDeletion { var: usize, value: Elem, constraint: (usize, usize), round: usize },
    CycleRepair { var: usize, path: Vec<PathStep>, domain: ElemSet },
    IrreducibleRepair { constraints: Vec<(usize, usize)>, var: usize, domain: ElemSet },
    WeakenedRepair { var: usize, domain: ElemSet },
    OneOfFour {
        reduction: ReductionKind,
        var: usize,
        subuniverse: ElemSet,
        witness: OneOfFourWitness,
        domains: Vec<ElemSet>,
        precondition_digest: String,
    },
    LinearReject { certificate: LinearCertificate },
    ClassDescent { branches: Vec<ClassBranch> },
    EmptyDomain { var: usize },
}

impl StepKind {
    pub fn is_terminal(&self) -> bool {
        matches!(self, StepKind::LinearReject { .. } | StepKind::ClassDescent { .. } | StepKind::EmptyDomain { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            StepKind::ConsistencyDeletion { .. } => "ConsistencyDeletion",
            StepKind::CycleRepair { .. } => "CycleRepair",
            StepKind::IrreducibleRepair { .. } => "IrreducibleRepair",
            StepKind::WeakenedRepair { .. } => "WeakenedRepair",
            StepKind::OneOfFour { .. } => "OneOfFour",
            StepKind::LinearReject { .. } => "LinearReject",
            StepKind::ClassDescent { .. } => "ClassDescent",
            StepKind::EmptyDomain { .. } => "EmptyDomain",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub before: String,
    pub after: String,
    #[serde(flatten)]
    pub kind: StepKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub version: u32,
    pub template_digest: String,
    pub initial: InstanceFile,
    pub steps: Vec<TraceStep>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Header { version: u32, template_digest: String, initial: InstanceFile },
    Step {
        index: usize,
        #[serde(flatten)]
        step: TraceStep,
    },
}

impl Trace {
    pub fn new(template_digest: &str, initial: &Instance, steps: Vec<TraceStep>) -> Trace {
        Trace {
            version: TRACE_VERSION,
            template_digest: template_digest.to_string(),
            initial: InstanceFile::from_instance(initial, None),
            steps,
        }
    }

    /// Header record followed by one record per step.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let header =
            Record::Header { version: self.version, template_digest: self.template_digest.clone(), initial: self.initial.clone() };
        out.push_str(&serde_json::to_string(&header).expect("serializable"));
        out.push('\n');
        for (index, step) in self.steps.iter().enumerate() {
            out.push_str(&serde_json::to_string(&Record::Step { index, step: step.clone() }).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Trace> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| Error::Parse("empty trace".into()))?;
        let Record::Header { version, template_digest, initial } =
            serde_json::from_str(first).map_err(|e| Error::Parse(format!("header: {e}")))?
        else {
            return Err(Error::Parse("first record is not a header".into()));
        };
        if version != TRACE_VERSION {
            return Err(Error::Parse(format!("unsupported trace version {version}")));
        }
        let mut steps = Vec::new();
        for (k, line) in lines.enumerate() {
            match serde_json::from_str(line).map_err(|e| Error::Parse(format!("record {}: {e}", k + 1)))? {
                Record::Step { index, step } if index == k => steps.push(step),
                Record::Step { index, .. } => return Err(Error::Parse(format!("step {index} found at position {k}"))),
                Record::Header { .. } => return Err(Error::Parse("second header".into())),
            }
        }
        Ok(Trace { version, template_digest, initial, steps })
    }

    /// Number of steps, nested descents included.
    pub fn total_steps(&self) -> usize {
        self.steps
            .iter()
            .map(|s| match &s.kind {
                StepKind::ClassDescent { branches } => 1 + branches.iter().map(|b| b.trace.total_steps()).sum::<usize>(),
                _ => 1,
            })
            .sum()
    }
}

/// Where and why verification failed; `path` lists step indices through nested descents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceFailure {
    pub path: Vec<usize>,
    pub reason: String,
}

impl std::fmt::Display for TraceFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p: Vec<String> = self.path.iter().map(|k| k.to_string()).collect();
        write!(f, "step {}: {}", p.join("/"), self.reason)
    }
}

fn constraint_index(inst: &Instance, c: (usize, usize)) -> Option<usize> {
    inst.constraints.iter().position(|d| (d.i, d.j) == c)
}

/// Values of `v` that extend to a solution, by plain search.
fn brute_projection(inst: &Instance, v: usize) -> Result<ElemSet> {
    let mut out = ElemSet::EMPTY;
    for a in inst.domains[v].iter() {
        let mut pinned = inst.clone();
        pinned.domains[v] = ElemSet::singleton(a);
        if brute_force_hom(&pinned, ORACLE_CAP)?.is_some() {
            out.insert(a);
        }
    }
    Ok(out)
}

fn sub_instance(inst: &Instance, ks: &[usize]) -> (Instance, Vec<usize>) {
    let vars: Vec<usize> =
        ks.iter().flat_map(|&k| [inst.constraints[k].i, inst.constraints[k].j]).collect::<BTreeSet<_>>().into_iter().collect();
    let pos = |x: usize| vars.binary_search(&x).expect("listed");
    let constraints =
        ks.iter().map(|&k| inst.constraints[k]).map(|c| crate::instance::Constraint { i: pos(c.i), j: pos(c.j), rel: c.rel }).collect();
    let sub = Instance::with_labels(vars.iter().map(|&x| inst.labels[x]).collect(), vars.iter().map(|&x| inst.domains[x]).collect(), constraints)
        .expect("indices in range");
    (sub, vars)
}

/// Checks one step's justification against `cur`; returns the resulting
/// domains, or `None` for a terminal step. Class descents are checked by
/// [`verify_trace`] only.
pub fn verify_step(cur: &Instance, kind: &StepKind, cat: &TemplateCatalog) -> std::result::Result<Option<Vec<ElemSet>>, TraceFailure> {
    check_step(cur, kind, cat, &[])
}

fn check_step(cur: &Instance, kind: &StepKind, cat: &TemplateCatalog, path: &[usize]) -> std::result::Result<Option<Vec<ElemSet>>, TraceFailure> {
    let fail = |reason: String| Err(TraceFailure { path: path.to_vec(), reason });
    let n = cur.n();
    match kind {
        StepKind::ConsistencyDeletion { var, value, constraint, .. } => {
            if *var >= n || !cur.domains[*var].contains(*value) {
                return fail(format!("deleted value {value} is not in the domain of variable {var}"));
            }
            let Some(k) = constraint_index(cur, *constraint) else { return fail(format!("no constraint {constraint:?}")) };
            let c = cur.constraints[k];
            if !c.touches(*var) {
                return fail(format!("constraint {constraint:?} does not involve variable {var}"));
            }
            if c.support(*var, &cur.domains).contains(*value) {
                return fail(format!("value {value} of variable {var} is still supported by {constraint:?}"));
            }
            let mut d = cur.domains.clone();
            d[*var].remove(*value);
            Ok(Some(d))
        }
        StepKind::CycleRepair { var, path: p, domain } => {
            if *var >= n || p.is_empty() {
                return fail("cycle repair needs a variable and a nonempty path".into());
            }
            match path_relation(cur, *var, p) {
                Some((end, rel)) if end == *var => {
                    let expect = cur.domains[*var].intersect(rel.diagonal_part());
                    if expect != *domain {
                        return fail(format!("closed path allows {expect:?}, step claims {domain:?}"));
                    }
                }
                _ => return fail("path is not a closed walk from the variable".into()),
            }
            let mut d = cur.domains.clone();
            d[*var] = *domain;
            Ok(Some(d))
        }
        StepKind::IrreducibleRepair { constraints, var, domain } => {
            let mut ks = Vec::new();
            for c in constraints {
                match constraint_index(cur, *c) {
                    Some(k) => ks.push(k),
                    None => return fail(format!("no constraint {c:?}")),
                }
            }
            let (sub, vars) = sub_instance(cur, &ks);
            let Ok(pos) = vars.binary_search(var) else { return fail(format!("variable {var} is not in the constraint set")) };
            let proj = brute_projection(&sub, pos).map_err(|e| TraceFailure { path: path.to_vec(), reason: e.to_string() })?;
            if proj != *domain {
                return fail(format!("subinstance projection is {proj:?}, step claims {domain:?}"));
            }
            let mut d = cur.domains.clone();
            d[*var] = *domain;
            Ok(Some(d))
        }
        StepKind::WeakenedRepair { var, domain } => {
            if *var >= n {
                return fail(format!("no variable {var}"));
            }
            let w = weakened_instance(cur, cat);
            let proj = brute_projection(&w, *var).map_err(|e| TraceFailure { path: path.to_vec(), reason: e.to_string() })?;
            if proj != *domain {
                return fail(format!("weakened projection is {proj:?}, step claims {domain:?}"));
            }
            let mut d = cur.domains.clone();
            d[*var] = *domain;
            Ok(Some(d))
        }
        StepKind::OneOfFour { reduction, var, subuniverse, witness, domains, precondition_digest } => {
            if *precondition_digest != cur.digest() {
                return fail("precondition digest does not name the current instance".into());
            }
            if *var >= n || domains.len() != n {
                return fail("malformed one-of-four step".into());
            }
            if !is_1_consistent(cur) {
                return fail("instance is not 1-consistent".into());
            }
            if !is_cycle_consistent(cur) {
                return fail("instance is not cycle-consistent".into());
            }
            match is_irreducible(cur) {
                Ok(true) => {}
                Ok(false) => return fail("instance is not irreducible".into()),
                Err(e) => return fail(e.to_string()),
            }
            let d = cur.domains[*var];
            let b = *subuniverse;
            if b.is_empty() || b == d || !b.is_subset(d) || !cat.domain(d).is_some_and(|e| e.subuniverses.contains(&b)) {
                return fail(format!("{b:?} is not a nontrivial subuniverse of {d:?}"));
            }
            let sub = cat.algebra.restrict(d);
            match (reduction, witness) {
                (ReductionKind::BinaryAbsorbing, OneOfFourWitness::Term(t)) => {
                    if t.arity != 2 || !term_absorbs(t, cat, d, b) {
                        return fail(format!("term does not binary-absorb {d:?} into {b:?}"));
                    }
                }
                (ReductionKind::Central, OneOfFourWitness::Term(t)) => {
                    if !term_absorbs(t, cat, d, b) {
                        return fail(format!("term does not absorb {d:?} into {b:?}"));
                    }
                    if !central_exclusion(b, &sub).0 {
                        return fail(format!("{b:?} fails the central exclusion in {d:?}"));
                    }
                }
                (ReductionKind::Pc, OneOfFourWitness::Congruence(sigma)) => {
                    let e = cat.domain(d).expect("checked");
                    if !e.pc_congruences.contains(sigma) || !BinRel::product(b, b).is_subset(*sigma) {
                        return fail(format!("{b:?} is not inside a class of a PC congruence of {d:?}"));
                    }
                    if cur.domains.iter().any(|&x| cat.domain(x).is_some_and(|e| e.has_ba() || e.has_central())) {
                        return fail("PC reduction while some domain has a BA or central subuniverse".into());
                    }
                }
                _ => return fail(format!("{reduction:?} with a mismatched witness")),
            }
            if !has_kind(cat, d, b, reduction) {
                return fail(format!("catalog does not list {b:?} as {reduction:?} in {d:?}"));
            }
            for (y, (&r, &e)) in domains.iter().zip(&cur.domains).enumerate() {
                if r.is_empty() || !r.is_subset(e) || !has_kind(cat, e, r, reduction) {
                    return fail(format!("component {y} = {r:?} is not a {reduction:?} subuniverse of {e:?}"));
                }
            }
            if !domains[*var].is_subset(b) {
                return fail("reduced domain leaves the chosen subuniverse".into());
            }
            let after = reduce(cur, domains).expect("same length");
            if !is_1_consistent(&after) {
                return fail("reduction is not 1-consistent".into());
            }
            Ok(Some(domains.clone()))
        }
        StepKind::EmptyDomain { var } => {
            if *var >= n || !cur.domains[*var].is_empty() {
                return fail(format!("domain of variable {var} is not empty"));
            }
            Ok(None)
        }
        StepKind::LinearReject { certificate } => {
            let (sys, _) = linear_system(cur, cat).map_err(|e| TraceFailure { path: path.to_vec(), reason: e.to_string() })?;
            if !check_certificate(&sys, certificate) {
                return fail("certificate does not derive 0 = c ≠ 0".into());
            }
            Ok(None)
        }
        StepKind::ClassDescent { .. } => Ok(None),
    }
}

fn verify_at(trace: &Trace, cat: &TemplateCatalog, prefix: &[usize]) -> std::result::Result<(), TraceFailure> {
    let at = |k: usize| {
        let mut p = prefix.to_vec();
        p.push(k);
        p
    };
    let fail = |path: Vec<usize>, reason: String| Err(TraceFailure { path, reason });
    if trace.template_digest != cat.digest {
        return fail(prefix.to_vec(), "template digest mismatch".into());
    }
    let mut cur = match trace.initial.to_instance(None) {
        Ok(i) => i,
        Err(e) => return fail(prefix.to_vec(), format!("initial instance: {e}")),
    };
    if trace.steps.is_empty() {
        return fail(prefix.to_vec(), "trace has no steps".into());
    }
    for (k, step) in trace.steps.iter().enumerate() {
        let path = at(k);
        if step.before != cur.digest() {
            return fail(path, "before-digest does not match the current instance".into());
        }
        if step.kind.is_terminal() != (k + 1 == trace.steps.len()) {
            return fail(path, format!("{} step out of place", step.kind.name()));
        }
        if let StepKind::ClassDescent { branches } = &step.kind {
            let (sys, factors) = linear_system(&cur, cat).map_err(|e| TraceFailure { path: path.clone(), reason: e.to_string() })?;
            let expected: BTreeSet<Vec<ElemSet>> = match gaussian_solve(&sys) {
                Ok(GaussOutcome::AffineBasis { particular, basis }) => {
                    let pts = enumerate_affine(&sys, &particular, &basis, usize::MAX)
                        .map_err(|e| TraceFailure { path: path.clone(), reason: e.to_string() })?;
                    let mut s = BTreeSet::new();
                    for p in pts {
                        s.insert(point_classes(&cur, &factors, &p).map_err(|e| TraceFailure { path: path.clone(), reason: e.to_string() })?);
                    }
                    s
                }
                Ok(GaussOutcome::Inconsistent(_)) => BTreeSet::new(),
                Err(e) => return fail(path, e.to_string()),
            };
            let tried: BTreeSet<Vec<ElemSet>> = branches.iter().map(|b| b.domains.clone()).collect();
            if tried != expected || tried.len() != branches.len() {
                return fail(path, "branches are not exactly the classes of the linear solution space".into());
            }
            for (bi, b) in branches.iter().enumerate() {
                let sub = reduce(&cur, &b.domains).expect("same length");
                let mut bpath = path.clone();
                bpath.push(bi);
                if b.trace.initial != InstanceFile::from_instance(&sub, None) {
                    return fail(bpath, "branch does not start from the class-restricted instance".into());
                }
                verify_at(&b.trace, cat, &bpath)?;
            }
        } else if let Some(d) = check_step(&cur, &step.kind, cat, &path)? {
            cur = reduce(&cur, &d).expect("same length");
        }
        if step.after != cur.digest() {
            return fail(path, "after-digest does not match the resulting instance".into());
        }
    }
    Ok(())
}

/// Replays every step from the initial instance without trusting the solver.
pub fn verify_trace(trace: &Trace, cat: &TemplateCatalog) -> std::result::Result<(), TraceFailure> {
    verify_at(trace, cat, &[])
}

/// Single-step corruptions used to test the verifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corruption {
    /// A deletion now names a value that still has support (digests re-chained).
    ValueResurrection,
    /// A one-of-four witness term replaced by the first projection.
    WitnessTermSwap,
    /// A certificate coefficient changed so the combination no longer refutes.
    CertificateChange,
    /// One after-digest altered.
    DigestBreak,
    /// The first two steps swapped.
    StepReorder,
    /// The final step replaced by an empty-domain claim on a nonempty domain.
    FalseEmptyDomain,
}

pub const CORRUPTIONS: [Corruption; 6] = [
    Corruption::ValueResurrection,
    Corruption::WitnessTermSwap,
    Corruption::CertificateChange,
    Corruption::DigestBreak,
    Corruption::StepReorder,
    Corruption::FalseEmptyDomain,
];

fn step_domains(cur: &Instance, kind: &StepKind) -> Option<Vec<ElemSet>> {
    let mut d = cur.domains.clone();
    match kind {
        StepKind::ConsistencyDeletion { var, value, .. } => d[*var].remove(*value),
        StepKind::CycleRepair { var, domain, .. }
        | StepKind::IrreducibleRepair { var, domain, .. }
        | StepKind::WeakenedRepair { var, domain } => d[*var] = *domain,
        StepKind::OneOfFour { domains, .. } => return Some(domains.clone()),
        _ => return None,
    }
    Some(d)
}

/// Instances before each step, replayed without checks.
fn states(trace: &Trace) -> Vec<Instance> {
    let mut cur = trace.initial.to_instance(None).expect("well-formed trace");
    let mut out = Vec::with_capacity(trace.steps.len());
    for s in &trace.steps {
        out.push(cur.clone());
        if let Some(d) = step_domains(&cur, &s.kind) {
            cur = reduce(&cur, &d).expect("same length");
        }
    }
    out
}

/// Recomputes digests from step `from` on, replaying domain effects.
fn rechain(trace: &mut Trace, from: usize) {
    let st = states(trace);
    let mut cur = st[from].clone();
    for s in trace.steps[from..].iter_mut() {
        s.before = cur.digest();
        if let Some(d) = step_domains(&cur, &s.kind) {
            cur = reduce(&cur, &d).expect("same length");
        }
        if let StepKind::OneOfFour { precondition_digest, .. } = &mut s.kind {
            *precondition_digest = s.before.clone();
        }
        s.after = cur.digest();
    }
}

fn corrupt_here(trace: &Trace, cat: &TemplateCatalog, c: Corruption) -> Option<Trace> {
    let mut t = trace.clone();
    match c {
        Corruption::ValueResurrection => {
            let st = states(trace);
            for (k, s) in trace.steps.iter().enumerate() {
                let StepKind::ConsistencyDeletion { var, constraint, .. } = s.kind else { continue };
                let cur = &st[k];
                let Some(ci) = constraint_index(cur, constraint) else { continue };
                let sup = cur.constraints[ci].support(var, &cur.domains);
                if let Some(a) = sup.iter().next() {
                    if let StepKind::ConsistencyDeletion { value, .. } = &mut t.steps[k].kind {
                        *value = a;
                    }
                    rechain(&mut t, k);
                    return Some(t);
                }
            }
            None
        }
        Corruption::WitnessTermSwap => {
            for s in t.steps.iter_mut() {
                if let StepKind::OneOfFour { witness: OneOfFourWitness::Term(term), .. } = &mut s.kind {
                    *term = Term::projection(term.arity, 0);
                    return Some(t);
                }
            }
            None
        }
        Corruption::CertificateChange => {
            let st = states(trace);
            for (k, s) in trace.steps.iter().enumerate() {
                let StepKind::LinearReject { certificate } = &s.kind else { continue };
                let p = certificate.prime;
                let (sys, _) = linear_system(&st[k], cat).ok()?;
                for r in 0..certificate.coefficients.len() {
                    let mut changed = certificate.clone();
                    changed.coefficients[r] = (changed.coefficients[r] + 1) % p;
                    if !check_certificate(&sys, &changed) {
                        t.steps[k].kind = StepKind::LinearReject { certificate: changed };
                        return Some(t);
                    }
                }
            }
            None
        }
        Corruption::DigestBreak => {
            let s = t.steps.first_mut()?;
            let last = s.after.pop()?;
            s.after.push(if last == '0' { '1' } else { '0' });
            Some(t)
        }
        Corruption::StepReorder => {
            if t.steps.len() < 2 {
                return None;
            }
            t.steps.swap(0, 1);
            Some(t)
        }
        Corruption::FalseEmptyDomain => {
            let st = states(trace);
            let k = t.steps.len() - 1;
            let v = st[k].domains.iter().position(|d| !d.is_empty())?;
            t.steps[k].kind = StepKind::EmptyDomain { var: v };
            let d = st[k].digest();
            t.steps[k].before = d.clone();
            t.steps[k].after = d;
            Some(t)
        }
    }
}

/// Applies a corruption at its first applicable place, descending into
/// class-descent branches when the top level has none.
pub fn corrupt(trace: &Trace, cat: &TemplateCatalog, c: Corruption) -> Option<Trace> {
    if let Some(t) = corrupt_here(trace, cat, c) {
        return Some(t);
    }
    let last = trace.steps.last()?;
    let StepKind::ClassDescent { branches } = &last.kind else { return None };
    for (bi, b) in branches.iter().enumerate() {
        if let Some(sub) = corrupt(&b.trace, cat, c) {
            let mut t = trace.clone();
            if let Some(StepKind::ClassDescent { branches }) = t.steps.last_mut().map(|s| &mut s.kind) {
                branches[bi].trace = sub;
            }
            return Some(t);
        }
    }
    None
}

/// Default bound on search nodes for the brute-force oracle.
pub const ORACLE_CAP: usize = 50_000_000;

/// Plain backtracking in variable order, checking constraints between
/// assigned variables only. No propagation, no algebra.
pub fn brute_force_hom(inst: &Instance, cap: usize) -> Result<Option<Homomorphism>> {
    let n = inst.n();
    let mut back: Vec<Vec<(usize, BinRel, bool)>> = vec![Vec::new(); n];
    for c in &inst.constraints {
        let later = c.i.max(c.j);
        back[later].push((c.i.min(c.j), c.rel, c.i <= c.j));
    }
    let doms: Vec<Vec<Elem>> = inst.domains.iter().map(|d| d.to_vec()).collect();
    let mut h = vec![0 as Elem; n];
    let mut nodes = 0usize;
    fn rec(
        v: usize,
        h: &mut Vec<Elem>,
        doms: &[Vec<Elem>],
        back: &[Vec<(usize, BinRel, bool)>],
        nodes: &mut usize,
        cap: usize,
    ) -> Result<bool> {
        if v == h.len() {
            return Ok(true);
        }
        for &a in &doms[v] {
            *nodes += 1;
            if *nodes > cap {
                return Err(Error::Limit(format!("brute-force search exceeded {cap} nodes")));
            }
            h[v] = a;
            let ok = back[v].iter().all(|&(u, r, forward)| {
                if u == v {
                    r.contains(a, a)
                } else if forward {
                    r.contains(h[u], a)
                } else {
                    r.contains(a, h[u])
                }
            });
            if ok && rec(v + 1, h, doms, back, nodes, cap)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
    Ok(rec(0, &mut h, &doms, &back, &mut nodes, cap)?.then_some(h))
}

/// A finite digraph on `0..n`, loops allowed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Digraph {
    pub n: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

impl Digraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Digraph {
        Digraph { n, edges: edges.into_iter().collect() }
    }

    /// `HOM(X, A)` as an instance: every domain is `V_A`, every edge of `X` carries `E_A`.
    pub fn hom_instance(x: &Digraph, a: &Digraph) -> Result<Instance> {
        if a.n > crate::MAX_L {
            return Err(Error::Limit(format!("target with {} vertices exceeds {}", a.n, crate::MAX_L)));
        }
        let rel = BinRel::from_pairs(a.edges.iter().map(|&(u, v)| (u as Elem, v as Elem)));
        let constraints = x.edges.iter().map(|&(i, j)| crate::instance::Constraint { i, j, rel }).collect();
        Instance::new(vec![ElemSet::full(a.n); x.n], constraints)
    }
}

/// A CNF formula; `var_map[k]` is the `(i, j)` behind DIMACS variable `k+1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnfFormula {
    pub num_vars: usize,
    pub var_map: Vec<(usize, usize)>,
    pub clauses: Vec<Vec<i32>>,
}

impl CnfFormula {
    pub fn to_dimacs(&self) -> String {
        let mut out = String::from("c varmap");
        for (k, (i, j)) in self.var_map.iter().enumerate() {
            let _ = write!(out, " {}={},{}", k + 1, i, j);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "p cnf {} {}", self.num_vars, self.clauses.len());
        for c in &self.clauses {
            for l in c {
                let _ = write!(out, "{l} ");
            }
            let _ = writeln!(out, "0");
        }
        out
    }

    pub fn from_dimacs(text: &str) -> Result<CnfFormula> {
        let mut num_vars = None;
        let mut clauses = Vec::new();
        let mut var_map = Vec::new();
        let mut cur = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("c varmap") {
                for item in rest.split_whitespace() {
                    let (_, ij) = item.split_once('=').ok_or_else(|| Error::Parse(format!("bad map entry {item}")))?;
                    let (i, j) = ij.split_once(',').ok_or_else(|| Error::Parse(format!("bad map entry {item}")))?;
                    var_map.push((i.parse().map_err(|_| Error::Parse(item.into()))?, j.parse().map_err(|_| Error::Parse(item.into()))?));
                }
                continue;
            }
            if line.is_empty() || line.starts_with('c') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("p cnf") {
                let v: Vec<usize> = rest.split_whitespace().map(|s| s.parse().map_err(|_| Error::Parse(line.into()))).collect::<Result<_>>()?;
                num_vars = v.first().copied();
                continue;
            }
            for tok in line.split_whitespace() {
                let l: i32 = tok.parse().map_err(|_| Error::Parse(format!("bad literal {tok}")))?;
                if l == 0 {
                    clauses.push(std::mem::take(&mut cur));
                } else {
                    cur.push(l);
                }
            }
        }
        let num_vars = num_vars.ok_or_else(|| Error::Parse("missing problem line".into()))?;
        Ok(CnfFormula { num_vars, var_map, clauses })
    }
}

/// The clauses of `¬HOM(X, A)`: one at-least-one clause per vertex of `X`,
/// at-most-one clauses per vertex and pair of targets, and one clause per
/// edge of `X` and non-edge of `A`; `p_ij = i·|V_A| + j + 1`.
pub fn encode_cnf(x: &Digraph, a: &Digraph) -> CnfFormula {
    let m = a.n;
    let p = |i: usize, j: usize| (i * m + j + 1) as i32;
    let mut clauses = Vec::new();
    for i in 0..x.n {
        clauses.push((0..m).map(|j| p(i, j)).collect());
    }
    for i in 0..x.n {
        for j1 in 0..m {
            for j2 in j1 + 1..m {
                clauses.push(vec![-p(i, j1), -p(i, j2)]);
            }
        }
    }
    for &(i1, i2) in &x.edges {
        for j1 in 0..m {
            for j2 in 0..m {
                if !a.edges.contains(&(j1, j2)) {
                    clauses.push(vec![-p(i1, j1), -p(i2, j2)]);
                }
            }
        }
    }
    let var_map = (0..x.n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    CnfFormula { num_vars: x.n * m, var_map, clauses }
}

/// Largest formula [`cnf_satisfiable`] accepts.
pub const CNF_MAX_VARS: usize = 24;

/// Satisfiability by enumerating assignments in variable order, abandoning a
/// partial assignment once some fully assigned clause is false.
pub fn cnf_satisfiable(f: &CnfFormula) -> Result<bool> {
    if f.num_vars > CNF_MAX_VARS {
        return Err(Error::Limit(format!("{} variables exceed {CNF_MAX_VARS}", f.num_vars)));
    }
    if f.clauses.iter().any(|c| c.is_empty()) {
        return Ok(false);
    }
    let mut by_last: Vec<Vec<usize>> = vec![Vec::new(); f.num_vars + 1];
    for (k, c) in f.clauses.iter().enumerate() {
        let last = c.iter().map(|l| l.unsigned_abs() as usize).max().expect("nonempty");
        if last > f.num_vars {
            return Err(Error::Validation(format!("literal {last} exceeds {} variables", f.num_vars)));
        }
        by_last[last].push(k);
    }
    let mut val = vec![false; f.num_vars + 1];
    fn rec(v: usize, f: &CnfFormula, by_last: &[Vec<usize>], val: &mut Vec<bool>) -> bool {
        if v > f.num_vars {
            return true;
        }
        for b in [false, true] {
            val[v] = b;
            let ok = by_last[v]
                .iter()
                .all(|&k| f.clauses[k].iter().any(|&l| val[l.unsigned_abs() as usize] == (l > 0)));
            if ok && rec(v + 1, f, by_last, val) {
                return true;
            }
        }
        false
    }
    Ok(rec(1, f, &by_last, &mut val))
}
