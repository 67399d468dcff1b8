//! CSP instances with per-variable domains and binary constraints, their
//! transformations, structural relations and explicit solution sets.

use crate::template::TemplateCatalog;
use crate::types::{BinRel, Elem, ElemSet, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};

/// A binary constraint `E^{ij}`; `i == j` is a loop, read as a unary
/// constraint through its diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Constraint {
    pub i: usize,
    pub j: usize,
    pub rel: BinRel,
}

impl Constraint {
    pub fn is_loop(&self) -> bool {
        self.i == self.j
    }

    pub fn touches(&self, v: usize) -> bool {
        self.i == v || self.j == v
    }

    /// Values of `v` supported by this constraint inside `domains`.
    pub fn support(&self, v: usize, domains: &[ElemSet]) -> ElemSet {
        let r = self.rel.restrict(domains[self.i], domains[self.j]);
        if self.is_loop() {
            return r.diagonal_part();
        }
        if v == self.i {
            r.first_projection()
        } else {
            r.second_projection()
        }
    }
}

/// `Θ = (𝒳, 𝒜̈)`: variables `0..n`, labels, domains and constraints sorted by
/// `(i, j)` with at most one constraint per ordered pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub labels: Vec<u32>,
    pub domains: Vec<ElemSet>,
    pub constraints: Vec<Constraint>,
}

pub type Homomorphism = Vec<Elem>;

impl Instance {
    /// Builds an instance with labels `0..n`; duplicate ordered pairs are intersected.
    pub fn new(domains: Vec<ElemSet>, constraints: Vec<Constraint>) -> Result<Instance> {
        let n = domains.len();
        let labels = (0..n as u32).collect();
        Instance::with_labels(labels, domains, constraints)
    }

    pub fn with_labels(labels: Vec<u32>, domains: Vec<ElemSet>, constraints: Vec<Constraint>) -> Result<Instance> {
        let n = domains.len();
        if labels.len() != n {
            return Err(Error::Validation(format!("{} labels for {n} variables", labels.len())));
        }
        let mut merged: BTreeMap<(usize, usize), BinRel> = BTreeMap::new();
        for c in constraints {
            if c.i >= n || c.j >= n {
                return Err(Error::Validation(format!("constraint ({},{}) refers past {n} variables", c.i, c.j)));
            }
            merged.entry((c.i, c.j)).and_modify(|r| *r = r.intersect(c.rel)).or_insert(c.rel);
        }
        let constraints = merged.into_iter().map(|((i, j), rel)| Constraint { i, j, rel }).collect();
        Ok(Instance { labels, domains, constraints })
    }

    pub fn n(&self) -> usize {
        self.domains.len()
    }

    pub fn constraint(&self, i: usize, j: usize) -> Option<&Constraint> {
        self.constraints.binary_search_by(|c| (c.i, c.j).cmp(&(i, j))).ok().map(|k| &self.constraints[k])
    }

    pub fn incident(&self, v: usize) -> impl Iterator<Item = (usize, &Constraint)> + '_ {
        self.constraints.iter().enumerate().filter(move |(_, c)| c.touches(v))
    }

    pub fn has_empty_domain(&self) -> bool {
        self.domains.iter().any(|d| d.is_empty())
    }

    pub fn is_solution(&self, h: &[Elem]) -> bool {
        h.len() == self.n()
            && h.iter().zip(&self.domains).all(|(&a, d)| d.contains(a))
            && self.constraints.iter().all(|c| c.rel.contains(h[c.i], h[c.j]))
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Canonical JSON form, also the input to [`Instance::digest`].
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&InstanceFile::from_instance(self, None)).expect("serializable")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Variables reachable from `v` along non-loop constraints.
    pub fn component_of(&self, v: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([v]);
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            for (_, c) in self.incident(x) {
                let y = if c.i == x { c.j } else { c.i };
                if seen.insert(y) {
                    stack.push(y);
                }
            }
        }
        seen
    }

    /// Connected components of the constraint graph, each sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n()];
        let mut out = Vec::new();
        for v in 0..self.n() {
            if !seen[v] {
                let comp: Vec<usize> = self.component_of(v).into_iter().collect();
                for &x in &comp {
                    seen[x] = true;
                }
                out.push(comp);
            }
        }
        out
    }

    /// The subinstance on `vars` (renumbered in order) with every constraint inside it.
    pub fn induced(&self, vars: &[usize]) -> Instance {
        let pos: BTreeMap<usize, usize> = vars.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let constraints = self
            .constraints
            .iter()
            .filter_map(|c| Some(Constraint { i: *pos.get(&c.i)?, j: *pos.get(&c.j)?, rel: c.rel }))
            .collect();
        Instance {
            labels: vars.iter().map(|&v| self.labels[v]).collect(),
            domains: vars.iter().map(|&v| self.domains[v]).collect(),
            constraints,
        }
    }
}

/// One problem found by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    DomainNotSubuniverse { var: usize, domain: ElemSet },
    RelationNotInvariant { i: usize, j: usize },
    RelationOutsideDomains { i: usize, j: usize },
    LabelCollision { label: u32 },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::DomainNotSubuniverse { var, domain } => write!(f, "domain {domain:?} of variable {var} is not in Γ¹"),
            Diagnostic::RelationNotInvariant { i, j } => write!(f, "constraint ({i},{j}) is not in Γ²"),
            Diagnostic::RelationOutsideDomains { i, j } => write!(f, "constraint ({i},{j}) leaves D_i × D_j"),
            Diagnostic::LabelCollision { label } => write!(f, "label {label} used twice"),
        }
    }
}

/// Checks the instance shape against the catalog; an empty list means valid.
pub fn validate(inst: &Instance, cat: &TemplateCatalog) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for (var, &domain) in inst.domains.iter().enumerate() {
        if domain.is_empty() || !cat.is_subuniverse(domain) {
            out.push(Diagnostic::DomainNotSubuniverse { var, domain });
        }
    }
    for c in &inst.constraints {
        if !c.rel.is_subset(BinRel::product(inst.domains[c.i], inst.domains[c.j])) {
            out.push(Diagnostic::RelationOutsideDomains { i: c.i, j: c.j });
        }
        if !cat.is_invariant(c.rel) {
            out.push(Diagnostic::RelationNotInvariant { i: c.i, j: c.j });
        }
    }
    let mut seen = BTreeSet::new();
    for &label in &inst.labels {
        if !seen.insert(label) {
            out.push(Diagnostic::LabelCollision { label });
        }
    }
    out
}

pub fn validate_or_err(inst: &Instance, cat: &TemplateCatalog) -> Result<()> {
    let diags = validate(inst, cat);
    if diags.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")))
    }
}

/// The edgeless instance on the given domains.
pub fn null_instance(domains: &[ElemSet]) -> Instance {
    Instance { labels: (0..domains.len() as u32).collect(), domains: domains.to_vec(), constraints: Vec::new() }
}

/// `Θ^(⊥)`: domains replaced, constraints cut down to the new domains.
pub fn reduce(inst: &Instance, red: &[ElemSet]) -> Result<Instance> {
    if red.len() != inst.n() {
        return Err(Error::Validation(format!("reduction has {} components for {} variables", red.len(), inst.n())));
    }
    let constraints = inst
        .constraints
        .iter()
        .map(|c| Constraint { rel: c.rel.restrict(red[c.i], red[c.j]), ..*c })
        .collect();
    Ok(Instance { labels: inst.labels.clone(), domains: red.to_vec(), constraints })
}

/// Like [`reduce`] but also checks every component against the catalog.
pub fn reduce_checked(inst: &Instance, red: &[ElemSet], cat: &TemplateCatalog) -> Result<Instance> {
    for (v, &d) in red.iter().enumerate() {
        if !cat.is_subuniverse(d) {
            return Err(Error::Validation(format!("component {v} = {d:?} is not a subuniverse")));
        }
    }
    reduce(inst, red)
}

/// Smallest-mask inclusion-minimal strict weakening of `rel` in `Γ²` inside `x × y`.
pub fn weakening(cat: &TemplateCatalog, rel: BinRel, x: ElemSet, y: ElemSet) -> BinRel {
    let frame = BinRel::product(x, y);
    let above: Vec<BinRel> = cat.weaker_than(rel, x, y);
    above
        .iter()
        .copied()
        .filter(|&s| !above.iter().any(|&t| t != s && t.is_subset(s)))
        .min()
        .unwrap_or(frame)
}

/// Replaces `E^{ij}` by its weakening; a full weakening removes the constraint.
pub fn weaken_instance(inst: &Instance, i: usize, j: usize, cat: &TemplateCatalog) -> Result<Instance> {
    let c = inst.constraint(i, j).ok_or_else(|| Error::Validation(format!("({i},{j}) is not a constraint")))?;
    let (x, y) = (inst.domains[i], inst.domains[j]);
    let w = weakening(cat, c.rel, x, y);
    let mut out = inst.clone();
    out.constraints.retain(|d| (d.i, d.j) != (i, j));
    if w != BinRel::product(x, y) {
        out.constraints.push(Constraint { i, j, rel: w });
        out.constraints.sort();
    }
    Ok(out)
}

/// `Θ/σ` with the canonical homomorphism, given as the representative map per variable.
pub fn factorize(inst: &Instance, sigmas: &[BinRel]) -> Result<(Instance, Vec<BTreeMap<Elem, Elem>>)> {
    if sigmas.len() != inst.n() {
        return Err(Error::Validation("one congruence per variable required".into()));
    }
    let mut maps = Vec::with_capacity(inst.n());
    for (v, (&s, &d)) in sigmas.iter().zip(&inst.domains).enumerate() {
        if !s.is_equivalence_on(d) {
            return Err(Error::Validation(format!("σ_{v} is not an equivalence on D_{v}")));
        }
        let map: BTreeMap<Elem, Elem> = s.classes(d).into_iter().flat_map(|c| {
            let r = c.min().expect("nonempty class");
            c.iter().map(move |a| (a, r))
        }).collect();
        maps.push(map);
    }
    let domains = maps.iter().map(|m| ElemSet::from_elems(m.values().copied())).collect();
    let constraints = inst
        .constraints
        .iter()
        .map(|c| Constraint { rel: BinRel::from_pairs(c.rel.pairs().map(|(a, b)| (maps[c.i][&a], maps[c.j][&b]))), ..*c })
        .collect();
    let out = Instance { labels: inst.labels.clone(), domains, constraints };
    for c in &inst.constraints {
        for (a, b) in c.rel.pairs() {
            debug_assert!(out.constraint(c.i, c.j).expect("copied").rel.contains(maps[c.i][&a], maps[c.j][&b]));
        }
    }
    Ok((out, maps))
}

/// Union: `b`'s variables are copied under labels shifted past `a`'s maximum,
/// and every label shared by both gets an equality constraint between copies.
pub fn union(a: &Instance, b: &Instance) -> Instance {
    let shift = a.max_label() + 1;
    let n = a.n();
    let mut labels = a.labels.clone();
    labels.extend(b.labels.iter().map(|&y| y + shift));
    let mut domains = a.domains.clone();
    domains.extend(b.domains.iter().copied());
    let mut constraints = a.constraints.clone();
    constraints.extend(b.constraints.iter().map(|c| Constraint { i: c.i + n, j: c.j + n, rel: c.rel }));
    for (i, &x) in a.labels.iter().enumerate() {
        for (j, &y) in b.labels.iter().enumerate() {
            if x == y {
                let d = a.domains[i].intersect(b.domains[j]);
                constraints.push(Constraint { i, j: n + j, rel: BinRel::diagonal(d) });
            }
        }
    }
    Instance::with_labels(labels, domains, constraints).expect("indices in range by construction")
}

/// `Θ ∖ Θ'` where `sub` lists constraint indices of `inst`: the remaining
/// constraints on the variables they touch. Also returns the dropped variables.
pub fn difference(inst: &Instance, sub: &BTreeSet<usize>) -> (Instance, Vec<usize>) {
    let rest: Vec<Constraint> =
        inst.constraints.iter().enumerate().filter(|(k, _)| !sub.contains(k)).map(|(_, c)| *c).collect();
    let kept: BTreeSet<usize> = rest.iter().flat_map(|c| [c.i, c.j]).collect();
    let vars: Vec<usize> = kept.iter().copied().collect();
    let dropped = (0..inst.n()).filter(|v| !kept.contains(v)).collect();
    let pos: BTreeMap<usize, usize> = vars.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let out = Instance {
        labels: vars.iter().map(|&v| inst.labels[v]).collect(),
        domains: vars.iter().map(|&v| inst.domains[v]).collect(),
        constraints: rest.iter().map(|c| Constraint { i: pos[&c.i], j: pos[&c.j], rel: c.rel }).collect(),
    };
    (out, dropped)
}

/// Relabels: every variable labelled `old[k]` gets label `new[k]`.
pub fn substitute(inst: &Instance, old: &[u32], new: &[u32]) -> Result<Instance> {
    if old.len() != new.len() {
        return Err(Error::Validation("label lists differ in length".into()));
    }
    let map: BTreeMap<u32, u32> = old.iter().copied().zip(new.iter().copied()).collect();
    let mut out = inst.clone();
    for l in out.labels.iter_mut() {
        if let Some(&m) = map.get(l) {
            *l = m;
        }
    }
    Ok(out)
}

/// `sub` (constraint indices of `inst`) forms a subconstraint whose variables
/// meet the rest of the instance only inside `shared`.
pub fn is_subconstraint(inst: &Instance, sub: &BTreeSet<usize>, shared: &BTreeSet<usize>) -> bool {
    let inner: BTreeSet<usize> = sub.iter().flat_map(|&k| [inst.constraints[k].i, inst.constraints[k].j]).collect();
    let outer: BTreeSet<usize> = inst
        .constraints
        .iter()
        .enumerate()
        .filter(|(k, _)| !sub.contains(k))
        .flat_map(|(_, c)| [c.i, c.j])
        .collect();
    inner.intersection(&outer).all(|v| shared.contains(v))
}

fn covering_common(y: &Instance, x: &Instance, h: &[usize]) -> bool {
    if h.len() != y.n() || h.iter().any(|&v| v >= x.n()) {
        return false;
    }
    if (0..y.n()).any(|v| y.domains[v] != x.domains[h[v]]) {
        return false;
    }
    // Shared labels stay fixed.
    for (v, &ly) in y.labels.iter().enumerate() {
        if let Some(u) = x.labels.iter().position(|&lx| lx == ly) {
            if h[v] != u {
                return false;
            }
        }
    }
    true
}

/// `Θ_𝒴` covers `Θ_𝒳` through `h`: equal domains and equal constraints along `h`.
pub fn is_covering(y: &Instance, x: &Instance, h: &[usize]) -> bool {
    covering_common(y, x, h)
        && y.constraints.iter().all(|c| match x.constraint(h[c.i], h[c.j]) {
            Some(e) => {
                let frame = BinRel::product(y.domains[c.i], y.domains[c.j]);
                e.rel.intersect(frame) == c.rel.intersect(frame)
            }
            None => false,
        })
}

/// Expanded covering: constraints may only get weaker along `h`, and a
/// constraint folded onto one variable must contain the diagonal.
pub fn is_expanded_covering(y: &Instance, x: &Instance, h: &[usize]) -> bool {
    covering_common(y, x, h)
        && y.constraints.iter().all(|c| {
            let (k, p) = (h[c.i], h[c.j]);
            if k == p && c.i != c.j {
                return c.rel.is_reflexive_on(y.domains[c.i]);
            }
            match x.constraint(k, p) {
                Some(e) => e.rel.restrict(x.domains[k], x.domains[p]).is_subset(c.rel),
                None => false,
            }
        })
}

/// No cycles in the undirected constraint multigraph, loops ignored; two
/// constraints on one pair of variables form a cycle.
pub fn is_tree_instance(inst: &Instance) -> bool {
    let mut parent: Vec<usize> = (0..inst.n()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for c in inst.constraints.iter().filter(|c| !c.is_loop()) {
        let (a, b) = (find(&mut parent, c.i), find(&mut parent, c.j));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

/// Explicit list of (partial) homomorphisms over `coords`, sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub coords: Vec<usize>,
    pub members: Vec<Vec<Elem>>,
}

impl SolutionSet {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, h: &[Elem]) -> bool {
        self.members.binary_search_by(|m| m.as_slice().cmp(h)).is_ok()
    }

    /// Values taken at each coordinate.
    pub fn projections(&self) -> Vec<ElemSet> {
        (0..self.coords.len()).map(|k| ElemSet::from_elems(self.members.iter().map(|m| m[k]))).collect()
    }

    /// Subdirect over the given domains (one per coordinate).
    pub fn is_subdirect(&self, domains: &[ElemSet]) -> bool {
        self.projections() == domains
    }
}

/// Backtracking enumeration with forward checking; errors past `cap` members.
pub fn enumerate_solutions(inst: &Instance, cap: usize) -> Result<SolutionSet> {
    let mut members = Vec::new();
    search(inst, cap, &mut |h| {
        members.push(h.to_vec());
        true
    })?;
    members.sort();
    Ok(SolutionSet { coords: (0..inst.n()).collect(), members })
}

/// Some solution, or `None` when the instance has none.
pub fn hom_exists(inst: &Instance) -> Option<Homomorphism> {
    let mut found = None;
    search(inst, usize::MAX, &mut |h| {
        found = Some(h.to_vec());
        false
    })
    .expect("uncapped search");
    found
}

/// Depth-first search calling `visit` on every solution until it returns false.
fn search(inst: &Instance, cap: usize, visit: &mut dyn FnMut(&[Elem]) -> bool) -> Result<()> {
    let n = inst.n();
    if inst.has_empty_domain() {
        return Ok(());
    }
    let mut doms: Vec<ElemSet> = inst.domains.clone();
    for c in inst.constraints.iter().filter(|c| c.is_loop()) {
        doms[c.i] = doms[c.i].intersect(c.rel.diagonal_part());
    }
    let adj: Vec<Vec<&Constraint>> =
        (0..n).map(|v| inst.constraints.iter().filter(|c| !c.is_loop() && c.touches(v)).collect()).collect();
    let mut assigned: Vec<Option<Elem>> = vec![None; n];
    let mut count = 0usize;
    fn rec(
        doms: &mut Vec<ElemSet>,
        assigned: &mut Vec<Option<Elem>>,
        adj: &[Vec<&Constraint>],
        count: &mut usize,
        cap: usize,
        visit: &mut dyn FnMut(&[Elem]) -> bool,
    ) -> Result<bool> {
        let next = (0..doms.len()).filter(|&v| assigned[v].is_none()).min_by_key(|&v| (doms[v].len(), v));
        let Some(v) = next else {
            *count += 1;
            if *count > cap {
                return Err(Error::Limit(format!("more than {cap} solutions")));
            }
            let h: Vec<Elem> = assigned.iter().map(|a| a.expect("complete")).collect();
            return Ok(visit(&h));
        };
        for a in doms[v].iter() {
            let saved: Vec<(usize, ElemSet)> = adj[v].iter().map(|c| if c.i == v { c.j } else { c.i }).map(|u| (u, doms[u])).collect();
            let mut ok = true;
            for c in &adj[v] {
                let (u, allowed) = if c.i == v { (c.j, c.rel.row(a)) } else { (c.i, c.rel.col(a)) };
                if assigned[u].is_none() {
                    doms[u] = doms[u].intersect(allowed);
                    if doms[u].is_empty() {
                        ok = false;
                    }
                } else if !allowed.contains(assigned[u].expect("assigned")) {
                    ok = false;
                }
            }
            if ok {
                assigned[v] = Some(a);
                let go_on = rec(doms, assigned, adj, count, cap, visit)?;
                assigned[v] = None;
                if !go_on {
                    for (u, d) in saved.into_iter().rev() {
                        doms[u] = d;
                    }
                    return Ok(false);
                }
            }
            for (u, d) in saved.into_iter().rev() {
                doms[u] = d;
            }
        }
        Ok(true)
    }
    rec(&mut doms, &mut assigned, &adj, &mut count, cap, visit)?;
    Ok(())
}

/// Projection of a solution set onto a sublist of its coordinates.
pub fn project(s: &SolutionSet, coords: &[usize]) -> Result<SolutionSet> {
    let pos: Vec<usize> = coords
        .iter()
        .map(|c| s.coords.iter().position(|x| x == c).ok_or_else(|| Error::Validation(format!("coordinate {c} absent"))))
        .collect::<Result<_>>()?;
    let members: BTreeSet<Vec<Elem>> = s.members.iter().map(|m| pos.iter().map(|&k| m[k]).collect()).collect();
    Ok(SolutionSet { coords: coords.to_vec(), members: members.into_iter().collect() })
}

fn rep_vector(m: &[Elem], sigmas: &[BinRel]) -> Vec<Elem> {
    m.iter().zip(sigmas).map(|(&a, s)| s.row(a).min().unwrap_or(a)).collect()
}

/// Classes of members under the meet of extended congruences, as member indices.
pub fn extended_congruence_classes(s: &SolutionSet, sigmas: &[BinRel]) -> Vec<Vec<usize>> {
    let mut classes: BTreeMap<Vec<Elem>, Vec<usize>> = BTreeMap::new();
    for (k, m) in s.members.iter().enumerate() {
        classes.entry(rep_vector(m, sigmas)).or_default().push(k);
    }
    classes.into_values().collect()
}

/// Solution set modulo the extended congruences, on minimum representatives.
pub fn factor_solution_set(s: &SolutionSet, sigmas: &[BinRel]) -> SolutionSet {
    let members: BTreeSet<Vec<Elem>> = s.members.iter().map(|m| rep_vector(m, sigmas)).collect();
    SolutionSet { coords: s.coords.clone(), members: members.into_iter().collect() }
}

/// On-disk instance format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_digest: Option<String>,
    pub n: usize,
    #[serde(default)]
    pub labels: Vec<u32>,
    pub domains: Vec<Vec<Elem>>,
    pub edges: Vec<EdgeFile>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeFile {
    pub i: usize,
    pub j: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuples: Option<Vec<[Elem; 2]>>,
}

impl InstanceFile {
    pub fn from_instance(inst: &Instance, digest: Option<String>) -> InstanceFile {
        InstanceFile {
            version: 1,
            template_digest: digest,
            n: inst.n(),
            labels: inst.labels.clone(),
            domains: inst.domains.iter().map(|d| d.to_vec()).collect(),
            edges: inst
                .constraints
                .iter()
                .map(|c| EdgeFile { i: c.i, j: c.j, rel_index: None, tuples: Some(c.rel.pairs().map(|(a, b)| [a, b]).collect()) })
                .collect(),
        }
    }

    /// Resolves `rel_index` entries against `Γ²` when a catalog is given.
    pub fn to_instance(&self, cat: Option<&TemplateCatalog>) -> Result<Instance> {
        if self.domains.len() != self.n {
            return Err(Error::Parse(format!("n = {} but {} domains", self.n, self.domains.len())));
        }
        let l = cat.map(|c| c.l()).unwrap_or(crate::MAX_L);
        let mut domains = Vec::with_capacity(self.n);
        for d in &self.domains {
            if d.iter().any(|&a| a as usize >= l) {
                return Err(Error::Parse(format!("domain {d:?} has elements ≥ {l}")));
            }
            domains.push(ElemSet::from_elems(d.iter().copied()));
        }
        let mut constraints = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let rel = match (&e.tuples, e.rel_index) {
                (Some(ts), None) => {
                    if ts.iter().flatten().any(|&a| a as usize >= l) {
                        return Err(Error::Parse(format!("edge ({},{}) has elements ≥ {l}", e.i, e.j)));
                    }
                    BinRel::from_pairs(ts.iter().map(|t| (t[0], t[1])))
                }
                (None, Some(k)) => {
                    let cat = cat.ok_or_else(|| Error::Parse("rel_index needs a template".into()))?;
                    *cat.gamma2.get(k).ok_or_else(|| Error::Parse(format!("rel_index {k} out of range")))?
                }
                _ => return Err(Error::Parse(format!("edge ({},{}) needs exactly one of tuples, rel_index", e.i, e.j))),
            };
            constraints.push(Constraint { i: e.i, j: e.j, rel });
        }
        let labels = if self.labels.is_empty() { (0..self.n as u32).collect() } else { self.labels.clone() };
        Instance::with_labels(labels, domains, constraints)
    }
}

pub fn parse_instance(text: &str, cat: Option<&TemplateCatalog>) -> Result<Instance> {
    let file: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if let (Some(d), Some(c)) = (&file.template_digest, cat) {
        if *d != c.digest {
            return Err(Error::Validation("instance was written for a different template".into()));
        }
    }
    file.to_instance(cat)
}

pub fn write_instance(inst: &Instance, cat: Option<&TemplateCatalog>) -> String {
    serde_json::to_string_pretty(&InstanceFile::from_instance(inst, cat.map(|c| c.digest.clone()))).expect("serializable")
}

/// A per-variable reduction vector with the reason it was produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionVector {
    pub domains: Vec<ElemSet>,
    pub kind: ReductionKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionKind {
    Consistency,
    BinaryAbsorbing,
    Central,
    Pc,
    Linear,
}

impl ReductionVector {
    /// Equal domains must be reduced equally.
    pub fn respects_equal_domains(&self, inst: &Instance) -> bool {
        (0..inst.n()).all(|i| {
            (0..inst.n()).all(|j| inst.domains[i] != inst.domains[j] || self.domains[i] == self.domains[j])
        })
    }
}
