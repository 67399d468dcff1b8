//! Consistency notions on instances: propagation with tree-formula
//! witnesses, cycle-consistency, linkedness, irreducibility, weakened
//! instances, crucial instances, binary relation properties and
//! bridge-based connectivity.

use crate::instance::{hom_exists, reduce, Constraint, Instance, SolutionSet};
use crate::template::TemplateCatalog;
use crate::types::{BinRel, Elem, ElemSet, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

/// Largest number of constraint sets visited by the irreducibility search.
pub const IRREDUCIBLE_CAP: usize = 200_000;
/// Largest tree witness, in vertices.
pub const TREE_CAP: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deletion {
    pub var: usize,
    pub value: Elem,
    /// Index into the instance's constraint list.
    pub constraint: usize,
    /// Round in which the value lost support (counted from 0).
    pub round: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationLog {
    /// `V_t` for every round, starting with the requested reduction.
    pub rounds: Vec<Vec<ElemSet>>,
    pub deletions: Vec<Deletion>,
}

impl PropagationLog {
    pub fn domains(&self) -> &[ElemSet] {
        self.rounds.last().expect("at least the initial round")
    }

    pub fn emptied(&self) -> Option<usize> {
        self.domains().iter().position(|d| d.is_empty())
    }

    /// Rounds that changed some domain.
    pub fn changing_rounds(&self) -> usize {
        self.rounds.len() - 1
    }
}

/// Simultaneous support propagation inside `red` until a fixpoint or an
/// empty domain. Each round cuts constraints to the current domains and
/// keeps the values supported by every incident constraint.
pub fn propagate(inst: &Instance, red: &[ElemSet]) -> PropagationLog {
    let mut cur: Vec<ElemSet> = red.to_vec();
    let mut rounds = vec![cur.clone()];
    let mut deletions = Vec::new();
    let incident: Vec<Vec<usize>> =
        (0..inst.n()).map(|v| inst.incident(v).map(|(k, _)| k).collect()).collect();
    let mut round = 0;
    loop {
        if cur.iter().any(|d| d.is_empty()) {
            break;
        }
        let mut next = cur.clone();
        for v in 0..inst.n() {
            for a in cur[v].iter() {
                if let Some(&k) = incident[v].iter().find(|&&k| !inst.constraints[k].support(v, &cur).contains(a)) {
                    next[v].remove(a);
                    deletions.push(Deletion { var: v, value: a, constraint: k, round });
                }
            }
        }
        if next == cur {
            break;
        }
        cur = next;
        rounds.push(cur.clone());
        round += 1;
    }
    PropagationLog { rounds, deletions }
}

/// Propagated instance inside `red`.
pub fn propagated(inst: &Instance, red: &[ElemSet]) -> (Instance, PropagationLog) {
    let log = propagate(inst, red);
    (reduce(inst, log.domains()).expect("same length"), log)
}

/// A tree instance covering `Θ` through `map`, rooted at vertex 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeWitness {
    pub var: usize,
    pub tree: Instance,
    pub map: Vec<usize>,
}

/// Per-variable tree witnesses replaying the propagation log: after a round
/// that shrank `x`, `Υ_x` gains one edge per distinct deleting constraint,
/// hung with a fresh copy of the neighbour's previous tree. Constraints that
/// delete several values in one round are used once.
pub fn build_tree_witnesses(inst: &Instance, log: &PropagationLog) -> Result<Vec<TreeWitness>> {
    let n = inst.n();
    // Trees as (domains-by-original-var map, constraints) rooted at 0.
    #[derive(Clone)]
    struct Tree {
        map: Vec<usize>,
        edges: Vec<(usize, usize, usize)>,
    }
    let mut trees: Vec<Tree> = (0..n).map(|v| Tree { map: vec![v], edges: Vec::new() }).collect();
    let rounds = log.changing_rounds();
    for t in 0..rounds {
        let prev = trees.clone();
        for x in 0..n {
            let mut used: BTreeSet<usize> = BTreeSet::new();
            for d in log.deletions.iter().filter(|d| d.round == t && d.var == x) {
                used.insert(d.constraint);
            }
            for k in used {
                let c = inst.constraints[k];
                if c.is_loop() {
                    trees[x].edges.push((0, 0, k));
                    continue;
                }
                let y = if c.i == x { c.j } else { c.i };
                let sub = &prev[y];
                let offset = trees[x].map.len();
                if offset + sub.map.len() > TREE_CAP {
                    return Err(Error::Limit(format!("tree witness for variable {x} exceeds {TREE_CAP} vertices")));
                }
                trees[x].map.extend(sub.map.iter().copied());
                trees[x].edges.extend(sub.edges.iter().map(|&(a, b, k)| (a + offset, b + offset, k)));
                if c.i == x {
                    trees[x].edges.push((0, offset, k));
                } else {
                    trees[x].edges.push((offset, 0, k));
                }
            }
        }
    }
    Ok(trees
        .into_iter()
        .enumerate()
        .map(|(x, t)| {
            let domains = t.map.iter().map(|&v| inst.domains[v]).collect();
            let constraints = t.edges.iter().map(|&(a, b, k)| Constraint { i: a, j: b, rel: inst.constraints[k].rel }).collect();
            let labels = (0..t.map.len() as u32).map(|k| k + inst.max_label() + 1).collect();
            let tree = Instance::with_labels(labels, domains, constraints).expect("indices in range");
            TreeWitness { var: x, tree, map: t.map }
        })
        .collect())
}

/// Values the root of a tree instance can take inside `red` (indexed by the
/// covered instance's variables), by leaf-to-root support propagation.
pub fn tree_root_projection(w: &TreeWitness, red: &[ElemSet]) -> ElemSet {
    let t = &w.tree;
    let mut dom: Vec<ElemSet> = w.map.iter().map(|&v| red[v]).collect();
    for c in t.constraints.iter().filter(|c| c.is_loop()) {
        dom[c.i] = dom[c.i].intersect(c.rel.diagonal_part());
    }
    let mut adj: Vec<Vec<&Constraint>> = vec![Vec::new(); t.n()];
    for c in t.constraints.iter().filter(|c| !c.is_loop()) {
        adj[c.i].push(c);
        adj[c.j].push(c);
    }
    fn visit(v: usize, parent: Option<usize>, adj: &[Vec<&Constraint>], dom: &mut [ElemSet]) -> ElemSet {
        let mut mine = dom[v];
        for c in &adj[v] {
            let u = if c.i == v { c.j } else { c.i };
            if Some(u) == parent {
                continue;
            }
            let below = visit(u, Some(v), adj, dom);
            let r = if c.i == v { c.rel.restrict(mine, below) } else { c.rel.restrict(below, mine) };
            mine = if c.i == v { r.first_projection() } else { r.second_projection() };
        }
        dom[v] = mine;
        mine
    }
    visit(0, None, &adj, &mut dom)
}

/// Every constraint projects onto both of its domains.
pub fn is_1_consistent(inst: &Instance) -> bool {
    inst.constraints.iter().all(|c| {
        let r = c.rel.restrict(inst.domains[c.i], inst.domains[c.j]);
        if c.is_loop() {
            r.diagonal_part() == inst.domains[c.i]
        } else {
            r.first_projection() == inst.domains[c.i] && r.second_projection() == inst.domains[c.j]
        }
    })
}

/// Union-find over `(variable, value)` nodes joined by constraint tuples.
struct ValueGraph {
    parent: Vec<usize>,
}

impl ValueGraph {
    fn node(v: usize, a: Elem) -> usize {
        v * crate::MAX_L + a as usize
    }

    fn new(inst: &Instance, constraints: impl Iterator<Item = usize>) -> ValueGraph {
        let mut g = ValueGraph { parent: (0..inst.n() * crate::MAX_L).collect() };
        for k in constraints {
            let c = inst.constraints[k];
            for (a, b) in c.rel.restrict(inst.domains[c.i], inst.domains[c.j]).pairs() {
                g.union(Self::node(c.i, a), Self::node(c.j, b));
            }
        }
        g
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// `(i,a)` and `(j,b)` are joined by a path of constraint tuples.
pub fn linked(a: Elem, b: Elem, i: usize, j: usize, inst: &Instance) -> bool {
    if i == j && a == b {
        return true;
    }
    let mut g = ValueGraph::new(inst, 0..inst.constraints.len());
    g.find(ValueGraph::node(i, a)) == g.find(ValueGraph::node(j, b))
}

/// Values linked to `(i,a)`, per variable.
pub fn linked_component(inst: &Instance, i: usize, a: Elem) -> Vec<ElemSet> {
    let mut g = ValueGraph::new(inst, 0..inst.constraints.len());
    let root = g.find(ValueGraph::node(i, a));
    (0..inst.n())
        .map(|v| {
            let mut s = ElemSet::from_elems(inst.domains[v].iter().filter(|&b| g.find(ValueGraph::node(v, b)) == root));
            if v == i {
                s.insert(a);
            }
            s
        })
        .collect()
}

/// A step along a constraint, either forwards (`i → j`) or backwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub constraint: usize,
    pub forward: bool,
}

/// A closed path from `var` whose connection relation misses `(a,a)` for
/// some `a`; `diagonal` is the set of values it does connect to themselves.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleViolation {
    pub var: usize,
    pub path: Vec<PathStep>,
    pub diagonal: ElemSet,
}

/// Relation connected by a path from `start`, `None` if the path is not contiguous.
pub fn path_relation(inst: &Instance, start: usize, path: &[PathStep]) -> Option<(usize, BinRel)> {
    let mut at = start;
    let mut rel = BinRel::diagonal(inst.domains[start]);
    for s in path {
        let c = inst.constraints.get(s.constraint)?;
        let r = c.rel.restrict(inst.domains[c.i], inst.domains[c.j]);
        let (from, to, r) = if s.forward { (c.i, c.j, r) } else { (c.j, c.i, r.transpose()) };
        if from != at {
            return None;
        }
        rel = rel.compose(r);
        at = to;
    }
    Some((at, rel))
}

/// First closed path (in BFS order over variables) breaking cycle-consistency.
pub fn cycle_violation(inst: &Instance) -> Option<CycleViolation> {
    for x in 0..inst.n() {
        let dx = inst.domains[x];
        if dx.is_empty() {
            continue;
        }
        let start = (x, BinRel::diagonal(dx));
        let mut parent: HashMap<(usize, BinRel), ((usize, BinRel), PathStep)> = HashMap::new();
        let mut seen: HashSet<(usize, BinRel)> = HashSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some((y, s)) = queue.pop_front() {
            for (k, c) in inst.incident(y) {
                let r = c.rel.restrict(inst.domains[c.i], inst.domains[c.j]);
                let mut moves = Vec::new();
                if c.i == y {
                    moves.push((c.j, r, true));
                }
                if c.j == y {
                    moves.push((c.i, r.transpose(), false));
                }
                for (z, r, forward) in moves {
                    let next = (z, s.compose(r));
                    let step = PathStep { constraint: k, forward };
                    if z == x && !next.1.is_reflexive_on(dx) {
                        let mut path = vec![step];
                        let mut cur = (y, s);
                        while cur != start {
                            let (p, st) = parent[&cur];
                            path.push(st);
                            cur = p;
                        }
                        path.reverse();
                        return Some(CycleViolation { var: x, path, diagonal: next.1.diagonal_part().intersect(dx) });
                    }
                    if seen.insert(next) {
                        parent.insert(next, ((y, s), step));
                        queue.push_back(next);
                    }
                }
            }
        }
    }
    None
}

pub fn is_cycle_consistent(inst: &Instance) -> bool {
    is_1_consistent(inst) && cycle_violation(inst).is_none()
}

/// Bounded explicit path enumeration, used to cross-check [`cycle_violation`].
pub fn cycle_consistent_by_paths(inst: &Instance, max_len: usize) -> bool {
    fn walk(inst: &Instance, x: usize, at: usize, rel: BinRel, left: usize) -> bool {
        if left == 0 {
            return true;
        }
        for (_, c) in inst.incident(at) {
            let r = c.rel.restrict(inst.domains[c.i], inst.domains[c.j]);
            let mut moves = Vec::new();
            if c.i == at {
                moves.push((c.j, r));
            }
            if c.j == at {
                moves.push((c.i, r.transpose()));
            }
            for (z, r) in moves {
                let next = rel.compose(r);
                if z == x && !next.is_reflexive_on(inst.domains[x]) {
                    return false;
                }
                if !walk(inst, x, z, next, left - 1) {
                    return false;
                }
            }
        }
        true
    }
    (0..inst.n()).all(|x| walk(inst, x, x, BinRel::diagonal(inst.domains[x]), max_len))
}

/// The variable set splits into two nonempty parts with no constraint across.
pub fn is_fragmented(inst: &Instance) -> bool {
    inst.n() >= 2 && inst.components().len() >= 2
}

/// For every constrained variable, all its values are linked to each other.
pub fn is_linked_instance(inst: &Instance) -> bool {
    let mut g = ValueGraph::new(inst, 0..inst.constraints.len());
    constrained_vars(inst, 0..inst.constraints.len()).into_iter().all(|v| all_linked(&mut g, v, inst.domains[v]))
}

fn all_linked(g: &mut ValueGraph, v: usize, d: ElemSet) -> bool {
    let mut roots = d.iter().map(|a| g.find(ValueGraph::node(v, a)));
    match roots.next() {
        Some(r) => roots.all(|s| s == r),
        None => true,
    }
}

fn constrained_vars(inst: &Instance, ks: impl Iterator<Item = usize>) -> BTreeSet<usize> {
    ks.flat_map(|k| [inst.constraints[k].i, inst.constraints[k].j]).collect()
}

/// A connected set of constraints that is not linked and whose solution set
/// is not subdirect at `var`; `projection` is what the solutions allow there.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrreducibleViolation {
    pub constraints: Vec<usize>,
    pub var: usize,
    pub projection: ElemSet,
}

fn set_linked(inst: &Instance, set: &[usize]) -> bool {
    let mut g = ValueGraph::new(inst, set.iter().copied());
    constrained_vars(inst, set.iter().copied()).into_iter().all(|v| all_linked(&mut g, v, inst.domains[v]))
}

/// Splits a constraint set into connected pieces (loops stay with their variable).
fn pieces(inst: &Instance, set: &[usize]) -> Vec<Vec<usize>> {
    let vars: Vec<usize> = constrained_vars(inst, set.iter().copied()).into_iter().collect();
    let mut comp: BTreeMap<usize, usize> = vars.iter().map(|&v| (v, v)).collect();
    fn find(c: &mut BTreeMap<usize, usize>, x: usize) -> usize {
        let mut r = x;
        while c[&r] != r {
            r = c[&r];
        }
        r
    }
    for &k in set {
        let c = inst.constraints[k];
        let (a, b) = (find(&mut comp, c.i), find(&mut comp, c.j));
        if a != b {
            comp.insert(a, b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &k in set {
        let r = find(&mut comp, inst.constraints[k].i);
        groups.entry(r).or_default().push(k);
    }
    groups.into_values().collect()
}

/// Projection of the solutions of the subinstance given by `set` onto `v`.
pub fn subset_projection(inst: &Instance, set: &[usize], v: usize) -> ElemSet {
    let vars: Vec<usize> = constrained_vars(inst, set.iter().copied()).into_iter().collect();
    let pos: BTreeMap<usize, usize> = vars.iter().enumerate().map(|(k, &x)| (x, k)).collect();
    let sub = Instance {
        labels: vars.iter().map(|&x| inst.labels[x]).collect(),
        domains: vars.iter().map(|&x| inst.domains[x]).collect(),
        constraints: {
            let mut cs: Vec<Constraint> =
                set.iter().map(|&k| inst.constraints[k]).map(|c| Constraint { i: pos[&c.i], j: pos[&c.j], rel: c.rel }).collect();
            cs.sort();
            cs
        },
    };
    pinned_projection(&sub, pos[&v])
}

/// Values of `v` extendable to a full solution.
pub fn pinned_projection(inst: &Instance, v: usize) -> ElemSet {
    ElemSet::from_elems(inst.domains[v].iter().filter(|&a| {
        let mut pinned = inst.clone();
        pinned.domains[v] = ElemSet::singleton(a);
        let pinned = reduce(&pinned, &pinned.domains.clone()).expect("same length");
        hom_exists(&pinned).is_some()
    }))
}

/// Irreducibility: every connected non-linked set of constraints has a
/// subdirect solution set. On a 1-consistent instance non-linkedness is kept
/// by dropping constraints and non-subdirectness by adding them, so a
/// violation exists iff some maximal connected non-linked set is not
/// subdirect. That family is grown upwards from single constraints; when it
/// is too large the search walks down from each component instead, never
/// descending below a subdirect set. Loops are ignored.
pub fn irreducible_violation(inst: &Instance) -> Result<Option<IrreducibleViolation>> {
    let base: Vec<usize> = (0..inst.constraints.len()).filter(|&k| !inst.constraints[k].is_loop()).collect();
    if let Some(found) = irreducible_upwards(inst, &base) {
        return Ok(found);
    }
    irreducible_downwards(inst, &base)
}

fn subdirect_gap(inst: &Instance, set: &[usize]) -> Option<(usize, ElemSet)> {
    constrained_vars(inst, set.iter().copied()).into_iter().find_map(|v| {
        let p = subset_projection(inst, set, v);
        (p != inst.domains[v]).then_some((v, p))
    })
}

fn irreducible_upwards(inst: &Instance, base: &[usize]) -> Option<Option<IrreducibleViolation>> {
    let mut visited: HashSet<Vec<usize>> = HashSet::new();
    let mut stack: Vec<Vec<usize>> = base.iter().filter(|&&k| !set_linked(inst, &[k])).map(|&k| vec![k]).collect();
    while let Some(set) = stack.pop() {
        if !visited.insert(set.clone()) {
            continue;
        }
        if visited.len() > IRREDUCIBLE_CAP {
            return None;
        }
        let vars = constrained_vars(inst, set.iter().copied());
        let mut maximal = true;
        for &k in base {
            let c = inst.constraints[k];
            if set.binary_search(&k).is_ok() || !(vars.contains(&c.i) || vars.contains(&c.j)) {
                continue;
            }
            let mut bigger = set.clone();
            bigger.insert(bigger.binary_search(&k).unwrap_err(), k);
            if !set_linked(inst, &bigger) {
                maximal = false;
                if !visited.contains(&bigger) {
                    stack.push(bigger);
                }
            }
        }
        if maximal {
            if let Some((var, projection)) = subdirect_gap(inst, &set) {
                return Some(Some(IrreducibleViolation { constraints: set, var, projection }));
            }
        }
    }
    Some(None)
}

fn irreducible_downwards(inst: &Instance, base: &[usize]) -> Result<Option<IrreducibleViolation>> {
    let mut visited: HashSet<Vec<usize>> = HashSet::new();
    let mut queue: VecDeque<Vec<usize>> = pieces(inst, base).into();
    while let Some(set) = queue.pop_front() {
        if !visited.insert(set.clone()) {
            continue;
        }
        if visited.len() > IRREDUCIBLE_CAP {
            return Err(Error::Limit(format!("irreducibility search exceeded {IRREDUCIBLE_CAP} constraint sets")));
        }
        let Some((var, projection)) = subdirect_gap(inst, &set) else { continue };
        if !set_linked(inst, &set) {
            return Ok(Some(IrreducibleViolation { constraints: set, var, projection }));
        }
        for k in 0..set.len() {
            let mut rest = set.clone();
            rest.remove(k);
            for p in pieces(inst, &rest) {
                if !visited.contains(&p) {
                    queue.push_back(p);
                }
            }
        }
    }
    Ok(None)
}

/// Reference check by exhaustive enumeration of constraint subsets.
pub fn irreducible_by_subsets(inst: &Instance) -> Option<bool> {
    let base: Vec<usize> = (0..inst.constraints.len()).filter(|&k| !inst.constraints[k].is_loop()).collect();
    if base.len() > 16 {
        return None;
    }
    for mask in 1u32..(1 << base.len()) {
        let set: Vec<usize> = (0..base.len()).filter(|b| mask & (1 << b) != 0).map(|b| base[b]).collect();
        if pieces(inst, &set).len() != 1 || set_linked(inst, &set) {
            continue;
        }
        if constrained_vars(inst, set.iter().copied()).into_iter().any(|v| subset_projection(inst, &set, v) != inst.domains[v]) {
            return Some(false);
        }
    }
    Some(true)
}

pub fn is_irreducible(inst: &Instance) -> Result<bool> {
    Ok(irreducible_violation(inst)?.is_none())
}

/// Every constraint replaced by the meet of its strict weakenings in `Γ²`
/// (dropped when that is the full rectangle).
pub fn weakened_instance(inst: &Instance, cat: &TemplateCatalog) -> Instance {
    let mut constraints = Vec::new();
    for c in &inst.constraints {
        let (x, y) = (inst.domains[c.i], inst.domains[c.j]);
        let frame = BinRel::product(x, y);
        let r = c.rel.restrict(x, y);
        let meet = cat.weaker_than(r, x, y).into_iter().fold(frame, |acc, s| acc.intersect(s));
        if c.is_loop() {
            if !BinRel::diagonal(x).is_subset(meet) {
                constraints.push(Constraint { rel: meet, ..*c });
            }
        } else if meet != frame {
            constraints.push(Constraint { rel: meet, ..*c });
        }
    }
    Instance { labels: inst.labels.clone(), domains: inst.domains.clone(), constraints }
}

/// First variable where the weakened instance's solutions are not subdirect.
pub fn weakened_violation(inst: &Instance, cat: &TemplateCatalog) -> Option<(usize, ElemSet)> {
    let w = weakened_instance(inst, cat);
    (0..w.n()).find_map(|v| {
        let p = pinned_projection(&w, v);
        (p != w.domains[v]).then_some((v, p))
    })
}

/// `Dum₂(R, coordinate)`: `R` does not depend on that coordinate within the domains.
pub fn is_dummy(rel: BinRel, x: ElemSet, y: ElemSet, first: bool) -> bool {
    let r = rel.restrict(x, y);
    if first {
        y.iter().all(|b| r.col(b).is_empty() || r.col(b) == x)
    } else {
        x.iter().all(|a| r.row(a).is_empty() || r.row(a) == y)
    }
}

/// Crucial constraint in `red`: no dummy coordinate, `Θ^(⊥)` unsolvable, and
/// weakening this constraint makes `Θ^(⊥)` solvable.
pub fn is_crucial_constraint(inst: &Instance, k: usize, red: &[ElemSet], cat: &TemplateCatalog) -> Result<bool> {
    let c = inst.constraints[k];
    let (x, y) = (inst.domains[c.i], inst.domains[c.j]);
    if is_dummy(c.rel, x, y, true) || is_dummy(c.rel, x, y, false) {
        return Ok(false);
    }
    if hom_exists(&reduce(inst, red)?).is_some() {
        return Ok(false);
    }
    let frame = BinRel::product(x, y);
    let meet = cat.weaker_than(c.rel.restrict(x, y), x, y).into_iter().fold(frame, |acc, s| acc.intersect(s));
    let mut w = inst.clone();
    w.constraints[k].rel = meet;
    Ok(hom_exists(&reduce(&w, red)?).is_some())
}

pub fn is_crucial(inst: &Instance, red: &[ElemSet], cat: &TemplateCatalog) -> Result<bool> {
    for k in 0..inst.constraints.len() {
        if !is_crucial_constraint(inst, k, red, cat)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `Con₂^{(R,first)}`: pairs sharing a neighbour along `R`.
pub fn con(rel: BinRel, first: bool) -> BinRel {
    let r = if first { rel } else { rel.transpose() };
    r.compose(r.transpose())
}

pub fn is_stable(rel: BinRel, first: bool, sigma: BinRel) -> bool {
    if first {
        sigma.compose(rel).is_subset(rel)
    } else {
        rel.compose(sigma).is_subset(rel)
    }
}

pub fn is_rectangular(rel: BinRel, first: bool) -> bool {
    is_stable(rel, first, con(rel, first))
}

pub fn is_parallelogram(rel: BinRel) -> bool {
    rel.compose(rel.transpose()).compose(rel).is_subset(rel)
}

/// Essential pairs: outside `R` but each coordinate extendable inside `R`.
pub fn essential_pairs(rel: BinRel, x: ElemSet, y: ElemSet) -> Vec<(Elem, Elem)> {
    let r = rel.restrict(x, y);
    BinRel::product(x, y)
        .pairs()
        .filter(|&(a, b)| !r.contains(a, b) && !r.row(a).is_empty() && !r.col(b).is_empty())
        .collect()
}

/// Critical: no dummy coordinate and not the meet of its strict weakenings.
pub fn is_critical(rel: BinRel, x: ElemSet, y: ElemSet, cat: &TemplateCatalog) -> bool {
    let r = rel.restrict(x, y);
    if is_dummy(r, x, y, true) || is_dummy(r, x, y, false) {
        return false;
    }
    let frame = BinRel::product(x, y);
    let meet = cat.weaker_than(r, x, y).into_iter().fold(frame, |acc, s| acc.intersect(s));
    meet != r
}

fn all_maps(d: ElemSet) -> Vec<[Elem; crate::MAX_L]> {
    let elems = d.to_vec();
    let mut out = Vec::new();
    let mut idx = vec![0usize; elems.len()];
    loop {
        let mut f = [0 as Elem; crate::MAX_L];
        for (k, &a) in elems.iter().enumerate() {
            f[a as usize] = elems[idx[k]];
        }
        out.push(f);
        if !crate::algebra::odometer(&mut idx, elems.len()) {
            return out;
        }
    }
}

/// Key relation: some tuple `b ∉ R` is reached from every `c ∉ R` (inside the
/// domains) by a unary vector function preserving `R`. Errors past `cap` vector functions.
pub fn is_key_relation(s: &SolutionSet, domains: &[ElemSet], cap: usize) -> Result<bool> {
    let maps: Vec<Vec<[Elem; crate::MAX_L]>> = domains.iter().map(|&d| all_maps(d)).collect();
    let total: usize = maps.iter().map(|m| m.len()).try_fold(1usize, |acc, k| acc.checked_mul(k)).unwrap_or(usize::MAX);
    if total > cap {
        return Err(Error::Limit(format!("{total} unary vector functions exceed {cap}")));
    }
    let lists: Vec<Vec<Elem>> = domains.iter().map(|d| d.to_vec()).collect();
    let outside: Vec<Vec<Elem>> = crate::algebra::cartesian(&lists).into_iter().filter(|t| !s.contains(t)).collect();
    if outside.is_empty() {
        return Ok(false);
    }
    let mut preserving: Vec<Vec<usize>> = Vec::new();
    let mut idx = vec![0usize; maps.len()];
    loop {
        let ok = s.members.iter().all(|m| {
            let img: Vec<Elem> = m.iter().enumerate().map(|(k, &a)| maps[k][idx[k]][a as usize]).collect();
            s.contains(&img)
        });
        if ok {
            preserving.push(idx.clone());
        }
        let done = {
            let mut carry = true;
            for k in (0..idx.len()).rev() {
                if !carry {
                    break;
                }
                idx[k] += 1;
                if idx[k] < maps[k].len() {
                    carry = false;
                } else {
                    idx[k] = 0;
                }
            }
            carry
        };
        if done {
            break;
        }
    }
    Ok(outside.iter().any(|b| {
        outside.iter().all(|c| {
            preserving.iter().any(|p| c.iter().enumerate().all(|(k, &a)| maps[k][p[k]][a as usize] == b[k]))
        })
    }))
}

/// Parallelogram property of a solution set: every split of the coordinates
/// into two groups gives a binary relation with the property.
pub fn solution_set_parallelogram(s: &SolutionSet) -> bool {
    let n = s.coords.len();
    for mask in 1..(1u32 << n).saturating_sub(1) {
        let left: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
        let right: Vec<usize> = (0..n).filter(|k| mask & (1 << k) == 0).collect();
        let part = |m: &Vec<Elem>, idx: &[usize]| idx.iter().map(|&k| m[k]).collect::<Vec<Elem>>();
        let pairs: BTreeSet<(Vec<Elem>, Vec<Elem>)> =
            s.members.iter().map(|m| (part(m, &left), part(m, &right))).collect();
        for (a, b) in &pairs {
            for (c, b2) in &pairs {
                if b2 != b {
                    continue;
                }
                for (c2, d) in &pairs {
                    if c2 == c && !pairs.contains(&(a.clone(), d.clone())) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Essential tuple of a solution set: not a solution, but changing any one
/// coordinate can make it one.
pub fn solution_set_essential(s: &SolutionSet, domains: &[ElemSet]) -> bool {
    let lists: Vec<Vec<Elem>> = domains.iter().map(|d| d.to_vec()).collect();
    crate::algebra::cartesian(&lists).into_iter().any(|t| {
        !s.contains(&t)
            && (0..t.len()).all(|i| {
                domains[i].iter().any(|b| {
                    let mut u = t.clone();
                    u[i] = b;
                    s.contains(&u)
                })
            })
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationFlags {
    pub critical: bool,
    pub cover: Option<BinRel>,
    pub dummy_first: bool,
    pub dummy_second: bool,
    pub rectangular_first: bool,
    pub rectangular_second: bool,
    pub parallelogram: bool,
    pub essential: bool,
    pub essential_pairs: Vec<(Elem, Elem)>,
    pub key: bool,
    pub con_first: BinRel,
    pub con_second: BinRel,
}

/// All binary relation properties of `R ⊆ x × y`.
pub fn relation_properties(rel: BinRel, x: ElemSet, y: ElemSet, cat: &TemplateCatalog) -> Result<RelationFlags> {
    let r = rel.restrict(x, y);
    let critical = is_critical(r, x, y, cat);
    let ess = essential_pairs(r, x, y);
    let s = SolutionSet { coords: vec![0, 1], members: r.pairs().map(|(a, b)| vec![a, b]).collect() };
    Ok(RelationFlags {
        critical,
        cover: critical.then(|| crate::instance::weakening(cat, r, x, y)),
        dummy_first: is_dummy(r, x, y, true),
        dummy_second: is_dummy(r, x, y, false),
        rectangular_first: is_rectangular(r, true),
        rectangular_second: is_rectangular(r, false),
        parallelogram: is_parallelogram(r),
        essential: !ess.is_empty(),
        essential_pairs: ess,
        key: is_key_relation(&s, &[x, y], 1 << 20)?,
        con_first: con(r, true),
        con_second: con(r, false),
    })
}

/// Connectivity: every constraint critical and rectangular, and the graph on
/// constraints joined when their `Con` congruences at a shared variable are
/// adjacent is connected. Both orientations are tried at shared variables.
pub fn is_connected(inst: &Instance, cat: &TemplateCatalog) -> bool {
    let cs: Vec<(usize, Constraint)> =
        inst.constraints.iter().copied().enumerate().filter(|(_, c)| !c.is_loop()).collect();
    for (_, c) in &cs {
        let (x, y) = (inst.domains[c.i], inst.domains[c.j]);
        let r = c.rel.restrict(x, y);
        if !is_critical(r, x, y, cat) || !is_rectangular(r, true) || !is_rectangular(r, false) {
            return false;
        }
    }
    if cs.len() <= 1 {
        return true;
    }
    let con_at = |c: &Constraint, v: usize| -> BinRel {
        let r = c.rel.restrict(inst.domains[c.i], inst.domains[c.j]);
        con(r, c.i == v)
    };
    let mut seen = vec![false; cs.len()];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(p) = stack.pop() {
        let c1 = cs[p].1;
        for (q, (_, c2)) in cs.iter().enumerate() {
            if seen[q] {
                continue;
            }
            let shared: Vec<usize> = [c1.i, c1.j].into_iter().filter(|&v| c2.touches(v)).collect();
            let adj = shared.iter().any(|&v| {
                let d = inst.domains[v];
                cat.domain(d).is_some() && cat.adjacent(d, con_at(&c1, v), con_at(c2, v))
            });
            if adj {
                seen[q] = true;
                stack.push(q);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
