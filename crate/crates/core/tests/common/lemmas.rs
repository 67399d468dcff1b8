use std::collections::{BTreeMap, BTreeSet};
use wnu_core::algebra::OperationTable;
use wnu_core::instance::{enumerate_solutions, Instance};
use wnu_core::template::{is_central, TemplateCatalog};
use wnu_core::{Elem, ElemSet};

pub const SOLUTION_CAP: usize = 1 << 20;

#[derive(Default)]
pub struct LemmaTally {
    pub checked: usize,
    pub violations: Vec<String>,
    central_cache: BTreeMap<(ElemSet, ElemSet), bool>,
}

impl LemmaTally {
    fn fail(&mut self, msg: String) {
        if self.violations.len() < 10 {
            self.violations.push(msg);
        }
    }
}

/// `T(a,b), T(b,a) ∈ B` for all `a ∈ D`, `b ∈ B`.
pub fn absorbs_with(t: &OperationTable, d: ElemSet, b: ElemSet) -> bool {
    d.iter().all(|a| b.iter().all(|x| b.contains(t.apply(&[a, x])) && b.contains(t.apply(&[x, a]))))
}

fn is_projection(t: &OperationTable) -> bool {
    (0..t.arity).any(|i| wnu_core::algebra::all_tuples(t.l, t.arity).iter().all(|a| t.apply(a) == a[i]))
}

fn for_each_choice(options: &[Vec<ElemSet>], mut f: impl FnMut(&[ElemSet])) {
    if options.iter().any(|o| o.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; options.len()];
    let mut pick: Vec<ElemSet> = options.iter().map(|o| o[0]).collect();
    loop {
        f(&pick);
        let mut p = 0;
        loop {
            if p == idx.len() {
                return;
            }
            idx[p] += 1;
            if idx[p] < options[p].len() {
                pick[p] = options[p][idx[p]];
                break;
            }
            idx[p] = 0;
            pick[p] = options[p][0];
            p += 1;
        }
    }
}

fn inside<'a>(members: &'a [Vec<Elem>], red: &[ElemSet]) -> Vec<&'a Vec<Elem>> {
    members.iter().filter(|h| h.iter().zip(red).all(|(&a, b)| b.contains(a))).collect()
}

fn projection<'a>(members: impl IntoIterator<Item = &'a Vec<Elem>>, z: usize) -> ElemSet {
    ElemSet::from_elems(members.into_iter().map(|h| h[z]))
}

fn projections(members: &[Vec<Elem>], n: usize) -> Vec<ElemSet> {
    (0..n).map(|z| projection(members, z)).collect()
}

fn subuniverses_of(cat: &TemplateCatalog, d: ElemSet) -> Vec<ElemSet> {
    cat.domain(d).map(|e| e.subuniverses.clone()).unwrap_or_default()
}

/// Absorbing reductions with a common binary term: a subdirect solution set
/// meets every box of absorbing subuniverses, the intersection absorbs the
/// solution set, and every projection of the reduced solutions absorbs the
/// corresponding projection of all solutions.
pub fn check_absorbing(cat: &TemplateCatalog, inst: &Instance, tally: &mut LemmaTally) {
    let sols = enumerate_solutions(inst, SOLUTION_CAP).expect("desk-scale solution set");
    if sols.is_empty() {
        return;
    }
    let n = inst.n();
    let proj = projections(&sols.members, n);
    for member in cat.pol2.iter().filter(|m| !is_projection(&m.table)) {
        let t = &member.table;
        let over = |doms: &[ElemSet]| -> Vec<Vec<ElemSet>> {
            doms.iter().map(|&d| subuniverses_of(cat, d).into_iter().filter(|&b| absorbs_with(t, d, b)).collect()).collect()
        };
        for_each_choice(&over(&proj), |b| {
            tally.checked += 1;
            let r1 = inside(&sols.members, b);
            if r1.is_empty() {
                tally.fail(format!("absorbing box {b:?} misses the subdirect solutions of {}", inst.canonical_json()));
                return;
            }
            let set: BTreeSet<&Vec<Elem>> = r1.iter().copied().collect();
            for h in &sols.members {
                for g in &r1 {
                    let hg: Vec<Elem> = h.iter().zip(g.iter()).map(|(&x, &y)| t.apply(&[x, y])).collect();
                    let gh: Vec<Elem> = h.iter().zip(g.iter()).map(|(&x, &y)| t.apply(&[y, x])).collect();
                    if !set.contains(&hg) || !set.contains(&gh) {
                        tally.fail(format!("box {b:?} ∩ solutions does not absorb with the term in {}", inst.canonical_json()));
                        return;
                    }
                }
            }
        });
        for_each_choice(&over(&inst.domains), |b| {
            tally.checked += 1;
            let r1 = inside(&sols.members, b);
            for z in 0..n {
                let c = projection(r1.iter().copied(), z);
                if !absorbs_with(t, proj[z], c) {
                    tally.fail(format!("reduced projection {c:?} does not absorb {:?} at {z} in {}", proj[z], inst.canonical_json()));
                    return;
                }
            }
        });
    }
}

/// Central reductions: every nonempty projection of the reduced solutions
/// is central in the projection of all solutions.
pub fn check_central(cat: &TemplateCatalog, inst: &Instance, tally: &mut LemmaTally) {
    let sols = enumerate_solutions(inst, SOLUTION_CAP).expect("desk-scale solution set");
    if sols.is_empty() {
        return;
    }
    let n = inst.n();
    let proj = projections(&sols.members, n);
    let options: Vec<Vec<ElemSet>> = inst
        .domains
        .iter()
        .map(|&d| {
            let e = cat.domain(d).expect("domain in catalog");
            e.classification.iter().filter(|c| c.b == d || c.central_term().is_some()).map(|c| c.b).collect()
        })
        .collect();
    let mut pending: Vec<(ElemSet, ElemSet, usize)> = Vec::new();
    for_each_choice(&options, |b| {
        tally.checked += 1;
        let r1 = inside(&sols.members, b);
        for z in 0..n {
            let c = projection(r1.iter().copied(), z);
            if !c.is_empty() && c != proj[z] {
                pending.push((proj[z], c, z));
            }
        }
    });
    for (d, c, z) in pending {
        let alg = &cat.algebra;
        let ok = *tally
            .central_cache
            .entry((d, c))
            .or_insert_with(|| is_central(c, &alg.restrict(d)).expect("projection is a subuniverse").is_some());
        if !ok {
            tally.fail(format!("reduced projection {c:?} is not central in {d:?} at {z} in {}", inst.canonical_json()));
        }
    }
}

/// Closure of the solution set under `x − y + z` computed by `maltsev`.
pub fn check_affine_closure(inst: &Instance, maltsev: impl Fn(Elem, Elem, Elem) -> Elem, tally: &mut LemmaTally) {
    let sols = enumerate_solutions(inst, SOLUTION_CAP).expect("desk-scale solution set");
    for x in &sols.members {
        for y in &sols.members {
            for z in &sols.members {
                tally.checked += 1;
                let w: Vec<Elem> = (0..x.len()).map(|k| maltsev(x[k], y[k], z[k])).collect();
                if !sols.contains(&w) {
                    tally.fail(format!("{w:?} = x−y+z missing from the solutions of {}", inst.canonical_json()));
                    return;
                }
            }
        }
    }
}

pub fn xor_maltsev(x: Elem, y: Elem, z: Elem) -> Elem {
    x ^ y ^ z
}

pub fn mod3_maltsev(x: Elem, y: Elem, z: Elem) -> Elem {
    (x + 3 - y + z) % 3
}
