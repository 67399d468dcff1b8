#![allow(dead_code)]

pub mod lemmas;

use std::collections::{BTreeMap, BTreeSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{Mutex, OnceLock};
use wnu_core::fixtures;
use wnu_core::gen::{random_instance, GenParams};
use wnu_core::instance::{Constraint, Instance};
use wnu_core::template::{build_catalog, TemplateCatalog};
use wnu_core::{BinRel, Elem, ElemSet};

pub fn catalog(name: &str) -> &'static TemplateCatalog {
    static CACHE: OnceLock<Mutex<BTreeMap<String, &'static TemplateCatalog>>> = OnceLock::new();
    let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
    map.entry(name.to_string()).or_insert_with(|| {
        let alg = fixtures::by_name(name).unwrap_or_else(|| panic!("unknown fixture {name}"));
        Box::leak(Box::new(build_catalog(&alg).expect("fixture catalog")))
    })
}

pub fn set(elems: &[Elem]) -> ElemSet {
    ElemSet::from_elems(elems.iter().copied())
}

pub fn rel(pairs: &[(Elem, Elem)]) -> BinRel {
    BinRel::from_pairs(pairs.iter().copied())
}

pub fn edge(i: usize, j: usize, rel: BinRel) -> Constraint {
    Constraint { i, j, rel }
}

pub fn neq2() -> BinRel {
    rel(&[(0, 1), (1, 0)])
}

pub fn eq(d: ElemSet) -> BinRel {
    BinRel::diagonal(d)
}

/// Textbook AC-1: sweep every constraint until nothing changes.
pub fn ac1(inst: &Instance) -> Vec<ElemSet> {
    let mut d = inst.domains.clone();
    loop {
        let mut changed = false;
        for c in &inst.constraints {
            for a in d[c.i].to_vec() {
                let ok = if c.i == c.j {
                    c.rel.contains(a, a)
                } else {
                    d[c.j].iter().any(|b| c.rel.contains(a, b))
                };
                if !ok {
                    d[c.i].remove(a);
                    changed = true;
                }
            }
            if c.i != c.j {
                for b in d[c.j].to_vec() {
                    if !d[c.i].iter().any(|a| c.rel.contains(a, b)) {
                        d[c.j].remove(b);
                        changed = true;
                    }
                }
            }
        }
        if !changed || d.iter().any(|x| x.is_empty()) {
            return d;
        }
    }
}

/// Every assignment of the instance, by odometer.
pub fn all_solutions(inst: &Instance) -> Vec<Vec<Elem>> {
    let doms: Vec<Vec<Elem>> = inst.domains.iter().map(|d| d.to_vec()).collect();
    if doms.iter().any(|d| d.is_empty()) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; doms.len()];
    loop {
        let h: Vec<Elem> = idx.iter().zip(&doms).map(|(&k, d)| d[k]).collect();
        if inst.constraints.iter().all(|c| c.rel.contains(h[c.i], h[c.j])) {
            out.push(h);
        }
        let mut p = 0;
        loop {
            if p == idx.len() {
                return out;
            }
            idx[p] += 1;
            if idx[p] < doms[p].len() {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

/// Distinct restrictions of the nonempty invariant relations to `x × y`.
pub fn pool(cat: &TemplateCatalog, x: ElemSet, y: ElemSet) -> Vec<BinRel> {
    let s: BTreeSet<u16> = cat.gamma2.iter().map(|r| r.restrict(x, y)).filter(|r| !r.is_empty()).map(|r| r.0).collect();
    s.into_iter().map(BinRel).collect()
}

fn product_choices(pools: &[Vec<Option<BinRel>>], mut f: impl FnMut(&[Option<BinRel>])) {
    let mut idx = vec![0usize; pools.len()];
    let mut pick = vec![None; pools.len()];
    loop {
        for (k, &i) in idx.iter().enumerate() {
            pick[k] = pools[k][i];
        }
        f(&pick);
        let mut p = 0;
        loop {
            if p == idx.len() {
                return;
            }
            idx[p] += 1;
            if idx[p] < pools[p].len() {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

fn with_absent(rels: Vec<BinRel>) -> Vec<Option<BinRel>> {
    std::iter::once(None).chain(rels.into_iter().map(Some)).collect()
}

fn instance_on(domains: Vec<ElemSet>, edges: &[(usize, usize)], pick: &[Option<BinRel>]) -> Instance {
    let cs = edges.iter().zip(pick).filter_map(|(&(i, j), r)| r.map(|rel| edge(i, j, rel))).collect();
    Instance::new(domains, cs).unwrap()
}

/// The exhaustive desk-scale families used for oracle equivalence:
/// one variable with any loop, two variables with any edge over any domains,
/// a triangle and a 4-cycle over full domains with any relations per edge.
/// `cycle_pool` narrows the 4-cycle relations for templates whose full pool is too large.
pub fn exhaustive_family(cat: &TemplateCatalog, cycle_pool: impl Fn(BinRel) -> bool, mut f: impl FnMut(&Instance)) {
    let a = ElemSet::full(cat.l());
    for &d in &cat.gamma1 {
        product_choices(&[with_absent(pool(cat, d, d))], |p| f(&instance_on(vec![d], &[(0, 0)], p)));
    }
    for &d0 in &cat.gamma1 {
        for &d1 in &cat.gamma1 {
            product_choices(&[with_absent(pool(cat, d0, d1))], |p| f(&instance_on(vec![d0, d1], &[(0, 1)], p)));
        }
    }
    let full = with_absent(pool(cat, a, a));
    product_choices(&[full.clone(), full.clone(), full], |p| f(&instance_on(vec![a; 3], &[(0, 1), (1, 2), (0, 2)], p)));
    let narrowed = with_absent(pool(cat, a, a).into_iter().filter(|&r| cycle_pool(r)).collect());
    product_choices(&[narrowed.clone(), narrowed.clone(), narrowed.clone(), narrowed], |p| {
        f(&instance_on(vec![a; 4], &[(0, 1), (1, 2), (2, 3), (0, 3)], p))
    });
}

/// Seeded random corpus: `count` instances with 3..=`max_vars` variables,
/// alternating arbitrary and subdirect relations.
pub fn random_corpus(cat: &TemplateCatalog, count: u64, max_vars: usize, salt: u64) -> Vec<Instance> {
    (0..count)
        .map(|k| {
            let seed = salt.wrapping_mul(1_000_003).wrapping_add(k);
            let p = GenParams {
                vars: 3 + (k as usize) % (max_vars - 2),
                density: 0.2 + 0.1 * (k % 4) as f64,
                loops: 0.05,
                full_domain: 0.7,
                subdirect: k % 2 == 1,
            };
            random_instance(cat, &p, seed)
        })
        .collect()
}

/// Small corpus used by suites that enumerate solution sets.
pub fn small_corpus(cat: &TemplateCatalog, count: u64, salt: u64) -> Vec<Instance> {
    random_corpus(cat, count, 4, salt)
}

/// Dense instances over full domains with relations drawn from the invariant
/// relations that hold half of `A × A` and project onto `A` both ways.
pub fn coset_corpus(cat: &TemplateCatalog, count: u64, salt: u64) -> Vec<Instance> {
    let a = ElemSet::full(cat.l());
    let half = cat.l() * cat.l() / 2;
    let pool: Vec<BinRel> = cat
        .gamma2
        .iter()
        .copied()
        .filter(|r| r.len() == half && r.first_projection() == a && r.second_projection() == a)
        .collect();
    (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(salt.wrapping_mul(1_000_003).wrapping_add(k));
            let n = 4 + (k % 5) as usize;
            let mut cs = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen_bool(0.6) {
                        cs.push(edge(i, j, *pool.choose(&mut rng).expect("nonempty pool")));
                    }
                }
            }
            Instance::new(vec![a; n], cs).unwrap()
        })
        .collect()
}
