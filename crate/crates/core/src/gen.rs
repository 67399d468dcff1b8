//! Seeded instance generators and small digraph enumeration.

use crate::instance::{Constraint, Instance};
use crate::template::TemplateCatalog;
use crate::types::{BinRel, ElemSet};
use crate::witness::Digraph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub vars: usize,
    /// Probability that an ordered pair `i < j` carries a constraint.
    pub density: f64,
    /// Probability of a loop on a variable.
    pub loops: f64,
    /// Probability that a domain is `A` rather than a random subuniverse.
    pub full_domain: f64,
    /// Only relations whose projections are the whole endpoint domains.
    pub subdirect: bool,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { vars: 5, density: 0.5, loops: 0.1, full_domain: 0.5, subdirect: false }
    }
}

/// A valid instance over the catalog's template: domains from `Γ¹`,
/// relations from `Γ²` cut down to the endpoint domains.
pub fn random_instance(cat: &TemplateCatalog, p: &GenParams, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = ElemSet::full(cat.l());
    let domains: Vec<ElemSet> = (0..p.vars)
        .map(|_| if rng.gen_bool(p.full_domain) { full } else { *cat.gamma1.choose(&mut rng).expect("A is a subuniverse") })
        .collect();
    let nonempty: Vec<BinRel> = cat.gamma2.iter().copied().filter(|r| !r.is_empty()).collect();
    let mut constraints = Vec::new();
    for i in 0..p.vars {
        for j in i..p.vars {
            let prob = if i == j { p.loops } else { p.density };
            if !rng.gen_bool(prob) {
                continue;
            }
            let (x, y) = (domains[i], domains[j]);
            let rel = if p.subdirect {
                let pool: Vec<BinRel> = nonempty
                    .iter()
                    .map(|r| r.restrict(x, y))
                    .filter(|r| if i == j { r.diagonal_part() == x } else { r.first_projection() == x && r.second_projection() == y })
                    .collect();
                pool.choose(&mut rng).copied().unwrap_or(BinRel::product(x, y))
            } else {
                nonempty.choose(&mut rng).copied().unwrap_or(BinRel::EMPTY).restrict(x, y)
            };
            let (i, j, rel) = if i != j && rng.gen_bool(0.5) { (j, i, rel.transpose()) } else { (i, j, rel) };
            constraints.push(Constraint { i, j, rel });
        }
    }
    Instance::new(domains, constraints).expect("indices in range")
}

/// A uniformly random digraph with loops on `n` vertices.
pub fn random_digraph(n: usize, density: f64, rng: &mut impl Rng) -> Digraph {
    let mut edges = BTreeSet::new();
    for u in 0..n {
        for v in 0..n {
            if rng.gen_bool(density) {
                edges.insert((u, v));
            }
        }
    }
    Digraph::new(n, edges)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn mask_of(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> u32 {
    edges.fold(0, |m, (u, v)| m | 1 << (u * n + v))
}

/// One representative per isomorphism class of digraphs with loops on `n <= 4` vertices.
pub fn digraph_classes(n: usize) -> Vec<Digraph> {
    assert!(n <= 4, "enumeration is limited to 4 vertices");
    let perms = permutations(n);
    let cells = n * n;
    let mut seen = vec![false; 1 << cells];
    let mut out = Vec::new();
    for m in 0u32..1 << cells {
        if seen[m as usize] {
            continue;
        }
        let pairs: Vec<(usize, usize)> = (0..cells).filter(|k| m >> k & 1 == 1).map(|k| (k / n, k % n)).collect();
        for p in &perms {
            seen[mask_of(n, pairs.iter().map(|&(u, v)| (p[u], p[v]))) as usize] = true;
        }
        out.push(Digraph::new(n, pairs));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_counts_match_known_values() {
        let counts: Vec<usize> = (1..=4).map(|n| digraph_classes(n).len()).collect();
        assert_eq!(counts, vec![2, 10, 104, 3044]);
    }
}
