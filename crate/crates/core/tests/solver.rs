mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wnu_core::instance::{Instance, ReductionKind, ReductionVector};
use wnu_core::solver::*;
use wnu_core::witness::{brute_force_hom, verify_trace, StepKind, ORACLE_CAP};
use wnu_core::{BinRel, ElemSet, Limits};

fn inst(domains: Vec<ElemSet>, edges: &[(usize, usize, BinRel)]) -> Instance {
    Instance::new(domains, edges.iter().map(|&(i, j, r)| edge(i, j, r)).collect()).unwrap()
}

fn b2() -> ElemSet {
    ElemSet::full(2)
}

fn lex_size(domains: &[ElemSet]) -> Vec<usize> {
    let mut distinct: Vec<ElemSet> = domains.to_vec();
    distinct.sort();
    distinct.dedup();
    let mut t: Vec<usize> = distinct.iter().map(|d| d.len()).collect();
    t.sort_unstable_by(|a, b| b.cmp(a));
    t
}

fn eqn(prime: u8, coeffs: &[(usize, u8)], rhs: u8) -> Equation {
    Equation { prime, coeffs: coeffs.to_vec(), rhs }
}

fn system(primes: &[u8], equations: Vec<Equation>) -> LinearSystem {
    LinearSystem {
        slots: primes.iter().enumerate().map(|(var, &prime)| Slot { var, coord: 0, prime }).collect(),
        equations,
    }
}

fn satisfies(sys: &LinearSystem, x: &[u8]) -> bool {
    sys.equations.iter().all(|e| {
        let p = e.prime as u32;
        e.coeffs.iter().map(|&(s, c)| c as u32 * x[s] as u32).sum::<u32>() % p == e.rhs as u32 % p
    })
}

fn all_points(sys: &LinearSystem) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for s in &sys.slots {
        out = out.into_iter().flat_map(|v: Vec<u8>| (0..s.prime).map(move |a| [v.clone(), vec![a]].concat())).collect();
    }
    out.into_iter().filter(|x| satisfies(sys, x)).collect()
}

#[test]
fn size_measure_examples() {
    let m = size_measure(&[b2(), b2(), ElemSet::full(3)]);
    assert_eq!(m.tuple, vec![3, 2]);
    assert_eq!(m.counts[3], 1);
    assert_eq!(m.counts[2], 1);
    assert_eq!(size_measure(&[b2(); 5]).tuple, vec![2]);
    let a = size_measure(&[set(&[0]), set(&[1])]);
    assert_eq!(a.tuple, vec![1, 1]);
    assert!(a < size_measure(&[b2()]));
}

#[test]
fn size_measure_orders_like_the_lexicographic_tuple() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let random = |rng: &mut ChaCha8Rng| -> Vec<ElemSet> {
        let n = rng.gen_range(1..7);
        (0..n).map(|_| ElemSet(rng.gen_range(1..16))).collect()
    };
    for _ in 0..2000 {
        let (x, y) = (random(&mut rng), random(&mut rng));
        let (mx, my) = (size_measure(&x), size_measure(&y));
        assert_eq!(mx.cmp(&my), lex_size(&x).cmp(&lex_size(&y)), "{x:?} {y:?}");
        if x.len() == y.len() {
            assert_eq!(mx.encoding.cmp(&my.encoding), lex_size(&x).cmp(&lex_size(&y)), "{x:?} {y:?}");
        }
    }
}

#[test]
fn shrinking_every_copy_of_a_domain_decreases_the_measure() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut done = 0;
    while done < 100 {
        let n = rng.gen_range(1..7);
        let doms: Vec<ElemSet> = (0..n).map(|_| ElemSet(rng.gen_range(1..16))).collect();
        let d = doms[rng.gen_range(0..n)];
        let subs: Vec<ElemSet> = d.subsets().into_iter().filter(|s| !s.is_empty() && *s != d).collect();
        if subs.is_empty() {
            continue;
        }
        let p = subs[rng.gen_range(0..subs.len())];
        let red: Vec<ElemSet> = doms.iter().map(|&x| if x == d { p } else { x }).collect();
        let (before, after) = (size_measure(&doms), size_measure(&red));
        assert!(after < before, "{doms:?} -> {red:?}");
        assert!(after.encoding < before.encoding);
        done += 1;
    }
}

#[test]
fn next_reduction_examples() {
    let semi = catalog("semilattice");
    let one = inst(vec![b2()], &[]);
    let r = find_next_reduction(&one, semi).unwrap().expect("∧ absorbs {0}");
    assert_eq!(r.kind, ReductionKind::BinaryAbsorbing);
    assert_eq!(r.domains, vec![set(&[0])]);
    let (min, minimal) = minimize_reduction(&one, &r, semi);
    assert!(minimal);
    assert_eq!(min, r);
    let maj = catalog("maj3");
    let r = find_next_reduction(&one, maj).unwrap().expect("central singleton");
    assert_eq!(r.kind, ReductionKind::Central);
    assert_eq!(r.domains, vec![set(&[0])]);
    assert!(find_next_reduction(&one, catalog("affine")).unwrap().is_none());
    let p = inst(vec![set(&[0]), b2()], &[(0, 1, eq(b2()))]);
    let r = find_next_reduction(&p, maj).unwrap().unwrap();
    assert_eq!(r.kind, ReductionKind::Consistency);
    assert_eq!(r.domains, vec![set(&[0]), set(&[0])]);
}

#[test]
fn minimize_descends_to_a_minimal_component() {
    for name in ["maj3", "semilattice", "rps", "median3"] {
        let cat = catalog(name);
        for i in small_corpus(cat, 200, 131) {
            let Ok(Some(Move::OneOfFour { reduction, .. })) = next_move(&i, cat) else { continue };
            let (min, minimal) = minimize_reduction(&i, &reduction, cat);
            assert!(min.domains.iter().zip(&reduction.domains).all(|(a, b)| a.is_subset(*b)));
            assert!(min.domains.iter().all(|d| !d.is_empty()));
            if minimal {
                for (&d, &r) in i.domains.iter().zip(&min.domains) {
                    assert!(is_minimal_of_kind(cat, d, r, &min.kind), "{name} {}", i.canonical_json());
                }
            }
            let again = minimize_reduction(&i, &min, cat);
            assert_eq!(again.0, min);
        }
    }
}

#[test]
fn neq_triangle_over_maj3_is_rejected() {
    let t = inst(vec![b2(); 3], &[(0, 1, neq2()), (1, 2, neq2()), (0, 2, neq2())]);
    match solve(&t, catalog("maj3")).unwrap() {
        SolveOutcome::Reject(trace) => {
            verify_trace(&trace, catalog("maj3")).unwrap();
            assert!(matches!(trace.steps.last().unwrap().kind, StepKind::EmptyDomain { .. }));
        }
        SolveOutcome::Accept(h) => panic!("accepted {h:?}"),
    }
}

#[test]
fn equality_path_is_accepted_with_a_constant_map() {
    let p = inst(vec![b2(); 4], &[(0, 1, eq(b2())), (1, 2, eq(b2())), (2, 3, eq(b2()))]);
    for name in ["maj3", "affine", "semilattice"] {
        let SolveOutcome::Accept(h) = solve(&p, catalog(name)).unwrap() else { panic!("{name} rejected") };
        assert!(p.is_solution(&h));
        assert!(h.iter().all(|&a| a == h[0]));
    }
}

#[test]
fn xor_examples_over_the_affine_fixture() {
    let aff = catalog("affine");
    let t = inst(vec![b2(); 3], &[(0, 1, neq2()), (1, 2, neq2()), (0, 2, neq2())]);
    assert!(all_solutions(&t).is_empty());
    let SolveOutcome::Reject(trace) = solve(&t, aff).unwrap() else { panic!("XOR triangle accepted") };
    verify_trace(&trace, aff).unwrap();
    let chain = inst(vec![b2(); 4], &[(0, 1, neq2()), (1, 2, neq2()), (2, 3, neq2())]);
    let SolveOutcome::Accept(h) = solve(&chain, aff).unwrap() else { panic!("XOR chain rejected") };
    assert!(chain.is_solution(&h));
    let full = inst(vec![b2(); 3], &[(0, 1, BinRel::product(b2(), b2()))]);
    assert!(solve(&full, aff).unwrap().is_accept());
}

#[test]
fn linear_system_of_an_xor_chain() {
    let aff = catalog("affine");
    let chain = inst(vec![b2(); 3], &[(0, 1, neq2()), (1, 2, neq2())]);
    let (sys, factors) = linear_system(&chain, aff).unwrap();
    assert_eq!(sys.slots.len(), 3);
    assert_eq!(factors.len(), 3);
    let pts = all_points(&sys);
    let sols = all_solutions(&chain);
    assert_eq!(pts.len(), sols.len());
    for pt in &pts {
        let classes = point_classes(&chain, &factors, pt).unwrap();
        assert!(classes.iter().all(|c| c.len() == 1));
        let h: Vec<_> = classes.iter().map(|&c| c.min().unwrap()).collect();
        assert!(chain.is_solution(&h));
    }
    let GaussOutcome::AffineBasis { particular, basis } = gaussian_solve(&sys).unwrap() else { panic!("inconsistent") };
    assert_eq!(enumerate_affine(&sys, &particular, &basis, 64).unwrap(), pts);
}

#[test]
fn gaussian_examples() {
    let contra = system(&[2], vec![eqn(2, &[(0, 1)], 1), eqn(2, &[(0, 1)], 0)]);
    let GaussOutcome::Inconsistent(cert) = gaussian_solve(&contra).unwrap() else { panic!("consistent") };
    assert_eq!(cert.coefficients, vec![1, 1]);
    assert!(check_certificate(&contra, &cert));
    let empty = system(&[2, 3], vec![]);
    let GaussOutcome::AffineBasis { particular, basis } = gaussian_solve(&empty).unwrap() else { panic!() };
    assert_eq!(particular, vec![0, 0]);
    assert_eq!(basis.len(), 2);
    assert_eq!(enumerate_affine(&empty, &particular, &basis, 100).unwrap().len(), 6);
    let z3 = system(&[3; 3], vec![eqn(3, &[(0, 1), (1, 1)], 1), eqn(3, &[(1, 1), (2, 1)], 2), eqn(3, &[(0, 1), (2, 1)], 0)]);
    let pts = all_points(&z3);
    assert_eq!(pts.len(), 1);
    let GaussOutcome::AffineBasis { particular, basis } = gaussian_solve(&z3).unwrap() else { panic!() };
    assert!(basis.is_empty());
    assert_eq!(vec![particular], pts);
    let mixed = LinearSystem { slots: vec![Slot { var: 0, coord: 0, prime: 2 }], equations: vec![eqn(3, &[(0, 1)], 1)] };
    assert!(gaussian_solve(&mixed).is_err());
    assert!(enumerate_affine(&empty, &[0, 0], &[vec![1, 0], vec![0, 1]], 5).is_err());
}

#[test]
fn certificates_are_checked_exactly() {
    let contra = system(&[2], vec![eqn(2, &[(0, 1)], 1), eqn(2, &[(0, 1)], 0)]);
    let bad = LinearCertificate { prime: 2, coefficients: vec![1, 0] };
    assert!(!check_certificate(&contra, &bad));
    assert!(!check_certificate(&contra, &LinearCertificate { prime: 2, coefficients: vec![1] }));
}

#[test]
fn validate_strategy_examples() {
    assert!(validate_strategy(&inst(vec![b2()], &[]), &wnu_core::solver::Strategy::default(), catalog("maj3")).is_ok());
    let maj = catalog("maj3");
    let mut produced = 0;
    for name in ["maj3", "semilattice", "rps", "median3"] {
        let cat = catalog(name);
        for i in random_corpus(cat, 125, 8, 141) {
            let report = solve_with(&i, cat, Limits::default()).unwrap();
            assert!(validate_strategy(&i, &report.strategy, cat).is_ok(), "{name} {}", i.canonical_json());
            produced += 1;
        }
    }
    assert_eq!(produced, 500);
    let one = inst(vec![b2()], &[]);
    let report = solve_with(&one, maj, Limits::default()).unwrap();
    let mut s = report.strategy.clone();
    assert!(!s.steps.is_empty());
    s.steps[0].reduction = ReductionVector { domains: vec![b2()], kind: ReductionKind::Central };
    assert!(validate_strategy(&one, &s, maj).is_err());
    let mut s = report.strategy.clone();
    s.steps[0].reduction.kind = ReductionKind::BinaryAbsorbing;
    let v = validate_strategy(&one, &s, maj).unwrap_err();
    assert_eq!(v.step, 0);
    let mut s = report.strategy;
    s.steps[0].reduction.kind = ReductionKind::Consistency;
    assert!(validate_strategy(&one, &s, maj).is_err());
}

#[test]
fn solver_agrees_with_brute_force() {
    for name in ["maj3", "affine", "semilattice", "rps", "z3", "median3", "z2xz2"] {
        let cat = catalog(name);
        for i in random_corpus(cat, 150, 8, 151) {
            let out = solve(&i, cat).unwrap();
            let want = brute_force_hom(&i, ORACLE_CAP).unwrap();
            assert_eq!(out.is_accept(), want.is_some(), "{name} {}", i.canonical_json());
            match out {
                SolveOutcome::Accept(h) => assert!(i.is_solution(&h)),
                SolveOutcome::Reject(t) => verify_trace(&t, cat).unwrap(),
            }
        }
    }
}

#[test]
fn limits_are_enforced() {
    let big = inst(vec![b2(); 5], &[]);
    let tight = Limits { max_vars: 4, ..Limits::default() };
    assert!(solve_with(&big, catalog("maj3"), tight).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn gaussian_elimination_matches_enumeration(seed in 0u64..1_000_000, three in any::<bool>()) {
        let p = if three { 3 } else { 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(0..5usize);
        let m = rng.gen_range(0..6usize);
        let eqs = (0..m)
            .map(|_| {
                let coeffs: Vec<(usize, u8)> = (0..n).map(|s| (s, rng.gen_range(0..p))).filter(|&(_, c)| c != 0).collect();
                eqn(p, &coeffs, rng.gen_range(0..p))
            })
            .collect();
        let sys = system(&vec![p; n], eqs);
        let want = all_points(&sys);
        match gaussian_solve(&sys).unwrap() {
            GaussOutcome::Inconsistent(cert) => {
                prop_assert!(want.is_empty());
                prop_assert!(check_certificate(&sys, &cert));
            }
            GaussOutcome::AffineBasis { particular, basis } => {
                prop_assert!(satisfies(&sys, &particular));
                prop_assert_eq!(enumerate_affine(&sys, &particular, &basis, 1 << 12).unwrap(), want);
            }
        }
    }

    #[test]
    fn solve_is_deterministic(seed in 0u64..100_000) {
        let cat = catalog("rps");
        let i = random_corpus(cat, 1, 8, seed).remove(0);
        let a = solve(&i, cat).unwrap();
        let b = solve(&i, cat).unwrap();
        prop_assert_eq!(a, b);
    }
}
