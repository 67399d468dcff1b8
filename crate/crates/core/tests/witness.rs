mod common;

use common::*;
use wnu_core::gen::{random_instance, GenParams};
use wnu_core::instance::Instance;
use wnu_core::solver::{solve, SolveOutcome};
use wnu_core::template::TemplateCatalog;
use wnu_core::witness::*;
use wnu_core::ElemSet;

fn b2() -> ElemSet {
    ElemSet::full(2)
}

fn reject(inst: &Instance, cat: &TemplateCatalog) -> Trace {
    match solve(inst, cat).unwrap() {
        SolveOutcome::Reject(t) => t,
        SolveOutcome::Accept(h) => panic!("accepted {h:?}"),
    }
}

fn neq_triangle() -> Instance {
    Instance::new(vec![b2(); 3], vec![edge(0, 1, neq2()), edge(1, 2, neq2()), edge(0, 2, neq2())]).unwrap()
}

/// Exhaustive homomorphism check straight from the definition.
fn hom_exists(x: &Digraph, a: &Digraph) -> bool {
    let total = a.n.pow(x.n as u32);
    (0..total).any(|code| {
        let h: Vec<usize> = (0..x.n).map(|i| code / a.n.pow(i as u32) % a.n).collect();
        x.edges.iter().all(|&(u, v)| a.edges.contains(&(h[u], h[v])))
    })
}

#[test]
fn cnf_clause_counts() {
    let x = Digraph::new(2, [(0, 1)]);
    let a = Digraph::new(2, [(0, 1), (1, 0)]);
    let f = encode_cnf(&x, &a);
    assert_eq!(f.num_vars, 4);
    // two at-least-one, two at-most-one, two non-edges of A
    assert_eq!(f.clauses.len(), 6);
    assert_eq!(f.var_map, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    assert!(f.clauses.contains(&vec![1, 2]));
    assert!(f.clauses.contains(&vec![-1, -2]));
    assert!(f.clauses.contains(&vec![-1, -3]));
    assert!(f.clauses.contains(&vec![-2, -4]));
    assert!(cnf_satisfiable(&f).unwrap());
}

#[test]
fn cnf_two_cycle_into_an_edge_is_unsatisfiable() {
    let x = Digraph::new(2, [(0, 1), (1, 0)]);
    let a = Digraph::new(2, [(0, 1)]);
    assert!(!hom_exists(&x, &a));
    assert!(!cnf_satisfiable(&encode_cnf(&x, &a)).unwrap());
}

#[test]
fn cnf_isolated_vertices() {
    let x = Digraph::new(3, [(0, 1)]);
    let a = Digraph::new(2, [(0, 1)]);
    let f = encode_cnf(&x, &a);
    assert_eq!(f.num_vars, 6);
    assert_eq!(f.clauses.len(), 3 + 3 + 3);
    assert!(cnf_satisfiable(&f).unwrap());
    let empty_target = Digraph::new(2, []);
    assert!(!cnf_satisfiable(&encode_cnf(&x, &empty_target)).unwrap());
    assert!(cnf_satisfiable(&encode_cnf(&Digraph::new(3, []), &empty_target)).unwrap());
}

#[test]
fn cnf_agrees_with_exhaustive_homs_on_small_digraphs() {
    let small = wnu_core::gen::digraph_classes(2);
    let targets = wnu_core::gen::digraph_classes(3);
    let mut checked = 0;
    for x in &small {
        for a in &targets {
            assert_eq!(cnf_satisfiable(&encode_cnf(x, a)).unwrap(), hom_exists(x, a), "{x:?} -> {a:?}");
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn cnf_satisfiable_edge_cases() {
    let empty = CnfFormula { num_vars: 0, var_map: vec![], clauses: vec![] };
    assert!(cnf_satisfiable(&empty).unwrap());
    let contra = CnfFormula { num_vars: 1, var_map: vec![], clauses: vec![vec![1], vec![-1]] };
    assert!(!cnf_satisfiable(&contra).unwrap());
    let empty_clause = CnfFormula { num_vars: 2, var_map: vec![], clauses: vec![vec![]] };
    assert!(!cnf_satisfiable(&empty_clause).unwrap());
    let big = CnfFormula { num_vars: CNF_MAX_VARS + 1, var_map: vec![], clauses: vec![] };
    assert!(cnf_satisfiable(&big).is_err());
    let out_of_range = CnfFormula { num_vars: 1, var_map: vec![], clauses: vec![vec![2]] };
    assert!(cnf_satisfiable(&out_of_range).is_err());
}

#[test]
fn dimacs_roundtrip() {
    let x = Digraph::new(3, [(0, 1), (1, 2), (2, 0)]);
    let a = Digraph::new(3, [(0, 1), (1, 2), (2, 0)]);
    let f = encode_cnf(&x, &a);
    let text = f.to_dimacs();
    assert!(text.starts_with("c varmap 1=0,0 2=0,1 3=0,2 4=1,0"));
    assert!(text.contains(&format!("p cnf 9 {}", f.clauses.len())));
    assert!(text.lines().skip(2).all(|l| l.ends_with(" 0")));
    assert_eq!(CnfFormula::from_dimacs(&text).unwrap(), f);
    assert_eq!(encode_cnf(&x, &a).to_dimacs(), text);
}

#[test]
fn dimacs_parse_errors() {
    assert!(CnfFormula::from_dimacs("1 -2 0\n").is_err());
    assert!(CnfFormula::from_dimacs("p cnf 2 1\n1 x 0\n").is_err());
    assert!(CnfFormula::from_dimacs("c varmap 1=0\np cnf 1 0\n").is_err());
    let f = CnfFormula::from_dimacs("c plain comment\np cnf 2 2\n1 -2 0\n2\n0\n").unwrap();
    assert_eq!(f.clauses, vec![vec![1, -2], vec![2]]);
    assert!(f.var_map.is_empty());
}

#[test]
fn hom_instance_matches_the_cnf() {
    let x = Digraph::new(3, [(0, 1), (1, 2)]);
    let a = Digraph::new(2, [(0, 1), (1, 0)]);
    let inst = Digraph::hom_instance(&x, &a).unwrap();
    assert_eq!(inst.n(), 3);
    assert_eq!(inst.constraints.len(), 2);
    assert_eq!(brute_force_hom(&inst, ORACLE_CAP).unwrap().is_some(), cnf_satisfiable(&encode_cnf(&x, &a)).unwrap());
    assert!(Digraph::hom_instance(&x, &Digraph::new(5, [])).is_err());
}

#[test]
fn brute_force_hom_examples() {
    assert!(brute_force_hom(&neq_triangle(), ORACLE_CAP).unwrap().is_none());
    let path = Instance::new(vec![b2(); 3], vec![edge(0, 1, neq2()), edge(1, 2, neq2())]).unwrap();
    let h = brute_force_hom(&path, ORACLE_CAP).unwrap().unwrap();
    assert!(path.is_solution(&h));
    assert!(brute_force_hom(&path, 1).is_err());
}

#[test]
fn solver_traces_verify() {
    let t = reject(&neq_triangle(), catalog("maj3"));
    assert_eq!(t.version, TRACE_VERSION);
    assert_eq!(t.template_digest, catalog("maj3").digest);
    verify_trace(&t, catalog("maj3")).unwrap();
    assert!(t.steps.last().unwrap().kind.is_terminal());
    assert!(t.steps[..t.steps.len() - 1].iter().all(|s| !s.kind.is_terminal()));
    for w in t.steps.windows(2) {
        assert_eq!(w[0].after, w[1].before);
    }
    let xor = reject(&neq_triangle(), catalog("affine"));
    verify_trace(&xor, catalog("affine")).unwrap();
}

#[test]
fn trace_bound_to_its_template() {
    let t = reject(&neq_triangle(), catalog("maj3"));
    let e = verify_trace(&t, catalog("affine")).unwrap_err();
    assert!(e.reason.contains("digest"));
    let mut empty = t.clone();
    empty.steps.clear();
    assert!(verify_trace(&empty, catalog("maj3")).is_err());
    let mut truncated = t.clone();
    truncated.steps.pop();
    if !truncated.steps.is_empty() {
        assert!(verify_trace(&truncated, catalog("maj3")).is_err());
    }
}

#[test]
fn ndjson_roundtrip() {
    for name in ["maj3", "affine"] {
        let t = reject(&neq_triangle(), catalog(name));
        let text = t.to_ndjson();
        assert_eq!(text.lines().count(), t.steps.len() + 1);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["record"], "header");
        for (k, line) in text.lines().skip(1).enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["record"], "step");
            assert_eq!(v["index"], k);
            assert!(v["kind"].is_string());
        }
        let back = Trace::from_ndjson(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_ndjson(), text);
    }
    assert!(Trace::from_ndjson("").is_err());
    assert!(Trace::from_ndjson("{\"record\":\"step\"}\n").is_err());
}

#[test]
fn corruptions_are_rejected() {
    let mut applied = std::collections::BTreeMap::new();
    for name in ["maj3", "affine", "semilattice", "median3", "z3", "z2xz2", "rps"] {
        let cat = catalog(name);
        for seed in 0..300 {
            let inst = random_instance(cat, &GenParams::default(), seed);
            let SolveOutcome::Reject(t) = solve(&inst, cat).unwrap() else { continue };
            verify_trace(&t, cat).unwrap();
            for c in CORRUPTIONS {
                if let Some(bad) = corrupt(&t, cat, c) {
                    assert_ne!(bad, t);
                    assert!(verify_trace(&bad, cat).is_err(), "{name} seed {seed} {c:?} accepted");
                    *applied.entry(format!("{c:?}")).or_insert(0) += 1;
                }
            }
        }
    }
    for c in ["DigestBreak", "FalseEmptyDomain", "ValueResurrection", "StepReorder"] {
        assert!(applied.get(c).copied().unwrap_or(0) > 0, "{c} never applied: {applied:?}");
    }
}

#[test]
fn false_empty_domain_on_a_nonempty_domain() {
    let cat = catalog("maj3");
    let t = reject(&neq_triangle(), cat);
    let bad = corrupt(&t, cat, Corruption::FalseEmptyDomain).unwrap();
    let e = verify_trace(&bad, cat).unwrap_err();
    assert_eq!(e.path, vec![bad.steps.len() - 1]);
}

fn descent_trace(inst: &Instance, cat: &TemplateCatalog, branches: Vec<ClassBranch>) -> Trace {
    let d = inst.digest();
    let step = TraceStep { before: d.clone(), after: d, kind: StepKind::ClassDescent { branches } };
    Trace::new(&cat.digest, inst, vec![step])
}

#[test]
fn class_descent_branches_are_checked() {
    let aff = catalog("affine");
    let chain = Instance::new(vec![b2(); 3], vec![edge(0, 1, neq2()), edge(1, 2, neq2())]).unwrap();
    // the system has solutions, so an empty descent is not a refutation
    let e = verify_trace(&descent_trace(&chain, aff, vec![]), aff).unwrap_err();
    assert!(e.reason.contains("branches"));
    // one class point, whose branch is forged as a rejection
    let point = vec![set(&[0]), set(&[1]), set(&[0])];
    let sub = wnu_core::instance::reduce(&chain, &point).unwrap();
    let forged = descent_trace(&sub, aff, vec![]);
    let branch = ClassBranch { domains: point.clone(), trace: forged.clone() };
    assert!(verify_trace(&descent_trace(&chain, aff, vec![branch.clone()]), aff).is_err());
    let other = ClassBranch { domains: vec![set(&[1]), set(&[0]), set(&[1])], trace: forged };
    let e = verify_trace(&descent_trace(&chain, aff, vec![branch.clone(), other]), aff).unwrap_err();
    assert_eq!(e.path, vec![0, 0, 0]);
    let e = verify_trace(&descent_trace(&chain, aff, vec![branch.clone(), branch]), aff).unwrap_err();
    assert!(e.reason.contains("branches"));
    // an inconsistent system leaves no class to try
    let t = neq_triangle();
    verify_trace(&descent_trace(&t, aff, vec![]), aff).unwrap();
    let wrong = ClassBranch { domains: point, trace: descent_trace(&t, aff, vec![]) };
    assert!(verify_trace(&descent_trace(&t, aff, vec![wrong]), aff).is_err());
}
