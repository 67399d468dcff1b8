use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wnu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wnu")).args(args).env_clear().output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn put(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const NEQ_TRIANGLE: &str = r#"{"version":1,"n":3,"domains":[[0,1],[0,1],[0,1]],"edges":[
{"i":0,"j":1,"tuples":[[0,1],[1,0]]},{"i":1,"j":2,"tuples":[[0,1],[1,0]]},{"i":0,"j":2,"tuples":[[0,1],[1,0]]}]}"#;

const NEQ_PATH: &str = r#"{"version":1,"n":3,"domains":[[0,1],[0,1],[0,1]],"edges":[
{"i":0,"j":1,"tuples":[[0,1],[1,0]]},{"i":1,"j":2,"tuples":[[0,1],[1,0]]}]}"#;

#[test]
fn fixture_and_analyze() {
    let o = wnu(&["fixture", "maj3"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v.is_object());
    assert_eq!(code(&wnu(&["fixture", "nope"])), 2);
    let o = wnu(&["analyze", "--template", "maj3"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("gamma2 16"), "{text}");
    assert!(text.contains("one-of-four violations 0"), "{text}");
}

#[test]
fn template_from_a_file() {
    let d = scratch("template_file");
    let t = put(&d, "maj3.json", &stdout(&wnu(&["fixture", "maj3"])));
    let from_file = stdout(&wnu(&["analyze", "--template", &t]));
    assert_eq!(from_file, stdout(&wnu(&["analyze", "--template", "maj3"])));
    let bad = put(&d, "bad.json", "{not json");
    assert_eq!(code(&wnu(&["analyze", "--template", &bad])), 2);
}

#[test]
fn solve_accept_and_reject() {
    let d = scratch("solve");
    let path = put(&d, "path.json", NEQ_PATH);
    let o = wnu(&["solve", "--template", "maj3", "--instance", &path]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["outcome"], "accept");
    let a = &v["assignment"];
    assert_ne!(a["0"], a["1"]);
    assert_ne!(a["1"], a["2"]);
    assert_eq!(stdout(&wnu(&["solve", "--template", "maj3", "--instance", &path])), stdout(&o));

    let tri = put(&d, "tri.json", NEQ_TRIANGLE);
    let trace = d.join("trace.ndjson");
    let trace = trace.to_str().unwrap();
    let o = wnu(&["solve", "--template", "maj3", "--instance", &tri, "--trace-out", trace]);
    assert_eq!(code(&o), 20);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["outcome"], "reject");
    let first = fs::read_to_string(trace).unwrap();
    wnu(&["solve", "--template", "maj3", "--instance", &tri, "--trace-out", trace]);
    assert_eq!(fs::read_to_string(trace).unwrap(), first);
}

#[test]
fn verify_good_and_corrupted_traces() {
    let d = scratch("verify");
    let tri = put(&d, "tri.json", NEQ_TRIANGLE);
    let trace = d.join("trace.ndjson").to_str().unwrap().to_string();
    assert_eq!(code(&wnu(&["solve", "--template", "affine", "--instance", &tri, "--trace-out", &trace])), 20);
    let o = wnu(&["verify", "--template", "affine", "--trace", &trace]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("OK"));
    assert_eq!(code(&wnu(&["verify", "--template", "affine", "--instance", &tri, "--trace", &trace])), 0);
    assert_eq!(code(&wnu(&["verify", "--template", "maj3", "--trace", &trace])), 1);

    let path = put(&d, "path.json", NEQ_PATH);
    let o = wnu(&["verify", "--template", "affine", "--instance", &path, "--trace", &trace]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).starts_with("FAIL"));

    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let after = lines[1]["after"].as_str().unwrap().to_string();
    let flipped = format!("{}{}", &after[..after.len() - 1], if after.ends_with('0') { '1' } else { '0' });
    lines[1]["after"] = flipped.into();
    let bad: String = lines.iter().map(|v| format!("{v}\n")).collect();
    let bad = put(&d, "bad.ndjson", &bad);
    let o = wnu(&["verify", "--template", "affine", "--trace", &bad]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).starts_with("FAIL step 0"), "{}", stdout(&o));
    let garbage = put(&d, "garbage.ndjson", "hello\n");
    assert_eq!(code(&wnu(&["verify", "--template", "affine", "--trace", &garbage])), 2);
}

#[test]
fn oracle_agrees_with_solve() {
    let d = scratch("oracle");
    for seed in 0..20 {
        let inst = d.join(format!("g{seed}.json"));
        let inst = inst.to_str().unwrap();
        let s = seed.to_string();
        assert_eq!(code(&wnu(&["gen", "--template", "median3", "--seed", &s, "--out", inst])), 0);
        let a = code(&wnu(&["solve", "--template", "median3", "--instance", inst]));
        let b = code(&wnu(&["oracle", "--template", "median3", "--instance", inst]));
        assert!(a == 0 || a == 20);
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn gen_is_reproducible() {
    let a = wnu(&["gen", "--template", "rps", "--seed", "7", "--vars", "6"]);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&wnu(&["gen", "--template", "rps", "--seed", "7", "--vars", "6"])));
    let v: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(v["n"], 6);
    let seeds: std::collections::BTreeSet<String> =
        (0..5).map(|s| stdout(&wnu(&["gen", "--template", "rps", "--seed", &s.to_string()]))).collect();
    assert!(seeds.len() > 1);
    assert_eq!(code(&wnu(&["gen", "--template", "rps", "--density", "1.5"])), 2);
}

#[test]
fn encode_cnf_is_byte_stable() {
    let d = scratch("cnf");
    let x = put(&d, "x.json", r#"{"n":3,"edges":[[0,1],[1,2],[2,0]]}"#);
    let a = put(&d, "a.json", r#"{"n":2,"edges":[[0,1],[1,0]]}"#);
    let o = wnu(&["encode-cnf", "--source", &x, "--target", &a]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("c varmap 1=0,0 2=0,1 3=1,0"));
    // 3 at-least-one, 3 at-most-one, 3 edges times 2 non-edges
    assert!(text.contains("p cnf 6 12\n"), "{text}");
    let out = d.join("f.cnf");
    let out = out.to_str().unwrap();
    assert_eq!(code(&wnu(&["encode-cnf", "--source", &x, "--target", &a, "--cnf-out", out])), 0);
    assert_eq!(fs::read_to_string(out).unwrap(), text);
    let broken = put(&d, "broken.json", r#"{"n":1,"edges":[[0,3]]}"#);
    assert_eq!(code(&wnu(&["encode-cnf", "--source", &broken, "--target", &a])), 2);
}

#[test]
fn input_and_limit_errors() {
    let d = scratch("errors");
    assert_eq!(code(&wnu(&["solve", "--template", "maj3", "--instance", "/nonexistent/i.json"])), 2);
    let bad_domain = put(&d, "i.json", r#"{"version":1,"n":1,"domains":[[0,7]],"edges":[]}"#);
    let o = wnu(&["solve", "--template", "maj3", "--instance", &bad_domain]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert_eq!(code(&wnu(&["analyze", "--template", "maj3", "--max-domain", "1"])), 3);
    assert_eq!(code(&wnu(&["gen", "--template", "maj3", "--vars", "50", "--max-vars", "10"])), 3);
    let path = put(&d, "path.json", NEQ_PATH);
    assert_eq!(code(&wnu(&["solve", "--template", "maj3", "--instance", &path, "--max-vars", "2"])), 3);
    assert_eq!(code(&wnu(&["bogus"])), 2);
}

#[test]
fn options_from_the_environment() {
    let d = scratch("env");
    let tri = put(&d, "tri.json", NEQ_TRIANGLE);
    let o = Command::new(env!("CARGO_BIN_EXE_wnu"))
        .arg("solve")
        .env_clear()
        .env("WNU_TEMPLATE", "maj3")
        .env("WNU_INSTANCE", &tri)
        .output()
        .unwrap();
    assert_eq!(code(&o), 20);
}
