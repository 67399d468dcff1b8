use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use wnu_core::gen::{random_instance, GenParams};
use wnu_core::instance::{parse_instance, write_instance, Instance, InstanceFile};
use wnu_core::solver::{solve_with, SolveOutcome};
use wnu_core::template::{build_catalog, parse_template, TemplateCatalog, TemplateFile};
use wnu_core::witness::{brute_force_hom, encode_cnf, verify_trace, Digraph, Trace, ORACLE_CAP};
use wnu_core::{fixtures, Error, Limits};

#[derive(Parser)]
#[command(name = "wnu", version, about = "CSP solver over a fixed template with a special WNU polymorphism")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Caps {
    /// Largest template universe accepted.
    #[arg(long, env = "WNU_MAX_DOMAIN", default_value_t = Limits::default().max_domain)]
    max_domain: usize,
    /// Largest instance accepted by the solver.
    #[arg(long, env = "WNU_MAX_VARS", default_value_t = Limits::default().max_vars)]
    max_vars: usize,
    /// Budget for explicit enumerations.
    #[arg(long, env = "WNU_ENUM_BUDGET", default_value_t = Limits::default().enum_budget)]
    enum_budget: usize,
}

impl Caps {
    fn limits(self) -> Limits {
        Limits { max_domain: self.max_domain, max_vars: self.max_vars, enum_budget: self.enum_budget }
    }
}

#[derive(Args)]
struct TemplateArg {
    /// Template JSON file, or the name of a built-in fixture.
    #[arg(long, env = "WNU_TEMPLATE")]
    template: String,
}

#[derive(Subcommand)]
enum Command {
    /// Build the template catalog and print counts and the classification table.
    Analyze {
        #[command(flatten)]
        template: TemplateArg,
        #[command(flatten)]
        caps: Caps,
    },
    /// Solve an instance; exit 0 with a homomorphism or 20 with a rejection trace.
    Solve {
        #[command(flatten)]
        template: TemplateArg,
        #[arg(long, env = "WNU_INSTANCE")]
        instance: PathBuf,
        /// Where to write the rejection trace (NDJSON).
        #[arg(long, env = "WNU_TRACE_OUT")]
        trace_out: Option<PathBuf>,
        #[command(flatten)]
        caps: Caps,
    },
    /// Check a rejection trace; exit 0 if it verifies, 1 otherwise.
    Verify {
        #[command(flatten)]
        template: TemplateArg,
        /// Instance the trace must start from.
        #[arg(long, env = "WNU_INSTANCE")]
        instance: Option<PathBuf>,
        #[arg(long, env = "WNU_TRACE")]
        trace: PathBuf,
        #[command(flatten)]
        caps: Caps,
    },
    /// Emit the CNF of the non-existence of a homomorphism between two digraphs.
    EncodeCnf {
        /// Source digraph X (JSON).
        #[arg(long)]
        source: PathBuf,
        /// Target digraph A (JSON).
        #[arg(long)]
        target: PathBuf,
        #[arg(long, env = "WNU_CNF_OUT")]
        cnf_out: Option<PathBuf>,
    },
    /// Generate a seeded random instance over a template.
    Gen {
        #[command(flatten)]
        template: TemplateArg,
        #[arg(long, env = "WNU_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = GenParams::default().vars)]
        vars: usize,
        #[arg(long, default_value_t = GenParams::default().density)]
        density: f64,
        #[arg(long, default_value_t = GenParams::default().loops)]
        loops: f64,
        #[arg(long, default_value_t = GenParams::default().full_domain)]
        full_domain: f64,
        /// Only relations with full projections onto the endpoint domains.
        #[arg(long)]
        subdirect: bool,
        #[arg(long, env = "WNU_OUT")]
        out: Option<PathBuf>,
        #[command(flatten)]
        caps: Caps,
    },
    /// Decide an instance by plain backtracking; exit 0 or 20 like `solve`.
    Oracle {
        #[command(flatten)]
        template: TemplateArg,
        #[arg(long, env = "WNU_INSTANCE")]
        instance: PathBuf,
        #[command(flatten)]
        caps: Caps,
    },
    /// Print a built-in fixture as a template file.
    Fixture {
        /// One of the fixture names.
        name: String,
    },
}

enum Failure {
    Input(String),
    Limit(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::Validation(_) => Failure::Input(e.to_string()),
            Error::Limit(_) => Failure::Limit(e.to_string()),
            Error::Internal(_) => Failure::Internal(e.to_string()),
        }
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_catalog(t: &TemplateArg, caps: Caps) -> Result<TemplateCatalog, Failure> {
    let path = Path::new(&t.template);
    let alg = if path.exists() {
        parse_template(&read(path)?)?
    } else {
        fixtures::by_name(&t.template)
            .ok_or_else(|| Failure::Input(format!("{}: no such file or fixture", t.template)))?
    };
    if alg.l() > caps.max_domain {
        return Err(Failure::Limit(format!("l = {} exceeds max-domain = {}", alg.l(), caps.max_domain)));
    }
    Ok(build_catalog(&alg)?)
}

fn load_instance(path: &Path, cat: &TemplateCatalog) -> Result<Instance, Failure> {
    let inst = parse_instance(&read(path)?, Some(cat))?;
    wnu_core::instance::validate_or_err(&inst, cat)?;
    Ok(inst)
}

fn print_assignment(inst: &Instance, h: &[u8]) {
    let assignment: serde_json::Map<String, serde_json::Value> =
        inst.labels.iter().zip(h).map(|(l, &a)| (l.to_string(), a.into())).collect();
    println!("{}", serde_json::json!({ "outcome": "accept", "assignment": assignment }));
}

fn analyze(t: &TemplateArg, caps: Caps) -> CmdResult {
    let cat = load_catalog(t, caps)?;
    println!("template {}", cat.digest);
    println!("l {} arity {}", cat.l(), cat.algebra.arity());
    println!("gamma1 {}", cat.gamma1.len());
    println!("gamma2 {}", cat.gamma2.len());
    println!("pol2 {}", cat.pol2.len());
    match &cat.pol3 {
        Some(p) => println!("pol3 {}", p.len()),
        None => println!("pol3 capped"),
    }
    let congruences: usize = cat.domains.iter().map(|d| d.congruences.len()).sum();
    println!("congruences {congruences}");
    println!("bridges {}{}", cat.bridges.len(), if cat.bridges_complete { "" } else { " (capped)" });
    for d in &cat.domains {
        let congs: Vec<String> = d.congruences.iter().map(|c| format!("{:?}", c.relation)).collect();
        println!("domain {:?} congruences [{}] cong_pc {:?} cong_lin {:?}", d.universe, congs.join(", "), d.cong_pc, d.cong_lin);
        for c in d.classification.iter().filter(|c| !c.trivial) {
            let mut kinds = Vec::new();
            if c.ba_term().is_some() {
                kinds.push(if c.minimal_ba { "BA*" } else { "BA" });
            }
            if c.central_term().is_some() {
                kinds.push(if c.minimal_central { "central*" } else { "central" });
            }
            if c.is_pc() {
                kinds.push(if c.minimal_pc { "PC*" } else { "PC" });
            }
            if c.is_linear() {
                kinds.push(if c.minimal_linear { "linear*" } else { "linear" });
            }
            println!("  {:?} {}", c.b, if kinds.is_empty() { "-".to_string() } else { kinds.join(" ") });
        }
    }
    let violations = cat.one_of_four_violations();
    println!("one-of-four violations {}", violations.len());
    Ok(ExitCode::SUCCESS)
}

fn solve_cmd(t: &TemplateArg, instance: &Path, trace_out: Option<&Path>, caps: Caps) -> CmdResult {
    let cat = load_catalog(t, caps)?;
    let inst = load_instance(instance, &cat)?;
    match solve_with(&inst, &cat, caps.limits())?.outcome {
        SolveOutcome::Accept(h) => {
            print_assignment(&inst, &h);
            Ok(ExitCode::SUCCESS)
        }
        SolveOutcome::Reject(trace) => {
            if let Some(p) = trace_out {
                write(p, &trace.to_ndjson())?;
            }
            let last = trace.steps.last().map(|s| s.kind.name()).unwrap_or("none");
            println!("{}", serde_json::json!({ "outcome": "reject", "steps": trace.total_steps(), "final": last }));
            Ok(ExitCode::from(20))
        }
    }
}

fn verify_cmd(t: &TemplateArg, instance: Option<&Path>, trace: &Path, caps: Caps) -> CmdResult {
    let cat = load_catalog(t, caps)?;
    let trace = Trace::from_ndjson(&read(trace)?)?;
    if let Some(p) = instance {
        let inst = load_instance(p, &cat)?;
        if InstanceFile::from_instance(&inst, None) != trace.initial {
            println!("FAIL header: trace does not start from the given instance");
            return Ok(ExitCode::from(1));
        }
    }
    match verify_trace(&trace, &cat) {
        Ok(()) => {
            println!("OK {} steps", trace.total_steps());
            Ok(ExitCode::SUCCESS)
        }
        Err(f) => {
            println!("FAIL {f}");
            Ok(ExitCode::from(1))
        }
    }
}

fn read_digraph(path: &Path) -> Result<Digraph, Failure> {
    let g: Digraph = serde_json::from_str(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if let Some(&(u, v)) = g.edges.iter().find(|&&(u, v)| u >= g.n || v >= g.n) {
        return Err(Failure::Input(format!("{}: edge ({u},{v}) outside {} vertices", path.display(), g.n)));
    }
    Ok(g)
}

fn encode_cmd(source: &Path, target: &Path, out: Option<&Path>) -> CmdResult {
    let f = encode_cnf(&read_digraph(source)?, &read_digraph(target)?);
    let text = f.to_dimacs();
    match out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle_cmd(t: &TemplateArg, instance: &Path, caps: Caps) -> CmdResult {
    let cat = load_catalog(t, caps)?;
    let inst = load_instance(instance, &cat)?;
    match brute_force_hom(&inst, ORACLE_CAP)? {
        Some(h) => {
            print_assignment(&inst, &h);
            Ok(ExitCode::SUCCESS)
        }
        None => {
            println!("{}", serde_json::json!({ "outcome": "reject" }));
            Ok(ExitCode::from(20))
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Analyze { template, caps } => analyze(&template, caps),
        Command::Solve { template, instance, trace_out, caps } => solve_cmd(&template, &instance, trace_out.as_deref(), caps),
        Command::Verify { template, instance, trace, caps } => verify_cmd(&template, instance.as_deref(), &trace, caps),
        Command::EncodeCnf { source, target, cnf_out } => encode_cmd(&source, &target, cnf_out.as_deref()),
        Command::Gen { template, seed, vars, density, loops, full_domain, subdirect, out, caps } => {
            for (name, p) in [("density", density), ("loops", loops), ("full-domain", full_domain)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Failure::Input(format!("--{name} must lie in [0, 1]")));
                }
            }
            if vars > caps.max_vars {
                return Err(Failure::Limit(format!("{vars} variables exceed max-vars = {}", caps.max_vars)));
            }
            let cat = load_catalog(&template, caps)?;
            let inst = random_instance(&cat, &GenParams { vars, density, loops, full_domain, subdirect }, seed);
            let text = write_instance(&inst, Some(&cat)) + "\n";
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { template, instance, caps } => oracle_cmd(&template, &instance, caps),
        Command::Fixture { name } => {
            let alg = fixtures::by_name(&name).ok_or_else(|| Failure::Input(format!("unknown fixture {name}")))?;
            let file = TemplateFile::from_algebra(&alg, Some(&name));
            println!("{}", serde_json::to_string(&file).expect("serializable"));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Limit(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(4)
        }
    }
}
