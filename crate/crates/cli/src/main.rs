use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use orgsim::bandit::{run_synthetic, run_uniform_baseline};
use orgsim::config::ScenarioConfig;
use orgsim::ctmdp::{greedy_policy, label_solution, solve_value_iteration, DEFAULT_TIE_TOL};
use orgsim::game::{label_path, solve_spe, verify_spe};
use orgsim::infotheory::{measure_speedup, renyi_divergence};
use orgsim::manifest::RunManifest;
use orgsim::orchestrator::{report_chain, DelegationTree, Orchestrator, Plan, Scenario};
use orgsim::robustness::{run_experiment, Check, Experiment, RobustnessConfig};

#[derive(Parser)]
#[command(name = "orgsim", version, about = "Run hierarchical role scenarios and the delegation study")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Value iteration and greedy policy for every role.
    SolveCtmdp {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Subgame-perfect path of the scenario's game.
    Equilibrium {
        #[command(flatten)]
        io: Io,
    },
    /// Search speedup from the configured prior/posterior pair.
    Brainstorm {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Thompson sampling against the configured synthetic arms.
    Bandit {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        seed: u64,
        /// Rounds per seed; overrides the scenario value.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Full round loop with event log, plan and delegation tree.
    Orchestrate {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        max_rounds: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Trust-aware delegation experiment.
    Robustness {
        /// Optional scenario with a `[robustness]` section; defaults otherwise.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        trials: usize,
    },
    /// Checks the artifacts in an output directory against reference targets.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
    Check,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Check => 3,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

struct Output {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Output {
    fn new(command: &str, dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| runtime_err(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest::new(command, &dir.display().to_string()),
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(runtime_err)?;
        text.push('\n');
        self.write(name, text)
    }

    fn finish(self) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(runtime_err)?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
    }
}

fn load(path: &Path) -> Result<(Scenario, Vec<u8>), Failure> {
    let (cfg, bytes) = ScenarioConfig::load(path).map_err(config_err)?;
    let sc = Scenario::from_config(&cfg).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok((sc, bytes))
}

fn start(command: &str, io: &Io) -> Result<(Scenario, Output), Failure> {
    let (sc, bytes) = load(&io.scenario)?;
    let mut out = Output::new(command, &io.out)?;
    out.manifest = out.manifest.with_config(&io.scenario.display().to_string(), &bytes);
    Ok((sc, out))
}

fn solve_ctmdp(io: Io, tol: Option<f64>) -> Result<(), Failure> {
    let (sc, mut out) = start("solve-ctmdp", &io)?;
    let tol = tol.unwrap_or(sc.limits.tol);
    let mut solutions = BTreeMap::new();
    for r in &sc.roles {
        let v = solve_value_iteration(&r.model, tol, sc.limits.max_iter)
            .map_err(|e| runtime_err(format!("role `{}`: {e}", r.label)))?;
        let policy = greedy_policy(&r.model, &v, DEFAULT_TIE_TOL);
        out.manifest.end += v.iterations as u64;
        println!("{}: beta {:.6}, {} iterations", r.label, r.model.beta(), v.iterations);
        solutions.insert(r.label.clone(), label_solution(&r.model, &v, &policy));
    }
    out.write_json("ctmdp.json", &solutions)?;
    out.finish()
}

fn equilibrium(io: Io) -> Result<(), Failure> {
    let (sc, mut out) = start("equilibrium", &io)?;
    let path = solve_spe(&sc.game);
    let report = verify_spe(&sc.game, &path);
    let labeled = label_path(&sc.game, &path);
    out.write_json("spe.json", &json!({ "solution": labeled, "deviations": report.violations }))?;
    out.manifest.end = sc.game.contexts().len() as u64;
    for (ctx, levels) in &labeled.contexts {
        let picks: Vec<String> = levels.iter().map(|(l, d)| format!("{l}={}", d.action)).collect();
        println!("{ctx}: {}", picks.join(" "));
    }
    out.finish()?;
    if report.is_equilibrium() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{} profitable deviations", report.violations.len())))
    }
}

fn brainstorm(io: Io, seed: u64, trials: Option<usize>) -> Result<(), Failure> {
    let (sc, mut out) = start("brainstorm", &io)?;
    let sp = &sc.speedup;
    let trials = trials.unwrap_or(sp.trials);
    let report = measure_speedup(&sp.prior, &sp.posterior, &sp.target, sc.brainstorm.alpha, trials, seed)
        .map_err(runtime_err)?;
    let mut curve = String::from("alpha,divergence_bits\n");
    for i in 1..=40 {
        let alpha = i as f64 * 0.1;
        let d = renyi_divergence(&sp.posterior, &sp.prior, alpha).map_err(runtime_err)?;
        curve.push_str(&format!("{alpha:.1},{d:.9}\n"));
    }
    println!(
        "draw ratio {:.4}, 2^D = {:.4}, bound {}",
        report.ratio,
        report.bound,
        if report.bound_met { "met" } else { "not met" }
    );
    out.manifest.seed = Some(seed);
    out.manifest.end = trials as u64;
    out.write_json("speedup.json", &report)?;
    out.write("renyi_curve.csv", curve)?;
    out.finish()
}

fn bandit(io: Io, seed: u64, rounds: Option<usize>) -> Result<(), Failure> {
    let (sc, mut out) = start("bandit", &io)?;
    let syn = &sc.synthetic;
    let rounds = rounds.unwrap_or(syn.rounds);
    let mut per_seed = Vec::new();
    let mut first = None;
    for s in 0..syn.seeds as u64 {
        let ts = run_synthetic(&syn.env, rounds, &syn.config, seed + s).map_err(runtime_err)?;
        let uni = run_uniform_baseline(&syn.env, rounds, &syn.config, seed + s).map_err(runtime_err)?;
        per_seed.push(json!({
            "seed": seed + s,
            "thompson_regret": ts.cumulative_regret(),
            "uniform_regret": uni.cumulative_regret(),
            "information_gain": ts.information_gain,
        }));
        first.get_or_insert(ts);
    }
    let mean = |key: &str| per_seed.iter().map(|r| r[key].as_f64().unwrap_or(0.0)).sum::<f64>() / per_seed.len() as f64;
    let (ts_mean, uni_mean) = (mean("thompson_regret"), mean("uniform_regret"));
    println!("mean cumulative regret: thompson {ts_mean:.3}, uniform {uni_mean:.3}");
    out.manifest.seed = Some(seed);
    out.manifest.end = rounds as u64 * syn.seeds as u64;
    if let Some(ledger) = first {
        out.write("regret.csv", ledger.to_csv())?;
    }
    out.write_json(
        "bandit.json",
        &json!({ "rounds": rounds, "seeds": per_seed, "mean_thompson_regret": ts_mean, "mean_uniform_regret": uni_mean }),
    )?;
    out.finish()
}

fn orchestrate(io: Io, seed: u64, max_rounds: Option<usize>, tol: Option<f64>) -> Result<(), Failure> {
    let (mut sc, mut out) = start("orchestrate", &io)?;
    if let Some(m) = max_rounds {
        if m == 0 {
            return Err(Failure::Config("--max-rounds must be at least 1".into()));
        }
        sc.limits.max_rounds = m;
    }
    if let Some(t) = tol {
        sc.limits.tol = t;
    }
    let ep = Orchestrator::new(&sc, seed).map_err(runtime_err)?.run().map_err(runtime_err)?;
    let tree = report_chain(&ep.log);
    println!(
        "{}: {} rounds, {}, {} escalations, tree {}",
        ep.plan.scenario,
        ep.plan.rounds,
        if ep.plan.converged { "converged" } else { "not converged" },
        ep.plan.escalations.len(),
        tree.roots.iter().map(|r| r.shape()).collect::<Vec<_>>().join(" | "),
    );
    let ltm: String = ep
        .ltm
        .entries()
        .iter()
        .map(|e| serde_json::to_string(e).map(|s| s + "\n"))
        .collect::<Result<_, _>>()
        .map_err(runtime_err)?;
    out.manifest.seed = Some(seed);
    out.manifest.end = ep.plan.rounds as u64;
    out.write("events.jsonl", ep.log.to_jsonl())?;
    out.write_json("plan.json", &ep.plan)?;
    out.write("tree.txt", tree.render())?;
    out.write_json("tree.json", &tree)?;
    out.write("ltm.jsonl", ltm)?;
    out.finish()
}

fn robustness(scenario: Option<PathBuf>, out_dir: PathBuf, seed: u64, trials: usize) -> Result<(), Failure> {
    let (cfg, mut out) = match &scenario {
        Some(path) => {
            let (sc, bytes) = load(path)?;
            let mut out = Output::new("robustness", &out_dir)?;
            out.manifest = out.manifest.with_config(&path.display().to_string(), &bytes);
            (sc.robustness, out)
        }
        None => (RobustnessConfig::default(), Output::new("robustness", &out_dir)?),
    };
    if trials < 2 {
        return Err(Failure::Config("--trials must be at least 2".into()));
    }
    let exp = run_experiment(&cfg, trials, seed).map_err(runtime_err)?;
    for t in &exp.summary.tiers {
        println!("{:<9} {:6.2} +- {:.2}", t.tier.name(), t.mean, t.std);
    }
    println!("welch t = {:.3}, df = {:.1}, p = {:.3e}", exp.ttest.t, exp.ttest.df, exp.ttest.p);
    out.manifest.seed = Some(seed);
    out.manifest.end = trials as u64;
    out.write("heatmap.csv", exp.heatmap_csv(&cfg.trust.agents))?;
    out.write("ivf_points.csv", exp.ivf_points_csv())?;
    out.write("success.csv", exp.success_csv())?;
    out.write_json("ttest.json", &json!({ "welch": exp.ttest, "ivf_fit": exp.ivf_fit }))?;
    out.write_json("robustness.json", &exp)?;
    out.finish()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, Failure> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

fn report(out: PathBuf) -> Result<(), Failure> {
    let mut checks: Vec<Check> = Vec::new();
    if let Some(exp) = read_json::<Experiment>(&out.join("robustness.json"))? {
        checks.extend(exp.reference_checks());
    }
    if let Some(plan) = read_json::<Plan>(&out.join("plan.json"))? {
        checks.push(Check::new(format!("plan converged in {} rounds", plan.rounds), plan.converged));
        checks.push(Check::new(
            format!("{} unresolved escalations", plan.escalations.len()),
            plan.escalations.is_empty(),
        ));
    }
    if let Some(tree) = read_json::<DelegationTree>(&out.join("tree.json"))? {
        checks.push(Check::new(format!("{} open delegations", tree.open_count()), tree.all_closed()));
    }
    if checks.is_empty() {
        return Err(Failure::Runtime(format!("{}: no robustness.json, plan.json or tree.json", out.display())));
    }
    for c in &checks {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::SolveCtmdp { io, tol } => solve_ctmdp(io, tol),
        Command::Equilibrium { io } => equilibrium(io),
        Command::Brainstorm { io, seed, trials } => brainstorm(io, seed, trials),
        Command::Bandit { io, seed, trials } => bandit(io, seed, trials),
        Command::Orchestrate { io, seed, max_rounds, tol } => orchestrate(io, seed, max_rounds, tol),
        Command::Robustness {
            scenario,
            out,
            seed,
            trials,
        } => robustness(scenario, out, seed, trials),
        Command::Report { out } => report(out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
                Failure::Check => eprintln!("reference checks failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
