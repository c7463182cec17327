use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use skytrace::d3qn::AgentKind;
use skytrace::harness::{
    aggregate, read_goal, run_cell, run_pipeline, train_dqn_avoid, train_stage, trace_file_name, write_episode_csv,
    ExperimentConfig, PlannerProfile, ServiceGoal,
};
/// `println!` that ends the process quietly once stdout is closed.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if writeln!(std::io::stdout(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

use skytrace::trace::{explain, validate_trace, Explanation, Phase, Query, TraceFile, ValidationReport};

/// UAV service placement and collision-avoidance experiments with auditable
/// decision traces.
#[derive(Debug, Parser)]
#[command(name = "skytrace", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seeds to run, overriding the config (comma-separated).
    #[arg(long, global = true, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the service agent and extract its goal coordinate.
    Train {
        /// Agent to train; overrides the config.
        #[arg(long)]
        agent: Option<AgentArg>,
    },
    /// Fly evaluation episodes with one avoidance planner.
    Plan {
        /// tree-depth, tree-fast, dqn-avoid or random-avoid.
        #[arg(long, default_value = "tree-depth")]
        profile: String,
        /// Number of intruders in every episode.
        #[arg(long, default_value_t = 5)]
        intruders: usize,
        /// Episodes to fly; defaults to the config's per-cell count.
        #[arg(long)]
        episodes: Option<usize>,
        /// `goal.json` written by `train`; the service-area centre when omitted.
        #[arg(long)]
        goal: Option<PathBuf>,
    },
    /// Full experiment: training, intruder sweep, metrics, traces, manifest.
    Sweep,
    /// Answer questions about a decision trace.
    Explain {
        #[command(subcommand)]
        query: ExplainCmd,
    },
    /// Check decision traces (files or directories of `.jsonl`) and the config.
    Validate {
        paths: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
enum ExplainCmd {
    /// Why the recorded action was chosen at a step.
    Why {
        #[command(flatten)]
        at: StepArgs,
    },
    /// Why an alternative was not chosen at a step.
    WhyNot {
        #[command(flatten)]
        at: StepArgs,
        /// `factor=label`, or a bare label or index for single-factor decisions.
        #[arg(long)]
        action: String,
    },
    /// Decisions along one episode.
    Path {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        episode: u64,
        #[arg(long)]
        phase: Option<PhaseArg>,
        #[arg(long)]
        json: bool,
    },
    /// Counts and outcomes over the whole trace.
    Summary {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Recompute every recorded statistic and check trace consistency.
    Validate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct StepArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    step: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AgentArg {
    D3qn,
    Dqn,
    Random,
}

impl From<AgentArg> for AgentKind {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::D3qn => AgentKind::D3qn,
            AgentArg::Dqn => AgentKind::Dqn,
            AgentArg::Random => AgentKind::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PhaseArg {
    Service,
    Avoidance,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Service => Phase::Service,
            PhaseArg::Avoidance => Phase::Avoidance,
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if !g.seed.is_empty() {
        cfg.seeds = g.seed.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print(value: &Explanation, json: bool) -> Result<()> {
    if json {
        outln!("{}", serde_json::to_string_pretty(value)?);
    } else {
        outln!("{value}");
    }
    Ok(())
}

fn train(g: &Global, agent: Option<AgentArg>) -> Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(a) = agent {
        cfg.agent = a.into();
    }
    for &seed in &cfg.seeds {
        let dir = g.out.join(format!("seed-{seed}"));
        let (outcome, goal) = train_stage(&cfg, cfg.agent, seed, &dir)?;
        let tail = &outcome.curve[outcome.curve.len().saturating_sub(50)..];
        let mean = tail.iter().map(|s| s.ret).sum::<f64>() / tail.len() as f64;
        outln!(
            "seed {seed}: {} final-{} mean return {mean:.2}; goal ({:.1}, {:.1}, {:.1}) → {}",
            cfg.agent.name(),
            tail.len(),
            goal.pose.x,
            goal.pose.y,
            goal.pose.h,
            dir.display()
        );
    }
    Ok(())
}

fn plan(g: &Global, profile: &str, intruders: usize, episodes: Option<usize>, goal: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(g)?;
    let profile: PlannerProfile = profile.parse()?;
    if let Some(n) = episodes {
        cfg.planning.episodes_per_cell = n;
    }
    cfg.validate()?;
    let trace_dir = g.out.join("traces");
    std::fs::create_dir_all(&trace_dir).with_context(|| format!("creating {}", trace_dir.display()))?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let goal = match goal {
            Some(p) => ServiceGoal { seed, ..read_goal(p)? },
            None => ServiceGoal::centre(&cfg, seed),
        };
        let net = match profile {
            PlannerProfile::DqnAvoid => Some(train_dqn_avoid(&cfg, &goal, seed)?.0),
            _ => None,
        };
        let trace = profile.is_tree().then(|| trace_dir.join(trace_file_name(profile, intruders, seed)));
        rows.extend(run_cell(&cfg, profile, intruders, &goal, net.as_ref(), trace.as_deref())?);
    }
    let table = aggregate(&rows);
    write_episode_csv(&g.out.join("episodes.csv"), &rows)?;
    table.write_csv(&g.out.join("metrics.csv"))?;
    for r in &table.rows {
        outln!(
            "{} M={}: {} episodes, goal {:.3} collision {:.3} timeout {:.3}, mean steps {:.1}",
            r.profile, r.intruders, r.episodes, r.goal_rate, r.collision_rate, r.timeout_rate, r.mean_steps
        );
    }
    Ok(())
}

fn sweep(g: &Global) -> Result<()> {
    let cfg = load_config(g)?;
    let res = run_pipeline(&cfg, &g.out, g.jobs)?;
    outln!("profile,intruders,goal_rate,collision_rate,timeout_rate,mean_steps");
    for r in &res.sweep.metrics.rows {
        outln!(
            "{},{},{:.3},{:.3},{:.3},{:.1}",
            r.profile, r.intruders, r.goal_rate, r.collision_rate, r.timeout_rate, r.mean_steps
        );
    }
    outln!("artifacts in {} ({} files)", g.out.display(), res.manifest.files.len());
    Ok(())
}

fn read_trace(p: &Path) -> Result<TraceFile> {
    TraceFile::read(p).with_context(|| format!("reading {}", p.display()))
}

fn report_line(path: &Path, rep: &ValidationReport) -> String {
    let mut s = format!(
        "{}: {} records, {} violations",
        path.display(),
        rep.records,
        rep.violations.len()
    );
    if let Some(line) = rep.partial_tail {
        s.push_str(&format!(", partial record at line {line}"));
    }
    s
}

/// Validates each trace; returns whether all were clean.
fn validate_paths(paths: &[PathBuf], json: bool) -> Result<bool> {
    let mut files = Vec::new();
    for p in paths {
        collect_traces(p, &mut files)?;
    }
    if files.is_empty() {
        bail!("no trace files found");
    }
    let mut clean = true;
    let mut reports = serde_json::Map::new();
    for f in &files {
        let rep = validate_trace(&read_trace(f)?);
        clean &= rep.is_clean();
        if json {
            reports.insert(f.display().to_string(), serde_json::to_value(&rep)?);
        } else {
            outln!("{} {}", if rep.is_clean() { "ok  " } else { "FAIL" }, report_line(f, &rep));
            for v in &rep.violations {
                match v.step {
                    Some(s) => outln!("    line {} (step {s}): {}", v.line, v.reason),
                    None => outln!("    line {}: {}", v.line, v.reason),
                }
            }
        }
    }
    if json {
        outln!("{}", serde_json::to_string_pretty(&reports)?);
    }
    Ok(clean)
}

fn collect_traces(p: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
            .with_context(|| format!("listing {}", p.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() || e.extension().is_some_and(|x| x == "jsonl") {
                collect_traces(&e, out)?;
            }
        }
    } else {
        out.push(p.to_path_buf());
    }
    Ok(())
}

fn run_explain(q: ExplainCmd) -> Result<bool> {
    let (trace, query, json) = match q {
        ExplainCmd::Validate { trace, json } => return validate_paths(&[trace], json),
        ExplainCmd::Why { at } => (at.trace, Query::WhyAction { step: at.step }, at.json),
        ExplainCmd::WhyNot { at, action } => (at.trace, Query::WhyNot { step: at.step, action }, at.json),
        ExplainCmd::Path { trace, episode, phase, json } => {
            (trace, Query::Path { episode, phase: phase.map(Into::into) }, json)
        }
        ExplainCmd::Summary { trace, json } => (trace, Query::Summary, json),
    };
    print(&explain(&read_trace(&trace)?, &query)?, json)?;
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    match cli.command {
        Command::Train { agent } => train(g, agent).map(|_| true),
        Command::Plan { profile, intruders, episodes, goal } => {
            plan(g, &profile, intruders, episodes, goal.as_deref()).map(|_| true)
        }
        Command::Sweep => sweep(g).map(|_| true),
        Command::Explain { query } => run_explain(query),
        Command::Validate { paths, json } => {
            let cfg = load_config(g)?;
            if paths.is_empty() {
                outln!("config ok (hash {})", cfg.hash());
                return Ok(true);
            }
            validate_paths(&paths, json)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
