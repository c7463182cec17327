use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PlannerProfile};
use super::dqn_avoid::{train_dqn_avoid, DqnAvoidPolicy};
use super::metrics::{aggregate, write_episode_csv, EpisodeRow, MetricsTable};
use super::scenario::{encounter, service_scenario, ServiceGoal};
use crate::channel::write_link_csv;
use crate::d3qn::{run_training, AgentKind, EpisodeStats, QNetwork, TrainingOutcome};
use crate::error::{Error, Result};
use crate::mcts::{fly_episode, AvoidPolicy, MctsPolicy, RandomPolicy, StepEvent};
use crate::rng::{stream, tag};
use crate::trace::{
    observation_digest, sha256_hex, Decision, DecisionRecord, Phase, TraceHeader, TraceWriter, SCHEMA_VERSION,
};

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn trace_header(cfg: &ExperimentConfig, run_id: String, seed: u64) -> TraceHeader {
    TraceHeader {
        schema_version: SCHEMA_VERSION,
        run_id,
        seed,
        config_hash: cfg.hash(),
        created_unix: now_unix(),
    }
}

pub fn write_curve_csv(path: &Path, curve: &[EpisodeStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in curve {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_goal(path: &Path) -> Result<ServiceGoal> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Stage 1 for one seed: trains the service agent and writes `curve.csv`,
/// `checkpoint.bin` (learning agents only), `trace.jsonl`, `links.csv` and
/// `goal.json` into `dir`.
pub fn train_stage(
    cfg: &ExperimentConfig,
    agent: AgentKind,
    seed: u64,
    dir: &Path,
) -> Result<(TrainingOutcome, ServiceGoal)> {
    mkdir(dir)?;
    let scenario = service_scenario(cfg, seed);
    let header = trace_header(cfg, format!("{}-seed{seed}", agent.name()), seed);
    let mut trace = TraceWriter::create(&dir.join("trace.jsonl"), &header)?;
    let outcome = run_training(&scenario, &cfg.service, agent, seed, Some(&mut trace))?;
    write_curve_csv(&dir.join("curve.csv"), &outcome.curve)?;
    write_link_csv(&dir.join("links.csv"), &outcome.rollout.reports)?;
    if let Some(net) = &outcome.network {
        net.save(&dir.join("checkpoint.bin"))?;
    }
    let goal = ServiceGoal::new(cfg, seed, outcome.rollout.goal);
    write_json(&dir.join("goal.json"), &goal)?;
    Ok((outcome, goal))
}

fn avoidance_record(step: u64, episode: u64, e: &StepEvent<'_>) -> Option<DecisionRecord> {
    let snap = e.snapshot?;
    let mut obs = vec![e.own.x, e.own.y, e.own.speed, e.own.heading, e.own.tilt];
    for it in e.intruders {
        obs.extend([it.x, it.y, it.vx, it.vy]);
    }
    Some(DecisionRecord {
        step,
        episode,
        t: e.t as u64,
        phase: Phase::Avoidance,
        observation_digest: observation_digest(&obs),
        explored: false,
        decision: Decision::Avoidance(snap.clone()),
        terminal: e.verdict.is_terminal().then_some(e.verdict),
        terminal_reward: e.terminal_reward,
    })
}

/// Evaluation episodes of one `(profile, intruder count, seed)` cell.
pub fn run_cell(
    cfg: &ExperimentConfig,
    profile: PlannerProfile,
    intruders: usize,
    goal: &ServiceGoal,
    dqn: Option<&QNetwork>,
    trace_path: Option<&Path>,
) -> Result<Vec<EpisodeRow>> {
    let seed = goal.seed;
    let search = cfg.planning.search(profile);
    let mut policy: Box<dyn AvoidPolicy> = match profile {
        PlannerProfile::TreeDepth | PlannerProfile::TreeFast => Box::new(MctsPolicy::new(profile.name(), search)),
        PlannerProfile::RandomAvoid => Box::new(RandomPolicy),
        PlannerProfile::DqnAvoid => {
            let net = dqn.ok_or_else(|| Error::Config("dqn-avoid cell needs a trained network".into()))?;
            Box::new(DqnAvoidPolicy::new(net.clone(), cfg.dqn_avoid.train_intruders))
        }
    };
    let mut writer = match trace_path {
        Some(p) => Some(TraceWriter::create(
            p,
            &trace_header(cfg, format!("{profile}-m{intruders}-seed{seed}"), seed),
        )?),
        None => None,
    };
    let mut rows = Vec::with_capacity(cfg.planning.episodes_per_cell);
    for ep in 0..cfg.planning.episodes_per_cell as u64 {
        let enc = encounter(cfg, goal, intruders, seed, ep);
        let mut rng = stream(seed, &[tag("policy"), tag(profile.name()), intruders as u64, ep]);
        let traced = (ep as usize) < cfg.planning.trace_episodes;
        let result = match writer.as_mut().filter(|_| traced) {
            Some(w) => {
                let mut observer = |e: StepEvent<'_>| -> Result<()> {
                    let step = w.next_step();
                    match avoidance_record(step, ep, &e) {
                        Some(rec) => w.record(&rec),
                        None => Ok(()),
                    }
                };
                fly_episode(&enc, &search, &cfg.kinematics, policy.as_mut(), &mut rng, Some(&mut observer))?
            }
            None => fly_episode(&enc, &search, &cfg.kinematics, policy.as_mut(), &mut rng, None)?,
        };
        rows.push(EpisodeRow {
            profile,
            intruders,
            seed,
            episode: ep,
            terminal: result.terminal,
            steps: result.steps,
            terminal_reward: result.terminal_reward,
            min_separation_m: result.min_separation,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub episodes: Vec<EpisodeRow>,
    pub metrics: MetricsTable,
    pub trace_files: Vec<PathBuf>,
}

pub fn trace_file_name(profile: PlannerProfile, intruders: usize, seed: u64) -> String {
    format!("{profile}-m{intruders}-seed{seed}.jsonl")
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Stage 2: flies every `(profile, intruder count, seed)` cell and writes
/// `episodes.csv`, `metrics.csv` and per-cell traces for the tree planners.
/// `jobs = 0` uses all cores; results do not depend on it.
pub fn run_sweep(cfg: &ExperimentConfig, goals: &[ServiceGoal], out: &Path, jobs: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let trace_dir = out.join("traces");
    mkdir(&trace_dir)?;
    let profiles = cfg.sorted_profiles();
    pool(jobs)?.install(|| {
        let dqn: BTreeMap<u64, QNetwork> = if profiles.contains(&PlannerProfile::DqnAvoid) {
            goals
                .par_iter()
                .map(|g| train_dqn_avoid(cfg, g, g.seed).map(|(net, _)| (g.seed, net)))
                .collect::<Result<_>>()?
        } else {
            BTreeMap::new()
        };
        let mut cells = Vec::new();
        for &p in &profiles {
            for &m in &cfg.planning.intruder_counts {
                for g in goals {
                    cells.push((p, m, g));
                }
            }
        }
        let results: Vec<(Vec<EpisodeRow>, Option<PathBuf>)> = cells
            .par_iter()
            .map(|&(p, m, g)| {
                let path = (p.is_tree() && cfg.planning.trace_episodes > 0)
                    .then(|| trace_dir.join(trace_file_name(p, m, g.seed)));
                let rows = run_cell(cfg, p, m, g, dqn.get(&g.seed), path.as_deref())?;
                Ok((rows, path))
            })
            .collect::<Result<_>>()?;
        let mut episodes = Vec::new();
        let mut trace_files = Vec::new();
        for (rows, path) in results {
            episodes.extend(rows);
            trace_files.extend(path);
        }
        let metrics = aggregate(&episodes);
        write_episode_csv(&out.join("episodes.csv"), &episodes)?;
        metrics.write_csv(&out.join("metrics.csv"))?;
        Ok(SweepResult { episodes, metrics, trace_files })
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalEntry {
    pub seed: u64,
    pub goal: ServiceGoal,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub package_version: String,
    pub trace_schema_version: u32,
    pub config_hash: String,
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    pub created_unix: u64,
    pub goals: Vec<GoalEntry>,
    /// Relative path → SHA-256 of every artifact written by the run.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub goals: Vec<ServiceGoal>,
    pub curves: BTreeMap<u64, Vec<EpisodeStats>>,
    pub sweep: SweepResult,
    pub manifest: RunManifest,
}

fn hash_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            hash_tree(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            if rel == "run_manifest.json" {
                continue;
            }
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            out.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(())
}

/// Full experiment: stage 1 per seed (service agent and goal), then the
/// intruder sweep against those goals, then `run_manifest.json`.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<PipelineResult> {
    cfg.validate()?;
    mkdir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let stage1: Vec<(u64, Vec<EpisodeStats>, ServiceGoal)> = pool(jobs)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let (outcome, goal) = train_stage(cfg, cfg.agent, seed, &out.join("stage1").join(format!("seed-{seed}")))?;
                Ok((seed, outcome.curve, goal))
            })
            .collect::<Result<_>>()
    })?;

    // stage 2 consumes the goals exactly as written to disk
    let mut goals = Vec::with_capacity(stage1.len());
    let mut entries = Vec::new();
    for (seed, _, goal) in &stage1 {
        let on_disk = read_goal(&out.join("stage1").join(format!("seed-{seed}")).join("goal.json"))?;
        if on_disk.hash() != goal.hash() {
            return Err(Error::Config(format!("goal file for seed {seed} does not match stage 1")));
        }
        entries.push(GoalEntry { seed: *seed, sha256: on_disk.hash(), goal: on_disk });
        goals.push(on_disk);
    }
    let sweep = run_sweep(cfg, &goals, out, jobs)?;

    let mut files = BTreeMap::new();
    hash_tree(out, out, &mut files)?;
    let manifest = RunManifest {
        name: cfg.name.clone(),
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        trace_schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        agent: cfg.agent,
        seeds: cfg.seeds.clone(),
        created_unix: now_unix(),
        goals: entries,
        files,
    };
    write_json(&out.join("run_manifest.json"), &manifest)?;
    Ok(PipelineResult {
        goals,
        curves: stage1.into_iter().map(|(s, c, _)| (s, c)).collect(),
        sweep,
        manifest,
    })
}
