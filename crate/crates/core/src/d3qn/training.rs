use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::{GainNormalizer, ServiceEnv, ServiceScenario};
use super::learner::{DqnLearner, LearnerConfig, TargetMode};
use super::network::{Architecture, ForwardCache, QNetwork};
use super::replay::{ReplayBuffer, Transition};
use super::{select_action, ServiceAction, POWER_LEVELS};
use crate::channel::{episode_throughput, LinkReport};
use crate::error::{Error, Result};
use crate::rng::{stream, tag, SimRng};
use crate::trace::{
    observation_digest, ActionScore, Decision, DecisionRecord, FactorScores, Phase, TraceWriter,
};
use crate::world::{ServiceMove, UavPose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    D3qn,
    Dqn,
    Random,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::D3qn => "d3qn",
            AgentKind::Dqn => "dqn",
            AgentKind::Random => "random",
        }
    }

    fn setup(self) -> Option<(Architecture, TargetMode)> {
        match self {
            AgentKind::D3qn => Some((Architecture::Dueling, TargetMode::Double)),
            AgentKind::Dqn => Some((Architecture::Plain, TargetMode::Vanilla)),
            AgentKind::Random => None,
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d3qn" => Ok(AgentKind::D3qn),
            "dqn" => Ok(AgentKind::Dqn),
            "random" => Ok(AgentKind::Random),
            _ => Err(Error::Config(format!("unknown agent `{s}` (expected d3qn, dqn or random)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub users: usize,
    pub move_step_m: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub warmup_samples: usize,
    /// Rate divisor for rewards; `None` uses the channel bandwidth.
    pub reward_unit_bps: Option<f64>,
    pub learner: LearnerConfig,
    /// Greedy evaluation rollouts after every episode; 0 disables them.
    pub eval_rollouts: usize,
    /// Record the final training episode in the decision trace.
    pub trace_last_episode: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            users: 4,
            move_step_m: 10.0,
            episodes: 500,
            steps_per_episode: 100,
            epsilon_start: 0.9,
            epsilon_end: 0.1,
            hidden: vec![40, 40, 40],
            buffer_capacity: 10_000,
            warmup_samples: 512,
            reward_unit_bps: None,
            learner: LearnerConfig::default(),
            eval_rollouts: 5,
            trace_last_episode: true,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.users == 0 {
            return bad("service.users must be ≥ 1");
        }
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return bad("service.episodes and service.steps_per_episode must be ≥ 1");
        }
        if !(self.move_step_m > 0.0) {
            return bad("service.move_step_m must be positive");
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon bounds must lie in [0, 1]");
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("service.hidden needs at least one non-empty layer");
        }
        if self.buffer_capacity == 0 || self.learner.batch_size == 0 || self.learner.batch_size > self.buffer_capacity {
            return bad("batch_size must be in 1..=buffer_capacity");
        }
        if !(0.0..=1.0).contains(&self.learner.gamma) || !(self.learner.learning_rate >= 0.0) {
            return bad("gamma must lie in [0, 1] and learning_rate must be ≥ 0");
        }
        if matches!(self.reward_unit_bps, Some(u) if !(u > 0.0)) {
            return bad("reward_unit_bps must be positive");
        }
        Ok(())
    }
}

/// Linear decay from `start` at the first episode to `end` at the last.
pub fn epsilon_schedule(episode: usize, episodes: usize, start: f64, end: f64) -> f64 {
    if episodes <= 1 {
        return start;
    }
    let frac = episode.min(episodes - 1) as f64 / (episodes - 1) as f64;
    start + (end - start) * frac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub epsilon: f64,
    pub loss_mean: Option<f64>,
    /// Mean return of the current greedy policy over the evaluation starts.
    pub greedy_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub poses: Vec<UavPose>,
    pub reports: Vec<LinkReport>,
    pub total_return: f64,
    pub throughput_bits: f64,
    /// Final pose of the rollout, handed to the planning phase.
    pub goal: UavPose,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub agent: AgentKind,
    pub network: Option<QNetwork>,
    pub normalizer: GainNormalizer,
    pub curve: Vec<EpisodeStats>,
    pub rollout: RolloutResult,
}

fn factor_label(group: usize, action: usize) -> String {
    if group == 0 {
        serde_json::to_value(ServiceMove::from_index(action).unwrap())
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    } else {
        action.to_string()
    }
}

#[allow(clippy::too_many_arguments)]
fn service_record(
    step: u64,
    episode: u64,
    t: u64,
    obs: &[f64],
    net: &QNetwork,
    cache: &ForwardCache,
    picks: &[usize],
    explored: bool,
) -> DecisionRecord {
    let factors = net
        .group_ranges()
        .enumerate()
        .map(|(g, r)| FactorScores {
            factor: if g == 0 { "move".into() } else { format!("power{}", g - 1) },
            value: cache.value,
            chosen: picks[g],
            actions: r
                .clone()
                .enumerate()
                .map(|(a, i)| ActionScore {
                    label: factor_label(g, a),
                    advantage: cache.value.map(|_| cache.advantage[i]),
                    q: cache.q[i],
                })
                .collect(),
        })
        .collect();
    DecisionRecord {
        step,
        episode,
        t,
        phase: Phase::Service,
        observation_digest: observation_digest(obs),
        explored,
        decision: Decision::Service { factors },
        terminal: None,
        terminal_reward: None,
    }
}

fn random_picks<R: Rng + ?Sized>(groups: &[usize], rng: &mut R) -> Vec<usize> {
    groups.iter().map(|&g| rng.gen_range(0..g)).collect()
}

/// Rolls out the greedy policy of `net` (uniform random picks when `net` is
/// `None`) for `steps` steps from `start`.
pub fn greedy_rollout(
    env: &mut ServiceEnv,
    net: Option<&QNetwork>,
    start: UavPose,
    steps: usize,
    rng: &mut SimRng,
    mut trace: Option<(&mut TraceWriter, u64)>,
) -> Result<RolloutResult> {
    let groups = ServiceAction::groups(env.scenario.users.len());
    let mut obs = env.reset(start)?;
    let mut poses = vec![start];
    let mut reports = Vec::with_capacity(steps);
    let mut total = 0.0;
    let mut cache = ForwardCache::default();
    for t in 0..steps {
        let picks = match net {
            Some(n) => {
                n.forward_into(&obs, &mut cache);
                let (p, _) = select_action(&cache.q, &groups, 0.0, rng);
                if let Some((w, episode)) = trace.as_mut() {
                    let step = w.next_step();
                    w.record(&service_record(step, *episode, t as u64, &obs, n, &cache, &p, false))?;
                }
                p
            }
            None => random_picks(&groups, rng),
        };
        let out = env.step(&ServiceAction::from_indices(&picks))?;
        total += out.reward;
        poses.push(env.pose());
        reports.push(out.report);
        obs = out.obs;
    }
    Ok(RolloutResult {
        goal: env.pose(),
        throughput_bits: episode_throughput(&reports),
        poses,
        reports,
        total_return: total,
    })
}

/// Trains one agent on a fixed user layout. Each episode starts from a
/// uniformly drawn pose; the returned rollout starts at the area centre at
/// the lowest altitude.
pub fn run_training(
    scenario: &ServiceScenario,
    cfg: &ServiceConfig,
    agent: AgentKind,
    seed: u64,
    mut trace: Option<&mut TraceWriter>,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if scenario.users.len() != cfg.users {
        return Err(Error::Config(format!(
            "scenario has {} users but the service config expects {}",
            scenario.users.len(),
            cfg.users
        )));
    }
    let normalizer = GainNormalizer::warmup(scenario, cfg.warmup_samples, &mut stream(seed, &[tag("warmup")]))?;
    let mut env = ServiceEnv::new(scenario.clone(), normalizer, stream(seed, &[tag("fading")]))?;
    let mut start_rng = stream(seed, &[tag("start")]);
    let mut act_rng = stream(seed, &[tag("explore")]);
    let mut replay_rng = stream(seed, &[tag("replay")]);
    let groups = ServiceAction::groups(cfg.users);
    debug_assert!(groups[1..].iter().all(|&g| g == POWER_LEVELS));

    let mut learner = agent.setup().map(|(arch, mode)| {
        let net = QNetwork::new(
            scenario.observation_dim(),
            &cfg.hidden,
            groups.clone(),
            arch,
            &mut stream(seed, &[tag("init")]),
        );
        DqnLearner::new(net, LearnerConfig { mode, ..cfg.learner })
    });
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut cache = ForwardCache::default();
    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut eval_rng = stream(seed, &[tag("eval-starts")]);
    let eval_starts: Vec<UavPose> = (0..cfg.eval_rollouts).map(|_| scenario.random_pose(&mut eval_rng)).collect();

    for ep in 0..cfg.episodes {
        let epsilon = epsilon_schedule(ep, cfg.episodes, cfg.epsilon_start, cfg.epsilon_end);
        let traced = cfg.trace_last_episode && ep + 1 == cfg.episodes;
        let mut obs = env.reset(scenario.random_pose(&mut start_rng))?;
        let mut ret = 0.0;
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for t in 0..cfg.steps_per_episode {
            let picks = match learner.as_mut() {
                Some(l) => {
                    l.online.forward_into(&obs, &mut cache);
                    let (p, explored) = select_action(&cache.q, &groups, epsilon, &mut act_rng);
                    if let (true, Some(w)) = (traced, trace.as_deref_mut()) {
                        let step = w.next_step();
                        w.record(&service_record(step, ep as u64, t as u64, &obs, &l.online, &cache, &p, explored))?;
                    }
                    p
                }
                None => random_picks(&groups, &mut act_rng),
            };
            let out = env.step(&ServiceAction::from_indices(&picks))?;
            ret += out.reward;
            if let Some(l) = learner.as_mut() {
                buffer.push(Transition {
                    obs: std::mem::take(&mut obs),
                    action: picks,
                    reward: out.reward,
                    next_obs: out.obs.clone(),
                    terminal: false,
                });
                if let Some(loss) = l.train_step(&buffer, &mut replay_rng) {
                    loss_sum += loss;
                    loss_n += 1;
                }
            }
            obs = out.obs;
        }
        let greedy_return = if eval_starts.is_empty() {
            None
        } else {
            let mut eval_env = env.fork(stream(seed, &[tag("eval-fading"), ep as u64]));
            let mut policy_rng = stream(seed, &[tag("eval-policy"), ep as u64]);
            let net = learner.as_ref().map(|l| &l.online);
            let mut total = 0.0;
            for &p in &eval_starts {
                total += greedy_rollout(&mut eval_env, net, p, cfg.steps_per_episode, &mut policy_rng, None)?.total_return;
            }
            Some(total / eval_starts.len() as f64)
        };
        curve.push(EpisodeStats {
            episode: ep,
            ret,
            epsilon: if learner.is_some() { epsilon } else { 1.0 },
            loss_mean: (loss_n > 0).then(|| loss_sum / loss_n as f64),
            greedy_return,
        });
    }

    let b = &scenario.bounds;
    let start = UavPose {
        x: 0.5 * (b.x_min + b.x_max),
        y: 0.5 * (b.y_min + b.y_max),
        h: b.h_min,
    };
    let network = learner.map(|l| l.online);
    let rollout = greedy_rollout(
        &mut env,
        network.as_ref(),
        start,
        cfg.steps_per_episode,
        &mut act_rng,
        trace.map(|w| (w, cfg.episodes as u64)),
    )?;
    Ok(TrainingOutcome {
        agent,
        network,
        normalizer,
        curve,
        rollout,
    })
}
