//! Collision-avoidance planning with depth-limited Monte Carlo tree search.

mod tree;

pub use tree::{
    exploration_term, plan_step, uct_score, ChildScore, EngineConfig, Evaluation, SearchModel, SearchTree,
    TreeSnapshot,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::world::{
    classify_terminal, step_intruders, step_ownship, AvoidAction, IntruderState, KinematicLimits, MapBounds,
    OwnshipState, TerminalConfig, TerminalKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminalRewards {
    pub goal: f64,
    pub timeout: f64,
    pub collision: f64,
}

impl Default for TerminalRewards {
    fn default() -> Self {
        TerminalRewards {
            goal: 1.0,
            timeout: 0.1,
            collision: 0.0,
        }
    }
}

impl TerminalRewards {
    pub fn reward(&self, kind: TerminalKind) -> Result<f64> {
        match kind {
            TerminalKind::Goal => Ok(self.goal),
            TerminalKind::Timeout => Ok(self.timeout),
            TerminalKind::Collision => Ok(self.collision),
            TerminalKind::NonTerminal => Err(Error::Domain("no terminal reward for a non-terminal state".into())),
        }
    }
}

/// Reward of a terminal state under the default table (goal 1, timeout 0.1,
/// collision 0).
pub fn terminal_reward(kind: TerminalKind) -> Result<f64> {
    TerminalRewards::default().reward(kind)
}

/// Heuristic value of a non-terminal state: `1 − d(o, g) / diagonal`.
pub fn estimate_value(own: &OwnshipState, goal: (f64, f64), diagonal: f64) -> f64 {
    (1.0 - own.distance_to(goal.0, goal.1) / diagonal).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub simulations: u32,
    pub search_depth: u32,
    pub exploration_c: f64,
    pub d_min: f64,
    pub goal_radius: f64,
    pub max_steps: usize,
    pub rewards: TerminalRewards,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::tree_depth()
    }
}

impl SearchConfig {
    pub fn tree_depth() -> Self {
        SearchConfig {
            simulations: 2000,
            search_depth: 4,
            exploration_c: std::f64::consts::FRAC_1_SQRT_2,
            d_min: 50.0,
            goal_radius: 50.0,
            max_steps: 200,
            rewards: TerminalRewards::default(),
        }
    }

    pub fn tree_fast() -> Self {
        SearchConfig {
            simulations: 200,
            search_depth: 2,
            ..Self::tree_depth()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.simulations == 0 || self.search_depth == 0 {
            return Err(Error::Config("simulations and search_depth must be ≥ 1".into()));
        }
        if !(self.exploration_c >= 0.0 && self.exploration_c.is_finite()) {
            return Err(Error::Config("exploration_c must be finite and ≥ 0".into()));
        }
        if !(self.d_min > 0.0 && self.goal_radius > 0.0) || self.max_steps == 0 {
            return Err(Error::Config("d_min, goal_radius and max_steps must be positive".into()));
        }
        let r = self.rewards;
        if [r.goal, r.timeout, r.collision].iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("terminal rewards must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            simulations: self.simulations,
            depth: self.search_depth,
            exploration_c: self.exploration_c,
        }
    }

    pub fn terminal(&self, bounds: MapBounds) -> TerminalConfig {
        TerminalConfig {
            d_min: self.d_min,
            goal_radius: self.goal_radius,
            max_steps: self.max_steps,
            bounds,
        }
    }
}

/// The avoidance problem seen from one decision point: ownship dynamics plus
/// constant-velocity intruder forecasts for every search depth.
#[derive(Debug, Clone)]
pub struct AvoidanceModel<'a> {
    limits: &'a KinematicLimits,
    term: TerminalConfig,
    rewards: TerminalRewards,
    goal: (f64, f64),
    diagonal: f64,
    steps_taken: usize,
    forecast: Vec<Vec<IntruderState>>,
}

impl<'a> AvoidanceModel<'a> {
    pub fn new(ctx: &DecisionContext<'a>, cfg: &SearchConfig) -> Self {
        let mut forecast = Vec::with_capacity(cfg.search_depth as usize + 1);
        forecast.push(ctx.intruders.to_vec());
        for d in 0..cfg.search_depth as usize {
            let next = step_intruders(&forecast[d], ctx.limits.dt, ctx.bounds);
            forecast.push(next);
        }
        AvoidanceModel {
            limits: ctx.limits,
            term: cfg.terminal(*ctx.bounds),
            rewards: cfg.rewards,
            goal: ctx.goal,
            diagonal: ctx.bounds.diagonal(),
            steps_taken: ctx.steps_taken,
            forecast,
        }
    }
}

impl SearchModel for AvoidanceModel<'_> {
    type State = OwnshipState;

    fn num_actions(&self) -> usize {
        AvoidAction::COUNT
    }

    fn step(&self, s: &OwnshipState, action: usize, _depth: usize) -> OwnshipState {
        step_ownship(s, AvoidAction::from_index(action).unwrap(), self.limits)
    }

    fn evaluate(&self, s: &OwnshipState, depth: usize) -> Evaluation {
        let kind = classify_terminal(s, self.steps_taken + depth, &self.forecast[depth], self.goal, &self.term);
        let value = match self.rewards.reward(kind) {
            Ok(r) => r,
            Err(_) => estimate_value(s, self.goal, self.diagonal),
        };
        Evaluation { kind, value }
    }

    fn action_label(&self, action: usize) -> String {
        AvoidAction::from_index(action).unwrap().to_string()
    }
}

/// Everything a policy may look at when choosing a maneuver.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub own: &'a OwnshipState,
    pub intruders: &'a [IntruderState],
    pub goal: (f64, f64),
    pub steps_taken: usize,
    pub bounds: &'a MapBounds,
    pub limits: &'a KinematicLimits,
}

#[derive(Debug, Clone)]
pub struct PolicyDecision {
    pub action: AvoidAction,
    pub snapshot: Option<TreeSnapshot>,
}

pub trait AvoidPolicy {
    fn name(&self) -> &str;
    fn decide(&mut self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> Result<PolicyDecision>;
}

/// Fresh UCT search at every step.
#[derive(Debug, Clone)]
pub struct MctsPolicy {
    pub name: String,
    pub cfg: SearchConfig,
}

impl MctsPolicy {
    pub fn new(name: impl Into<String>, cfg: SearchConfig) -> Self {
        MctsPolicy { name: name.into(), cfg }
    }
}

impl AvoidPolicy for MctsPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> Result<PolicyDecision> {
        let model = AvoidanceModel::new(ctx, &self.cfg);
        let (a, snap) = plan_step(&model, *ctx.own, self.cfg.engine(), rng)?;
        Ok(PolicyDecision {
            action: AvoidAction::from_index(a).unwrap(),
            snapshot: Some(snap),
        })
    }
}

/// Uniform over the nine maneuvers.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl AvoidPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random-avoid"
    }

    fn decide(&mut self, _: &DecisionContext<'_>, rng: &mut SimRng) -> Result<PolicyDecision> {
        Ok(PolicyDecision {
            action: AvoidAction::from_index(rng.gen_range(0..AvoidAction::COUNT)).unwrap(),
            snapshot: None,
        })
    }
}

/// Initial conditions of one avoidance episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub start: OwnshipState,
    pub goal: (f64, f64),
    pub intruders: Vec<IntruderState>,
    pub bounds: MapBounds,
}

/// One executed step, handed to an optional observer (e.g. a trace writer).
#[derive(Debug, Clone, Copy)]
pub struct StepEvent<'a> {
    pub t: usize,
    pub own: &'a OwnshipState,
    pub intruders: &'a [IntruderState],
    pub action: AvoidAction,
    pub snapshot: Option<&'a TreeSnapshot>,
    pub verdict: TerminalKind,
    pub terminal_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub terminal: TerminalKind,
    pub steps: usize,
    pub terminal_reward: f64,
    pub min_separation: f64,
    pub trajectory: Vec<OwnshipState>,
}

fn min_separation(own: &OwnshipState, intruders: &[IntruderState]) -> f64 {
    intruders
        .iter()
        .map(|it| own.distance_to(it.x, it.y))
        .fold(f64::INFINITY, f64::min)
}

/// Flies `policy` from the encounter's start until a terminal state.
/// Callback invoked after every step of an episode.
pub type StepObserver<'a> = dyn FnMut(StepEvent<'_>) -> Result<()> + 'a;

pub fn fly_episode(
    enc: &Encounter,
    cfg: &SearchConfig,
    limits: &KinematicLimits,
    policy: &mut dyn AvoidPolicy,
    rng: &mut SimRng,
    mut observer: Option<&mut StepObserver<'_>>,
) -> Result<EpisodeResult> {
    let term = cfg.terminal(enc.bounds);
    let mut own = enc.start;
    let mut intruders = enc.intruders.clone();
    let mut trajectory = vec![own];
    let mut sep = min_separation(&own, &intruders);
    let mut kind = classify_terminal(&own, 0, &intruders, enc.goal, &term);
    let mut steps = 0;
    while !kind.is_terminal() {
        let ctx = DecisionContext {
            own: &own,
            intruders: &intruders,
            goal: enc.goal,
            steps_taken: steps,
            bounds: &enc.bounds,
            limits,
        };
        let decision = policy.decide(&ctx, rng)?;
        let next_own = step_ownship(&own, decision.action, limits);
        let next_intruders = step_intruders(&intruders, limits.dt, &enc.bounds);
        steps += 1;
        kind = classify_terminal(&next_own, steps, &next_intruders, enc.goal, &term);
        if let Some(obs) = observer.as_mut() {
            obs(StepEvent {
                t: steps - 1,
                own: &own,
                intruders: &intruders,
                action: decision.action,
                snapshot: decision.snapshot.as_ref(),
                verdict: kind,
                terminal_reward: cfg.rewards.reward(kind).ok(),
            })?;
        }
        own = next_own;
        intruders = next_intruders;
        sep = sep.min(min_separation(&own, &intruders));
        trajectory.push(own);
    }
    Ok(EpisodeResult {
        terminal: kind,
        steps,
        terminal_reward: cfg.rewards.reward(kind)?,
        min_separation: sep,
        trajectory,
    })
}
