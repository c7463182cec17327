//! Fixed-input DQN avoidance baseline: trained with a fixed intruder count and
//! evaluated on any count by observing only the nearest intruders.

use super::config::ExperimentConfig;
use super::scenario::{encounter_with, ServiceGoal};
use crate::d3qn::{
    argmax, epsilon_schedule, select_action, Architecture, DqnLearner, ForwardCache, QNetwork, ReplayBuffer,
    Transition,
};
use crate::error::Result;
use crate::mcts::{estimate_value, AvoidPolicy, DecisionContext, PolicyDecision};
use crate::rng::{stream, tag, SimRng};
use crate::world::{classify_terminal, step_intruders, step_ownship, AvoidAction, IntruderState, TerminalKind};

const OWN_FEATURES: usize = 5;
const PER_INTRUDER: usize = 5;
const POS_SCALE: f64 = 500.0;

pub fn observation_dim(slots: usize) -> usize {
    OWN_FEATURES + PER_INTRUDER * slots
}

/// Goal-relative ownship features followed by the `slots` nearest intruders
/// in the body frame (position, relative velocity, presence flag), zero-padded.
pub fn avoid_observation(ctx: &DecisionContext<'_>, slots: usize) -> Vec<f64> {
    let own = ctx.own;
    let lim = ctx.limits;
    let mut obs = Vec::with_capacity(observation_dim(slots));
    let (gx, gy) = (ctx.goal.0 - own.x, ctx.goal.1 - own.y);
    let rel_bearing = gy.atan2(gx) - own.heading;
    obs.push(gx.hypot(gy) / ctx.bounds.diagonal());
    obs.push(rel_bearing.sin());
    obs.push(rel_bearing.cos());
    obs.push((own.speed - lim.v_min) / (lim.v_max - lim.v_min));
    obs.push(own.tilt / lim.tilt_max);

    let (sin, cos) = own.heading.sin_cos();
    let (ovx, ovy) = (own.speed * cos, own.speed * sin);
    let body = |dx: f64, dy: f64| (cos * dx + sin * dy, -sin * dx + cos * dy);
    let mut near: Vec<(f64, &IntruderState)> = ctx
        .intruders
        .iter()
        .map(|it| (own.distance_to(it.x, it.y), it))
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    for (_, it) in near.iter().take(slots) {
        let (px, py) = body(it.x - own.x, it.y - own.y);
        let (vx, vy) = body(it.vx - ovx, it.vy - ovy);
        obs.extend([
            (px / POS_SCALE).clamp(-4.0, 4.0),
            (py / POS_SCALE).clamp(-4.0, 4.0),
            vx / lim.v_max,
            vy / lim.v_max,
            1.0,
        ]);
    }
    obs.resize(observation_dim(slots), 0.0);
    obs
}

/// Greedy policy of a trained avoidance network.
#[derive(Debug, Clone)]
pub struct DqnAvoidPolicy {
    pub net: QNetwork,
    pub slots: usize,
    cache: ForwardCache,
}

impl DqnAvoidPolicy {
    pub fn new(net: QNetwork, slots: usize) -> Self {
        DqnAvoidPolicy { net, slots, cache: ForwardCache::default() }
    }
}

impl AvoidPolicy for DqnAvoidPolicy {
    fn name(&self) -> &str {
        "dqn-avoid"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut SimRng) -> Result<PolicyDecision> {
        self.net.forward_into(&avoid_observation(ctx, self.slots), &mut self.cache);
        Ok(PolicyDecision {
            action: AvoidAction::from_index(argmax(&self.cache.q)).unwrap(),
            snapshot: None,
        })
    }
}

/// Trains the baseline on encounters with `train_intruders` intruders and the
/// given goal. Returns the network and the per-episode shaped returns.
pub fn train_dqn_avoid(cfg: &ExperimentConfig, goal: &ServiceGoal, seed: u64) -> Result<(QNetwork, Vec<f64>)> {
    let d = &cfg.dqn_avoid;
    let search = cfg.planning.tree_depth;
    let lim = &cfg.kinematics;
    let map = cfg.world.planning_bounds();
    let term = search.terminal(map);
    let diag = map.diagonal();
    let slots = d.train_intruders;
    let groups = [AvoidAction::COUNT];

    let net = QNetwork::new(
        observation_dim(slots),
        &d.hidden,
        groups.to_vec(),
        Architecture::Plain,
        &mut stream(seed, &[tag("dqn-avoid-init")]),
    );
    let mut learner = DqnLearner::new(net, d.learner);
    let mut buffer = ReplayBuffer::new(d.buffer_capacity);
    let mut enc_rng = stream(seed, &[tag("dqn-avoid-encounters")]);
    let mut act_rng = stream(seed, &[tag("dqn-avoid-explore")]);
    let mut replay_rng = stream(seed, &[tag("dqn-avoid-replay")]);
    let mut cache = ForwardCache::default();
    let mut returns = Vec::with_capacity(d.episodes);

    for ep in 0..d.episodes {
        let eps = epsilon_schedule(ep, d.episodes, d.epsilon_start, d.epsilon_end);
        let enc = encounter_with(cfg, goal.planning_xy, slots, &mut enc_rng);
        let mut own = enc.start;
        let mut intruders = enc.intruders;
        let mut steps = 0;
        let mut ret = 0.0;
        let obs_of = |own: &_, intruders: &[IntruderState], steps| {
            avoid_observation(
                &DecisionContext { own, intruders, goal: enc.goal, steps_taken: steps, bounds: &map, limits: lim },
                slots,
            )
        };
        let mut obs = obs_of(&own, &intruders, 0);
        loop {
            learner.online.forward_into(&obs, &mut cache);
            let (pick, _) = select_action(&cache.q, &groups, eps, &mut act_rng);
            let next_own = step_ownship(&own, AvoidAction::from_index(pick[0]).unwrap(), lim);
            let next_intruders = step_intruders(&intruders, lim.dt, &map);
            steps += 1;
            let kind = classify_terminal(&next_own, steps, &next_intruders, enc.goal, &term);
            let progress = estimate_value(&next_own, enc.goal, diag) - estimate_value(&own, enc.goal, diag);
            let reward = d.progress_scale * progress
                + match kind {
                    TerminalKind::Goal => search.rewards.goal,
                    TerminalKind::Collision => -d.collision_penalty,
                    _ => 0.0,
                };
            ret += reward;
            let next_obs = obs_of(&next_own, &next_intruders, steps);
            buffer.push(Transition {
                obs: std::mem::replace(&mut obs, next_obs.clone()),
                action: pick,
                reward,
                next_obs,
                terminal: kind.is_terminal(),
            });
            learner.train_step(&buffer, &mut replay_rng);
            own = next_own;
            intruders = next_intruders;
            if kind.is_terminal() {
                break;
            }
        }
        returns.push(ret);
    }
    Ok((learner.online, returns))
}
