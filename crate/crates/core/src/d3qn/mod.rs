//! Service-phase learning: UAV hover coordinate and per-user power levels
//! chosen by a dueling double deep Q-network (or a plain DQN baseline).
//!
//! The action is factored into one 7-way move head and `K` independent 6-way
//! power heads. The joint action value is the sum of the chosen factor values.

mod env;
mod learner;
pub mod network;
mod replay;
pub mod tabular;
mod training;

pub use env::{GainNormalizer, ServiceEnv, ServiceScenario, StepOutcome};
pub use learner::{argmax, td_target, DqnLearner, LearnerConfig, QFunction, TargetMode};
pub use network::{Adam, Architecture, ForwardCache, QNetwork};
pub use replay::{ReplayBuffer, Transition};
pub use training::{
    epsilon_schedule, greedy_rollout, run_training, AgentKind, EpisodeStats, RolloutResult,
    ServiceConfig, TrainingOutcome,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::PowerAllocation;
use crate::world::ServiceMove;

/// Number of discrete power levels per user (level 0 = not served).
pub const POWER_LEVELS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceAction {
    pub mv: ServiceMove,
    pub power_levels: Vec<u8>,
}

impl ServiceAction {
    /// Group sizes for `users` users: the move head followed by one power head each.
    pub fn groups(users: usize) -> Vec<usize> {
        std::iter::once(ServiceMove::ALL.len())
            .chain(std::iter::repeat_n(POWER_LEVELS, users))
            .collect()
    }

    pub fn to_indices(&self) -> Vec<usize> {
        std::iter::once(self.mv.index())
            .chain(self.power_levels.iter().map(|&l| l as usize))
            .collect()
    }

    pub fn from_indices(idx: &[usize]) -> Self {
        ServiceAction {
            mv: ServiceMove::from_index(idx[0]).expect("move index out of range"),
            power_levels: idx[1..]
                .iter()
                .map(|&l| {
                    assert!(l < POWER_LEVELS, "power level out of range");
                    l as u8
                })
                .collect(),
        }
    }
}

/// Maps discrete levels to watts: `level · P_max / (5K)`, then scales served
/// powers down if the budget would be exceeded.
pub fn decode_power(levels: &[u8], p_max: f64) -> PowerAllocation {
    let k = levels.len().max(1) as f64;
    let top = (POWER_LEVELS - 1) as f64;
    let mut power_w: Vec<f64> = levels
        .iter()
        .map(|&l| l.min(top as u8) as f64 * p_max / (top * k))
        .collect();
    let served: Vec<bool> = levels.iter().map(|&l| l > 0).collect();
    let total: f64 = power_w.iter().sum();
    if total > p_max {
        let scale = p_max / total;
        power_w.iter_mut().for_each(|p| *p *= scale);
    }
    PowerAllocation { power_w, served }
}

/// Rate damped by the penalty factor: `rate / 2^λ`.
pub fn compute_reward(rate: f64, violations: u32) -> f64 {
    rate * 0.5f64.powi(violations as i32)
}

/// ε-greedy over every factor group. Returns the group indices and whether
/// the pick was exploratory.
pub fn select_action<R: Rng + ?Sized>(
    q: &[f64],
    groups: &[usize],
    epsilon: f64,
    rng: &mut R,
) -> (Vec<usize>, bool) {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if rng.gen::<f64>() < epsilon {
        (groups.iter().map(|&g| rng.gen_range(0..g)).collect(), true)
    } else {
        let mut start = 0;
        let picks = groups
            .iter()
            .map(|&g| {
                let a = argmax(&q[start..start + g]);
                start += g;
                a
            })
            .collect();
        (picks, false)
    }
}
