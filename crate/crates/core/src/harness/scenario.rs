use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::d3qn::ServiceScenario;
use crate::mcts::Encounter;
use crate::rng::{stream, tag, SimRng};
use crate::trace::sha256_hex;
use crate::world::{wrap_angle, IntruderState, OwnshipState, UavPose};

/// Service coordinate chosen by stage 1 and handed to stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceGoal {
    pub seed: u64,
    pub pose: UavPose,
    /// Goal in planning-map coordinates.
    pub planning_xy: (f64, f64),
}

impl ServiceGoal {
    pub fn new(cfg: &ExperimentConfig, seed: u64, pose: UavPose) -> Self {
        ServiceGoal {
            seed,
            pose,
            planning_xy: cfg.world.to_planning(pose.x, pose.y),
        }
    }

    /// Goal at the centre of the service area, for planning without stage 1.
    pub fn centre(cfg: &ExperimentConfig, seed: u64) -> Self {
        let a = &cfg.world.service_area;
        let pose = UavPose {
            x: 0.5 * (a.x_min + a.x_max),
            y: 0.5 * (a.y_min + a.y_max),
            h: a.h_min,
        };
        Self::new(cfg, seed, pose)
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("goal serializes").as_bytes())
    }
}

/// User layout for a seed. The layout does not depend on the agent kind, so
/// every agent trained on a seed faces the same users.
pub fn service_scenario(cfg: &ExperimentConfig, seed: u64) -> ServiceScenario {
    let mut rng = stream(seed, &[tag("users"), cfg.world.user_layout_tag]);
    ServiceScenario::random(
        cfg.service.users,
        cfg.world.service_area,
        cfg.channel,
        cfg.service.move_step_m,
        cfg.service.reward_unit_bps.unwrap_or(cfg.channel.bandwidth_hz),
        &mut rng,
    )
}

pub fn ownship_start(cfg: &ExperimentConfig, goal: (f64, f64)) -> OwnshipState {
    let [x, y] = cfg.world.ownship_start;
    OwnshipState {
        x,
        y,
        speed: cfg.world.ownship_speed.clamp(cfg.kinematics.v_min, cfg.kinematics.v_max),
        heading: wrap_angle((goal.1 - y).atan2(goal.0 - x)),
        tilt: 0.0,
    }
}

/// Intruders placed uniformly over the map, away from the start and goal,
/// with uniformly drawn headings and speeds.
pub fn spawn_intruders<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    count: usize,
    start: (f64, f64),
    goal: (f64, f64),
    rng: &mut R,
) -> Vec<IntruderState> {
    let map = cfg.world.planning_bounds();
    let clear = cfg.world.intruder_clearance_m;
    let [v_lo, v_hi] = cfg.world.intruder_speed;
    (0..count)
        .map(|id| {
            let mut attempt = 0;
            let (x, y) = loop {
                let p = (rng.gen_range(map.x_min..=map.x_max), rng.gen_range(map.y_min..=map.y_max));
                let far = |q: (f64, f64)| (p.0 - q.0).hypot(p.1 - q.1) >= clear;
                attempt += 1;
                // a crowded map may not admit the clearance; give up after a while
                if (far(start) && far(goal)) || attempt >= 1000 {
                    break p;
                }
            };
            let speed = if v_hi > v_lo { rng.gen_range(v_lo..=v_hi) } else { v_lo };
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            IntruderState {
                id,
                x,
                y,
                vx: speed * dir.cos(),
                vy: speed * dir.sin(),
            }
        })
        .collect()
}

/// Encounter for one evaluation episode. The draw depends only on
/// `(seed, count, episode)`, so every profile flies the same encounters.
pub fn encounter(cfg: &ExperimentConfig, goal: &ServiceGoal, count: usize, seed: u64, episode: u64) -> Encounter {
    let mut rng = stream(seed, &[tag("encounter"), count as u64, episode]);
    encounter_with(cfg, goal.planning_xy, count, &mut rng)
}

pub fn encounter_with(cfg: &ExperimentConfig, goal: (f64, f64), count: usize, rng: &mut SimRng) -> Encounter {
    let start = ownship_start(cfg, goal);
    Encounter {
        intruders: spawn_intruders(cfg, count, (start.x, start.y), goal, rng),
        start,
        goal,
        bounds: cfg.world.planning_bounds(),
    }
}
