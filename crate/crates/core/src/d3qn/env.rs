use rand::Rng;

use super::{compute_reward, decode_power, ServiceAction};
use crate::channel::{link_report, qos_violations, user_gains, ChannelParams, LinkReport};
use crate::error::Result;
use crate::rng::SimRng;
use crate::world::{apply_service_move, MapBounds, UavPose, UserState};

/// Static part of a service episode: where the users are and how the link behaves.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceScenario {
    pub users: Vec<UserState>,
    pub bounds: MapBounds,
    pub channel: ChannelParams,
    pub move_step: f64,
    /// Rate divisor applied before the penalty; the default equals the
    /// bandwidth, so rewards are spectral efficiencies in bit/s/Hz.
    pub reward_unit_bps: f64,
}

impl ServiceScenario {
    /// Users scattered uniformly over the service area.
    pub fn random<R: Rng + ?Sized>(
        users: usize,
        bounds: MapBounds,
        channel: ChannelParams,
        move_step: f64,
        reward_unit_bps: f64,
        rng: &mut R,
    ) -> Self {
        let users = (0..users)
            .map(|id| UserState {
                id,
                x: rng.gen_range(bounds.x_min..=bounds.x_max),
                y: rng.gen_range(bounds.y_min..=bounds.y_max),
            })
            .collect();
        ServiceScenario {
            users,
            bounds,
            channel,
            move_step,
            reward_unit_bps,
        }
    }

    pub fn random_pose<R: Rng + ?Sized>(&self, rng: &mut R) -> UavPose {
        let b = &self.bounds;
        UavPose {
            x: rng.gen_range(b.x_min..=b.x_max),
            y: rng.gen_range(b.y_min..=b.y_max),
            h: rng.gen_range(b.h_min..=b.h_max),
        }
    }

    pub fn observation_dim(&self) -> usize {
        3 + self.users.len()
    }
}

/// Min-max scaling of `log10(gain)` learned from a warmup sample of poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainNormalizer {
    pub lo: f64,
    pub hi: f64,
}

impl GainNormalizer {
    pub fn warmup<R: Rng + ?Sized>(scenario: &ServiceScenario, samples: usize, rng: &mut R) -> Result<Self> {
        let unit = vec![1.0; scenario.users.len()];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..samples.max(1) {
            let pose = scenario.random_pose(rng);
            for e in user_gains(&pose, &scenario.users, &unit, &scenario.channel)? {
                let l = e.gain.log10();
                lo = lo.min(l);
                hi = hi.max(l);
            }
        }
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        Ok(GainNormalizer { lo, hi })
    }

    pub fn normalize(&self, gain: f64) -> f64 {
        (gain.max(1e-300).log10() - self.lo) / (self.hi - self.lo)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub violations: u32,
    pub clamped: bool,
    pub report: LinkReport,
}

/// Mutable episode state: the UAV pose and the current channel gains.
#[derive(Debug, Clone)]
pub struct ServiceEnv {
    pub scenario: ServiceScenario,
    pub normalizer: GainNormalizer,
    pose: UavPose,
    gains: Vec<f64>,
    fading_rng: SimRng,
}

impl ServiceEnv {
    pub fn new(scenario: ServiceScenario, normalizer: GainNormalizer, fading_rng: SimRng) -> Result<Self> {
        let start = UavPose {
            x: scenario.bounds.x_min,
            y: scenario.bounds.y_min,
            h: scenario.bounds.h_min,
        };
        let mut env = ServiceEnv {
            gains: vec![0.0; scenario.users.len()],
            scenario,
            normalizer,
            pose: start,
            fading_rng,
        };
        env.reset(start)?;
        Ok(env)
    }

    /// Copy of this environment drawing fading from `fading_rng`.
    pub fn fork(&self, fading_rng: SimRng) -> ServiceEnv {
        ServiceEnv { fading_rng, ..self.clone() }
    }

    pub fn pose(&self) -> UavPose {
        self.pose
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn reset(&mut self, pose: UavPose) -> Result<Vec<f64>> {
        self.pose = pose;
        self.refresh_gains()?;
        Ok(self.observation())
    }

    fn refresh_gains(&mut self) -> Result<Vec<crate::channel::GainEntry>> {
        let fading: Vec<f64> = (0..self.scenario.users.len())
            .map(|_| self.scenario.channel.draw_fading(&mut self.fading_rng))
            .collect();
        let entries = user_gains(&self.pose, &self.scenario.users, &fading, &self.scenario.channel)?;
        self.gains = entries.iter().map(|e| e.gain).collect();
        Ok(entries)
    }

    pub fn observation(&self) -> Vec<f64> {
        let b = &self.scenario.bounds;
        let mut obs = Vec::with_capacity(self.scenario.observation_dim());
        obs.push((self.pose.x - b.x_min) / b.width());
        obs.push((self.pose.y - b.y_min) / b.height());
        obs.push((self.pose.h - b.h_min) / (b.h_max - b.h_min));
        obs.extend(self.gains.iter().map(|&g| self.normalizer.normalize(g)));
        obs
    }

    /// Moves the UAV, allocates power and scores the resulting links.
    /// The penalty count is the number of QoS violations plus one if the
    /// move was clamped at a boundary.
    pub fn step(&mut self, action: &ServiceAction) -> Result<StepOutcome> {
        let ch = self.scenario.channel;
        let moved = apply_service_move(&self.pose, action.mv, self.scenario.move_step, &self.scenario.bounds);
        self.pose = moved.pose;
        let entries = self.refresh_gains()?;
        let alloc = decode_power(&action.power_levels, ch.p_max_w);
        let report = link_report(&entries, &alloc, &ch);
        let rates: Vec<f64> = report.links.iter().map(|l| l.rate_bps).collect();
        let violations = qos_violations(&rates, &alloc, ch.qos_rate_bps) as u32 + moved.clamped as u32;
        let reward = compute_reward(report.system_rate_bps / self.scenario.reward_unit_bps, violations);
        Ok(StepOutcome {
            obs: self.observation(),
            reward,
            violations,
            clamped: moved.clamped,
            report,
        })
    }
}
