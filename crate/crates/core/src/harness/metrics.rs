use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PlannerProfile;
use crate::error::{Error, Result};
use crate::world::TerminalKind;

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub profile: PlannerProfile,
    pub intruders: usize,
    pub seed: u64,
    pub episode: u64,
    pub terminal: TerminalKind,
    pub steps: usize,
    pub terminal_reward: f64,
    pub min_separation_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub profile: PlannerProfile,
    pub intruders: usize,
    pub episodes: usize,
    pub goal_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    pub mean_steps: f64,
    /// Mean steps over goal episodes only; empty when none reached the goal.
    pub mean_steps_goal: Option<f64>,
    /// Mean terminal reward.
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn get(&self, profile: PlannerProfile, intruders: usize) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.profile == profile && r.intruders == intruders)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
        Ok(MetricsTable { rows })
    }
}

pub fn write_episode_csv(path: &Path, rows: &[EpisodeRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Groups episodes by `(profile, intruder count)` and averages each group.
/// Episodes are put in canonical order first, so the result does not depend
/// on input order.
pub fn aggregate(results: &[EpisodeRow]) -> MetricsTable {
    let mut sorted: Vec<&EpisodeRow> = results.iter().collect();
    sorted.sort_by(|a, b| {
        (a.profile, a.intruders, a.seed, a.episode, a.steps)
            .cmp(&(b.profile, b.intruders, b.seed, b.episode, b.steps))
            .then(a.terminal_reward.total_cmp(&b.terminal_reward))
    });
    let mut rows = Vec::new();
    for group in sorted.chunk_by(|a, b| (a.profile, a.intruders) == (b.profile, b.intruders)) {
        let n = group.len() as f64;
        let count = |k| group.iter().filter(|r| r.terminal == k).count();
        let goals: Vec<f64> = group
            .iter()
            .filter(|r| r.terminal == TerminalKind::Goal)
            .map(|r| r.steps as f64)
            .collect();
        let goal = count(TerminalKind::Goal);
        let collision = count(TerminalKind::Collision);
        let timeout = group.len() - goal - collision;
        rows.push(MetricsRow {
            profile: group[0].profile,
            intruders: group[0].intruders,
            episodes: group.len(),
            goal_rate: goal as f64 / n,
            collision_rate: collision as f64 / n,
            timeout_rate: timeout as f64 / n,
            mean_steps: group.iter().map(|r| r.steps as f64).sum::<f64>() / n,
            mean_steps_goal: (!goals.is_empty()).then(|| goals.iter().sum::<f64>() / goals.len() as f64),
            mean_return: group.iter().map(|r| r.terminal_reward).sum::<f64>() / n,
        });
    }
    MetricsTable { rows }
}
