use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::d3qn::{AgentKind, LearnerConfig, ServiceConfig, TargetMode};
use crate::error::{Error, Result};
use crate::mcts::SearchConfig;
use crate::trace::sha256_hex;
use crate::world::{KinematicLimits, MapBounds};

/// Avoidance policies compared in the sweep. The declaration order is the
/// row order of every metrics table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlannerProfile {
    #[serde(rename = "tree-depth")]
    TreeDepth,
    #[serde(rename = "tree-fast")]
    TreeFast,
    #[serde(rename = "dqn-avoid")]
    DqnAvoid,
    #[serde(rename = "random-avoid")]
    RandomAvoid,
}

impl PlannerProfile {
    pub const ALL: [PlannerProfile; 4] = [
        PlannerProfile::TreeDepth,
        PlannerProfile::TreeFast,
        PlannerProfile::DqnAvoid,
        PlannerProfile::RandomAvoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerProfile::TreeDepth => "tree-depth",
            PlannerProfile::TreeFast => "tree-fast",
            PlannerProfile::DqnAvoid => "dqn-avoid",
            PlannerProfile::RandomAvoid => "random-avoid",
        }
    }

    pub fn is_tree(self) -> bool {
        matches!(self, PlannerProfile::TreeDepth | PlannerProfile::TreeFast)
    }
}

impl fmt::Display for PlannerProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown planner profile `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub service_area: MapBounds,
    pub planning_width_m: f64,
    pub planning_height_m: f64,
    /// Planning-map position of the service area's (0, 0) corner.
    pub service_origin: [f64; 2],
    pub ownship_start: [f64; 2],
    pub ownship_speed: f64,
    /// Intruder speed range, m/s.
    pub intruder_speed: [f64; 2],
    /// Minimum initial distance of every intruder from the start and the goal.
    pub intruder_clearance_m: f64,
    /// Seed of the user layout, mixed with the run seed.
    pub user_layout_tag: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            service_area: MapBounds {
                x_min: 0.0,
                x_max: 500.0,
                y_min: 0.0,
                y_max: 500.0,
                h_min: 100.0,
                h_max: 300.0,
            },
            planning_width_m: 2000.0,
            planning_height_m: 2000.0,
            service_origin: [750.0, 750.0],
            ownship_start: [200.0, 200.0],
            ownship_speed: 40.0,
            intruder_speed: [5.0, 15.0],
            intruder_clearance_m: 250.0,
            user_layout_tag: 0,
        }
    }
}

impl WorldConfig {
    pub fn planning_bounds(&self) -> MapBounds {
        MapBounds::planar(self.planning_width_m, self.planning_height_m)
    }

    /// Planning-map coordinates of a service-area point.
    pub fn to_planning(&self, x: f64, y: f64) -> (f64, f64) {
        (self.service_origin[0] + x, self.service_origin[1] + y)
    }

    pub fn validate(&self) -> Result<()> {
        self.service_area.validate()?;
        let map = self.planning_bounds();
        map.validate()?;
        let corners = [
            self.to_planning(self.service_area.x_min, self.service_area.y_min),
            self.to_planning(self.service_area.x_max, self.service_area.y_max),
        ];
        if corners.iter().any(|&(x, y)| !map.contains_xy(x, y)) {
            return Err(Error::Config("service area does not fit inside the planning map".into()));
        }
        if !map.contains_xy(self.ownship_start[0], self.ownship_start[1]) {
            return Err(Error::Config("ownship start lies outside the planning map".into()));
        }
        let [lo, hi] = self.intruder_speed;
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return Err(Error::Config("intruder_speed must be an ordered, non-negative range".into()));
        }
        if !(self.intruder_clearance_m >= 0.0) {
            return Err(Error::Config("intruder_clearance_m must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnAvoidConfig {
    /// Number of intruders seen during training and by the observation.
    pub train_intruders: usize,
    pub episodes: usize,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub progress_scale: f64,
    pub collision_penalty: f64,
    pub learner: LearnerConfig,
}

impl Default for DqnAvoidConfig {
    fn default() -> Self {
        DqnAvoidConfig {
            train_intruders: 10,
            episodes: 1000,
            hidden: vec![40, 40, 40],
            buffer_capacity: 10_000,
            epsilon_start: 0.9,
            epsilon_end: 0.05,
            progress_scale: 10.0,
            collision_penalty: 1.0,
            learner: LearnerConfig {
                gamma: 0.95,
                mode: TargetMode::Vanilla,
                ..LearnerConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanningConfig {
    pub profiles: Vec<PlannerProfile>,
    pub intruder_counts: Vec<usize>,
    pub episodes_per_cell: usize,
    pub tree_depth: SearchConfig,
    pub tree_fast: SearchConfig,
    /// Episodes per tree cell written to the decision trace.
    pub trace_episodes: usize,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        PlanningConfig {
            profiles: PlannerProfile::ALL.to_vec(),
            intruder_counts: vec![5, 10, 15, 20, 25, 30],
            episodes_per_cell: 100,
            tree_depth: SearchConfig::tree_depth(),
            tree_fast: SearchConfig::tree_fast(),
            trace_episodes: 100,
        }
    }
}

impl PlanningConfig {
    /// Search settings of a profile; the non-tree profiles share the
    /// tree-depth terminal settings.
    pub fn search(&self, p: PlannerProfile) -> SearchConfig {
        match p {
            PlannerProfile::TreeFast => self.tree_fast,
            _ => self.tree_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub agent: AgentKind,
    pub world: WorldConfig,
    pub kinematics: KinematicLimits,
    pub channel: ChannelParams,
    pub service: ServiceConfig,
    pub planning: PlanningConfig,
    pub dqn_avoid: DqnAvoidConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            seeds: vec![0, 1, 2],
            agent: AgentKind::D3qn,
            world: WorldConfig::default(),
            kinematics: KinematicLimits::default(),
            channel: ChannelParams::default(),
            service: ServiceConfig::default(),
            planning: PlanningConfig::default(),
            dqn_avoid: DqnAvoidConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Checks every section; run before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.world.validate()?;
        self.kinematics.validate()?;
        self.channel.validate()?;
        self.service.validate()?;
        let p = &self.planning;
        if p.profiles.is_empty() {
            return Err(Error::Config("planning.profiles must not be empty".into()));
        }
        let unique: BTreeSet<_> = p.profiles.iter().collect();
        if unique.len() != p.profiles.len() {
            return Err(Error::Config("planning.profiles contains duplicates".into()));
        }
        if p.intruder_counts.is_empty() || p.episodes_per_cell == 0 {
            return Err(Error::Config("intruder_counts and episodes_per_cell must be non-empty".into()));
        }
        p.tree_depth.validate()?;
        p.tree_fast.validate()?;
        let d = &self.dqn_avoid;
        if p.profiles.contains(&PlannerProfile::DqnAvoid) {
            if d.train_intruders == 0 || d.episodes == 0 || d.hidden.is_empty() || d.hidden.contains(&0) {
                return Err(Error::Config("dqn_avoid needs train_intruders, episodes and hidden layers".into()));
            }
            if d.learner.batch_size == 0 || d.learner.batch_size > d.buffer_capacity {
                return Err(Error::Config("dqn_avoid.batch_size must be in 1..=buffer_capacity".into()));
            }
        }
        Ok(())
    }

    pub fn sorted_profiles(&self) -> Vec<PlannerProfile> {
        let mut p = self.planning.profiles.clone();
        p.sort();
        p
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.planning.tree_depth.simulations, 2000);
        assert_eq!(cfg.planning.tree_fast.search_depth, 2);
    }

    #[test]
    fn overrides_and_profiles_parse() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seeds = [4]
            agent = "dqn"
            [planning]
            profiles = ["random-avoid", "tree-fast"]
            intruder_counts = [0, 3]
            [channel]
            fading = "rayleigh"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.agent, AgentKind::Dqn);
        assert_eq!(cfg.sorted_profiles(), vec![PlannerProfile::TreeFast, PlannerProfile::RandomAvoid]);
        assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn bad_configs_fail_fast() {
        for text in [
            "seeds = []",
            "seeds = [1, 1]",
            "[planning]\nprofiles = []",
            "[planning]\nprofiles = [\"tree-wide\"]",
            "[world]\nintruder_speed = [10.0, 5.0]",
            "[world]\nservice_origin = [1800.0, 0.0]",
            "[planning.tree_depth]\nsimulations = 0",
            "[unknown]\nx = 1",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
