//! Experiment orchestration: configuration, scenario generation, baselines,
//! metric aggregation and artifact export.

mod config;
mod dqn_avoid;
mod metrics;
mod pipeline;
mod scenario;

pub use config::{DqnAvoidConfig, ExperimentConfig, PlannerProfile, PlanningConfig, WorldConfig};
pub use dqn_avoid::{avoid_observation, train_dqn_avoid, DqnAvoidPolicy};
pub use metrics::{aggregate, write_episode_csv, EpisodeRow, MetricsRow, MetricsTable};
pub use pipeline::{
    read_goal, run_cell, run_pipeline, run_sweep, trace_file_name, trace_header, train_stage, write_curve_csv,
    write_json, GoalEntry, PipelineResult, RunManifest, SweepResult,
};
pub use scenario::{encounter, encounter_with, ownship_start, service_scenario, spawn_intruders, ServiceGoal};
