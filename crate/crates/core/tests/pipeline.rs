use skytrace::harness::{run_pipeline, run_sweep, ExperimentConfig, MetricsTable, PlannerProfile, ServiceGoal};
use skytrace::trace::{validate_trace, TraceFile};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seeds: vec![4], ..ExperimentConfig::default() };
    cfg.service.episodes = 3;
    cfg.service.steps_per_episode = 15;
    cfg.service.warmup_samples = 32;
    cfg.service.eval_rollouts = 1;
    cfg.service.learner.batch_size = 16;
    cfg.dqn_avoid.episodes = 4;
    cfg.planning.episodes_per_cell = 6;
    cfg.planning.trace_episodes = 3;
    cfg.planning.intruder_counts = vec![2, 7];
    cfg.planning.profiles = vec![PlannerProfile::TreeFast, PlannerProfile::DqnAvoid, PlannerProfile::RandomAvoid];
    cfg
}

#[test]
fn open_sky_always_reaches_the_goal() {
    let mut cfg = small();
    cfg.planning.profiles = vec![PlannerProfile::TreeDepth];
    cfg.planning.intruder_counts = vec![0];
    cfg.planning.episodes_per_cell = 100;
    let dir = tempfile::tempdir().unwrap();
    let res = run_pipeline(&cfg, dir.path(), 1).unwrap();
    let row = res.sweep.metrics.get(PlannerProfile::TreeDepth, 0).unwrap();
    assert_eq!(row.episodes, 100);
    assert_eq!(row.goal_rate, 1.0);
}

#[test]
fn pipeline_artifacts_are_consistent() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let res = run_pipeline(&cfg, dir.path(), 2).unwrap();

    // the sweep grid is exactly the configured grid
    let mut cells: Vec<(PlannerProfile, usize)> = res.sweep.metrics.rows.iter().map(|r| (r.profile, r.intruders)).collect();
    cells.sort();
    let mut expect = Vec::new();
    for p in cfg.sorted_profiles() {
        for &m in &cfg.planning.intruder_counts {
            expect.push((p, m));
        }
    }
    assert_eq!(cells, expect);
    for r in &res.sweep.metrics.rows {
        assert!((r.goal_rate + r.collision_rate + r.timeout_rate - 1.0).abs() < 1e-9);
    }

    // stage 2 used the goal stage 1 wrote
    let goal_path = dir.path().join("stage1/seed-4/goal.json");
    let on_disk: ServiceGoal = serde_json::from_slice(&std::fs::read(&goal_path).unwrap()).unwrap();
    assert_eq!(on_disk, res.goals[0]);
    assert_eq!(res.manifest.goals[0].sha256, on_disk.hash());
    assert_eq!(res.manifest.config_hash, cfg.hash());

    // manifest hashes match the files
    for (rel, sha) in &res.manifest.files {
        let bytes = std::fs::read(dir.path().join(rel)).unwrap();
        assert_eq!(&skytrace::trace::sha256_hex(&bytes), sha, "{rel}");
    }
    assert_eq!(MetricsTable::read_csv(&dir.path().join("metrics.csv")).unwrap(), res.sweep.metrics);

    // only tree planners are traced, and their traces are clean
    assert_eq!(res.sweep.trace_files.len(), 2);
    for f in &res.sweep.trace_files {
        let rep = validate_trace(&TraceFile::read(f).unwrap());
        assert!(rep.is_clean(), "{f:?}: {:?}", rep.violations);
    }
    let service = validate_trace(&TraceFile::read(&dir.path().join("stage1/seed-4/trace.jsonl")).unwrap());
    assert!(service.is_clean() && service.records > 0, "{:?}", service.violations);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = small();
    let goal = ServiceGoal::centre(&cfg, 4);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_sweep(&cfg, &[goal], a.path(), 1).unwrap();
    let rb = run_sweep(&cfg, &[goal], b.path(), 3).unwrap();
    assert_eq!(ra.metrics, rb.metrics);
    assert_eq!(ra.episodes, rb.episodes);
    for f in ["metrics.csv", "episodes.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn invalid_config_fails_before_any_output() {
    let mut cfg = small();
    cfg.planning.intruder_counts.clear();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    assert!(run_pipeline(&cfg, &out, 1).is_err());
    assert!(!out.exists());
}
