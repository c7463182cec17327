use proptest::prelude::*;
use rand::SeedableRng;
use skytrace::mcts::{plan_step, EngineConfig, Evaluation, SearchModel, SearchTree};
use skytrace::trace::{check_record, Decision, DecisionRecord, Phase};
use skytrace::{SimRng, TerminalKind};

/// Tree of fixed branching whose nodes are numbered breadth-first. Nodes listed
/// in `terminal` end the episode with the matching value; depth-limit leaves
/// return a heuristic in [0, 1].
#[derive(Debug)]
struct Toy {
    branching: usize,
    values: Vec<f64>,
    terminal_mask: Vec<bool>,
}

impl Toy {
    fn lookup(&self, s: usize) -> (f64, bool) {
        let k = s % self.values.len();
        (self.values[k], self.terminal_mask[k] && s != 0)
    }
}

impl SearchModel for Toy {
    type State = usize;

    fn num_actions(&self) -> usize {
        self.branching
    }

    fn step(&self, s: &usize, a: usize, _depth: usize) -> usize {
        s * self.branching + a + 1
    }

    fn evaluate(&self, s: &usize, _depth: usize) -> Evaluation {
        let (v, terminal) = self.lookup(*s);
        if terminal {
            let kind = if v > 0.5 { TerminalKind::Goal } else { TerminalKind::Collision };
            Evaluation { kind, value: if v > 0.5 { 1.0 } else { 0.0 } }
        } else {
            Evaluation { kind: TerminalKind::NonTerminal, value: v }
        }
    }
}

fn toy() -> impl Strategy<Value = Toy> {
    (2usize..5, 5usize..40).prop_flat_map(|(b, n)| {
        (
            prop::collection::vec(0.0..=1.0f64, n),
            prop::collection::vec(prop::bool::weighted(0.2), n),
        )
            .prop_map(move |(values, terminal_mask)| Toy { branching: b, values, terminal_mask })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn visits_are_conserved_after_every_simulation(
        model in toy(),
        depth in 1u32..5,
        sims in 1u32..300,
        c in 0.0..2.0f64,
        seed in any::<u64>(),
    ) {
        let cfg = EngineConfig { simulations: sims, depth, exploration_c: c };
        let mut tree = SearchTree::new(&model, 0usize, cfg);
        let mut rng = SimRng::seed_from_u64(seed);
        for n in 1..=sims as u64 {
            let v = tree.simulate_once(&model, &mut rng);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(tree.conservation_violations().is_empty());
            prop_assert_eq!(tree.root_visits(), n);
        }
        let snap = tree.snapshot(&model);
        prop_assert_eq!(snap.children.iter().map(|ch| ch.visits).sum::<u64>(), sims as u64);
        for ch in &snap.children {
            if let Some(m) = ch.mean {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
        let best = snap.children.iter().map(|ch| ch.visits).max().unwrap();
        prop_assert_eq!(snap.children[snap.chosen].visits, best);
    }

    #[test]
    fn snapshots_pass_the_trace_checks(model in toy(), depth in 1u32..4, sims in 1u32..200, seed in any::<u64>()) {
        let cfg = EngineConfig { simulations: sims, depth, exploration_c: std::f64::consts::FRAC_1_SQRT_2 };
        let (action, snap) = plan_step(&model, 0usize, cfg, &mut SimRng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(action, snap.chosen);
        let rec = DecisionRecord {
            step: 0,
            episode: 0,
            t: 0,
            phase: Phase::Avoidance,
            observation_digest: "00".repeat(8),
            explored: false,
            decision: Decision::Avoidance(snap),
            terminal: None,
            terminal_reward: None,
        };
        let problems = check_record(&rec);
        prop_assert!(problems.is_empty(), "{:?}", problems);
    }

    #[test]
    fn identical_seeds_give_identical_snapshots(model in toy(), sims in 1u32..200, seed in any::<u64>()) {
        let cfg = EngineConfig { simulations: sims, depth: 3, exploration_c: 1.0 };
        let a = plan_step(&model, 0usize, cfg, &mut SimRng::seed_from_u64(seed)).unwrap();
        let b = plan_step(&model, 0usize, cfg, &mut SimRng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
