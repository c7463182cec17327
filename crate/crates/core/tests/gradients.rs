use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use skytrace::d3qn::{Architecture, DqnLearner, LearnerConfig, QNetwork, Transition};
use skytrace::SimRng;

const H: f64 = 1e-5;

/// Largest relative difference between backprop and central differences.
fn worst_relative_error(inputs: usize, hidden: &[usize], groups: Vec<usize>, arch: Architecture, seed: u64) -> f64 {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut net = QNetwork::new(inputs, hidden, groups.clone(), arch, &mut rng);
    // generic point: zero-initialised biases can sit exactly on a ReLU kink
    for p in net.params_mut() {
        *p += rng.gen_range(-0.1..0.1);
    }
    let batch: Vec<Transition> = (0..6)
        .map(|_| Transition {
            obs: (0..inputs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: groups.iter().map(|&g| rng.gen_range(0..g)).collect(),
            reward: 0.0,
            next_obs: vec![0.0; inputs],
            terminal: true,
        })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let targets: Vec<f64> = (0..batch.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut l = DqnLearner::new(net, LearnerConfig::default());
    l.loss_and_grad(&refs, &targets);
    let analytic = l.gradient().to_vec();
    let mut worst: f64 = 0.0;
    for (i, &g) in analytic.iter().enumerate() {
        let p = l.online.params()[i];
        l.online.params_mut()[i] = p + H;
        let up = l.loss_and_grad(&refs, &targets);
        l.online.params_mut()[i] = p - H;
        let down = l.loss_and_grad(&refs, &targets);
        l.online.params_mut()[i] = p;
        let fd = (up - down) / (2.0 * H);
        worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6));
    }
    worst
}

#[test]
fn toy_net_matches_finite_differences() {
    for arch in [Architecture::Plain, Architecture::Dueling] {
        for seed in 0..10 {
            let e = worst_relative_error(4, &[6, 5], vec![2], arch, seed);
            assert!(e < 1e-4, "{arch:?} seed {seed}: {e:e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn factored_heads_match_finite_differences(
        seed in 0u64..10_000,
        inputs in 1usize..6,
        width in 2usize..9,
        depth in 1usize..4,
        groups in prop::collection::vec(2usize..7, 1..4),
        dueling in any::<bool>(),
    ) {
        let arch = if dueling { Architecture::Dueling } else { Architecture::Plain };
        let e = worst_relative_error(inputs, &vec![width; depth], groups, arch, seed);
        prop_assert!(e < 1e-4, "relative error {e:e}");
    }
}

