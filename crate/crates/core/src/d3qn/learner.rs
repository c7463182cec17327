use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{Adam, ForwardCache, QNetwork};
use super::replay::{ReplayBuffer, Transition};

/// Anything that maps an observation to per-group action values.
pub trait QFunction {
    fn groups(&self) -> &[usize];
    fn q_values(&self, obs: &[f64]) -> Vec<f64>;
}

impl QFunction for QNetwork {
    fn groups(&self) -> &[usize] {
        QNetwork::groups(self)
    }

    fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        QNetwork::q_values(self, obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// `y = r + γ·Σ_g max_a Q̂_g(s', a)`.
    Vanilla,
    /// `y = r + γ·Σ_g Q̂_g(s', argmax_a Q_g(s', a))`.
    Double,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Bootstrapped targets for a mini-batch.
pub fn td_target<Q: QFunction + ?Sized>(
    batch: &[&Transition],
    online: &Q,
    target: &Q,
    gamma: f64,
    mode: TargetMode,
) -> Vec<f64> {
    let groups = target.groups().to_vec();
    batch
        .iter()
        .map(|t| {
            if t.terminal || gamma == 0.0 {
                return t.reward;
            }
            let q_next = target.q_values(&t.next_obs);
            let q_sel = match mode {
                TargetMode::Double => Some(online.q_values(&t.next_obs)),
                TargetMode::Vanilla => None,
            };
            let mut start = 0;
            let mut bootstrap = 0.0;
            for &g in &groups {
                let r = start..start + g;
                bootstrap += match &q_sel {
                    Some(sel) => q_next[start + argmax(&sel[r])],
                    None => q_next[r].iter().copied().fold(f64::NEG_INFINITY, f64::max),
                };
                start += g;
            }
            t.reward + gamma * bootstrap
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Target network refresh period, in gradient steps.
    pub sync_every: u64,
    pub mode: TargetMode,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            gamma: 0.95,
            batch_size: 64,
            learning_rate: 1e-3,
            sync_every: 200,
            mode: TargetMode::Double,
        }
    }
}

/// Online network, frozen target copy and optimizer state.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub online: QNetwork,
    pub target: QNetwork,
    pub adam: Adam,
    pub cfg: LearnerConfig,
    updates: u64,
    grad: Vec<f64>,
    cache: ForwardCache,
}

impl DqnLearner {
    pub fn new(online: QNetwork, cfg: LearnerConfig) -> Self {
        let adam = Adam::new(online.num_params(), cfg.learning_rate);
        DqnLearner {
            target: online.clone(),
            grad: vec![0.0; online.num_params()],
            online,
            adam,
            cfg,
            updates: 0,
            cache: ForwardCache::default(),
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Mean squared TD error of `batch` against fixed `targets`, plus its
    /// gradient with respect to the online parameters (written to `self.grad`).
    pub fn loss_and_grad(&mut self, batch: &[&Transition], targets: &[f64]) -> f64 {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut d_q = vec![0.0; self.online.output_dim()];
        for (t, &y) in batch.iter().zip(targets) {
            self.online.forward_into(&t.obs, &mut self.cache);
            let mut start = 0;
            let mut idx = Vec::with_capacity(t.action.len());
            for (&g, &a) in self.online.groups().iter().zip(&t.action) {
                idx.push(start + a);
                start += g;
            }
            let q_sa: f64 = idx.iter().map(|&i| self.cache.q[i]).sum();
            let err = q_sa - y;
            loss += err * err / n;
            d_q.iter_mut().for_each(|d| *d = 0.0);
            for &i in &idx {
                d_q[i] = 2.0 * err / n;
            }
            self.online.backward(&self.cache, &d_q, &mut self.grad);
        }
        loss
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad
    }

    /// One optimizer step on a sampled mini-batch. Returns the pre-step loss,
    /// or `None` when the buffer cannot fill a batch yet.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Option<f64> {
        let batch = buffer.sample(self.cfg.batch_size, rng)?;
        Some(self.train_on(&batch))
    }

    pub fn train_on(&mut self, batch: &[&Transition]) -> f64 {
        let targets = td_target(batch, &self.online, &self.target, self.cfg.gamma, self.cfg.mode);
        let loss = self.loss_and_grad(batch, &targets);
        self.adam.step(self.online.params_mut(), &self.grad);
        self.updates += 1;
        if self.cfg.sync_every > 0 && self.updates.is_multiple_of(self.cfg.sync_every) {
            self.target.copy_from(&self.online);
        }
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::super::network::Architecture;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transitions(n: usize, terminal: bool, seed: u64) -> Vec<Transition> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Transition {
                obs: (0..4).map(|_| rng.gen_range(0.0..1.0)).collect(),
                action: vec![rng.gen_range(0..3), rng.gen_range(0..2)],
                reward: rng.gen_range(0.0..1.0),
                next_obs: (0..4).map(|_| rng.gen_range(0.0..1.0)).collect(),
                terminal,
            })
            .collect()
    }

    fn net(arch: Architecture, seed: u64) -> QNetwork {
        QNetwork::new(4, &[16, 16], vec![3, 2], arch, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn terminal_targets_are_rewards() {
        let ts = transitions(8, true, 1);
        let batch: Vec<&Transition> = ts.iter().collect();
        let n = net(Architecture::Dueling, 1);
        let y = td_target(&batch, &n, &n, 0.95, TargetMode::Double);
        for (t, y) in ts.iter().zip(y) {
            assert_eq!(y, t.reward);
        }
    }

    #[test]
    fn zero_discount_targets_are_rewards() {
        let ts = transitions(8, false, 2);
        let batch: Vec<&Transition> = ts.iter().collect();
        let a = net(Architecture::Plain, 2);
        let b = net(Architecture::Plain, 3);
        for mode in [TargetMode::Double, TargetMode::Vanilla] {
            let y = td_target(&batch, &a, &b, 0.0, mode);
            assert!(ts.iter().zip(y).all(|(t, y)| y == t.reward));
        }
    }

    #[test]
    fn double_equals_vanilla_when_networks_match() {
        let ts = transitions(16, false, 3);
        let batch: Vec<&Transition> = ts.iter().collect();
        let n = net(Architecture::Dueling, 4);
        let d = td_target(&batch, &n, &n, 0.9, TargetMode::Double);
        let v = td_target(&batch, &n, &n, 0.9, TargetMode::Vanilla);
        assert_eq!(d, v);
        // and differ once the online copy drifts
        let other = net(Architecture::Dueling, 5);
        let d2 = td_target(&batch, &other, &n, 0.9, TargetMode::Double);
        assert!(d2.iter().zip(&v).all(|(a, b)| a <= b));
    }

    #[test]
    fn overfits_a_fixed_batch() {
        let ts = transitions(16, true, 6);
        let batch: Vec<&Transition> = ts.iter().collect();
        let mut l = DqnLearner::new(net(Architecture::Dueling, 6), LearnerConfig::default());
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            last = l.train_on(&batch);
        }
        assert!(last < 1e-3, "loss after 500 replays: {last}");
    }

    #[test]
    fn train_step_needs_full_batch() {
        let mut l = DqnLearner::new(net(Architecture::Plain, 7), LearnerConfig::default());
        let mut buf = ReplayBuffer::new(100);
        for t in transitions(10, false, 7) {
            buf.push(t);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(l.train_step(&buf, &mut rng).is_none());
        assert_eq!(l.updates(), 0);
    }

    #[test]
    fn target_syncs_on_schedule() {
        let cfg = LearnerConfig { sync_every: 3, ..LearnerConfig::default() };
        let mut l = DqnLearner::new(net(Architecture::Plain, 8), cfg);
        let ts = transitions(4, false, 8);
        let batch: Vec<&Transition> = ts.iter().collect();
        l.train_on(&batch);
        l.train_on(&batch);
        assert_ne!(l.target.params(), l.online.params());
        l.train_on(&batch);
        assert_eq!(l.target.params(), l.online.params());
    }
}
