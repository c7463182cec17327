//! Table-backed Q-function driven by the same target and update rule as the
//! network learner. The observation is a single entry holding the state index.

use super::learner::{td_target, QFunction, TargetMode};
use super::replay::Transition;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    groups: Vec<usize>,
    width: usize,
    table: Vec<f64>,
}

impl TabularQ {
    pub fn new(states: usize, groups: Vec<usize>) -> Self {
        let width = groups.iter().sum();
        TabularQ {
            groups,
            width,
            table: vec![0.0; states * width],
        }
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.table[state * self.width..(state + 1) * self.width]
    }

    fn state_of(obs: &[f64]) -> usize {
        obs[0] as usize
    }

    /// `Q(s,a) ← Q(s,a) + α(y − Q(s,a))` applied to every chosen factor entry,
    /// with `y` from [`td_target`] against the frozen `target` table.
    pub fn update(
        &mut self,
        target: &TabularQ,
        batch: &[&Transition],
        alpha: f64,
        gamma: f64,
        mode: TargetMode,
    ) {
        let ys = td_target(batch, self, target, gamma, mode);
        for (t, y) in batch.iter().zip(ys) {
            let s = Self::state_of(&t.obs);
            let mut start = 0;
            let mut idx = Vec::with_capacity(t.action.len());
            for (&g, &a) in self.groups.iter().zip(&t.action) {
                idx.push(s * self.width + start + a);
                start += g;
            }
            let q: f64 = idx.iter().map(|&i| self.table[i]).sum();
            let step = alpha * (y - q);
            for i in idx {
                self.table[i] += step;
            }
        }
    }
}

impl QFunction for TabularQ {
    fn groups(&self) -> &[usize] {
        &self.groups
    }

    fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        self.row(Self::state_of(obs)).to_vec()
    }
}
