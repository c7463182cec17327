//! Depth-limited UCT search over an arbitrary deterministic model.
//!
//! Every simulation descends from the root by UCT, creating nodes as it
//! goes, until it reaches a terminal node or the depth limit. The leaf's
//! value (terminal reward, or the model's heuristic estimate) is then added
//! to every node on the path. New nodes start with zero visits and zero
//! reward; the backup that created them brings them to one visit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::TerminalKind;

/// Leaf classification returned by a model for a freshly created node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub kind: TerminalKind,
    /// Terminal reward when `kind` is terminal, heuristic estimate otherwise.
    pub value: f64,
}

pub trait SearchModel {
    type State: Clone;

    fn num_actions(&self) -> usize;

    /// Successor of `state` under `action`; `depth` is the successor's depth
    /// below the root.
    fn step(&self, state: &Self::State, action: usize, depth: usize) -> Self::State;

    fn evaluate(&self, state: &Self::State, depth: usize) -> Evaluation;

    fn action_label(&self, action: usize) -> String {
        action.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub simulations: u32,
    pub depth: u32,
    pub exploration_c: f64,
}

/// Exploration bonus `2C·sqrt(2 ln n / n_j)`.
pub fn exploration_term(parent_visits: u64, child_visits: u64, c: f64) -> f64 {
    2.0 * c * (2.0 * (parent_visits as f64).ln() / child_visits as f64).sqrt()
}

/// UCT score of a child. Unvisited children score `+∞`.
pub fn uct_score(mean: f64, parent_visits: u64, child_visits: u64, c: f64) -> f64 {
    if child_visits == 0 {
        return f64::INFINITY;
    }
    debug_assert!(parent_visits >= 1);
    if c == 0.0 {
        return mean;
    }
    mean + exploration_term(parent_visits, child_visits, c)
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node<S> {
    state: S,
    depth: u32,
    visits: u64,
    total: f64,
    eval: Evaluation,
}

#[derive(Debug, Clone)]
pub struct SearchTree<S> {
    nodes: Vec<Node<S>>,
    children: Vec<u32>,
    actions: usize,
    cfg: EngineConfig,
}

/// Root-child statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildScore {
    pub action: usize,
    pub label: String,
    pub visits: u64,
    pub mean: Option<f64>,
    pub exploration: Option<f64>,
    pub uct: Option<f64>,
}

/// Root statistics after a search, for decision traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub simulations: u64,
    pub parent_visits: u64,
    pub exploration_c: f64,
    pub chosen: usize,
    pub children: Vec<ChildScore>,
}

impl<S: Clone> SearchTree<S> {
    pub fn new<M: SearchModel<State = S>>(model: &M, root: S, cfg: EngineConfig) -> Self {
        let actions = model.num_actions();
        let cap = cfg.simulations as usize * cfg.depth as usize + 1;
        let mut nodes = Vec::with_capacity(cap);
        let eval = model.evaluate(&root, 0);
        nodes.push(Node {
            state: root,
            depth: 0,
            visits: 0,
            total: 0.0,
            eval,
        });
        let mut children = Vec::with_capacity(cap * actions);
        children.resize(actions, NONE);
        SearchTree {
            nodes,
            children,
            actions,
            cfg,
        }
    }

    pub fn root_visits(&self) -> u64 {
        self.nodes[0].visits
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn child(&self, node: usize, action: usize) -> Option<usize> {
        match self.children[node * self.actions + action] {
            NONE => None,
            c => Some(c as usize),
        }
    }

    fn add_child<M: SearchModel<State = S>>(&mut self, model: &M, parent: usize, action: usize) -> usize {
        let depth = self.nodes[parent].depth + 1;
        let state = model.step(&self.nodes[parent].state, action, depth as usize);
        let eval = model.evaluate(&state, depth as usize);
        let id = self.nodes.len();
        self.nodes.push(Node {
            state,
            depth,
            visits: 0,
            total: 0.0,
            eval,
        });
        self.children.resize(self.children.len() + self.actions, NONE);
        self.children[parent * self.actions + action] = id as u32;
        id
    }

    fn pick_uct<R: Rng + ?Sized>(&self, node: usize, rng: &mut R) -> usize {
        let n = self.nodes[node].visits;
        let mut best = f64::NEG_INFINITY;
        let mut ties = 0usize;
        let mut pick = 0;
        for a in 0..self.actions {
            let score = match self.child(node, a) {
                None => f64::INFINITY,
                Some(c) => {
                    let ch = &self.nodes[c];
                    if ch.visits == 0 {
                        f64::INFINITY
                    } else {
                        uct_score(ch.total / ch.visits as f64, n, ch.visits, self.cfg.exploration_c)
                    }
                }
            };
            if score > best {
                best = score;
                ties = 1;
                pick = a;
            } else if score == best {
                // reservoir sampling over equal maxima
                ties += 1;
                if rng.gen_range(0..ties) == 0 {
                    pick = a;
                }
            }
        }
        pick
    }

    /// Selection and expansion: returns the path as `(node, action taken
    /// from it)`; the final entry is the leaf, with no action.
    pub fn select_and_expand<M, R>(&mut self, model: &M, rng: &mut R) -> Vec<(usize, Option<usize>)>
    where
        M: SearchModel<State = S>,
        R: Rng + ?Sized,
    {
        let mut path = Vec::with_capacity(self.cfg.depth as usize + 1);
        let mut node = 0;
        loop {
            let n = &self.nodes[node];
            if n.eval.kind.is_terminal() || n.depth >= self.cfg.depth {
                path.push((node, None));
                return path;
            }
            let a = self.pick_uct(node, rng);
            path.push((node, Some(a)));
            node = match self.child(node, a) {
                Some(c) => c,
                None => self.add_child(model, node, a),
            };
        }
    }

    pub fn backpropagate(&mut self, path: &[(usize, Option<usize>)], value: f64) {
        for &(node, _) in path {
            let n = &mut self.nodes[node];
            n.visits += 1;
            n.total += value;
        }
    }

    /// One select/expand/evaluate/backup cycle; returns the backed-up value.
    pub fn simulate_once<M, R>(&mut self, model: &M, rng: &mut R) -> f64
    where
        M: SearchModel<State = S>,
        R: Rng + ?Sized,
    {
        let path = self.select_and_expand(model, rng);
        let leaf = path.last().unwrap().0;
        let value = self.nodes[leaf].eval.value;
        self.backpropagate(&path, value);
        value
    }

    pub fn run<M, R>(&mut self, model: &M, rng: &mut R)
    where
        M: SearchModel<State = S>,
        R: Rng + ?Sized,
    {
        for _ in 0..self.cfg.simulations {
            self.simulate_once(model, rng);
        }
    }

    /// `(visits, mean)` of each root child, `None` for unexpanded actions.
    pub fn root_stats(&self) -> Vec<Option<(u64, f64)>> {
        (0..self.actions)
            .map(|a| {
                self.child(0, a).map(|c| {
                    let n = &self.nodes[c];
                    let mean = if n.visits > 0 { n.total / n.visits as f64 } else { 0.0 };
                    (n.visits, mean)
                })
            })
            .collect()
    }

    /// Most-visited root child; ties go to the higher mean, then the lower index.
    pub fn robust_child(&self) -> Option<usize> {
        let mut best: Option<(usize, u64, f64)> = None;
        for (a, s) in self.root_stats().into_iter().enumerate() {
            let Some((v, m)) = s else { continue };
            if v == 0 {
                continue;
            }
            best = match best {
                Some((_, bv, bm)) if v < bv || (v == bv && m <= bm) => best,
                _ => Some((a, v, m)),
            };
        }
        best.map(|b| b.0)
    }

    pub fn snapshot<M: SearchModel<State = S>>(&self, model: &M) -> TreeSnapshot {
        let n = self.root_visits();
        let c = self.cfg.exploration_c;
        let children = self
            .root_stats()
            .into_iter()
            .enumerate()
            .map(|(a, s)| {
                let (visits, mean) = match s {
                    Some((v, m)) if v > 0 => (v, Some(m)),
                    _ => (0, None),
                };
                let exploration = mean.map(|_| exploration_term(n, visits, c));
                ChildScore {
                    action: a,
                    label: model.action_label(a),
                    visits,
                    mean,
                    exploration,
                    uct: mean.zip(exploration).map(|(m, e)| m + e),
                }
            })
            .collect();
        TreeSnapshot {
            simulations: self.cfg.simulations as u64,
            parent_visits: n,
            exploration_c: c,
            chosen: self.robust_child().unwrap_or(0),
            children,
        }
    }

    /// Checks that every expanded node's visit count equals the sum of its
    /// children's. Returns the offending node ids.
    pub fn conservation_violations(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                let kids: Vec<usize> = (0..self.actions).filter_map(|a| self.child(i, a)).collect();
                !kids.is_empty() && kids.iter().map(|&k| self.nodes[k].visits).sum::<u64>() != self.nodes[i].visits
            })
            .collect()
    }

    /// Visits per node depth, for bookkeeping checks.
    pub fn visits_by_depth(&self) -> Vec<u64> {
        let mut v = vec![0; self.cfg.depth as usize + 1];
        for n in &self.nodes {
            v[n.depth as usize] += n.visits;
        }
        v
    }
}

/// Runs a full search from `root` and returns the robust-child action with
/// the root snapshot.
pub fn plan_step<M, R>(model: &M, root: M::State, cfg: EngineConfig, rng: &mut R) -> Result<(usize, TreeSnapshot)>
where
    M: SearchModel,
    R: Rng + ?Sized,
{
    if cfg.simulations == 0 || cfg.depth == 0 {
        return Err(Error::Config("search needs at least one simulation and depth ≥ 1".into()));
    }
    if model.evaluate(&root, 0).kind.is_terminal() {
        return Err(Error::Domain("cannot plan from a terminal state".into()));
    }
    let mut tree = SearchTree::new(model, root, cfg);
    tree.run(model, rng);
    let snap = tree.snapshot(model);
    Ok((snap.chosen, snap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Leaves at depth `depth` pay `values[first action]`; nothing is terminal.
    struct Bandit {
        values: Vec<f64>,
        depth: usize,
    }

    impl SearchModel for Bandit {
        type State = Option<usize>;

        fn num_actions(&self) -> usize {
            self.values.len()
        }

        fn step(&self, s: &Option<usize>, a: usize, _: usize) -> Option<usize> {
            Some(s.unwrap_or(a))
        }

        fn evaluate(&self, s: &Option<usize>, depth: usize) -> Evaluation {
            let value = if depth >= self.depth { s.map_or(0.0, |a| self.values[a]) } else { 0.0 };
            Evaluation { kind: TerminalKind::NonTerminal, value }
        }
    }

    fn cfg(simulations: u32, depth: u32) -> EngineConfig {
        EngineConfig { simulations, depth, exploration_c: std::f64::consts::FRAC_1_SQRT_2 }
    }

    #[test]
    fn uct_examples() {
        assert_eq!(uct_score(0.3, 10, 0, 1.0), f64::INFINITY);
        // 0.5 + 2·sqrt(ln 8), evaluated independently: 3.384053773201766
        assert!((uct_score(0.5, 8, 2, 1.0) - 3.384_053_773_201_766).abs() < 1e-9);
        assert_eq!(uct_score(0.42, 8, 2, 0.0), 0.42);
    }

    #[test]
    fn exploration_term_monotonicity() {
        for nj in 1..50u64 {
            for n in nj.max(2)..60 {
                assert!(exploration_term(n, nj + 1, 0.7) < exploration_term(n, nj, 0.7));
                assert!(exploration_term(n + 1, nj, 0.7) > exploration_term(n, nj, 0.7));
            }
        }
    }

    #[test]
    fn fresh_root_expands_uniformly() {
        let m = Bandit { values: vec![0.5; 9], depth: 1 };
        let mut counts = [0usize; 9];
        for seed in 0..9000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = SearchTree::new(&m, None, cfg(1, 1));
            let path = t.select_and_expand(&m, &mut rng);
            counts[path[0].1.unwrap()] += 1;
        }
        // chi-square, 8 dof, p = 0.001 critical value 26.12
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
        assert!(chi2 < 26.12, "{counts:?}");
    }

    #[test]
    fn equal_children_selected_equally() {
        // two visited children with identical stats
        let m = Bandit { values: vec![0.4, 0.4], depth: 1 };
        let mut counts = [0usize; 2];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let mut t = SearchTree::new(&m, None, cfg(2, 1));
            t.run(&m, &mut rng);
            let path = t.select_and_expand(&m, &mut rng);
            counts[path[0].1.unwrap()] += 1;
        }
        // chi-square, 1 dof, p = 0.001 critical value 10.83
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 5000.0).powi(2) / 5000.0).sum();
        assert!(chi2 < 10.83, "{counts:?}");
    }

    #[test]
    fn nine_simulations_visit_each_child_once() {
        let m = Bandit { values: (0..9).map(|i| i as f64 / 10.0).collect(), depth: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, snap) = plan_step(&m, None, cfg(9, 2), &mut rng).unwrap();
        assert!(snap.children.iter().all(|c| c.visits == 1));
    }

    #[test]
    fn bandit_best_arm_wins() {
        let values = vec![0.2, 0.35, 0.1, 0.6, 0.3, 0.55, 0.0, 0.45, 0.5];
        let m = Bandit { values, depth: 1 };
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, snap) = plan_step(&m, None, cfg(9 * 50, 1), &mut rng).unwrap();
            assert_eq!(a, 3);
            assert_eq!(snap.children.iter().map(|c| c.visits).sum::<u64>(), 450);
        }
    }

    #[test]
    fn each_simulation_adds_one_visit_per_level() {
        let m = Bandit { values: vec![0.1, 0.9, 0.5], depth: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = SearchTree::new(&m, None, cfg(100, 4));
        for s in 1..=100u64 {
            let v = t.simulate_once(&m, &mut rng);
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(t.visits_by_depth(), vec![s; 5]);
            assert!(t.conservation_violations().is_empty());
        }
    }

    #[test]
    fn forced_path_mean_equals_leaf() {
        let m = Bandit { values: vec![0.37], depth: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = SearchTree::new(&m, None, cfg(50, 3));
        for _ in 0..50 {
            t.simulate_once(&m, &mut rng);
            let (_, mean) = t.root_stats()[0].unwrap();
            assert!((mean - 0.37).abs() < 1e-12);
        }
    }

    struct Cliff;

    impl SearchModel for Cliff {
        type State = (usize, bool);

        fn num_actions(&self) -> usize {
            2
        }

        fn step(&self, s: &(usize, bool), a: usize, _: usize) -> (usize, bool) {
            (s.0 + 1, s.1 || a == 0)
        }

        fn evaluate(&self, s: &(usize, bool), _: usize) -> Evaluation {
            if s.1 {
                Evaluation { kind: TerminalKind::Collision, value: 0.0 }
            } else {
                Evaluation { kind: TerminalKind::NonTerminal, value: 0.5 }
            }
        }
    }

    #[test]
    fn terminal_children_are_never_expanded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = SearchTree::new(&Cliff, (0, false), cfg(200, 3));
        t.run(&Cliff, &mut rng);
        // the collision child stays a leaf
        let crash = t.child(0, 0).unwrap();
        assert_eq!(t.nodes[crash].eval.kind, TerminalKind::Collision);
        assert!((0..2).all(|a| t.child(crash, a).is_none()));
        assert!(t.nodes[crash].visits >= 1);
        assert_eq!(t.robust_child(), Some(1));
        assert!(t.conservation_violations().is_empty());
    }

    #[test]
    fn terminal_root_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(plan_step(&Cliff, (0, true), cfg(10, 2), &mut rng).is_err());
        assert!(plan_step(&Cliff, (0, false), cfg(0, 2), &mut rng).is_err());
    }
}
