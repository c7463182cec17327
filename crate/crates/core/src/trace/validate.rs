use std::collections::BTreeMap;

use serde::Serialize;

use super::{Decision, DecisionRecord, FactorScores, Phase, TraceFile, SCHEMA_VERSION};
use crate::mcts::{exploration_term, TreeSnapshot};

const TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + a.abs().max(b.abs()))
}

fn check_snapshot(s: &TreeSnapshot, explored: bool, out: &mut Vec<String>) {
    if s.children.is_empty() {
        out.push("snapshot has no children".into());
        return;
    }
    let total: u64 = s.children.iter().map(|c| c.visits).sum();
    if total != s.simulations {
        out.push(format!("root-child visits sum to {total}, expected {} simulations", s.simulations));
    }
    if s.parent_visits != s.simulations {
        out.push(format!("parent visits {} differ from simulations {}", s.parent_visits, s.simulations));
    }
    for (i, c) in s.children.iter().enumerate() {
        if c.action != i {
            out.push(format!("child {i} carries action index {}", c.action));
        }
        match (c.visits, c.mean, c.exploration, c.uct) {
            (0, None, None, None) => {}
            (0, ..) => out.push(format!("unvisited child {} has statistics", c.label)),
            (v, Some(m), Some(e), Some(u)) => {
                if !(0.0..=1.0).contains(&m) {
                    out.push(format!("child {} mean {m} outside [0, 1]", c.label));
                }
                let expect = exploration_term(s.parent_visits, v, s.exploration_c);
                if !close(e, expect) {
                    out.push(format!("child {} exploration {e} != recomputed {expect}", c.label));
                }
                if !close(u, m + e) {
                    out.push(format!("child {} UCT {u} != mean + exploration {}", c.label, m + e));
                }
            }
            _ => out.push(format!("visited child {} lacks statistics", c.label)),
        }
    }
    let Some(chosen) = s.children.get(s.chosen) else {
        out.push(format!("chosen index {} out of range", s.chosen));
        return;
    };
    if explored {
        return;
    }
    // robust child: most visits, then higher mean, then lower index
    let key = |c: &crate::mcts::ChildScore| (c.visits, c.mean.unwrap_or(f64::NEG_INFINITY));
    for (i, c) in s.children.iter().enumerate() {
        let (cv, cm) = key(c);
        let (bv, bm) = key(chosen);
        let beats = cv > bv || (cv == bv && cm > bm) || (cv == bv && cm == bm && i < s.chosen);
        if beats {
            out.push(format!(
                "chosen {} ({} visits) is not the robust child; {} has {} visits",
                chosen.label, bv, c.label, cv
            ));
            break;
        }
    }
}

fn check_factor(f: &FactorScores, explored: bool, out: &mut Vec<String>) {
    if f.actions.is_empty() {
        out.push(format!("factor {} has no actions", f.factor));
        return;
    }
    if let Some(v) = f.value {
        let advs: Option<Vec<f64>> = f.actions.iter().map(|a| a.advantage).collect();
        match advs {
            None => out.push(format!("factor {} has a value but missing advantages", f.factor)),
            Some(advs) => {
                let mean = advs.iter().sum::<f64>() / advs.len() as f64;
                for (a, adv) in f.actions.iter().zip(&advs) {
                    if !close(a.q, v + adv - mean) {
                        out.push(format!("factor {} action {}: Q {} != V + A − mean(A)", f.factor, a.label, a.q));
                    }
                }
            }
        }
    }
    let Some(chosen) = f.actions.get(f.chosen) else {
        out.push(format!("factor {} chosen index {} out of range", f.factor, f.chosen));
        return;
    };
    if !explored {
        let best = f.actions.iter().map(|a| a.q).fold(f64::NEG_INFINITY, f64::max);
        let first_best = f.actions.iter().position(|a| a.q == best).unwrap_or(f.chosen);
        if first_best != f.chosen {
            out.push(format!(
                "factor {}: greedy choice {} is not the first maximum ({} scores {})",
                f.factor, chosen.label, f.actions[first_best].label, f.actions[first_best].q
            ));
        }
    }
}

/// Invariants that a single record must satisfy on its own.
pub fn check_record(rec: &DecisionRecord) -> Vec<String> {
    let mut out = Vec::new();
    if rec.decision.phase() != rec.phase {
        out.push("phase does not match decision kind".into());
    }
    match &rec.decision {
        Decision::Avoidance(s) => check_snapshot(s, rec.explored, &mut out),
        Decision::Service { factors } => {
            if factors.is_empty() {
                out.push("service decision has no factors".into());
            }
            for f in factors {
                check_factor(f, rec.explored, &mut out);
            }
        }
    }
    match (rec.terminal, rec.terminal_reward) {
        (Some(k), _) if !k.is_terminal() => out.push("terminal verdict must be a terminal kind".into()),
        (Some(_), None) if rec.phase == Phase::Avoidance => out.push("terminal verdict without reward".into()),
        (None, Some(_)) => out.push("terminal reward without verdict".into()),
        (_, Some(r)) if !(0.0..=1.0).contains(&r) => out.push(format!("terminal reward {r} outside [0, 1]")),
        _ => {}
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub step: Option<u64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
    pub partial_tail: Option<usize>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.partial_tail.is_none()
    }
}

/// Re-checks every record plus the cross-record invariants: step order per
/// phase and contiguous, properly terminated episodes.
/// (line, step, t, terminal?) of one record.
type Seen = (usize, u64, u64, bool);

pub fn validate_trace(tf: &TraceFile) -> ValidationReport {
    let mut violations = Vec::new();
    match &tf.header {
        None => violations.push(Violation { line: 1, step: None, reason: "missing header".into() }),
        Some(h) if h.schema_version == 0 || h.schema_version > SCHEMA_VERSION => violations.push(Violation {
            line: 1,
            step: None,
            reason: format!("unsupported schema version {}", h.schema_version),
        }),
        _ => {}
    }
    for p in &tf.problems {
        violations.push(Violation { line: p.line, step: None, reason: p.reason.clone() });
    }

    let mut last: BTreeMap<Phase, u64> = BTreeMap::new();
    // (phase, episode) -> (line, step, t, terminal?) in file order
    let mut episodes: BTreeMap<(Phase, u64), Vec<Seen>> = BTreeMap::new();
    for (rec, &line) in tf.records.iter().zip(&tf.record_lines) {
        for reason in check_record(rec) {
            violations.push(Violation { line, step: Some(rec.step), reason });
        }
        if let Some(prev) = last.insert(rec.phase, rec.step) {
            if rec.step <= prev {
                violations.push(Violation {
                    line,
                    step: Some(rec.step),
                    reason: format!("step {} does not follow {prev}", rec.step),
                });
            }
        }
        episodes
            .entry((rec.phase, rec.episode))
            .or_default()
            .push((line, rec.step, rec.t, rec.terminal.is_some()));
    }

    let last_key = tf.records.last().map(|r| (r.phase, r.episode));
    for (key, recs) in &episodes {
        for (i, &(line, step, t, terminal)) in recs.iter().enumerate() {
            if t != i as u64 {
                violations.push(Violation {
                    line,
                    step: Some(step),
                    reason: format!("episode {} expected t = {i}, found {t}", key.1),
                });
            }
            if terminal && i + 1 != recs.len() {
                violations.push(Violation {
                    line,
                    step: Some(step),
                    reason: format!("episode {} continues after a terminal verdict", key.1),
                });
            }
        }
        let &(line, step, _, terminal) = recs.last().unwrap();
        let truncated = tf.partial_tail.is_some() && Some(*key) == last_key;
        if key.0 == Phase::Avoidance && !terminal && !truncated {
            violations.push(Violation {
                line,
                step: Some(step),
                reason: format!("avoidance episode {} ends without a terminal verdict", key.1),
            });
        }
    }
    violations.sort_by_key(|v| v.line);
    ValidationReport { records: tf.records.len(), violations, partial_tail: tf.partial_tail }
}
