use std::fmt;

use serde::Serialize;

use super::{Decision, DecisionRecord, FactorScores, Phase, TraceFile};
use crate::error::{Error, Result};
use crate::mcts::TreeSnapshot;
use crate::world::TerminalKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    WhyAction { step: u64 },
    WhyNot { step: u64, action: String },
    Path { episode: u64, phase: Option<Phase> },
    Summary,
}

/// One alternative with the statistic its selection rule ranks by (`score`)
/// and the decomposition behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptionScore {
    pub label: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visits: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exploration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorExplanation {
    pub factor: String,
    pub rule: &'static str,
    pub chosen: OptionScore,
    pub runner_up: Option<OptionScore>,
    pub margin: Option<f64>,
    pub alternatives: Vec<OptionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhyAction {
    pub step: u64,
    pub episode: u64,
    pub t: u64,
    pub phase: Phase,
    pub explored: bool,
    pub action: String,
    pub factors: Vec<FactorExplanation>,
    pub terminal: Option<TerminalKind>,
    pub terminal_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhyNot {
    pub step: u64,
    pub factor: String,
    pub rule: &'static str,
    pub chosen: OptionScore,
    pub alternative: OptionScore,
    /// Chosen score minus the alternative's score.
    pub deficit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStep {
    pub step: u64,
    pub t: u64,
    pub action: String,
    pub explored: bool,
    /// Smallest per-factor margin of the decision.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathExplanation {
    pub episode: u64,
    pub phase: Option<Phase>,
    pub steps: Vec<PathStep>,
    pub terminal: Option<TerminalKind>,
    pub terminal_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunSummary {
    pub records: usize,
    pub service_records: usize,
    pub avoidance_records: usize,
    pub explored: usize,
    pub avoidance_episodes: usize,
    pub goal: usize,
    pub collision: usize,
    pub timeout: usize,
    pub unfinished: usize,
    pub mean_margin_service: Option<f64>,
    pub mean_margin_avoidance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "query", rename_all = "snake_case")]
pub enum Explanation {
    WhyAction(WhyAction),
    WhyNot(WhyNot),
    Path(PathExplanation),
    Summary(RunSummary),
}

fn service_options(f: &FactorScores) -> Vec<OptionScore> {
    f.actions
        .iter()
        .map(|a| OptionScore {
            label: a.label.clone(),
            score: a.q,
            value: f.value,
            advantage: a.advantage,
            visits: None,
            mean: None,
            exploration: None,
            uct: None,
        })
        .collect()
}

fn tree_options(s: &TreeSnapshot) -> Vec<OptionScore> {
    s.children
        .iter()
        .map(|c| OptionScore {
            label: c.label.clone(),
            score: c.visits as f64,
            value: None,
            advantage: None,
            visits: Some(c.visits),
            mean: c.mean,
            exploration: c.exploration,
            uct: c.uct,
        })
        .collect()
}

/// `(factor name, rule, options, chosen index)` for every factor of a decision.
fn factors(d: &Decision) -> Vec<(String, &'static str, Vec<OptionScore>, usize)> {
    match d {
        Decision::Service { factors } => factors
            .iter()
            .map(|f| (f.factor.clone(), "greedy Q", service_options(f), f.chosen))
            .collect(),
        Decision::Avoidance(s) => vec![("maneuver".to_string(), "visit count", tree_options(s), s.chosen)],
    }
}

fn explain_factor(name: String, rule: &'static str, opts: Vec<OptionScore>, chosen: usize) -> FactorExplanation {
    let runner_up = opts
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != chosen)
        .fold(None::<&OptionScore>, |best, (_, o)| match best {
            Some(b) if b.score >= o.score => Some(b),
            _ => Some(o),
        })
        .cloned();
    let chosen_opt = opts[chosen].clone();
    FactorExplanation {
        factor: name,
        rule,
        margin: runner_up.as_ref().map(|r| chosen_opt.score - r.score),
        chosen: chosen_opt,
        runner_up,
        alternatives: opts,
    }
}

fn why_action(rec: &DecisionRecord) -> WhyAction {
    WhyAction {
        step: rec.step,
        episode: rec.episode,
        t: rec.t,
        phase: rec.phase,
        explored: rec.explored,
        action: rec.decision.chosen_label(),
        factors: factors(&rec.decision)
            .into_iter()
            .map(|(n, r, o, c)| explain_factor(n, r, o, c))
            .collect(),
        terminal: rec.terminal,
        terminal_reward: rec.terminal_reward,
    }
}

fn min_margin(rec: &DecisionRecord) -> Option<f64> {
    why_action(rec)
        .factors
        .iter()
        .filter_map(|f| f.margin)
        .reduce(f64::min)
}

fn find_step(tf: &TraceFile, step: u64) -> Result<&DecisionRecord> {
    tf.records
        .iter()
        .find(|r| r.step == step)
        .ok_or_else(|| Error::NotFound(format!("no decision recorded at step {step}")))
}

/// Resolves `action` against a decision: `factor=label`, `factor:label`, or a
/// bare label / index when the decision has a single factor.
fn why_not(rec: &DecisionRecord, action: &str) -> Result<WhyNot> {
    let fs = factors(&rec.decision);
    let (factor_name, label) = match action.split_once(['=', ':']) {
        Some((f, l)) => (Some(f.trim()), l.trim()),
        None => (None, action.trim()),
    };
    let candidates: Vec<_> = fs
        .into_iter()
        .filter(|(n, ..)| factor_name.is_none_or(|f| f == n))
        .collect();
    let single = candidates.len() == 1;
    for (name, rule, opts, chosen) in candidates {
        let idx = opts
            .iter()
            .position(|o| o.label == label)
            .or_else(|| label.parse::<usize>().ok().filter(|&i| single && i < opts.len()));
        if let Some(i) = idx {
            let c = opts[chosen].clone();
            let a = opts[i].clone();
            return Ok(WhyNot {
                step: rec.step,
                factor: name,
                rule,
                deficit: c.score - a.score,
                chosen: c,
                alternative: a,
            });
        }
        if factor_name.is_some() {
            break;
        }
    }
    Err(Error::NotFound(format!("action `{action}` at step {}", rec.step)))
}

fn path(tf: &TraceFile, episode: u64, phase: Option<Phase>) -> PathExplanation {
    let phase = phase.or_else(|| {
        let has = |p| tf.records.iter().any(|r| r.episode == episode && r.phase == p);
        [Phase::Avoidance, Phase::Service].into_iter().find(|&p| has(p))
    });
    let recs: Vec<&DecisionRecord> = tf
        .records
        .iter()
        .filter(|r| r.episode == episode && Some(r.phase) == phase)
        .collect();
    let last = recs.last();
    PathExplanation {
        episode,
        phase,
        steps: recs
            .iter()
            .map(|r| PathStep {
                step: r.step,
                t: r.t,
                action: r.decision.chosen_label(),
                explored: r.explored,
                margin: min_margin(r),
            })
            .collect(),
        terminal: last.and_then(|r| r.terminal),
        terminal_reward: last.and_then(|r| r.terminal_reward),
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn summary(tf: &TraceFile) -> RunSummary {
    let mut s = RunSummary { records: tf.records.len(), ..RunSummary::default() };
    let mut margins = (Vec::new(), Vec::new());
    let mut episodes = std::collections::BTreeMap::new();
    for r in &tf.records {
        s.explored += r.explored as usize;
        let margin = if r.explored { None } else { min_margin(r) };
        match r.phase {
            Phase::Service => {
                s.service_records += 1;
                margins.0.extend(margin);
            }
            Phase::Avoidance => {
                s.avoidance_records += 1;
                margins.1.extend(margin);
                let e = episodes.entry(r.episode).or_insert(None);
                if r.terminal.is_some() {
                    *e = r.terminal;
                }
            }
        }
    }
    s.avoidance_episodes = episodes.len();
    for v in episodes.values() {
        match v {
            Some(TerminalKind::Goal) => s.goal += 1,
            Some(TerminalKind::Collision) => s.collision += 1,
            Some(TerminalKind::Timeout) => s.timeout += 1,
            _ => s.unfinished += 1,
        }
    }
    s.mean_margin_service = mean(&margins.0);
    s.mean_margin_avoidance = mean(&margins.1);
    s
}

pub fn explain(tf: &TraceFile, q: &Query) -> Result<Explanation> {
    Ok(match q {
        Query::WhyAction { step } => Explanation::WhyAction(why_action(find_step(tf, *step)?)),
        Query::WhyNot { step, action } => Explanation::WhyNot(why_not(find_step(tf, *step)?, action)?),
        Query::Path { episode, phase } => Explanation::Path(path(tf, *episode, *phase)),
        Query::Summary => Explanation::Summary(summary(tf)),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

impl fmt::Display for OptionScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.visits {
            Some(n) => write!(
                f,
                "{:<20} visits {:>6}  mean {:>9}  explore {:>9}  uct {:>9}",
                self.label,
                n,
                opt(self.mean),
                opt(self.exploration),
                opt(self.uct)
            ),
            None => write!(
                f,
                "{:<20} Q {:>12.6}  V {:>10}  A {:>10}",
                self.label,
                self.score,
                opt(self.value),
                opt(self.advantage)
            ),
        }
    }
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Explanation::WhyAction(w) => {
                writeln!(
                    f,
                    "step {} (episode {}, t = {}, {}): chose {}{}",
                    w.step,
                    w.episode,
                    w.t,
                    w.phase,
                    w.action,
                    if w.explored { " [exploratory pick]" } else { "" }
                )?;
                for fe in &w.factors {
                    writeln!(f, "  {} — ranked by {}", fe.factor, fe.rule)?;
                    writeln!(f, "    chosen:    {}", fe.chosen)?;
                    if let (Some(r), Some(m)) = (&fe.runner_up, fe.margin) {
                        writeln!(f, "    runner-up: {}", r)?;
                        writeln!(f, "    margin:    {m:.6}")?;
                    }
                    for o in &fe.alternatives {
                        writeln!(f, "      {o}")?;
                    }
                }
                if let Some(k) = w.terminal {
                    writeln!(f, "  verdict: {k} (reward {})", opt(w.terminal_reward))?;
                }
                Ok(())
            }
            Explanation::WhyNot(w) => {
                writeln!(f, "step {}, {} ranked by {}", w.step, w.factor, w.rule)?;
                writeln!(f, "  chosen:      {}", w.chosen)?;
                writeln!(f, "  alternative: {}", w.alternative)?;
                writeln!(f, "  deficit:     {:.6}", w.deficit)
            }
            Explanation::Path(p) => {
                writeln!(f, "episode {} ({} decisions)", p.episode, p.steps.len())?;
                for s in &p.steps {
                    writeln!(
                        f,
                        "  t {:>4}  step {:>7}  {}  margin {}{}",
                        s.t,
                        s.step,
                        s.action,
                        opt(s.margin),
                        if s.explored { "  [explored]" } else { "" }
                    )?;
                }
                match p.terminal {
                    Some(k) => writeln!(f, "  verdict: {k} (reward {})", opt(p.terminal_reward)),
                    None => writeln!(f, "  verdict: none"),
                }
            }
            Explanation::Summary(s) => {
                writeln!(f, "records:            {}", s.records)?;
                writeln!(f, "  service:          {}", s.service_records)?;
                writeln!(f, "  avoidance:        {}", s.avoidance_records)?;
                writeln!(f, "  explored:         {}", s.explored)?;
                writeln!(f, "avoidance episodes: {}", s.avoidance_episodes)?;
                writeln!(
                    f,
                    "  goal {}  collision {}  timeout {}  unfinished {}",
                    s.goal, s.collision, s.timeout, s.unfinished
                )?;
                writeln!(f, "mean margin (service):   {}", opt(s.mean_margin_service))?;
                writeln!(f, "mean margin (avoidance): {}", opt(s.mean_margin_avoidance))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    fn trace() -> TraceFile {
        let means = [0.6, 0.5, 0.4, 0.3, 0.3, 0.3, 0.2, 0.1, 0.2];
        let mut tf = TraceFile::default();
        tf.header = Some(header());
        tf.records = vec![
            avoidance(0, 3, 0, snapshot(&[12, 8, 5, 3, 3, 3, 2, 1, 2], &means, 0.7), None),
            avoidance(1, 3, 1, snapshot(&[9, 9, 5, 3, 3, 3, 2, 2, 2], &means, 0.7), Some(TerminalKind::Collision)),
            service(2, 0.5, &[0.1, 0.4, -0.2], 1, false),
        ];
        tf.record_lines = vec![2, 3, 4];
        tf
    }

    #[test]
    fn why_not_chosen_is_zero() {
        let tf = trace();
        for (step, action) in [(0, "left/speed_up"), (0, "0"), (2, "power0=1")] {
            let Explanation::WhyNot(w) = explain(&tf, &Query::WhyNot { step, action: action.into() }).unwrap() else {
                panic!()
            };
            assert_eq!(w.deficit, 0.0);
        }
        let Explanation::WhyNot(w) = explain(&tf, &Query::WhyNot { step: 0, action: "right/slow_down".into() }).unwrap()
        else {
            panic!()
        };
        assert_eq!(w.deficit, 10.0);
    }

    #[test]
    fn margin_matches_brute_force() {
        let tf = trace();
        for rec in &tf.records {
            let Explanation::WhyAction(w) = explain(&tf, &Query::WhyAction { step: rec.step }).unwrap() else {
                panic!()
            };
            let scores: Vec<f64> = match &rec.decision {
                Decision::Avoidance(s) => s.children.iter().map(|c| c.visits as f64).collect(),
                Decision::Service { factors } => factors[0].actions.iter().map(|a| a.q).collect(),
            };
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert_eq!(w.factors[0].margin, Some(sorted[0] - sorted[1]));
        }
    }

    #[test]
    fn collision_path_ends_with_zero_reward() {
        let Explanation::Path(p) = explain(&trace(), &Query::Path { episode: 3, phase: None }).unwrap() else {
            panic!()
        };
        assert_eq!(p.steps.len(), 2);
        assert_eq!(p.terminal, Some(TerminalKind::Collision));
        assert_eq!(p.terminal_reward, Some(0.0));
    }

    #[test]
    fn unknown_lookups_are_not_found() {
        let tf = trace();
        assert!(matches!(explain(&tf, &Query::WhyAction { step: 99 }), Err(Error::NotFound(_))));
        assert!(matches!(
            explain(&tf, &Query::WhyNot { step: 0, action: "loop".into() }),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn empty_trace_gives_empty_answers() {
        let tf = TraceFile::default();
        let Explanation::Summary(s) = explain(&tf, &Query::Summary).unwrap() else { panic!() };
        assert_eq!(s, RunSummary::default());
        let Explanation::Path(p) = explain(&tf, &Query::Path { episode: 0, phase: None }).unwrap() else {
            panic!()
        };
        assert!(p.steps.is_empty() && p.terminal.is_none());
    }

    #[test]
    fn summary_counts() {
        let Explanation::Summary(s) = explain(&trace(), &Query::Summary).unwrap() else { panic!() };
        assert_eq!((s.records, s.avoidance_episodes, s.collision), (3, 1, 1));
        assert_eq!(s.mean_margin_avoidance, Some(2.0));
        assert!((s.mean_margin_service.unwrap() - 0.3).abs() < 1e-12);
        let text = Explanation::Summary(s).to_string();
        assert!(text.contains("collision 1"));
    }
}
