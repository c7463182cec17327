//! Append-only decision traces in JSON Lines.
//!
//! The first line is a header; every following line is one decision. Each
//! record carries the full score breakdown behind its choice, so auditing
//! needs nothing but the file.

mod explain;
mod validate;

pub use explain::{
    explain, Explanation, FactorExplanation, OptionScore, PathExplanation, PathStep, Query, RunSummary,
    WhyAction, WhyNot,
};
pub use validate::{check_record, validate_trace, ValidationReport, Violation};

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mcts::TreeSnapshot;
use crate::world::TerminalKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub run_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub created_unix: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Service,
    Avoidance,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Service => "service",
            Phase::Avoidance => "avoidance",
        })
    }
}

/// One alternative within a service factor: dueling decomposition of its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScore {
    pub label: String,
    pub advantage: Option<f64>,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorScores {
    pub factor: String,
    /// State value of the factor group; absent for a plain (non-dueling) head.
    pub value: Option<f64>,
    pub chosen: usize,
    pub actions: Vec<ActionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Service { factors: Vec<FactorScores> },
    Avoidance(TreeSnapshot),
}

impl Decision {
    pub fn phase(&self) -> Phase {
        match self {
            Decision::Service { .. } => Phase::Service,
            Decision::Avoidance(_) => Phase::Avoidance,
        }
    }

    /// Human-readable chosen action (factor labels joined by spaces).
    pub fn chosen_label(&self) -> String {
        match self {
            Decision::Service { factors } => factors
                .iter()
                .map(|f| {
                    let label = f.actions.get(f.chosen).map_or("?", |a| a.label.as_str());
                    format!("{}={}", f.factor, label)
                })
                .collect::<Vec<_>>()
                .join(" "),
            Decision::Avoidance(s) => s
                .children
                .get(s.chosen)
                .map_or_else(|| "?".to_string(), |c| c.label.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: u64,
    pub episode: u64,
    pub t: u64,
    pub phase: Phase,
    pub observation_digest: String,
    pub explored: bool,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Record(DecisionRecord),
}

/// Short SHA-256 digest of an observation vector.
pub fn observation_digest(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// SHA-256 of arbitrary bytes, hex-encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Single writer of one trace file. Records are checked before they are
/// written and every line is flushed immediately.
#[derive(Debug)]
pub struct TraceWriter {
    path: PathBuf,
    out: BufWriter<File>,
    last_step: [Option<u64>; 2],
    next_step: u64,
    written: u64,
}

fn phase_slot(p: Phase) -> usize {
    match p {
        Phase::Service => 0,
        Phase::Avoidance => 1,
    }
}

impl TraceWriter {
    pub fn create(path: &Path, header: &TraceHeader) -> Result<Self> {
        let file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = TraceWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            last_step: [None; 2],
            next_step: 0,
            written: 0,
        };
        w.write_line(&Line::Header(header.clone()))?;
        Ok(w)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    /// Hands out consecutive global step indices.
    pub fn next_step(&mut self) -> u64 {
        let s = self.next_step;
        self.next_step += 1;
        s
    }

    fn write_line(&mut self, line: &Line) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn record(&mut self, rec: &DecisionRecord) -> Result<()> {
        let mut problems = check_record(rec);
        let slot = phase_slot(rec.phase);
        if let Some(prev) = self.last_step[slot] {
            if rec.step <= prev {
                problems.push(format!("step {} does not follow {}", rec.step, prev));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Schema {
                step: rec.step,
                reason: problems.join("; "),
            });
        }
        self.write_line(&Line::Record(rec.clone()))?;
        self.last_step[slot] = Some(rec.step);
        self.next_step = self.next_step.max(rec.step + 1);
        self.written += 1;
        Ok(())
    }
}

/// Problem found while parsing a line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineProblem {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceFile {
    pub header: Option<TraceHeader>,
    pub records: Vec<DecisionRecord>,
    /// 1-based line numbers of each record.
    pub record_lines: Vec<usize>,
    pub problems: Vec<LineProblem>,
    /// Line number of an unterminated, unparseable final line.
    pub partial_tail: Option<usize>,
}

impl TraceFile {
    pub fn parse<R: Read>(reader: R) -> std::io::Result<Self> {
        let mut out = TraceFile::default();
        let mut r = BufReader::new(reader);
        let mut buf = String::new();
        let mut line_no = 0;
        loop {
            buf.clear();
            if r.read_line(&mut buf)? == 0 {
                break;
            }
            line_no += 1;
            let complete = buf.ends_with('\n');
            let text = buf.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(text) {
                Ok(Line::Header(h)) => {
                    if out.header.is_some() || !out.records.is_empty() {
                        out.problems.push(LineProblem {
                            line: line_no,
                            reason: "header must be the first line and appear once".into(),
                        });
                    } else {
                        out.header = Some(h);
                    }
                }
                Ok(Line::Record(rec)) => {
                    out.records.push(rec);
                    out.record_lines.push(line_no);
                }
                Err(_) if !complete => out.partial_tail = Some(line_no),
                Err(e) => out.problems.push(LineProblem {
                    line: line_no,
                    reason: format!("unparseable line: {e}"),
                }),
            }
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(f).map_err(|e| Error::io(path, e))
    }

    pub fn record_at_step(&self, phase: Option<Phase>, step: u64) -> Option<&DecisionRecord> {
        self.records
            .iter()
            .find(|r| r.step == step && phase.is_none_or(|p| r.phase == p))
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let recs = vec![
            avoidance(0, 0, 0, snapshot(&[5, 3, 1, 0, 0, 0, 0, 0, 1], &[0.6, 0.5, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2], 0.7), None),
            service(1, 0.5, &[0.1, 0.4, -0.2], 1, false),
            avoidance(2, 0, 1, snapshot(&[1, 1, 1, 1, 1, 1, 1, 1, 2], &[0.0; 9], 0.7), Some(TerminalKind::Collision)),
        ];
        let mut w = TraceWriter::create(&path, &header()).unwrap();
        for r in &recs {
            w.record(r).unwrap();
        }
        drop(w);
        let tf = TraceFile::read(&path).unwrap();
        assert_eq!(tf.header, Some(header()));
        assert_eq!(tf.records, recs);
        assert!(tf.problems.is_empty() && tf.partial_tail.is_none());
    }

    #[test]
    fn writer_rejects_non_robust_choice() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = TraceWriter::create(&dir.path().join("t.jsonl"), &header()).unwrap();
        let mut snap = snapshot(&[5, 3, 1, 0, 0, 0, 0, 0, 1], &[0.6, 0.5, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2], 0.7);
        snap.chosen = 1;
        let err = w.record(&avoidance(0, 0, 0, snap, None)).unwrap_err();
        assert!(matches!(err, Error::Schema { step: 0, .. }), "{err}");
        assert_eq!(w.records_written(), 0);
    }

    #[test]
    fn writer_rejects_step_regression() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = TraceWriter::create(&dir.path().join("t.jsonl"), &header()).unwrap();
        w.record(&service(4, 0.0, &[1.0, 0.0], 0, false)).unwrap();
        assert!(w.record(&service(4, 0.0, &[1.0, 0.0], 0, false)).is_err());
        // the other phase keeps its own sequence
        let snap = snapshot(&[2, 1, 0, 0, 0, 0, 0, 0, 0], &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.7);
        w.record(&avoidance(1, 0, 0, snap, None)).unwrap();
    }

    #[test]
    fn empty_trace_parses() {
        let tf = TraceFile::parse(&b""[..]).unwrap();
        assert!(tf.records.is_empty() && tf.header.is_none());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(observation_digest(&[1.0, 2.0]), observation_digest(&[1.0, 2.0]));
        assert_ne!(observation_digest(&[1.0, 2.0]), observation_digest(&[2.0, 1.0]));
        assert_eq!(observation_digest(&[]).len(), 16);
    }
}
