//! JSON-lines dispute transcripts.

use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::actor::Role;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Header {
        protocol: String,
        hash: String,
        k: u64,
        m: u64,
        submitter: String,
        challenger: String,
    },
    /// Start of a bisection game over `span` steps of a trace with `n` real steps.
    Phase {
        phase: u8,
        n: u64,
        span: u64,
        initial_root: String,
        submitter_final: String,
        challenger_final: String,
    },
    Move {
        phase: u8,
        round: u32,
        mover: Role,
        i: u64,
        j: u64,
        posted_roots: Vec<String>,
        decision: String,
    },
    Arbitration {
        phase: u8,
        pre_index: u64,
        steps: u64,
        pre_root: String,
        submitter_post: String,
        challenger_post: String,
        author: Role,
        witnesses: Vec<String>,
        computed: Option<String>,
        result: String,
    },
    Check {
        phase: u8,
        kind: String,
        party: Role,
        accepted: bool,
        detail: String,
    },
    Final {
        winner: Role,
        reason: String,
        rounds: u32,
        pinned_node: Option<u64>,
        pinned_step: Option<u64>,
        phase1_rounds: Option<u32>,
        phase2_rounds: Option<u32>,
    },
}

#[derive(Clone, Debug, Default)]
pub struct Transcript {
    records: Vec<Record>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn moves(&self) -> usize {
        self.records.iter().filter(|r| matches!(r, Record::Move { .. })).count()
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        self.write_to(io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn parse(text: impl BufRead) -> io::Result<Self> {
        let mut records = Vec::new();
        for line in text.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
        }
        Ok(Transcript { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut t = Transcript::new();
        t.push(Record::Move {
            phase: 1,
            round: 2,
            mover: Role::Challenger,
            i: 0,
            j: 8,
            posted_roots: vec!["00".into()],
            decision: "post".into(),
        });
        t.push(Record::Final {
            winner: Role::Submitter,
            reason: "arbitration".into(),
            rounds: 3,
            pinned_node: None,
            pinned_step: Some(4),
            phase1_rounds: None,
            phase2_rounds: None,
        });
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"type\":\"move\""));
        let back = Transcript::parse(text.as_bytes()).unwrap();
        assert_eq!(back.records(), t.records());
        assert_eq!(back.moves(), 1);
    }
}
