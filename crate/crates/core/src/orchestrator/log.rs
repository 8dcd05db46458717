use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::tools::{ToolRecord, ToolResult, ToolSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Vertical,
    Brainstorm,
    Qa,
    PromptOpt,
    Convergence,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Vertical => "vertical",
            Phase::Brainstorm => "brainstorm",
            Phase::Qa => "qa",
            Phase::PromptOpt => "prompt-opt",
            Phase::Convergence => "convergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub round: usize,
    pub phase: Phase,
    pub role: String,
    pub kind: String,
    pub detail: Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub seed: u64,
    pub scenario_hash: String,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event for round {got} after round {last}")]
    RoundOrder { last: usize, got: usize },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("empty log")]
    Empty,
}

/// Append-only, round-ordered event record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub header: LogHeader,
    events: Vec<Event>,
}

impl EventLog {
    pub fn new(seed: u64, scenario_hash: impl Into<String>) -> Self {
        Self {
            header: LogHeader {
                seed,
                scenario_hash: scenario_hash.into(),
            },
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, event: Event) -> Result<(), LogError> {
        if let Some(last) = self.events.last() {
            if event.round < last.round {
                return Err(LogError::RoundOrder {
                    last: last.round,
                    got: event.round,
                });
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub(crate) fn emit(&mut self, round: usize, phase: Phase, role: &str, kind: &str, detail: Json) {
        self.push(Event {
            round,
            phase,
            role: role.to_string(),
            kind: kind.to_string(),
            detail,
        })
        .expect("orchestrator emits rounds in order");
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn tool_entries(&self) -> usize {
        self.events.iter().filter(|e| e.kind == "tool").count()
    }

    /// Distinct phases of a round in first-appearance order.
    pub fn phase_sequence(&self, round: usize) -> Vec<Phase> {
        let mut seq: Vec<Phase> = Vec::new();
        for e in self.events.iter().filter(|e| e.round == round) {
            if seq.last() != Some(&e.phase) {
                seq.push(e.phase);
            }
        }
        seq
    }

    pub fn rounds(&self) -> usize {
        self.events.last().map_or(0, |e| e.round)
    }

    /// Header line, then one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(LogError::Empty)?;
        let header = serde_json::from_str(first).map_err(|source| LogError::Parse { line: 1, source })?;
        let mut log = EventLog {
            header,
            events: Vec::new(),
        };
        for (i, line) in lines {
            let e = serde_json::from_str(line).map_err(|source| LogError::Parse { line: i + 1, source })?;
            log.push(e)?;
        }
        Ok(log)
    }
}

/// Routes registry invocations into the log under the current round and role.
pub(crate) struct ToolLogger<'a> {
    pub log: &'a mut EventLog,
    pub round: usize,
    pub role: &'a str,
}

impl ToolSink for ToolLogger<'_> {
    fn tool_invoked(&mut self, inputs: &ToolRecord, result: &ToolResult) {
        let detail = serde_json::json!({
            "inputs": inputs,
            "result": result,
        });
        self.log.emit(self.round, Phase::Vertical, self.role, "tool", detail);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn jsonl_round_trip_and_order() {
        let mut log = EventLog::new(7, "abc");
        log.emit(1, Phase::Vertical, "CEO", "action", json!({"a": 1}));
        log.emit(1, Phase::Brainstorm, "strategy", "gate_skipped", json!({}));
        log.emit(2, Phase::Vertical, "CEO", "action", json!({}));
        let back = EventLog::from_jsonl(&log.to_jsonl()).unwrap();
        assert_eq!(back, log);
        assert_eq!(log.phase_sequence(1), vec![Phase::Vertical, Phase::Brainstorm]);
        let err = log.push(Event {
            round: 1,
            phase: Phase::Qa,
            role: "x".into(),
            kind: "k".into(),
            detail: json!(null),
        });
        assert!(err.is_err());
    }

    #[test]
    fn phase_names_serialize_as_written() {
        assert_eq!(serde_json::to_string(&Phase::PromptOpt).unwrap(), "\"prompt-opt\"");
        assert_eq!(Phase::Qa.name(), "qa");
    }
}
