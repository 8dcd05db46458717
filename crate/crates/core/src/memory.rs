//! Short-term memory, long-term memory and knowledge-base checking, plus the
//! bounded check/revise correction loop.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_STM_CAPACITY: usize = 64;
pub const DEFAULT_MAX_ITER: usize = 5;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("rule {rule} references undeclared field `{field}`")]
    UndeclaredField { rule: String, field: String },
    #[error("duplicate rule id `{0}`")]
    DuplicateRule(String),
    #[error("rule {rule}: {message}")]
    BadRule { rule: String, message: String },
    #[error("long-term memory file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("long-term memory file {path} line {line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("long-term memory entry for round {got} precedes round {last}")]
    RoundOrder { last: u64, got: u64 },
}

/// Field value in proposals and memory payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Label(String),
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Label(_) => None,
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x}"),
            Value::Label(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Label(s.to_string())
    }
}

pub type Record = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Observation,
    Thought,
    Action,
    Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub round: u64,
    pub role: String,
    pub kind: EntryKind,
    pub payload: Record,
    /// Logical clock; the orchestrator uses its round counter.
    pub timestamp: u64,
}

/// Bounded FIFO of recent entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortTermMemory {
    capacity: usize,
    entries: VecDeque<MemoryEntry>,
}

impl ShortTermMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::new(),
        }
    }

    /// Appends, evicting and returning the oldest entry when full.
    pub fn append(&mut self, entry: MemoryEntry) -> Option<MemoryEntry> {
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(entry);
        evicted
    }

    /// The most recent `k` entries, oldest first.
    pub fn window(&self, k: usize) -> Vec<&MemoryEntry> {
        let skip = self.entries.len().saturating_sub(k);
        self.entries.iter().skip(skip).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LtmFilter {
    pub role: Option<String>,
    pub kind: Option<EntryKind>,
    /// Entry payload must contain this field.
    pub field: Option<String>,
}

impl LtmFilter {
    fn matches(&self, e: &MemoryEntry) -> bool {
        self.role.as_ref().is_none_or(|r| &e.role == r)
            && self.kind.is_none_or(|k| e.kind == k)
            && self.field.as_ref().is_none_or(|f| e.payload.contains_key(f))
    }
}

/// Append-only store, optionally persisted as JSON lines.
#[derive(Debug, Default)]
pub struct LongTermMemory {
    entries: Vec<MemoryEntry>,
    sink: Option<(PathBuf, File)>,
}

impl LongTermMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) a JSON-lines file, loading any existing entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| MemoryError::Io {
            path: path.clone(),
            source,
        };
        let mut entries = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry = serde_json::from_str(&line).map_err(|source| MemoryError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    source,
                })?;
                entries.push(entry);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(Self {
            entries,
            sink: Some((path, file)),
        })
    }

    pub fn append(&mut self, entry: MemoryEntry) -> Result<(), MemoryError> {
        if let Some(last) = self.entries.last() {
            if entry.round < last.round {
                return Err(MemoryError::RoundOrder {
                    last: last.round,
                    got: entry.round,
                });
            }
        }
        if let Some((path, file)) = &mut self.sink {
            let line = serde_json::to_string(&entry).expect("entries serialize");
            writeln!(file, "{line}").map_err(|source| MemoryError::Io {
                path: path.clone(),
                source,
            })?;
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn query(&self, filter: &LtmFilter) -> Vec<&MemoryEntry> {
        self.entries.iter().filter(|e| filter.matches(e)).collect()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Latest `decision` value recorded for each field.
    pub fn binding_decisions(&self) -> BTreeMap<&str, (&Value, &MemoryEntry)> {
        let mut out = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.kind == EntryKind::Decision) {
            for (field, value) in &e.payload {
                out.insert(field.as_str(), (value, e));
            }
        }
        out
    }
}

/// STM with optional dual-write into LTM.
#[derive(Debug)]
pub struct MemoryStore {
    pub stm: ShortTermMemory,
    pub ltm: LongTermMemory,
    pub mirror: bool,
}

impl MemoryStore {
    pub fn new(capacity: usize, mirror: bool) -> Self {
        Self {
            stm: ShortTermMemory::new(capacity),
            ltm: LongTermMemory::new(),
            mirror,
        }
    }

    pub fn remember(&mut self, entry: MemoryEntry) -> Result<(), MemoryError> {
        if self.mirror {
            self.ltm.append(entry.clone())?;
        }
        self.stm.append(entry);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl CompareOp {
    fn holds(self, lhs: &Value, rhs: &Value) -> bool {
        if self == CompareOp::Eq {
            return match (lhs, rhs) {
                (Value::Num(a), Value::Num(b)) => a == b,
                (Value::Label(a), Value::Label(b)) => a == b,
                _ => false,
            };
        }
        let (Some(a), Some(b)) = (lhs.as_num(), rhs.as_num()) else {
            return false;
        };
        match self {
            CompareOp::Le => a <= b,
            CompareOp::Lt => a < b,
            CompareOp::Ge => a >= b,
            CompareOp::Gt => a > b,
            CompareOp::Eq => unreachable!(),
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CompareOp::Le => "<=",
            CompareOp::Lt => "<",
            CompareOp::Eq => "=",
            CompareOp::Ge => ">=",
            CompareOp::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    Compare { field: String, op: CompareOp, value: Value },
    OneOf { field: String, allowed: Vec<Value> },
    Required { field: String },
}

impl Predicate {
    pub fn field(&self) -> &str {
        match self {
            Predicate::Compare { field, .. } | Predicate::OneOf { field, .. } | Predicate::Required { field } => field,
        }
    }

    /// `None` when the rule does not apply (the field is absent).
    fn evaluate(&self, fields: &Record) -> Option<bool> {
        match self {
            Predicate::Required { field } => Some(fields.contains_key(field)),
            Predicate::Compare { field, op, value } => fields.get(field).map(|v| op.holds(v, value)),
            Predicate::OneOf { field, allowed } => fields.get(field).map(|v| allowed.contains(v)),
        }
    }

    fn describe(&self) -> String {
        match self {
            Predicate::Compare { field, op, value } => format!("{field} {} {value}", op.symbol()),
            Predicate::OneOf { field, allowed } => {
                let names: Vec<String> = allowed.iter().map(Value::to_string).collect();
                format!("{field} in [{}]", names.join(", "))
            }
            Predicate::Required { field } => format!("{field} required"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleScope {
    Global,
    Role(String),
}

impl RuleScope {
    fn covers(&self, role: &str) -> bool {
        match self {
            RuleScope::Global => true,
            RuleScope::Role(r) => r == role,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRule {
    pub id: String,
    pub scope: RuleScope,
    pub predicate: Predicate,
    pub message: String,
}

/// Declared field schema plus rules over it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    schema: BTreeSet<String>,
    rules: Vec<KnowledgeRule>,
}

impl KnowledgeBase {
    pub fn new(schema: impl IntoIterator<Item = String>, rules: Vec<KnowledgeRule>) -> Result<Self, MemoryError> {
        let kb = Self {
            schema: schema.into_iter().collect(),
            rules,
        };
        kb.validate()?;
        Ok(kb)
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        let mut seen = BTreeSet::new();
        for rule in &self.rules {
            if !seen.insert(&rule.id) {
                return Err(MemoryError::DuplicateRule(rule.id.clone()));
            }
            if !self.schema.contains(rule.predicate.field()) {
                return Err(MemoryError::UndeclaredField {
                    rule: rule.id.clone(),
                    field: rule.predicate.field().to_string(),
                });
            }
            if let Predicate::Compare { op, value: Value::Label(_), .. } = &rule.predicate {
                if *op != CompareOp::Eq {
                    return Err(MemoryError::BadRule {
                        rule: rule.id.clone(),
                        message: "ordering comparisons need a numeric constant".into(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn rules(&self) -> &[KnowledgeRule] {
        &self.rules
    }

    pub fn schema(&self) -> &BTreeSet<String> {
        &self.schema
    }

    pub fn with_rules_reordered(&self, order: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            rules: order.iter().map(|&i| self.rules[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub role: String,
    pub fields: Record,
    /// Rounds of the memory entries this proposal derives from.
    #[serde(default)]
    pub provenance: Vec<u64>,
}

impl Proposal {
    pub fn new(role: impl Into<String>, fields: Record) -> Self {
        Self {
            role: role.into(),
            fields,
            provenance: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum ViolationSource {
    Rule { id: String },
    /// Contradicts a decision recorded in long-term memory.
    Ltm { round: u64, role: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub source: ViolationSource,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationList {
    pub violations: Vec<Violation>,
    /// Number of rule and memory checks that applied to the proposal.
    pub evaluated: usize,
}

impl ViolationList {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    /// Fraction of applicable checks that passed; 1 when nothing applied.
    pub fn pass_fraction(&self) -> f64 {
        if self.evaluated == 0 {
            1.0
        } else {
            1.0 - self.violations.len() as f64 / self.evaluated as f64
        }
    }
}

/// Checks a proposal against every in-scope rule and every binding decision
/// in long-term memory. Only `decision` entries bind; the latest one per
/// field wins.
pub fn check(p: &Proposal, kb: &KnowledgeBase, ltm: &LongTermMemory) -> Result<ViolationList, MemoryError> {
    kb.validate()?;
    let mut out = ViolationList::default();
    for rule in kb.rules.iter().filter(|r| r.scope.covers(&p.role)) {
        if let Some(ok) = rule.predicate.evaluate(&p.fields) {
            out.evaluated += 1;
            if !ok {
                out.violations.push(Violation {
                    source: ViolationSource::Rule { id: rule.id.clone() },
                    field: rule.predicate.field().to_string(),
                    message: format!("{} ({})", rule.message, rule.predicate.describe()),
                });
            }
        }
    }
    for (field, (value, entry)) in ltm.binding_decisions() {
        if let Some(proposed) = p.fields.get(field) {
            out.evaluated += 1;
            if proposed != value {
                out.violations.push(Violation {
                    source: ViolationSource::Ltm {
                        round: entry.round,
                        role: entry.role.clone(),
                    },
                    field: field.to_string(),
                    message: format!(
                        "{field} = {proposed} contradicts decision {field} = {value} by {} in round {}",
                        entry.role, entry.round
                    ),
                });
            }
        }
    }
    out.violations.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum CorrectionOutcome {
    Resolved,
    /// Iterations ran out; the remaining violations go back to the caller.
    Escalated { unresolved: Vec<Violation> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTrace {
    /// Violations found at the start of each revision iteration.
    pub iterations: Vec<Vec<Violation>>,
    pub outcome: CorrectionOutcome,
}

impl CorrectionTrace {
    pub fn escalated(&self) -> bool {
        matches!(self.outcome, CorrectionOutcome::Escalated { .. })
    }
}

#[derive(Debug, Error)]
pub enum CorrectionError<E: std::error::Error + 'static> {
    #[error("revision failed after {} iterations: {source}", trace.len())]
    Revision {
        #[source]
        source: E,
        trace: Vec<Vec<Violation>>,
    },
    #[error(transparent)]
    Check(#[from] MemoryError),
}

/// Alternates check and revise until the proposal is consistent or
/// `max_iter` revisions have been made.
pub fn correction_loop<F, E>(
    p: Proposal,
    mut revise: F,
    kb: &KnowledgeBase,
    ltm: &LongTermMemory,
    max_iter: usize,
) -> Result<(Proposal, CorrectionTrace), CorrectionError<E>>
where
    F: FnMut(&Proposal, &[Violation]) -> Result<Proposal, E>,
    E: std::error::Error + 'static,
{
    let max_iter = max_iter.max(1);
    let mut current = p;
    let mut iterations = Vec::new();
    loop {
        let found = check(&current, kb, ltm)?;
        if found.is_empty() {
            return Ok((
                current,
                CorrectionTrace {
                    iterations,
                    outcome: CorrectionOutcome::Resolved,
                },
            ));
        }
        if iterations.len() == max_iter {
            return Ok((
                current,
                CorrectionTrace {
                    iterations,
                    outcome: CorrectionOutcome::Escalated {
                        unresolved: found.violations,
                    },
                },
            ));
        }
        current = match revise(&current, &found.violations) {
            Ok(next) => next,
            Err(source) => {
                iterations.push(found.violations);
                return Err(CorrectionError::Revision {
                    source,
                    trace: iterations,
                });
            }
        };
        iterations.push(found.violations);
    }
}
