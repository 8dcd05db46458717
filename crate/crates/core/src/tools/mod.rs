//! Role-callable tools: a registry with schema checking and invocation
//! mirroring, deterministic built-ins, and completion backends.

mod calculator;
mod corpus;
mod kmeans;
pub mod llm;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

pub use calculator::{evaluate, Calculator};
pub use corpus::{bundled_corpus, CorpusSearch, Document, Hit};
pub use kmeans::{kmeans_segment, project_2d, KMeansError, KMeansResult, KMeansSegment};
pub use llm::{CompletionBackend, CompletionRequest, LlmError, LlmTool, Message, MockBackend};

pub type ToolRecord = Map<String, Json>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ToolError {
    UnknownTool(String),
    Schema(String),
    Timeout(String),
    Failed(String),
}

impl std::fmt::Display for ToolError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ToolError::UnknownTool(n) => write!(f, "unknown-tool: {n}"),
            ToolError::Schema(m) => write!(f, "schema: {m}"),
            ToolError::Timeout(m) => write!(f, "timeout: {m}"),
            ToolError::Failed(m) => write!(f, "failed: {m}"),
        }
    }
}

impl std::error::Error for ToolError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Determinism {
    Deterministic,
    SeededStochastic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    Text,
    Number,
    Count,
    Flag,
    /// Array of equal-length numeric rows.
    Table,
}

impl FieldType {
    fn accepts(self, v: &Json) -> bool {
        match self {
            FieldType::Text => v.is_string(),
            FieldType::Number => v.is_number(),
            FieldType::Count => v.is_u64(),
            FieldType::Flag => v.is_boolean(),
            FieldType::Table => v.as_array().is_some_and(|rows| {
                let width = rows.first().and_then(Json::as_array).map(Vec::len);
                rows.iter().all(|r| {
                    r.as_array()
                        .is_some_and(|r| Some(r.len()) == width && r.iter().all(Json::is_number))
                })
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputField {
    pub name: String,
    pub ty: FieldType,
    pub required: bool,
}

impl InputField {
    pub fn required(name: &str, ty: FieldType) -> Self {
        Self {
            name: name.into(),
            ty,
            required: true,
        }
    }

    pub fn optional(name: &str, ty: FieldType) -> Self {
        Self {
            name: name.into(),
            ty,
            required: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub inputs: Vec<InputField>,
    pub determinism: Determinism,
}

impl ToolDescriptor {
    pub fn check_inputs(&self, inputs: &ToolRecord) -> Result<(), ToolError> {
        for key in inputs.keys() {
            if !self.inputs.iter().any(|f| &f.name == key) {
                return Err(ToolError::Schema(format!("{}: unexpected input `{key}`", self.name)));
            }
        }
        for field in &self.inputs {
            match inputs.get(&field.name) {
                None if field.required => {
                    return Err(ToolError::Schema(format!("{}: missing input `{}`", self.name, field.name)))
                }
                Some(v) if !field.ty.accepts(v) => {
                    return Err(ToolError::Schema(format!(
                        "{}: input `{}` is not a {:?}",
                        self.name, field.name, field.ty
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub trait Tool: Send + Sync {
    fn descriptor(&self) -> &ToolDescriptor;
    /// Called only with schema-valid inputs.
    fn call(&self, inputs: &ToolRecord, rng: &mut ChaCha8Rng) -> Result<ToolRecord, ToolError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "error", rename_all = "lowercase")]
pub enum ToolStatus {
    Ok,
    Error(ToolError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub output: Option<ToolRecord>,
    pub latency: f64,
    #[serde(flatten)]
    pub status: ToolStatus,
}

impl ToolResult {
    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }
}

/// Receives every invocation, successful or not.
pub trait ToolSink {
    fn tool_invoked(&mut self, inputs: &ToolRecord, result: &ToolResult);
}

impl ToolSink for Vec<ToolResult> {
    fn tool_invoked(&mut self, _: &ToolRecord, result: &ToolResult) {
        self.push(result.clone());
    }
}

/// Simulated latency: `base + U[0, jitter)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyModel {
    pub base: f64,
    #[serde(default)]
    pub jitter: f64,
}

impl LatencyModel {
    pub fn mean(&self) -> f64 {
        self.base + self.jitter / 2.0
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.jitter > 0.0 {
            self.base + rng.random::<f64>() * self.jitter
        } else {
            self.base
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("tool `{0}` registered twice")]
pub struct DuplicateTool(pub String);

#[derive(Default)]
pub struct Registry {
    tools: BTreeMap<String, (Arc<dyn Tool>, LatencyModel)>,
    invocations: AtomicUsize,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("tools", &self.tools.keys().collect::<Vec<_>>())
            .field("invocations", &self.invocation_count())
            .finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Calculator, bundled-corpus search and k-means, zero latency.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(Calculator::new()), LatencyModel::default()).unwrap();
        r.register(Arc::new(CorpusSearch::new(bundled_corpus())), LatencyModel::default())
            .unwrap();
        r.register(Arc::new(KMeansSegment::new()), LatencyModel::default()).unwrap();
        r
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>, latency: LatencyModel) -> Result<(), DuplicateTool> {
        let name = tool.descriptor().name.clone();
        if self.tools.contains_key(&name) {
            return Err(DuplicateTool(name));
        }
        self.tools.insert(name, (tool, latency));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.values().map(|(t, _)| t.descriptor())
    }

    pub fn latency(&self, name: &str) -> Option<LatencyModel> {
        self.tools.get(name).map(|(_, l)| *l)
    }

    pub fn invocation_count(&self) -> usize {
        self.invocations.load(Ordering::Relaxed)
    }

    /// Dispatches one call. Failures come back as an error status rather
    /// than a Rust error so that they can be logged and treated as outcomes.
    pub fn invoke(
        &self,
        name: &str,
        inputs: &ToolRecord,
        rng: &mut ChaCha8Rng,
        sink: &mut dyn ToolSink,
    ) -> ToolResult {
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let result = match self.tools.get(name) {
            None => ToolResult {
                tool: name.to_string(),
                output: None,
                latency: 0.0,
                status: ToolStatus::Error(ToolError::UnknownTool(name.to_string())),
            },
            Some((tool, latency)) => {
                let latency = latency.sample(rng);
                let outcome = tool
                    .descriptor()
                    .check_inputs(inputs)
                    .and_then(|()| tool.call(inputs, rng));
                match outcome {
                    Ok(out) => ToolResult {
                        tool: name.to_string(),
                        output: Some(out),
                        latency,
                        status: ToolStatus::Ok,
                    },
                    Err(e) => ToolResult {
                        tool: name.to_string(),
                        output: None,
                        latency,
                        status: ToolStatus::Error(e),
                    },
                }
            }
        };
        sink.tool_invoked(inputs, &result);
        result
    }
}

pub(crate) fn record(pairs: impl IntoIterator<Item = (&'static str, Json)>) -> ToolRecord {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use serde_json::json;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn calculator_through_registry() {
        let reg = Registry::with_builtins();
        let mut log = Vec::new();
        let r = reg.invoke("calculator", &record([("expression", json!("2+3*4"))]), &mut rng(), &mut log);
        assert!(r.is_ok());
        assert_eq!(r.output.unwrap()["value"], json!(14.0));
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn unknown_tool_and_schema_errors_are_logged() {
        let reg = Registry::with_builtins();
        let mut log = Vec::new();
        let r = reg.invoke("web_search", &ToolRecord::new(), &mut rng(), &mut log);
        assert_eq!(r.status, ToolStatus::Error(ToolError::UnknownTool("web_search".into())));
        assert!(r.output.is_none());
        let r = reg.invoke("calculator", &record([("expression", json!(3))]), &mut rng(), &mut log);
        assert!(matches!(r.status, ToolStatus::Error(ToolError::Schema(_))));
        let r = reg.invoke("calculator", &record([("expr", json!("1"))]), &mut rng(), &mut log);
        assert!(matches!(r.status, ToolStatus::Error(ToolError::Schema(_))));
        assert_eq!(reg.invocation_count(), 3);
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut reg = Registry::with_builtins();
        let err = reg
            .register(Arc::new(Calculator::new()), LatencyModel::default())
            .unwrap_err();
        assert_eq!(err, DuplicateTool("calculator".into()));
    }

    #[test]
    fn latency_is_seeded() {
        let mut reg = Registry::new();
        reg.register(Arc::new(Calculator::new()), LatencyModel { base: 1.0, jitter: 0.5 })
            .unwrap();
        let inputs = record([("expression", json!("1"))]);
        let a = reg.invoke("calculator", &inputs, &mut rng(), &mut Vec::new());
        let b = reg.invoke("calculator", &inputs, &mut rng(), &mut Vec::new());
        assert_eq!(a, b);
        assert!((1.0..1.5).contains(&a.latency));
    }

    #[test]
    fn table_type_check() {
        assert!(FieldType::Table.accepts(&json!([[1, 2], [3.5, 4]])));
        assert!(!FieldType::Table.accepts(&json!([[1, 2], [3]])));
        assert!(!FieldType::Table.accepts(&json!([[1, "x"]])));
    }
}
