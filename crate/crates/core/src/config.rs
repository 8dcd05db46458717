//! TOML scenario format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::bandit::{Kernel, LinearArm};
use crate::ctmdp::RewardForm;
use crate::memory::KnowledgeRule;
use crate::robustness::RobustnessConfig;
use crate::tools::{Document, LatencyModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub game: GameSection,
    pub roles: Vec<RoleSection>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSection>,
    #[serde(default)]
    pub tools: ToolsSection,
    #[serde(default)]
    pub kb: KbSection,
    #[serde(default)]
    pub bandit: BanditSection,
    #[serde(default)]
    pub brainstorm: BrainstormSection,
    #[serde(default)]
    pub robustness: Option<RobustnessConfig>,
}

fn default_max_rounds() -> usize {
    50
}
fn default_window() -> usize {
    2
}
fn default_stm() -> usize {
    crate::memory::DEFAULT_STM_CAPACITY
}
fn default_qa_iter() -> usize {
    crate::memory::DEFAULT_MAX_ITER
}
fn default_tol() -> f64 {
    crate::ctmdp::DEFAULT_TOL
}
fn default_vi_iter() -> usize {
    crate::ctmdp::DEFAULT_MAX_ITER
}
fn default_discount() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    /// Number of consecutive identical joint profiles that count as converged.
    #[serde(default = "default_window")]
    pub convergence_window: usize,
    #[serde(default = "default_stm")]
    pub stm_capacity: usize,
    #[serde(default = "default_qa_iter")]
    pub qa_max_iter: usize,
    /// Context label per round, cycled; empty means the first context always.
    #[serde(default)]
    pub context_schedule: Vec<String>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_vi_iter")]
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSection {
    pub label: String,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffRow {
    pub context: String,
    /// One action label per level, leader first.
    pub profile: Vec<String>,
    /// One utility per level.
    pub utility: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSection {
    pub contexts: Vec<String>,
    pub levels: Vec<LevelSection>,
    pub payoffs: Vec<PayoffRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Idle,
    Work,
    Delegate,
    Report,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSection {
    pub name: String,
    pub effect: EffectKind,
    #[serde(default)]
    pub tool: Option<String>,
    #[serde(default)]
    pub inputs: Map<String, Json>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSection {
    pub state: String,
    pub action: String,
    pub reward: f64,
    pub duration: f64,
    /// Transition rates to target states; absent targets have rate 0.
    #[serde(default)]
    pub to: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleSection {
    pub label: String,
    pub level: usize,
    #[serde(default)]
    pub reports_to: Option<String>,
    #[serde(default)]
    pub backend: Option<String>,
    pub states: Vec<String>,
    pub initial_state: String,
    /// State entered when a superior delegates to this role.
    #[serde(default)]
    pub on_delegated: Option<String>,
    /// State entered once every open delegation has reported back.
    #[serde(default)]
    pub on_report: Option<String>,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default)]
    pub reward_form: RewardForm,
    pub actions: Vec<ActionSection>,
    pub transitions: Vec<TransitionSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub pattern: String,
    pub response: String,
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSection {
    Mock {
        #[serde(default)]
        script: Vec<ScriptEntry>,
        #[serde(default)]
        fallback: Option<String>,
        #[serde(default)]
        failure_rate: f64,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default)]
        retries: u32,
        #[serde(default)]
        temperature: f64,
    },
}

fn default_tools() -> Vec<String> {
    ["calculator", "corpus_search", "kmeans_segment"].map(String::from).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolsSection {
    #[serde(default = "default_tools")]
    pub enabled: Vec<String>,
    #[serde(default)]
    pub latency: BTreeMap<String, LatencyModel>,
    /// Replaces the bundled corpus when non-empty.
    #[serde(default)]
    pub corpus: Vec<Document>,
}

impl Default for ToolsSection {
    fn default() -> Self {
        Self {
            enabled: default_tools(),
            latency: BTreeMap::new(),
            corpus: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbSection {
    #[serde(default)]
    pub fields: Vec<String>,
    /// Proposal fields recorded as binding decisions after QA.
    #[serde(default)]
    pub decision_fields: Vec<String>,
    #[serde(default)]
    pub rules: Vec<KnowledgeRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSection {
    pub name: String,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub arms: Vec<LinearArm>,
    #[serde(default)]
    pub constant_context: Option<Vec<f64>>,
    pub rounds: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_seeds() -> usize {
    1
}

fn default_features() -> Vec<String> {
    vec!["round".into(), "bias".into()]
}

fn default_obs_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditSection {
    /// Context features for prompt selection: `round`, `context`, `bias`.
    #[serde(default = "default_features")]
    pub features: Vec<String>,
    #[serde(default)]
    pub variants: Vec<VariantSection>,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default = "default_obs_noise")]
    pub obs_noise: f64,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
}

impl Default for BanditSection {
    fn default() -> Self {
        Self {
            features: default_features(),
            variants: Vec::new(),
            kernel: Kernel::default(),
            obs_noise: default_obs_noise(),
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedupSection {
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
    pub target: String,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_trials() -> usize {
    100_000
}

fn default_alpha() -> f64 {
    2.0
}

fn default_epsilon() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrainstormSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Outcome labels that proposal beliefs range over.
    #[serde(default)]
    pub outcomes: Vec<String>,
    #[serde(default)]
    pub speedup: Option<SpeedupSection>,
}

impl Default for BrainstormSection {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            epsilon: default_epsilon(),
            outcomes: Vec::new(),
            speedup: None,
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<u8>), ConfigError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| ConfigError::Invalid(format!("{} is not UTF-8", path.display())))?;
        Ok((Self::parse(&text)?, bytes))
    }

    /// Canonical JSON form, the input to the scenario hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_has_position() {
        let text = "[scenario]\nname = \"x\"\nmax_rounds = \"ten\"\n";
        match ScenarioConfig::parse(text) {
            Err(ConfigError::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column >= 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn defaults_fill_in() {
        let text = r#"
[scenario]
name = "tiny"
[game]
contexts = ["c"]
levels = [{ label = "l", actions = ["go"] }]
payoffs = [{ context = "c", profile = ["go"], utility = [1.0] }]
[[roles]]
label = "solo"
level = 1
states = ["s"]
initial_state = "s"
actions = [{ name = "go", effect = "work" }]
transitions = [{ state = "s", action = "go", reward = 1.0, duration = 1.0 }]
"#;
        let cfg = ScenarioConfig::parse(text).unwrap();
        assert_eq!(cfg.scenario.max_rounds, 50);
        assert_eq!(cfg.scenario.convergence_window, 2);
        assert_eq!(cfg.roles[0].discount, 0.5);
        assert_eq!(cfg.tools.enabled.len(), 3);
        assert_eq!(cfg.brainstorm.alpha, 2.0);
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
