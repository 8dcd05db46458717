use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use regex::Regex;

use crate::bandit::{BanditConfig, LinearArm, SyntheticEnv};
use crate::config::{BackendSection, ConfigError, EffectKind, ScenarioConfig};
use crate::ctmdp::{RoleModel, RoleModelSpec};
use crate::game::{GameSpec, Level};
use crate::infotheory::{renyi_divergence, BrainstormConfig, Distribution};
use crate::memory::KnowledgeBase;
use crate::robustness::RobustnessConfig;
use crate::tools::{
    bundled_corpus, Calculator, CompletionBackend, CorpusSearch, KMeansSegment, LatencyModel, MockBackend, Registry,
    ToolRecord,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Idle,
    Work,
    /// Hands the task to every direct subordinate.
    Delegate,
    /// Reports to the superior.
    Report,
    Tool { name: String, inputs: ToolRecord },
}

#[derive(Debug, Clone)]
pub struct RoleSpec {
    pub label: String,
    /// 1-based; level 1 leads.
    pub level: usize,
    pub reports_to: Option<String>,
    pub subordinates: Vec<String>,
    pub model: RoleModel,
    pub initial_state: usize,
    pub on_delegated: Option<usize>,
    pub on_report: Option<usize>,
    /// Indexed by action.
    pub effects: Vec<Effect>,
    pub backend: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Mock {
        script: Vec<(String, String)>,
        fallback: Option<String>,
        failure_rate: f64,
    },
    Http {
        endpoint: String,
        model: String,
        key_env: Option<String>,
        timeout_secs: f64,
        retries: u32,
        temperature: f64,
    },
}

impl BackendSpec {
    /// Mock failure streams are seeded from the run seed and backend index.
    pub fn instantiate(&self, seed: u64, index: u64) -> Result<Arc<dyn CompletionBackend>, ConfigError> {
        match self {
            BackendSpec::Mock {
                script,
                fallback,
                failure_rate,
            } => {
                let pairs = script
                    .iter()
                    .map(|(p, r)| {
                        Regex::new(p)
                            .map(|re| (re, r.clone()))
                            .map_err(|e| ConfigError::Invalid(format!("mock pattern `{p}`: {e}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let mut m = MockBackend::from_pairs(pairs)
                    .with_failures(*failure_rate, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index));
                if let Some(f) = fallback {
                    m = m.with_fallback(f.clone());
                }
                Ok(Arc::new(m))
            }
            #[cfg(feature = "http")]
            BackendSpec::Http {
                endpoint,
                model,
                key_env,
                timeout_secs,
                retries,
                ..
            } => Ok(Arc::new(crate::tools::llm::HttpBackend::new(crate::tools::llm::HttpConfig {
                endpoint: endpoint.clone(),
                model: model.clone(),
                key_env: key_env.clone(),
                timeout_secs: *timeout_secs,
                retries: *retries,
            }))),
            #[cfg(not(feature = "http"))]
            BackendSpec::Http { .. } => Err(ConfigError::Invalid("http backends need the `http` feature".into())),
        }
    }

    pub fn model_name(&self) -> &str {
        match self {
            BackendSpec::Mock { .. } => "mock",
            BackendSpec::Http { model, .. } => model,
        }
    }

    pub fn temperature(&self) -> f64 {
        match self {
            BackendSpec::Mock { .. } => 0.0,
            BackendSpec::Http { temperature, .. } => *temperature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Round,
    Context,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Limits {
    pub max_rounds: usize,
    pub convergence_window: usize,
    pub stm_capacity: usize,
    pub qa_max_iter: usize,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct ToolSetup {
    pub enabled: Vec<String>,
    pub latency: BTreeMap<String, LatencyModel>,
    pub corpus: Vec<crate::tools::Document>,
}

impl ToolSetup {
    pub fn registry(&self) -> Registry {
        let mut r = Registry::new();
        for name in &self.enabled {
            let latency = self.latency.get(name).copied().unwrap_or_default();
            let tool: Arc<dyn crate::tools::Tool> = match name.as_str() {
                "calculator" => Arc::new(Calculator::new()),
                "corpus_search" => {
                    let docs = if self.corpus.is_empty() {
                        bundled_corpus()
                    } else {
                        self.corpus.clone()
                    };
                    Arc::new(CorpusSearch::new(docs))
                }
                "kmeans_segment" => Arc::new(KMeansSegment::new()),
                _ => unreachable!("validated at build"),
            };
            r.register(tool, latency).expect("enabled names are unique");
        }
        r
    }
}

/// Validated, ready-to-run scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub roles: Vec<RoleSpec>,
    pub game: GameSpec,
    /// Context index per round, cycled.
    pub context_schedule: Vec<usize>,
    pub kb: KnowledgeBase,
    pub decision_fields: Vec<String>,
    pub bandit: BanditConfig,
    pub features: Vec<Feature>,
    pub variants: Vec<Variant>,
    pub brainstorm: BrainstormConfig,
    pub outcomes: Vec<String>,
    pub tools: ToolSetup,
    pub backends: BTreeMap<String, BackendSpec>,
    pub limits: Limits,
    pub speedup: SpeedupSetup,
    pub synthetic: SyntheticSetup,
    pub robustness: RobustnessConfig,
    pub hash: String,
}

/// Prior/posterior pair for the standalone search-speedup measurement.
#[derive(Debug, Clone)]
pub struct SpeedupSetup {
    pub prior: Distribution,
    pub posterior: Distribution,
    pub target: String,
    pub trials: usize,
}

/// Synthetic arms for the standalone bandit run.
#[derive(Debug, Clone)]
pub struct SyntheticSetup {
    pub env: SyntheticEnv,
    pub config: BanditConfig,
    pub rounds: usize,
    pub seeds: usize,
}

fn build_speedup(cfg: &ScenarioConfig, alpha: f64) -> Result<SpeedupSetup, ConfigError> {
    let outcomes = &cfg.brainstorm.outcomes;
    let Some(sp) = &cfg.brainstorm.speedup else {
        // target mass doubled over a uniform prior
        let labels: Vec<String> = if outcomes.len() >= 2 {
            outcomes.clone()
        } else {
            ["a", "b", "c", "d"].map(String::from).to_vec()
        };
        let n = labels.len() as f64;
        let rest = (1.0 - 2.0 / n) / (n - 1.0);
        let mut post = vec![rest; labels.len()];
        post[0] = 2.0 / n;
        let prior = Distribution::uniform(labels.clone()).expect("non-empty");
        let posterior = Distribution::from_weights(labels.clone(), post).expect("positive weights");
        return Ok(SpeedupSetup {
            prior,
            posterior,
            target: labels[0].clone(),
            trials: 100_000,
        });
    };
    let labels: Vec<String> = if outcomes.len() == sp.prior.len() {
        outcomes.clone()
    } else if outcomes.is_empty() {
        (0..sp.prior.len()).map(|i| format!("o{i}")).collect()
    } else {
        return invalid(format!(
            "brainstorm.speedup: {} probabilities for {} outcomes",
            sp.prior.len(),
            outcomes.len()
        ));
    };
    let prior = Distribution::new(labels.clone(), sp.prior.clone())
        .map_err(|e| ConfigError::Invalid(format!("brainstorm.speedup.prior: {e}")))?;
    let posterior = Distribution::new(labels.clone(), sp.posterior.clone())
        .map_err(|e| ConfigError::Invalid(format!("brainstorm.speedup.posterior: {e}")))?;
    let Some(t) = prior.index_of(&sp.target) else {
        return invalid(format!("brainstorm.speedup.target: unknown outcome `{}`", sp.target));
    };
    if prior.probs()[t] == 0.0 || posterior.probs()[t] == 0.0 {
        return invalid("brainstorm.speedup.target must have positive mass in both distributions");
    }
    if sp.trials == 0 {
        return invalid("brainstorm.speedup.trials must be positive");
    }
    renyi_divergence(&posterior, &prior, alpha).map_err(|e| ConfigError::Invalid(format!("brainstorm.speedup: {e}")))?;
    Ok(SpeedupSetup {
        prior,
        posterior,
        target: sp.target.clone(),
        trials: sp.trials,
    })
}

fn build_synthetic(cfg: &ScenarioConfig) -> Result<SyntheticSetup, ConfigError> {
    let (env, rounds, seeds) = match &cfg.bandit.synthetic {
        Some(syn) => (
            SyntheticEnv {
                arms: syn.arms.clone(),
                constant_context: syn.constant_context.clone(),
            },
            syn.rounds,
            syn.seeds,
        ),
        None => (
            SyntheticEnv {
                arms: vec![
                    LinearArm { bias: 0.5, weights: vec![0.3, -0.2] },
                    LinearArm { bias: 0.4, weights: vec![-0.1, 0.4] },
                    LinearArm { bias: 0.2, weights: vec![0.1, 0.1] },
                ],
                constant_context: None,
            },
            500,
            1,
        ),
    };
    let Some(first) = env.arms.first() else {
        return invalid("bandit.synthetic.arms must not be empty");
    };
    let d = first.weights.len();
    if env.arms.iter().any(|a| a.weights.len() != d) {
        return invalid("bandit.synthetic.arms must share one weight length");
    }
    if env.constant_context.as_ref().is_some_and(|c| c.len() != d) {
        return invalid("bandit.synthetic.constant_context length differs from the arm weights");
    }
    if rounds == 0 || seeds == 0 {
        return invalid("bandit.synthetic: rounds and seeds must be positive");
    }
    let mut config = BanditConfig::new(env.arms.len(), d);
    config.kernel = cfg.bandit.kernel;
    config.obs_noise = cfg.bandit.obs_noise;
    config
        .validate()
        .map_err(|e| ConfigError::Invalid(format!("bandit.synthetic: {e}")))?;
    Ok(SyntheticSetup {
        env,
        config,
        rounds,
        seeds,
    })
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

const BUILTIN_TOOLS: [&str; 3] = ["calculator", "corpus_search", "kmeans_segment"];

const DEFAULT_TEMPLATE: &str = "role={role} level={level} state={state} action={action} decision={decision} round={round}";

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        let hash = crate::manifest::sha256_hex(cfg.canonical_json().as_bytes());
        let game = build_game(cfg)?;

        let mut enabled = BTreeSet::new();
        for t in &cfg.tools.enabled {
            if !BUILTIN_TOOLS.contains(&t.as_str()) {
                return invalid(format!("tools.enabled: unknown tool `{t}`"));
            }
            if !enabled.insert(t.clone()) {
                return invalid(format!("tools.enabled: `{t}` listed twice"));
            }
        }
        for name in cfg.tools.latency.keys() {
            if !enabled.contains(name) {
                return invalid(format!("tools.latency: `{name}` is not enabled"));
            }
        }
        let tools = ToolSetup {
            enabled: cfg.tools.enabled.clone(),
            latency: cfg.tools.latency.clone(),
            corpus: cfg.tools.corpus.clone(),
        };

        let mut backends = BTreeMap::new();
        for (name, b) in &cfg.backends {
            let spec = match b {
                BackendSection::Mock {
                    script,
                    fallback,
                    failure_rate,
                } => {
                    if !(0.0..=1.0).contains(failure_rate) {
                        return invalid(format!("backend `{name}`: failure_rate must lie in [0, 1]"));
                    }
                    for s in script {
                        Regex::new(&s.pattern)
                            .map_err(|e| ConfigError::Invalid(format!("backend `{name}`: pattern `{}`: {e}", s.pattern)))?;
                    }
                    BackendSpec::Mock {
                        script: script.iter().map(|s| (s.pattern.clone(), s.response.clone())).collect(),
                        fallback: fallback.clone(),
                        failure_rate: *failure_rate,
                    }
                }
                BackendSection::Http {
                    endpoint,
                    model,
                    key_env,
                    timeout_secs,
                    retries,
                    temperature,
                } => {
                    if *timeout_secs <= 0.0 {
                        return invalid(format!("backend `{name}`: timeout_secs must be positive"));
                    }
                    BackendSpec::Http {
                        endpoint: endpoint.clone(),
                        model: model.clone(),
                        key_env: key_env.clone(),
                        timeout_secs: *timeout_secs,
                        retries: *retries,
                        temperature: *temperature,
                    }
                }
            };
            backends.insert(name.clone(), spec);
        }

        let roles = build_roles(cfg, &enabled, &backends)?;
        let m = game.num_levels();
        let levels: BTreeSet<usize> = roles.iter().map(|r| r.level).collect();
        if levels != (1..=m).collect::<BTreeSet<_>>() {
            return invalid(format!(
                "role levels {levels:?} must cover 1..={m} contiguously, one game level each"
            ));
        }

        let context_schedule = if cfg.scenario.context_schedule.is_empty() {
            vec![0]
        } else {
            cfg.scenario
                .context_schedule
                .iter()
                .map(|c| {
                    game.contexts()
                        .iter()
                        .position(|x| x == c)
                        .ok_or_else(|| ConfigError::Invalid(format!("context_schedule: unknown context `{c}`")))
                })
                .collect::<Result<_, _>>()?
        };

        for f in &cfg.kb.decision_fields {
            if !cfg.kb.fields.contains(f) {
                return invalid(format!("kb.decision_fields: `{f}` is not a declared field"));
            }
        }
        let kb = KnowledgeBase::new(cfg.kb.fields.iter().cloned(), cfg.kb.rules.clone())
            .map_err(|e| ConfigError::Invalid(format!("kb: {e}")))?;

        let features = cfg
            .bandit
            .features
            .iter()
            .map(|f| match f.as_str() {
                "round" => Ok(Feature::Round),
                "context" => Ok(Feature::Context),
                "bias" => Ok(Feature::Bias),
                other => invalid(format!("bandit.features: unknown feature `{other}`")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if features.is_empty() {
            return invalid("bandit.features must not be empty");
        }
        let variants: Vec<Variant> = if cfg.bandit.variants.is_empty() {
            vec![Variant {
                name: "default".into(),
                template: DEFAULT_TEMPLATE.into(),
            }]
        } else {
            cfg.bandit
                .variants
                .iter()
                .map(|v| Variant {
                    name: v.name.clone(),
                    template: v.template.clone(),
                })
                .collect()
        };
        let mut bandit = BanditConfig::new(variants.len(), features.len());
        bandit.kernel = cfg.bandit.kernel;
        bandit.obs_noise = cfg.bandit.obs_noise;
        bandit
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("bandit: {e}")))?;

        let brainstorm = BrainstormConfig {
            alpha: cfg.brainstorm.alpha,
            epsilon: cfg.brainstorm.epsilon,
        };
        brainstorm
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("brainstorm: {e}")))?;
        let distinct: BTreeSet<&String> = cfg.brainstorm.outcomes.iter().collect();
        if distinct.len() != cfg.brainstorm.outcomes.len() {
            return invalid("brainstorm.outcomes must be distinct");
        }

        let speedup = build_speedup(cfg, brainstorm.alpha)?;
        let synthetic = build_synthetic(cfg)?;
        let robustness = cfg.robustness.clone().unwrap_or_default();
        robustness
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("robustness: {e}")))?;

        let s = &cfg.scenario;
        if s.max_rounds == 0 || s.convergence_window < 2 || s.qa_max_iter == 0 || s.stm_capacity == 0 {
            return invalid("scenario: max_rounds, qa_max_iter, stm_capacity >= 1 and convergence_window >= 2");
        }
        if s.tol.is_nan() || s.tol <= 0.0 {
            return invalid("scenario.tol must be positive");
        }

        Ok(Self {
            name: s.name.clone(),
            roles,
            game,
            context_schedule,
            kb,
            decision_fields: cfg.kb.decision_fields.clone(),
            bandit,
            features,
            variants,
            brainstorm,
            outcomes: cfg.brainstorm.outcomes.clone(),
            tools,
            backends,
            limits: Limits {
                max_rounds: s.max_rounds,
                convergence_window: s.convergence_window,
                stm_capacity: s.stm_capacity,
                qa_max_iter: s.qa_max_iter,
                tol: s.tol,
                max_iter: s.max_iter,
            },
            speedup,
            synthetic,
            robustness,
            hash,
        })
    }

    pub fn roles_at(&self, level: usize) -> impl Iterator<Item = (usize, &RoleSpec)> {
        self.roles.iter().enumerate().filter(move |(_, r)| r.level == level)
    }

    pub fn num_levels(&self) -> usize {
        self.game.num_levels()
    }
}

fn build_game(cfg: &ScenarioConfig) -> Result<GameSpec, ConfigError> {
    let g = &cfg.game;
    let levels: Vec<Level> = g
        .levels
        .iter()
        .map(|l| Level {
            label: l.label.clone(),
            actions: l.actions.clone(),
        })
        .collect();
    let m = levels.len();
    let n_profiles: usize = levels.iter().map(|l| l.actions.len()).product();
    let mut table: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for row in &g.payoffs {
        let c = g
            .contexts
            .iter()
            .position(|x| x == &row.context)
            .ok_or_else(|| ConfigError::Invalid(format!("game.payoffs: unknown context `{}`", row.context)))?;
        if row.profile.len() != m || row.utility.len() != m {
            return invalid(format!(
                "game.payoffs: profile and utility need {m} entries, got {} and {}",
                row.profile.len(),
                row.utility.len()
            ));
        }
        let mut index = 0;
        for (l, label) in row.profile.iter().enumerate() {
            let a = levels[l].actions.iter().position(|x| x == label).ok_or_else(|| {
                ConfigError::Invalid(format!("game.payoffs: `{label}` is not an action of level `{}`", levels[l].label))
            })?;
            index = index * levels[l].actions.len() + a;
        }
        if table.insert((c, index), row.utility.clone()).is_some() {
            return invalid(format!("game.payoffs: duplicate row for {:?} in `{}`", row.profile, row.context));
        }
    }
    let expected = g.contexts.len() * n_profiles;
    if table.len() != expected {
        return invalid(format!(
            "game.payoffs: {} of {expected} (context, profile) rows given",
            table.len()
        ));
    }
    let utility: Vec<f64> = table.into_values().flatten().collect();
    GameSpec::new(levels, g.contexts.clone(), utility).map_err(|e| ConfigError::Invalid(format!("game: {e}")))
}

fn build_roles(
    cfg: &ScenarioConfig,
    enabled: &BTreeSet<String>,
    backends: &BTreeMap<String, BackendSpec>,
) -> Result<Vec<RoleSpec>, ConfigError> {
    let labels: Vec<&str> = cfg.roles.iter().map(|r| r.label.as_str()).collect();
    let unique: BTreeSet<&str> = labels.iter().copied().collect();
    if unique.len() != labels.len() {
        return invalid("role labels must be unique");
    }
    let mut out = Vec::with_capacity(cfg.roles.len());
    for r in &cfg.roles {
        let ctx = |m: String| ConfigError::Invalid(format!("role `{}`: {m}", r.label));
        let state_ix = |s: &str| {
            r.states
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| ctx(format!("unknown state `{s}`")))
        };
        let action_ix = |a: &str| {
            r.actions
                .iter()
                .position(|x| x.name == a)
                .ok_or_else(|| ctx(format!("unknown action `{a}`")))
        };
        if let Some(sup) = &r.reports_to {
            let Some(parent) = cfg.roles.iter().find(|p| &p.label == sup) else {
                return Err(ctx(format!("reports_to `{sup}` is not a role")));
            };
            if parent.level > r.level {
                return Err(ctx(format!("reports to `{sup}`, which sits at a lower level")));
            }
        }
        if let Some(b) = &r.backend {
            if !backends.contains_key(b) {
                return Err(ctx(format!("backend `{b}` is not defined")));
            }
        }
        let subordinates: Vec<String> = cfg
            .roles
            .iter()
            .filter(|c| c.reports_to.as_deref() == Some(r.label.as_str()))
            .map(|c| c.label.clone())
            .collect();

        let mut effects = Vec::with_capacity(r.actions.len());
        for a in &r.actions {
            let e = match a.effect {
                EffectKind::Idle => Effect::Idle,
                EffectKind::Work => Effect::Work,
                EffectKind::Delegate => {
                    if subordinates.is_empty() {
                        return Err(ctx(format!("action `{}` delegates but nobody reports to this role", a.name)));
                    }
                    Effect::Delegate
                }
                EffectKind::Report => {
                    if r.reports_to.is_none() {
                        return Err(ctx(format!("action `{}` reports but reports_to is unset", a.name)));
                    }
                    Effect::Report
                }
                EffectKind::Tool => {
                    let Some(name) = &a.tool else {
                        return Err(ctx(format!("tool action `{}` names no tool", a.name)));
                    };
                    if !enabled.contains(name) {
                        return Err(ctx(format!("action `{}` uses tool `{name}`, which is not enabled", a.name)));
                    }
                    Effect::Tool {
                        name: name.clone(),
                        inputs: a.inputs.clone(),
                    }
                }
            };
            if a.effect != EffectKind::Tool && (a.tool.is_some() || !a.inputs.is_empty()) {
                return Err(ctx(format!("action `{}` has tool settings but is not a tool action", a.name)));
            }
            effects.push(e);
        }

        let (n, k) = (r.states.len(), r.actions.len());
        let mut admissible = vec![Vec::new(); n];
        let mut rates = vec![vec![vec![0.0; n]; k]; n];
        let mut rewards = vec![vec![0.0; k]; n];
        let mut durations = vec![vec![1.0; k]; n];
        for t in &r.transitions {
            let (s, a) = (state_ix(&t.state)?, action_ix(&t.action)?);
            if admissible[s].contains(&a) {
                return Err(ctx(format!("duplicate transition for ({}, {})", t.state, t.action)));
            }
            admissible[s].push(a);
            rewards[s][a] = t.reward;
            // tool latency occupies the action's duration
            let latency = match &effects[a] {
                Effect::Tool { name, .. } => cfg.tools.latency.get(name).map_or(0.0, LatencyModel::mean),
                _ => 0.0,
            };
            durations[s][a] = t.duration + latency;
            for (target, q) in &t.to {
                rates[s][a][state_ix(target)?] = *q;
            }
        }
        for adm in &mut admissible {
            adm.sort_unstable();
        }
        let spec = RoleModelSpec {
            states: r.states.clone(),
            actions: r.actions.iter().map(|a| a.name.clone()).collect(),
            admissible,
            rates,
            rewards,
            durations,
            discount: r.discount,
            reward_form: r.reward_form,
        };
        let model = RoleModel::try_from(spec).map_err(|e| ctx(e.to_string()))?;
        out.push(RoleSpec {
            label: r.label.clone(),
            level: r.level,
            reports_to: r.reports_to.clone(),
            subordinates,
            model,
            initial_state: state_ix(&r.initial_state)?,
            on_delegated: r.on_delegated.as_deref().map(state_ix).transpose()?,
            on_report: r.on_report.as_deref().map(state_ix).transpose()?,
            effects,
            backend: r.backend.clone(),
        });
    }
    Ok(out)
}
