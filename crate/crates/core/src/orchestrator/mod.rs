//! The round loop: vertical Stackelberg/CTMDP pass, gated brainstorming,
//! QA against memory and rules, then Thompson prompt selection.

mod log;
mod scenario;
mod tree;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::distr::{weighted::WeightedIndex, Distribution as _};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::bandit::{select_arm, ArmPosterior, BanditError};
use crate::config::ConfigError;
use crate::ctmdp::{greedy_policy, solve_value_iteration, CtmdpError, Policy, DEFAULT_TIE_TOL};
use crate::game::{label_path, solve_spe, LabeledPath, SolutionPath};
use crate::infotheory::{renyi_divergence, Distribution};
use crate::memory::{
    check, correction_loop, CorrectionError, CorrectionOutcome, EntryKind, LongTermMemory, MemoryEntry, MemoryError,
    MemoryStore, Proposal, Record, Value, Violation,
};
use crate::tools::{CompletionBackend, CompletionRequest, LlmError, Registry};

pub use log::{Event, EventLog, LogError, LogHeader, Phase};
pub use scenario::{BackendSpec, Effect, Feature, Limits, RoleSpec, Scenario, SpeedupSetup, SyntheticSetup, ToolSetup, Variant};
pub use tree::{report_chain, DelegationTree, TreeNode};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("role `{role}`: {source}")]
    Ctmdp {
        role: String,
        #[source]
        source: CtmdpError,
    },
    #[error("round {round}, {phase}: {message}")]
    Phase {
        round: usize,
        phase: &'static str,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Escalation {
    pub round: usize,
    pub role: String,
    pub unresolved: Vec<Violation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolePlan {
    pub level: usize,
    pub state: String,
    pub action: String,
    pub decision: String,
    pub proposal: Option<Record>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub rounds: usize,
    pub converged: bool,
    pub context: String,
    pub roles: BTreeMap<String, RolePlan>,
    pub solution: LabeledPath,
    pub escalations: Vec<Escalation>,
    /// Prompt variant used in each round.
    pub variants: Vec<String>,
    pub tool_invocations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: usize,
    pub context: usize,
    pub profile: Vec<(String, String)>,
    pub reward: Option<f64>,
    pub converged: bool,
}

/// Finished run: plan, log and the long-term memory it wrote.
#[derive(Debug)]
pub struct Episode {
    pub plan: Plan,
    pub log: EventLog,
    pub ltm: LongTermMemory,
}

#[derive(Debug, Error)]
enum ReviseError {
    #[error("backend: {0}")]
    Backend(#[from] LlmError),
    #[error("unparseable revision: {0}")]
    Parse(String),
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn num(x: f64) -> Json {
    if x.is_finite() {
        json!(x)
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

/// Splits a JSON object response into proposal fields and an optional
/// `belief` map.
fn parse_response(text: &str) -> Result<(Record, Option<BTreeMap<String, f64>>), String> {
    let v: Json = serde_json::from_str(text.trim()).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("response is not a JSON object")?;
    let mut fields = Record::new();
    let mut belief = None;
    for (k, v) in obj {
        if k == "belief" {
            let map = v.as_object().ok_or("belief must be an object")?;
            let mut b = BTreeMap::new();
            for (label, p) in map {
                b.insert(label.clone(), p.as_f64().ok_or("belief weights must be numbers")?);
            }
            belief = Some(b);
            continue;
        }
        let value = match v {
            Json::Number(n) => Value::Num(n.as_f64().unwrap_or(f64::NAN)),
            Json::String(s) => Value::Label(s.clone()),
            other => return Err(format!("field `{k}` has unsupported value {other}")),
        };
        fields.insert(k.clone(), value);
    }
    Ok((fields, belief))
}

struct RoundProposal {
    role: usize,
    proposal: Proposal,
    belief: Option<BTreeMap<String, f64>>,
}

pub struct Orchestrator<'a> {
    sc: &'a Scenario,
    seed: u64,
    policies: Vec<Policy>,
    path: SolutionPath,
    states: Vec<usize>,
    open: Vec<BTreeSet<String>>,
    backends: BTreeMap<String, Arc<dyn CompletionBackend>>,
    registry: Registry,
    log: EventLog,
    memory: MemoryStore,
    arms: Vec<ArmPosterior>,
    arm: usize,
    x: Vec<f64>,
    priors: Vec<Option<Distribution>>,
    profiles: Vec<Vec<(String, String)>>,
    last_actions: Vec<usize>,
    last_proposals: BTreeMap<usize, Record>,
    escalations: Vec<Escalation>,
    variants_used: Vec<String>,
    round: usize,
    converged: bool,
    transitions_rng: ChaCha8Rng,
    tools_rng: ChaCha8Rng,
    bandit_rng: ChaCha8Rng,
}

impl<'a> Orchestrator<'a> {
    pub fn new(sc: &'a Scenario, seed: u64) -> Result<Self, OrchestratorError> {
        let mut policies = Vec::with_capacity(sc.roles.len());
        for r in &sc.roles {
            let v = solve_value_iteration(&r.model, sc.limits.tol, sc.limits.max_iter).map_err(|source| {
                OrchestratorError::Ctmdp {
                    role: r.label.clone(),
                    source,
                }
            })?;
            policies.push(greedy_policy(&r.model, &v, DEFAULT_TIE_TOL));
        }
        let mut backends = BTreeMap::new();
        for (i, (name, spec)) in sc.backends.iter().enumerate() {
            backends.insert(name.clone(), spec.instantiate(seed, i as u64)?);
        }
        let priors = (0..sc.num_levels())
            .map(|_| {
                if sc.outcomes.is_empty() {
                    None
                } else {
                    Some(Distribution::uniform(sc.outcomes.clone()).expect("non-empty outcomes"))
                }
            })
            .collect();
        let mut o = Self {
            sc,
            seed,
            policies,
            path: solve_spe(&sc.game),
            states: sc.roles.iter().map(|r| r.initial_state).collect(),
            open: vec![BTreeSet::new(); sc.roles.len()],
            backends,
            registry: sc.tools.registry(),
            log: EventLog::new(seed, sc.hash.clone()),
            memory: MemoryStore::new(sc.limits.stm_capacity, false),
            arms: vec![ArmPosterior::new(); sc.bandit.num_arms],
            arm: 0,
            x: Vec::new(),
            priors,
            profiles: Vec::new(),
            last_actions: vec![0; sc.roles.len()],
            last_proposals: BTreeMap::new(),
            escalations: Vec::new(),
            variants_used: Vec::new(),
            round: 0,
            converged: false,
            transitions_rng: rng_stream(seed, 1),
            tools_rng: rng_stream(seed, 2),
            bandit_rng: rng_stream(seed, 3),
        };
        o.x = o.features(1);
        o.arm = select_arm(&o.arms, &sc.bandit, &o.x, &mut o.bandit_rng).map_err(|e| o.bandit_err(e))?;
        Ok(o)
    }

    fn bandit_err(&self, e: BanditError) -> OrchestratorError {
        OrchestratorError::Phase {
            round: self.round,
            phase: "prompt-opt",
            message: e.to_string(),
        }
    }

    fn context_for(&self, round: usize) -> usize {
        let s = &self.sc.context_schedule;
        s[(round - 1) % s.len()]
    }

    fn features(&self, round: usize) -> Vec<f64> {
        let n_ctx = self.sc.game.contexts().len();
        self.sc
            .features
            .iter()
            .map(|f| match f {
                Feature::Round => round as f64 / self.sc.limits.max_rounds as f64,
                Feature::Context => {
                    if n_ctx > 1 {
                        self.context_for(round) as f64 / (n_ctx - 1) as f64
                    } else {
                        0.0
                    }
                }
                Feature::Bias => 1.0,
            })
            .collect()
    }

    pub fn is_done(&self) -> bool {
        self.converged || self.round >= self.sc.limits.max_rounds
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    fn decision_label(&self, ctx: usize, level: usize) -> String {
        let lvl = &self.sc.game.levels()[level - 1];
        lvl.actions[self.path.decision[ctx][level - 1]].clone()
    }

    fn render(&self, role: usize, action: usize, decision: &str, ctx: usize) -> String {
        let r = &self.sc.roles[role];
        let variant = &self.sc.variants[self.arm];
        variant
            .template
            .replace("{variant}", &variant.name)
            .replace("{role}", &r.label)
            .replace("{level}", &r.level.to_string())
            .replace("{state}", r.model.state_label(self.states[role]))
            .replace("{action}", r.model.action_label(action))
            .replace("{decision}", decision)
            .replace("{round}", &self.round.to_string())
            .replace("{context}", &self.sc.game.contexts()[ctx])
    }

    fn complete(&self, role: usize, prompt: &str) -> Option<Result<String, LlmError>> {
        let name = self.sc.roles[role].backend.as_ref()?;
        let spec = &self.sc.backends[name];
        let req = CompletionRequest::user(spec.model_name(), prompt, spec.temperature());
        Some(self.backends[name].complete(&req))
    }

    fn vertical(&mut self, ctx: usize) -> Result<Vec<RoundProposal>, OrchestratorError> {
        let round = self.round;
        let mut proposals = Vec::new();
        for level in 1..=self.sc.num_levels() {
            let decision = self.decision_label(ctx, level);
            let members: Vec<usize> = self.sc.roles_at(level).map(|(i, _)| i).collect();
            for i in members {
                let role = &self.sc.roles[i];
                let s = self.states[i];
                let a = self.policies[i].choice[s];
                self.last_actions[i] = a;
                self.log.emit(
                    round,
                    Phase::Vertical,
                    &role.label,
                    "action",
                    json!({
                        "state": role.model.state_label(s),
                        "action": role.model.action_label(a),
                        "decision": decision,
                        "context": self.sc.game.contexts()[ctx],
                    }),
                );
                let mut failed = false;
                match &role.effects[a] {
                    Effect::Idle | Effect::Work => {}
                    Effect::Delegate => {
                        for sub in &role.subordinates {
                            self.open[i].insert(sub.clone());
                            let j = self.sc.roles.iter().position(|r| &r.label == sub).expect("validated");
                            if let Some(st) = self.sc.roles[j].on_delegated {
                                self.states[j] = st;
                            }
                        }
                        self.log
                            .emit(round, Phase::Vertical, &role.label, "delegate", json!({ "to": role.subordinates }));
                    }
                    Effect::Report => {
                        let sup = role.reports_to.clone().expect("validated");
                        let j = self.sc.roles.iter().position(|r| r.label == sup).expect("validated");
                        self.open[j].remove(&role.label);
                        if self.open[j].is_empty() {
                            if let Some(st) = self.sc.roles[j].on_report {
                                self.states[j] = st;
                            }
                        }
                        self.log.emit(round, Phase::Vertical, &role.label, "report", json!({ "to": sup }));
                    }
                    Effect::Tool { name, inputs } => {
                        let mut sink = log::ToolLogger {
                            log: &mut self.log,
                            round,
                            role: &role.label,
                        };
                        let res = self.registry.invoke(name, inputs, &mut self.tools_rng, &mut sink);
                        failed = !res.is_ok();
                    }
                }
                // failed tool calls are zero-reward self-transitions
                let (next, reward) = if failed {
                    (s, 0.0)
                } else {
                    let row = role.model.rates(s, a);
                    let next = if row.iter().sum::<f64>() > 0.0 {
                        WeightedIndex::new(row).expect("non-negative rates").sample(&mut self.transitions_rng)
                    } else {
                        s
                    };
                    (next, role.model.immediate_reward(s, a))
                };
                // an override applied during this step (delegation to self) wins
                if self.states[i] == s {
                    self.states[i] = next;
                }
                self.log.emit(
                    round,
                    Phase::Vertical,
                    &role.label,
                    "transition",
                    json!({
                        "from": role.model.state_label(s),
                        "to": role.model.state_label(self.states[i]),
                        "reward": num(reward),
                        "tool_failed": failed,
                    }),
                );
                self.memory
                    .remember(MemoryEntry {
                        round: round as u64,
                        role: role.label.clone(),
                        kind: EntryKind::Action,
                        payload: [
                            ("action".to_string(), Value::Label(role.model.action_label(a).to_string())),
                            ("reward".to_string(), Value::Num(reward)),
                        ]
                        .into_iter()
                        .collect(),
                        timestamp: round as u64,
                    })
                    .map_err(|e| self.phase_err("vertical", e))?;

                let prompt = self.render(i, a, &decision, ctx);
                let Some(reply) = self.complete(i, &prompt) else {
                    continue;
                };
                let variant = self.sc.variants[self.arm].name.clone();
                let parsed = reply.map_err(|e| e.to_string()).and_then(|t| parse_response(&t));
                match parsed {
                    Ok((mut fields, belief)) => {
                        let level_label = self.sc.game.levels()[level - 1].label.clone();
                        fields.insert(level_label, Value::Label(decision.clone()));
                        self.log.emit(
                            round,
                            Phase::Vertical,
                            &role.label,
                            "proposal",
                            json!({ "variant": variant, "fields": fields, "belief": belief }),
                        );
                        proposals.push(RoundProposal {
                            role: i,
                            proposal: Proposal {
                                role: role.label.clone(),
                                fields,
                                provenance: vec![round as u64],
                            },
                            belief,
                        });
                    }
                    Err(e) => {
                        self.log
                            .emit(round, Phase::Vertical, &role.label, "backend_error", json!({ "variant": variant, "error": e }));
                    }
                }
            }
        }
        Ok(proposals)
    }

    fn phase_err(&self, phase: &'static str, e: impl std::fmt::Display) -> OrchestratorError {
        OrchestratorError::Phase {
            round: self.round,
            phase,
            message: e.to_string(),
        }
    }

    fn brainstorm(&mut self, proposals: &mut [RoundProposal]) {
        let round = self.round;
        for level in 1..=self.sc.num_levels() {
            let label = self.sc.game.levels()[level - 1].label.clone();
            let Some(prior) = self.priors[level - 1].clone() else {
                self.log
                    .emit(round, Phase::Brainstorm, &label, "no_beliefs", json!({ "reason": "no outcomes configured" }));
                continue;
            };
            let mut parts = Vec::new();
            for p in proposals.iter().filter(|p| self.sc.roles[p.role].level == level) {
                let Some(b) = &p.belief else { continue };
                let weights: Vec<f64> = self.sc.outcomes.iter().map(|o| b.get(o).copied().unwrap_or(0.0)).collect();
                match Distribution::from_weights(self.sc.outcomes.clone(), weights) {
                    Ok(d) => parts.push(d),
                    Err(e) => self.log.emit(
                        round,
                        Phase::Brainstorm,
                        &self.sc.roles[p.role].label,
                        "belief_invalid",
                        json!({ "error": e.to_string() }),
                    ),
                }
            }
            if parts.is_empty() {
                self.log
                    .emit(round, Phase::Brainstorm, &label, "no_beliefs", json!({ "reason": "no proposal beliefs" }));
                continue;
            }
            let posterior = Distribution::mixture(&parts).expect("same outcome labels");
            let d = renyi_divergence(&posterior, &prior, self.sc.brainstorm.alpha).expect("validated alpha");
            if d >= self.sc.brainstorm.epsilon {
                let consensus = posterior.mode().to_string();
                for p in proposals.iter_mut().filter(|p| self.sc.roles[p.role].level == level) {
                    p.proposal
                        .fields
                        .insert("consensus".into(), Value::Label(consensus.clone()));
                }
                self.log.emit(
                    round,
                    Phase::Brainstorm,
                    &label,
                    "merge",
                    json!({
                        "divergence": num(d),
                        "epsilon": self.sc.brainstorm.epsilon,
                        "consensus": consensus,
                        "posterior": posterior.probs(),
                        "proposals": parts.len(),
                    }),
                );
                self.priors[level - 1] = Some(posterior);
            } else {
                self.log.emit(
                    round,
                    Phase::Brainstorm,
                    &label,
                    "gate_skipped",
                    json!({ "divergence": num(d), "epsilon": self.sc.brainstorm.epsilon, "proposals": parts.len() }),
                );
            }
        }
    }

    /// Returns pooled `(passed, evaluated)` counts of the first checks.
    fn qa(&mut self, proposals: Vec<RoundProposal>) -> Result<(usize, usize), OrchestratorError> {
        let round = self.round;
        let (mut passed, mut evaluated) = (0, 0);
        let mut decisions = Vec::new();
        if proposals.is_empty() {
            self.log.emit(round, Phase::Qa, "orchestrator", "idle", json!({ "proposals": 0 }));
        }
        for rp in proposals {
            let i = rp.role;
            let role = &self.sc.roles[i];
            let first = check(&rp.proposal, &self.sc.kb, &self.memory.ltm).map_err(|e| self.phase_err("qa", e))?;
            evaluated += first.evaluated;
            passed += first.evaluated - first.len();
            let fixed: Vec<(String, Value)> = [self.sc.game.levels()[role.level - 1].label.clone(), "consensus".into()]
                .into_iter()
                .filter_map(|k| rp.proposal.fields.get(&k).map(|v| (k, v.clone())))
                .collect();
            let backend = role.backend.clone();
            let label = role.label.clone();
            let revise = |p: &Proposal, vs: &[Violation]| -> Result<Proposal, ReviseError> {
                let msgs: Vec<&str> = vs.iter().map(|v| v.message.as_str()).collect();
                let prompt = format!(
                    "REVISE role={} violations={} proposal={}",
                    label,
                    msgs.join("; "),
                    serde_json::to_string(&p.fields).expect("fields serialize")
                );
                let name = backend.as_ref().expect("proposals come from backends");
                let spec = &self.sc.backends[name];
                let req = CompletionRequest::user(spec.model_name(), &prompt, spec.temperature());
                let text = self.backends[name].complete(&req)?;
                let (mut fields, _) = parse_response(&text).map_err(ReviseError::Parse)?;
                for (k, v) in &fixed {
                    fields.insert(k.clone(), v.clone());
                }
                Ok(Proposal {
                    role: p.role.clone(),
                    fields,
                    provenance: p.provenance.clone(),
                })
            };
            let result = correction_loop(rp.proposal, revise, &self.sc.kb, &self.memory.ltm, self.sc.limits.qa_max_iter);
            match result {
                Ok((final_p, trace)) => {
                    let outcome = match &trace.outcome {
                        CorrectionOutcome::Resolved => "resolved",
                        CorrectionOutcome::Escalated { .. } => "escalated",
                    };
                    self.log.emit(
                        round,
                        Phase::Qa,
                        &label,
                        "check",
                        json!({
                            "violations": first.violations,
                            "evaluated": first.evaluated,
                            "pass_fraction": first.pass_fraction(),
                            "iterations": trace.iterations.len(),
                            "outcome": outcome,
                        }),
                    );
                    match trace.outcome {
                        CorrectionOutcome::Resolved => {
                            let payload: Record = self
                                .sc
                                .decision_fields
                                .iter()
                                .filter_map(|f| final_p.fields.get(f).map(|v| (f.clone(), v.clone())))
                                .collect();
                            if !payload.is_empty() {
                                decisions.push(MemoryEntry {
                                    round: round as u64,
                                    role: label.clone(),
                                    kind: EntryKind::Decision,
                                    payload,
                                    timestamp: round as u64,
                                });
                            }
                        }
                        CorrectionOutcome::Escalated { unresolved } => {
                            self.log.emit(round, Phase::Qa, &label, "escalated", json!({ "unresolved": unresolved }));
                            self.escalations.push(Escalation {
                                round,
                                role: label.clone(),
                                unresolved,
                                error: None,
                            });
                        }
                    }
                    self.last_proposals.insert(i, final_p.fields);
                }
                Err(CorrectionError::Revision { source, trace }) => {
                    let unresolved = trace.last().cloned().unwrap_or_default();
                    self.log.emit(
                        round,
                        Phase::Qa,
                        &label,
                        "revision_failed",
                        json!({ "error": source.to_string(), "iterations": trace.len() }),
                    );
                    self.escalations.push(Escalation {
                        round,
                        role: label,
                        unresolved,
                        error: Some(source.to_string()),
                    });
                }
                Err(CorrectionError::Check(e)) => return Err(self.phase_err("qa", e)),
            }
        }
        for d in decisions {
            self.memory.ltm.append(d).map_err(|e: MemoryError| self.phase_err("qa", e))?;
        }
        Ok((passed, evaluated))
    }

    fn prompt_opt(&mut self, passed: usize, evaluated: usize) -> Result<Option<f64>, OrchestratorError> {
        let round = self.round;
        let variant = self.sc.variants[self.arm].name.clone();
        let reward = if evaluated == 0 {
            self.log.emit(
                round,
                Phase::PromptOpt,
                "orchestrator",
                "update_skipped",
                json!({ "arm": self.arm, "variant": variant, "reason": "no checks evaluated" }),
            );
            None
        } else {
            let r = passed as f64 / evaluated as f64;
            let x = self.x.clone();
            let out = self.arms[self.arm]
                .update(&self.sc.bandit, &x, r)
                .map_err(|e| self.bandit_err(e))?;
            self.log.emit(
                round,
                Phase::PromptOpt,
                "orchestrator",
                "update",
                json!({ "arm": self.arm, "variant": variant, "reward": r, "clamped": out.clamped }),
            );
            Some(r)
        };
        self.x = self.features(round + 1);
        self.arm = select_arm(&self.arms, &self.sc.bandit, &self.x, &mut self.bandit_rng).map_err(|e| self.bandit_err(e))?;
        self.log.emit(
            round,
            Phase::PromptOpt,
            "orchestrator",
            "select",
            json!({ "arm": self.arm, "variant": self.sc.variants[self.arm].name, "for_round": round + 1 }),
        );
        Ok(reward)
    }

    pub fn step_round(&mut self) -> Result<RoundOutcome, OrchestratorError> {
        self.round += 1;
        let round = self.round;
        let ctx = self.context_for(round);
        self.variants_used.push(self.sc.variants[self.arm].name.clone());

        let mut proposals = self.vertical(ctx)?;
        self.brainstorm(&mut proposals);
        let (passed, evaluated) = self.qa(proposals)?;
        let reward = self.prompt_opt(passed, evaluated)?;

        let profile: Vec<(String, String)> = self
            .sc
            .roles
            .iter()
            .enumerate()
            .map(|(i, r)| (r.model.action_label(self.last_actions[i]).to_string(), self.decision_label(ctx, r.level)))
            .collect();
        self.profiles.push(profile.clone());
        let w = self.sc.limits.convergence_window;
        self.converged = self.profiles.len() >= w && self.profiles[self.profiles.len() - w..].windows(2).all(|p| p[0] == p[1]);
        let shown: BTreeMap<&str, String> = self
            .sc
            .roles
            .iter()
            .zip(&profile)
            .map(|(r, (a, d))| (r.label.as_str(), format!("{a}/{d}")))
            .collect();
        self.log.emit(
            round,
            Phase::Convergence,
            "orchestrator",
            "status",
            json!({ "converged": self.converged, "profile": shown }),
        );
        Ok(RoundOutcome {
            round,
            context: ctx,
            profile,
            reward,
            converged: self.converged,
        })
    }

    pub fn run(mut self) -> Result<Episode, OrchestratorError> {
        while !self.is_done() {
            self.step_round()?;
        }
        let ctx = self.context_for(self.round.max(1));
        let roles = self
            .sc
            .roles
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    r.label.clone(),
                    RolePlan {
                        level: r.level,
                        state: r.model.state_label(self.states[i]).to_string(),
                        action: r.model.action_label(self.last_actions[i]).to_string(),
                        decision: self.decision_label(ctx, r.level),
                        proposal: self.last_proposals.get(&i).cloned(),
                    },
                )
            })
            .collect();
        let plan = Plan {
            scenario: self.sc.name.clone(),
            scenario_hash: self.sc.hash.clone(),
            seed: self.seed,
            rounds: self.round,
            converged: self.converged,
            context: self.sc.game.contexts()[ctx].clone(),
            roles,
            solution: label_path(&self.sc.game, &self.path),
            escalations: self.escalations,
            variants: self.variants_used,
            tool_invocations: self.registry.invocation_count(),
        };
        Ok(Episode {
            plan,
            log: self.log,
            ltm: self.memory.ltm,
        })
    }
}

pub fn run_episode(sc: &Scenario, seed: u64) -> Result<(Plan, EventLog), OrchestratorError> {
    let ep = Orchestrator::new(sc, seed)?.run()?;
    Ok((ep.plan, ep.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;

    const SOLO: &str = r#"
[scenario]
name = "solo"
[game]
contexts = ["c"]
levels = [{ label = "plan", actions = ["go"] }]
payoffs = [{ context = "c", profile = ["go"], utility = [1.0] }]
[[roles]]
label = "solo"
level = 1
states = ["s"]
initial_state = "s"
actions = [{ name = "work", effect = "work" }]
transitions = [{ state = "s", action = "work", reward = 1.0, duration = 1.0 }]
"#;

    fn scenario(text: &str) -> Scenario {
        Scenario::from_config(&ScenarioConfig::parse(text).unwrap()).unwrap()
    }

    #[test]
    fn degenerate_converges_in_two_rounds() {
        let sc = scenario(SOLO);
        let (plan, log) = run_episode(&sc, 1).unwrap();
        assert!(plan.converged);
        assert_eq!(plan.rounds, 2);
        assert_eq!(plan.roles["solo"].action, "work");
        let tree = report_chain(&log);
        assert_eq!(tree.nodes().len(), 1);
        for r in 1..=2 {
            assert_eq!(
                log.phase_sequence(r),
                vec![Phase::Vertical, Phase::Brainstorm, Phase::Qa, Phase::PromptOpt, Phase::Convergence]
            );
        }
    }

    fn peers(epsilon: f64, same: bool) -> String {
        let pm_belief = if same { "0.5" } else { "0.9" };
        format!(
            r#"
[scenario]
name = "peers"
max_rounds = 1
[game]
contexts = ["c"]
levels = [{{ label = "plan", actions = ["go"] }}]
payoffs = [{{ context = "c", profile = ["go"], utility = [1.0] }}]
[backends.a]
kind = "mock"
fallback = '{{"cost": 120, "belief": {{"x": 0.5, "y": 0.5}}}}'
[backends.b]
kind = "mock"
fallback = '{{"cost": 50, "belief": {{"x": {pm_belief}, "y": 0.1}}}}'
[kb]
fields = ["cost"]
rules = [{{ id = "budget", scope = "global", predicate = {{ type = "compare", field = "cost", op = "<=", value = 100 }}, message = "over budget" }}]
[brainstorm]
epsilon = {epsilon}
outcomes = ["x", "y"]
[[roles]]
label = "A"
level = 1
backend = "a"
states = ["s"]
initial_state = "s"
actions = [{{ name = "work", effect = "work" }}]
transitions = [{{ state = "s", action = "work", reward = 1.0, duration = 1.0 }}]
[[roles]]
label = "B"
level = 1
backend = "b"
states = ["s"]
initial_state = "s"
actions = [{{ name = "work", effect = "work" }}]
transitions = [{{ state = "s", action = "work", reward = 1.0, duration = 1.0 }}]
"#
        )
    }

    #[test]
    fn zero_epsilon_always_merges() {
        let sc = scenario(&peers(0.0, true));
        let (_, log) = run_episode(&sc, 3).unwrap();
        assert!(log.events().iter().any(|e| e.kind == "merge"));
    }

    #[test]
    fn identical_beliefs_skip_the_gate() {
        // both peers hold the uniform prior
        let text = peers(0.1, true).replace("\"x\": 0.5, \"y\": 0.1", "\"x\": 0.5, \"y\": 0.5");
        let sc = scenario(&text);
        let (_, log) = run_episode(&sc, 3).unwrap();
        assert!(log.events().iter().any(|e| e.kind == "gate_skipped"));
        assert!(!log.events().iter().any(|e| e.kind == "merge"));
    }

    #[test]
    fn qa_violation_lowers_the_reward() {
        let sc = scenario(&peers(0.0, false));
        let mut o = Orchestrator::new(&sc, 5).unwrap();
        let out = o.step_round().unwrap();
        // A's cost breaks the budget rule, B's does not
        assert_eq!(out.reward, Some(0.5));
        let seq = o.log().phase_sequence(1);
        let qa = seq.iter().position(|p| *p == Phase::Qa).unwrap();
        let po = seq.iter().position(|p| *p == Phase::PromptOpt).unwrap();
        assert!(qa < po);
        // the mock cannot revise, so A escalates
        let ep = o.run().unwrap();
        assert_eq!(ep.plan.escalations.len(), 1);
    }
}
