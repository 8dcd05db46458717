//! Finite extended continuous-time MDP for a single role.
//!
//! A role is described by states, actions, transition rates `q(s,a,s')`,
//! reward rates `r(s,a)`, a continuous-time discount rate `γ` and an action
//! duration `ω(s,a)`. The optimality operator is
//!
//! ```text
//! (T v)(s) = max_a [ R(s,a) + (1 - e^{-γ ω(s,a)}) / γ · Σ_{s'} q(s,a,s') v(s') ]
//! ```
//!
//! with `R(s,a) = r(s,a)/γ · (1 - e^{-γ ω(s,a)})` for the discounted reward
//! stream, or `R(s,a) = r(s,a) · ω(s,a)` for the undiscounted form. `T` is a
//! sup-norm contraction with factor
//! `β = max_{s,a} (1 - e^{-γ ω(s,a)}) / γ · Σ_{s'} q(s,a,s')`, and models with
//! `β >= 1` are rejected at construction.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CtmdpError {
    #[error("model rejected: {0}")]
    Invalid(ValidationReport),
    #[error("value vector has {got} entries, model has {expected} states")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("value iteration did not reach tol {tol:e} in {} iterations (residual {:e})", last.iterations, last.residual)]
    NotConverged { tol: f64, last: ValueFunction },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardForm {
    /// `r/γ · (1 - e^{-γω})`: the reward stream discounted over the action's duration.
    #[default]
    Discounted,
    /// `r · ω`: reward rate times duration, no discounting inside the action.
    Undiscounted,
}

/// Raw, unvalidated role model. Tables are dense `|S| × |A|` (rates
/// `|S| × |A| × |S|`); entries for inadmissible pairs are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleModelSpec {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    /// Admissible action indices per state.
    pub admissible: Vec<Vec<usize>>,
    pub rates: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    pub durations: Vec<Vec<f64>>,
    pub discount: f64,
    #[serde(default)]
    pub reward_form: RewardForm,
}

impl RoleModelSpec {
    /// Dense spec where every action is admissible in every state.
    pub fn dense(
        n_states: usize,
        n_actions: usize,
        rates: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        durations: Vec<Vec<f64>>,
        discount: f64,
        reward_form: RewardForm,
    ) -> Self {
        Self {
            states: (0..n_states).map(|s| format!("s{s}")).collect(),
            actions: (0..n_actions).map(|a| format!("a{a}")).collect(),
            admissible: vec![(0..n_actions).collect(); n_states],
            rates,
            rewards,
            durations,
            discount,
            reward_form,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffendingPair {
    pub state: String,
    pub action: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub beta: f64,
    pub passed: bool,
    /// Pairs whose own contraction coefficient is `>= 1`.
    pub offending: Vec<OffendingPair>,
    /// Structural or sign problems (shape mismatches, `ω <= 0`, `q < 0`, ...).
    pub issues: Vec<String>,
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "beta = {:.6}", self.beta)?;
        for o in &self.offending {
            write!(
                f,
                "; ({}, {}) has coefficient {:.6} >= 1",
                o.state, o.action, o.coefficient
            )?;
        }
        for issue in &self.issues {
            write!(f, "; {issue}")?;
        }
        Ok(())
    }
}

/// `(1 - e^{-γω}) / γ`, the discounted length of an action occupying `ω`.
fn discounted_span(gamma: f64, omega: f64) -> f64 {
    -(-gamma * omega).exp_m1() / gamma
}

/// Checks every invariant of a role model and computes its contraction
/// coefficient.
pub fn validate_model(spec: &RoleModelSpec) -> ValidationReport {
    let n = spec.states.len();
    let m = spec.actions.len();
    let mut issues = Vec::new();
    if n == 0 {
        issues.push("state set is empty".to_string());
    }
    if m == 0 {
        issues.push("action set is empty".to_string());
    }
    if !(spec.discount > 0.0 && spec.discount <= 1.0) {
        issues.push(format!("discount {} outside (0, 1]", spec.discount));
    }
    let shape_ok = spec.admissible.len() == n
        && spec.rewards.len() == n
        && spec.durations.len() == n
        && spec.rates.len() == n
        && spec.rewards.iter().all(|r| r.len() == m)
        && spec.durations.iter().all(|r| r.len() == m)
        && spec
            .rates
            .iter()
            .all(|r| r.len() == m && r.iter().all(|row| row.len() == n));
    if !shape_ok {
        issues.push(format!("tables do not match |S| = {n}, |A| = {m}"));
        return ValidationReport {
            beta: f64::NAN,
            passed: false,
            offending: Vec::new(),
            issues,
        };
    }

    let mut beta: f64 = 0.0;
    let mut offending = Vec::new();
    for s in 0..n {
        if spec.admissible[s].is_empty() {
            issues.push(format!("state {} has no admissible action", spec.states[s]));
        }
        for &a in &spec.admissible[s] {
            if a >= m {
                issues.push(format!("state {} lists unknown action index {a}", spec.states[s]));
                continue;
            }
            let omega = spec.durations[s][a];
            if !(omega > 0.0 && omega.is_finite()) {
                issues.push(format!(
                    "duration ({}, {}) = {omega} must be positive",
                    spec.states[s], spec.actions[a]
                ));
                continue;
            }
            if !spec.rewards[s][a].is_finite() {
                issues.push(format!(
                    "reward ({}, {}) is not finite",
                    spec.states[s], spec.actions[a]
                ));
            }
            let row = &spec.rates[s][a];
            if row.iter().any(|&q| !(q >= 0.0 && q.is_finite())) {
                issues.push(format!(
                    "rates out of ({}, {}) must be finite and non-negative",
                    spec.states[s], spec.actions[a]
                ));
                continue;
            }
            if spec.discount > 0.0 {
                let coefficient = discounted_span(spec.discount, omega) * row.iter().sum::<f64>();
                beta = beta.max(coefficient);
                if coefficient >= 1.0 {
                    offending.push(OffendingPair {
                        state: spec.states[s].clone(),
                        action: spec.actions[a].clone(),
                        coefficient,
                    });
                }
            }
        }
    }
    ValidationReport {
        beta,
        passed: issues.is_empty() && offending.is_empty(),
        offending,
        issues,
    }
}

/// A validated role model. Construction guarantees `β < 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleModel {
    spec: RoleModelSpec,
    beta: f64,
    // flattened per-(s,a) constants
    span: Vec<f64>,
    immediate: Vec<f64>,
}

impl TryFrom<RoleModelSpec> for RoleModel {
    type Error = CtmdpError;

    fn try_from(spec: RoleModelSpec) -> Result<Self, Self::Error> {
        let report = validate_model(&spec);
        if !report.passed {
            return Err(CtmdpError::Invalid(report));
        }
        let (n, m) = (spec.states.len(), spec.actions.len());
        let gamma = spec.discount;
        let mut span = vec![0.0; n * m];
        let mut immediate = vec![0.0; n * m];
        for s in 0..n {
            for a in 0..m {
                let omega = spec.durations[s][a];
                if omega > 0.0 {
                    let c = discounted_span(gamma, omega);
                    span[s * m + a] = c;
                    immediate[s * m + a] = match spec.reward_form {
                        RewardForm::Discounted => spec.rewards[s][a] * c,
                        RewardForm::Undiscounted => spec.rewards[s][a] * omega,
                    };
                }
            }
        }
        Ok(Self {
            beta: report.beta,
            spec,
            span,
            immediate,
        })
    }
}

impl RoleModel {
    pub fn spec(&self) -> &RoleModelSpec {
        &self.spec
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn num_states(&self) -> usize {
        self.spec.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.spec.actions.len()
    }

    pub fn state_label(&self, s: usize) -> &str {
        &self.spec.states[s]
    }

    pub fn action_label(&self, a: usize) -> &str {
        &self.spec.actions[a]
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.spec.states.iter().position(|s| s == label)
    }

    pub fn admissible(&self, s: usize) -> &[usize] {
        &self.spec.admissible[s]
    }

    pub fn rates(&self, s: usize, a: usize) -> &[f64] {
        &self.spec.rates[s][a]
    }

    pub fn duration(&self, s: usize, a: usize) -> f64 {
        self.spec.durations[s][a]
    }

    /// Immediate term `R(s,a)` under the model's reward form.
    pub fn immediate_reward(&self, s: usize, a: usize) -> f64 {
        self.immediate[s * self.num_actions() + a]
    }

    /// The bracketed quantity of the optimality equation for one (s, a).
    pub fn action_value(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        let m = self.num_actions();
        let future: f64 = self.spec.rates[s][a]
            .iter()
            .zip(v)
            .map(|(q, x)| q * x)
            .sum();
        self.immediate[s * m + a] + self.span[s * m + a] * future
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl ValueFunction {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            residual: 0.0,
            iterations: 0,
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            values,
            residual: 0.0,
            iterations: 0,
        }
    }
}

/// One application of the optimality operator.
pub fn bellman_backup(model: &RoleModel, v: &ValueFunction) -> Result<ValueFunction, CtmdpError> {
    let n = model.num_states();
    if v.values.len() != n {
        return Err(CtmdpError::DimensionMismatch {
            expected: n,
            got: v.values.len(),
        });
    }
    let mut next = Vec::with_capacity(n);
    let mut residual: f64 = 0.0;
    for s in 0..n {
        let best = model
            .admissible(s)
            .iter()
            .map(|&a| model.action_value(s, a, &v.values))
            .fold(f64::NEG_INFINITY, f64::max);
        residual = residual.max((best - v.values[s]).abs());
        next.push(best);
    }
    Ok(ValueFunction {
        values: next,
        residual,
        iterations: v.iterations + 1,
    })
}

/// Iterates the backup from `v = 0` until the sup-norm change is `<= tol`.
pub fn solve_value_iteration(
    model: &RoleModel,
    tol: f64,
    max_iter: usize,
) -> Result<ValueFunction, CtmdpError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(CtmdpError::BadTolerance(tol));
    }
    let mut v = ValueFunction::zeros(model.num_states());
    for _ in 0..max_iter {
        v = bellman_backup(model, &v)?;
        if v.residual <= tol {
            return Ok(v);
        }
    }
    Err(CtmdpError::NotConverged { tol, last: v })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub choice: Vec<usize>,
    pub tie_flags: BTreeSet<usize>,
}

/// Greedy policy induced by `v`: lowest-index action within `tie_tol` of the
/// best bracket value in each state.
pub fn greedy_policy(model: &RoleModel, v: &ValueFunction, tie_tol: f64) -> Policy {
    let n = model.num_states();
    let mut choice = Vec::with_capacity(n);
    let mut tie_flags = BTreeSet::new();
    for s in 0..n {
        let scored: Vec<(usize, f64)> = model
            .admissible(s)
            .iter()
            .map(|&a| (a, model.action_value(s, a, &v.values)))
            .collect();
        let best = scored
            .iter()
            .map(|&(_, q)| q)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut near: Vec<usize> = scored
            .iter()
            .filter(|&&(_, q)| best - q <= tie_tol)
            .map(|&(a, _)| a)
            .collect();
        near.sort_unstable();
        if near.len() > 1 {
            tie_flags.insert(s);
        }
        choice.push(near[0]);
    }
    Policy { choice, tie_flags }
}

/// JSON-friendly export keyed by state labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledSolution {
    pub beta: f64,
    pub iterations: usize,
    pub residual: f64,
    pub states: Vec<LabeledState>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledState {
    pub state: String,
    pub value: f64,
    pub action: String,
    pub tie: bool,
}

pub fn label_solution(model: &RoleModel, v: &ValueFunction, policy: &Policy) -> LabeledSolution {
    LabeledSolution {
        beta: model.beta(),
        iterations: v.iterations,
        residual: v.residual,
        states: (0..model.num_states())
            .map(|s| LabeledState {
                state: model.state_label(s).to_string(),
                value: v.values[s],
                action: model.action_label(policy.choice[s]).to_string(),
                tie: policy.tie_flags.contains(&s),
            })
            .collect(),
    }
}
