//! Rényi divergence, the brainstorming entropy, and a sampling-search model of
//! solution time.
//!
//! All logarithms are base 2.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum InfoError {
    #[error("distribution has {probs} probabilities but {labels} labels")]
    LabelCount { probs: usize, labels: usize },
    #[error("distribution is empty")]
    Empty,
    #[error("negative or non-finite probability {0}")]
    BadProbability(f64),
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("distribution weights sum to zero")]
    ZeroMass,
    #[error("distributions are over different outcome sets")]
    OutcomeMismatch,
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("outcome {0} is not in the distribution")]
    UnknownOutcome(String),
    #[error("target {0} has zero mass")]
    ZeroTarget(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
    labels: Vec<String>,
}

impl Distribution {
    pub fn new(labels: Vec<String>, probs: Vec<f64>) -> Result<Self, InfoError> {
        if probs.len() != labels.len() {
            return Err(InfoError::LabelCount {
                probs: probs.len(),
                labels: labels.len(),
            });
        }
        if probs.is_empty() {
            return Err(InfoError::Empty);
        }
        if let Some(&p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(InfoError::BadProbability(p));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(InfoError::NotNormalized(total));
        }
        Ok(Self { probs, labels })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(labels: Vec<String>, weights: Vec<f64>) -> Result<Self, InfoError> {
        if let Some(&w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(InfoError::BadProbability(w));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(InfoError::ZeroMass);
        }
        Self::new(labels, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(labels: Vec<String>) -> Result<Self, InfoError> {
        let n = labels.len();
        Self::from_weights(labels, vec![1.0; n])
    }

    /// Unlabeled distribution; outcomes are named `x0, x1, ...`.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, InfoError> {
        let labels = (0..probs.len()).map(|i| format!("x{i}")).collect();
        Self::new(labels, probs)
    }

    /// Equal-weight mixture of distributions over the same outcomes.
    pub fn mixture(parts: &[Distribution]) -> Result<Self, InfoError> {
        let first = parts.first().ok_or(InfoError::Empty)?;
        if parts.iter().any(|p| p.labels != first.labels) {
            return Err(InfoError::OutcomeMismatch);
        }
        let k = parts.len() as f64;
        let probs = (0..first.len())
            .map(|i| parts.iter().map(|p| p.probs[i]).sum::<f64>() / k)
            .collect();
        Self::from_weights(first.labels.clone(), probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn prob(&self, label: &str) -> Option<f64> {
        self.index_of(label).map(|i| self.probs[i])
    }

    /// Label of the most likely outcome (lowest index on ties).
    pub fn mode(&self) -> &str {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        &self.labels[best]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrainstormConfig {
    pub alpha: f64,
    /// Divergence gate in bits.
    pub epsilon: f64,
}

impl Default for BrainstormConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            epsilon: 0.05,
        }
    }
}

impl BrainstormConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        Ok(())
    }
}

fn check_pair(p: &Distribution, q: &Distribution, alpha: f64) -> Result<(), InfoError> {
    if p.labels != q.labels {
        return Err(InfoError::OutcomeMismatch);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(InfoError::BadAlpha(alpha));
    }
    Ok(())
}

/// `KL(p‖q)` in bits.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64, InfoError> {
    check_pair(p, q, 1.0)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).log2();
    }
    Ok(total.max(0.0))
}

/// `log2 Σ p^α q^(1-α)` split as `(alpha - 1) · log2-mean` to keep precision
/// near `α = 1`. Returns `None` when a `p > 0, q = 0` term makes it infinite.
fn log2_power_sum(p: &Distribution, q: &Distribution, alpha: f64) -> Option<f64> {
    // Σ p (p/q)^(α-1) - 1 = Σ p · expm1((α-1) ln(p/q))
    let mut excess = 0.0;
    let mut dropped = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            if alpha > 1.0 {
                return None;
            }
            // 0^(1-α) = 0 for α < 1: the term vanishes
            dropped += pi;
            continue;
        }
        excess += pi * ((alpha - 1.0) * (pi / qi).ln()).exp_m1();
    }
    // Σ over kept terms = (1 - dropped) + excess
    Some((excess - dropped).ln_1p() / std::f64::consts::LN_2)
}

/// `D_α(p‖q) = 1/(α-1) · log2 Σ p^α q^(1-α)`; `α = 1` gives `KL(p‖q)`.
pub fn renyi_divergence(p: &Distribution, q: &Distribution, alpha: f64) -> Result<f64, InfoError> {
    check_pair(p, q, alpha)?;
    if alpha == 1.0 {
        return kl_divergence(p, q);
    }
    let d = match log2_power_sum(p, q, alpha) {
        None => f64::INFINITY,
        Some(l) => l / (alpha - 1.0),
    };
    // disjoint supports with α < 1 give log 0 / negative = +∞
    Ok(if d.is_nan() { f64::INFINITY } else { d.max(0.0) })
}

/// `H_α = 1/(1-α) · log2 Σ p^α q^(1-α)`. This equals `-D_α(p‖q)` and is
/// therefore never positive.
pub fn generalized_entropy(p: &Distribution, q: &Distribution, alpha: f64) -> Result<f64, InfoError> {
    check_pair(p, q, alpha)?;
    if alpha == 1.0 {
        return Ok(-kl_divergence(p, q)?);
    }
    let h = match log2_power_sum(p, q, alpha) {
        None => f64::NEG_INFINITY,
        Some(l) => l / (1.0 - alpha),
    };
    Ok(if h.is_nan() { f64::NEG_INFINITY } else { h.min(0.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub target: String,
    pub trials: usize,
    pub prior_mass: f64,
    pub posterior_mass: f64,
    /// Mean number of i.i.d. draws until the target appears.
    pub prior_mean_draws: f64,
    pub posterior_mean_draws: f64,
    pub ratio: f64,
    pub alpha: f64,
    /// `D_α(posterior‖prior)` in bits.
    pub divergence: f64,
    /// `2^divergence`.
    pub bound: f64,
    pub bound_met: bool,
}

fn mean_draws_until(dist: &Distribution, target: usize, trials: usize, rng: &mut impl Rng) -> f64 {
    let sampler = WeightedIndex::new(dist.probs()).expect("validated distribution");
    let mut total: u64 = 0;
    for _ in 0..trials {
        let mut draws = 1u64;
        while sampler.sample(rng) != target {
            draws += 1;
        }
        total += draws;
    }
    total as f64 / trials as f64
}

/// Monte-Carlo solution time of a search that samples candidates i.i.d. until
/// it hits `target`, before and after brainstorming.
pub fn measure_speedup(
    prior: &Distribution,
    posterior: &Distribution,
    target: &str,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<SpeedupReport, InfoError> {
    check_pair(posterior, prior, alpha)?;
    let t = prior
        .index_of(target)
        .ok_or_else(|| InfoError::UnknownOutcome(target.to_string()))?;
    if prior.probs[t] == 0.0 || posterior.probs[t] == 0.0 {
        return Err(InfoError::ZeroTarget(target.to_string()));
    }
    let trials = trials.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior_mean_draws = mean_draws_until(prior, t, trials, &mut rng);
    rng.set_stream(1);
    let posterior_mean_draws = mean_draws_until(posterior, t, trials, &mut rng);
    let divergence = renyi_divergence(posterior, prior, alpha)?;
    let ratio = prior_mean_draws / posterior_mean_draws;
    let bound = divergence.exp2();
    Ok(SpeedupReport {
        target: target.to_string(),
        trials,
        prior_mass: prior.probs[t],
        posterior_mass: posterior.probs[t],
        prior_mean_draws,
        posterior_mean_draws,
        ratio,
        alpha,
        divergence,
        bound,
        bound_met: ratio >= bound,
    })
}
