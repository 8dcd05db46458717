//! Contextual Thompson sampling over prompt variants with one exact
//! Gaussian-process posterior per arm.
//!
//! Each arm keeps the lower Cholesky factor `L` of `K + (σ_n² + jitter) I`
//! over its observed contexts together with `w = L⁻¹ y`. Adding an
//! observation appends one row to `L` and one entry to `w`, so a prediction
//! costs a single forward substitution: with `v = L⁻¹ k*`,
//! `mean = vᵀ w` and `var = k(x, x) - vᵀ v`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BanditError {
    #[error("context has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("kernel matrix is not positive definite despite jitter (condition number {condition:e})")]
    Singular { condition: f64 },
    #[error("invalid bandit configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub length_scale: f64,
    pub signal_var: f64,
}

impl Kernel {
    /// Squared-exponential covariance.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.signal_var * (-0.5 * d2 / (self.length_scale * self.length_scale)).exp()
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Self {
            length_scale: 1.0,
            signal_var: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub num_arms: usize,
    pub context_dim: usize,
    pub kernel: Kernel,
    /// Standard deviation of reward observations.
    pub obs_noise: f64,
    pub jitter: f64,
}

impl BanditConfig {
    pub fn new(num_arms: usize, context_dim: usize) -> Self {
        Self {
            num_arms,
            context_dim,
            kernel: Kernel::default(),
            obs_noise: 0.1,
            jitter: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<(), BanditError> {
        if self.num_arms == 0 || self.context_dim == 0 {
            return Err(BanditError::Config("need at least one arm and one context dimension".into()));
        }
        let positive = [
            ("length_scale", self.kernel.length_scale),
            ("signal_var", self.kernel.signal_var),
            ("obs_noise", self.obs_noise),
            ("jitter", self.jitter),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(BanditError::Config(format!("{name} must be positive, got {v}")));
        }
        Ok(())
    }

    fn diagonal_extra(&self) -> f64 {
        self.obs_noise * self.obs_noise + self.jitter
    }
}

/// Outcome of [`ArmPosterior::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateOutcome {
    /// The reward fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmPosterior {
    contexts: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    clamped: Vec<bool>,
    /// Packed lower-triangular rows of the Cholesky factor.
    chol: Vec<Vec<f64>>,
    /// `L⁻¹ y`.
    whitened: Vec<f64>,
}

impl ArmPosterior {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn clamp_flags(&self) -> &[bool] {
        &self.clamped
    }

    /// The cached factor as a dense lower-triangular matrix.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| if j <= i { self.chol[i][j] } else { 0.0 })
    }

    fn check_dim(cfg: &BanditConfig, x: &[f64]) -> Result<(), BanditError> {
        if x.len() != cfg.context_dim {
            return Err(BanditError::Dimension {
                expected: cfg.context_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `L⁻¹ b` by forward substitution.
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(b.len());
        for (i, row) in self.chol.iter().enumerate() {
            let dot: f64 = row[..i].iter().zip(&out).map(|(l, v)| l * v).sum();
            out.push((b[i] - dot) / row[i]);
        }
        out
    }

    fn cross_covariance(&self, cfg: &BanditConfig, x: &[f64]) -> Vec<f64> {
        self.contexts.iter().map(|c| cfg.kernel.eval(c, x)).collect()
    }

    /// Posterior mean and variance of the arm's reward function at `x`.
    pub fn posterior_predict(&self, cfg: &BanditConfig, x: &[f64]) -> Result<(f64, f64), BanditError> {
        Self::check_dim(cfg, x)?;
        let prior_var = cfg.kernel.signal_var;
        if self.is_empty() {
            return Ok((0.0, prior_var));
        }
        let v = self.forward(&self.cross_covariance(cfg, x));
        let mean = v.iter().zip(&self.whitened).map(|(a, b)| a * b).sum();
        let explained: f64 = v.iter().map(|a| a * a).sum();
        Ok((mean, (prior_var - explained).max(0.0)))
    }

    /// Appends `(x, r)`; rewards outside `[0, 1]` are clamped and flagged.
    pub fn update(&mut self, cfg: &BanditConfig, x: &[f64], r: f64) -> Result<UpdateOutcome, BanditError> {
        Self::check_dim(cfg, x)?;
        let stored = r.clamp(0.0, 1.0);
        let clamped = stored != r;
        let k = self.cross_covariance(cfg, x);
        let row = self.forward(&k);
        let pivot = cfg.kernel.eval(x, x) + cfg.diagonal_extra() - row.iter().map(|a| a * a).sum::<f64>();
        if !(pivot > 0.0 && pivot.is_finite()) {
            let mut contexts = self.contexts.clone();
            contexts.push(x.to_vec());
            return Err(BanditError::Singular {
                condition: condition_number(&gram(cfg, &contexts)),
            });
        }
        let diag = pivot.sqrt();
        let dot: f64 = row.iter().zip(&self.whitened).map(|(l, w)| l * w).sum();
        self.whitened.push((stored - dot) / diag);
        let mut row = row;
        row.push(diag);
        self.chol.push(row);
        self.contexts.push(x.to_vec());
        self.rewards.push(stored);
        self.clamped.push(clamped);
        Ok(UpdateOutcome { clamped })
    }
}

/// `K + (σ_n² + jitter) I` over `contexts`.
pub fn gram(cfg: &BanditConfig, contexts: &[Vec<f64>]) -> DMatrix<f64> {
    let n = contexts.len();
    DMatrix::from_fn(n, n, |i, j| {
        let base = cfg.kernel.eval(&contexts[i], &contexts[j]);
        if i == j {
            base + cfg.diagonal_extra()
        } else {
            base
        }
    })
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    max / min
}

/// Thompson step: one Gaussian draw per arm from its posterior at `x`, argmax
/// with lowest index on exact ties.
pub fn select_arm<R: Rng + ?Sized>(
    arms: &[ArmPosterior],
    cfg: &BanditConfig,
    x: &[f64],
    rng: &mut R,
) -> Result<usize, BanditError> {
    let mut best = 0;
    let mut best_theta = f64::NEG_INFINITY;
    for (k, arm) in arms.iter().enumerate() {
        let (mean, var) = arm.posterior_predict(cfg, x)?;
        let z: f64 = rng.sample(StandardNormal);
        let theta = mean + var.sqrt() * z;
        if theta > best_theta {
            best = k;
            best_theta = theta;
        }
    }
    Ok(best)
}

/// Arm mean `clamp(bias + weights · x, 0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearArm {
    pub bias: f64,
    pub weights: Vec<f64>,
}

impl LinearArm {
    pub fn mean(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
        (self.bias + lin).clamp(0.0, 1.0)
    }
}

/// Synthetic environment with contexts drawn uniformly from `[0, 1]^d`, or a
/// fixed context when `constant_context` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnv {
    pub arms: Vec<LinearArm>,
    #[serde(default)]
    pub constant_context: Option<Vec<f64>>,
}

impl SyntheticEnv {
    pub fn constant(means: &[f64], context: Vec<f64>) -> Self {
        Self {
            arms: means
                .iter()
                .map(|&m| LinearArm {
                    bias: m,
                    weights: vec![0.0; context.len()],
                })
                .collect(),
            constant_context: Some(context),
        }
    }

    fn context(&self, d: usize, rng: &mut impl Rng) -> Vec<f64> {
        match &self.constant_context {
            Some(c) => c.clone(),
            None => (0..d).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn means(&self, x: &[f64]) -> Vec<f64> {
        self.arms.iter().map(|a| a.mean(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub round: usize,
    pub arm: usize,
    pub reward: f64,
    pub best_mean: f64,
    pub chosen_mean: f64,
    pub regret: f64,
    pub cumulative: f64,
    /// Posterior variance of the chosen arm at `x_t` before the update.
    pub posterior_var: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub rows: Vec<LedgerRow>,
    /// `Σ_t σ²_{k_t, t-1}(x_t)`.
    pub variance_sum: f64,
    /// Empirical information-gain diagnostic `variance_sum / K`.
    pub gamma_hat: f64,
    /// `½ Σ_t ln(1 + σ²_{k_t,t-1}(x_t) / σ_n²)`.
    pub information_gain: f64,
    pub num_arms: usize,
}

impl RegretLedger {
    pub fn cumulative_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative)
    }

    /// Cumulative regret after the first `t` rounds.
    pub fn regret_at(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        self.rows[t.min(self.rows.len()) - 1].cumulative
    }

    pub fn pull_fraction(&self, arm: usize) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.arm == arm).count() as f64 / self.rows.len() as f64
    }

    /// Bookkeeping identity `Σσ² <= K·γ̂`, plus the standard GP bound
    /// `Σσ² <= 2 s / ln(1 + s/σ_n²) · I` with `s` the prior variance.
    pub fn information_bounds_hold(&self, cfg: &BanditConfig) -> bool {
        let slack = 1e-9 * (1.0 + self.variance_sum);
        let s = cfg.kernel.signal_var;
        let noise2 = cfg.obs_noise * cfg.obs_noise;
        let c1 = s / (s / noise2).ln_1p();
        self.variance_sum <= self.num_arms as f64 * self.gamma_hat + slack
            && self.variance_sum <= 2.0 * c1 * self.information_gain + slack
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,arm,reward,regret\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.round, r.arm, r.reward, r.cumulative));
        }
        out
    }
}

/// Independent random streams derived from one seed: contexts, reward noise
/// and arm selection. Pairing runs on the same seed gives identical context
/// streams.
struct Streams {
    contexts: ChaCha8Rng,
    noise: ChaCha8Rng,
    policy: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mk = |stream| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        Self {
            contexts: mk(1),
            noise: mk(2),
            policy: mk(3),
        }
    }
}

fn run_loop<F>(
    env: &SyntheticEnv,
    rounds: usize,
    cfg: &BanditConfig,
    seed: u64,
    mut choose: F,
) -> Result<RegretLedger, BanditError>
where
    F: FnMut(&[ArmPosterior], &[f64], &mut ChaCha8Rng) -> Result<usize, BanditError>,
{
    cfg.validate()?;
    if env.arms.len() != cfg.num_arms {
        return Err(BanditError::Config(format!(
            "environment has {} arms, config {}",
            env.arms.len(),
            cfg.num_arms
        )));
    }
    let mut streams = Streams::new(seed);
    let mut arms = vec![ArmPosterior::new(); cfg.num_arms];
    let mut ledger = RegretLedger {
        num_arms: cfg.num_arms,
        ..Default::default()
    };
    let mut cumulative = 0.0;
    let noise2 = cfg.obs_noise * cfg.obs_noise;
    for t in 0..rounds {
        let x = env.context(cfg.context_dim, &mut streams.contexts);
        let means = env.means(&x);
        let k = choose(&arms, &x, &mut streams.policy)?;
        let (_, var) = arms[k].posterior_predict(cfg, &x)?;
        let z: f64 = streams.noise.sample(StandardNormal);
        let reward = means[k] + cfg.obs_noise * z;
        arms[k].update(cfg, &x, reward)?;
        let best_mean = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let regret = best_mean - means[k];
        cumulative += regret;
        ledger.variance_sum += var;
        ledger.information_gain += 0.5 * (var / noise2).ln_1p();
        ledger.rows.push(LedgerRow {
            round: t + 1,
            arm: k,
            reward: reward.clamp(0.0, 1.0),
            best_mean,
            chosen_mean: means[k],
            regret,
            cumulative,
            posterior_var: var,
        });
    }
    ledger.gamma_hat = ledger.variance_sum / cfg.num_arms as f64;
    Ok(ledger)
}

/// Full Thompson loop against a synthetic environment with known means.
pub fn run_synthetic(
    env: &SyntheticEnv,
    rounds: usize,
    cfg: &BanditConfig,
    seed: u64,
) -> Result<RegretLedger, BanditError> {
    run_loop(env, rounds, cfg, seed, |arms, x, rng| select_arm(arms, cfg, x, rng))
}

/// Uniform-random arm choice on the same context and noise streams as
/// [`run_synthetic`] with the same seed.
pub fn run_uniform_baseline(
    env: &SyntheticEnv,
    rounds: usize,
    cfg: &BanditConfig,
    seed: u64,
) -> Result<RegretLedger, BanditError> {
    let k = cfg.num_arms;
    run_loop(env, rounds, cfg, seed, |_, _, rng| Ok(rng.random_range(0..k)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize) -> BanditConfig {
        BanditConfig::new(2, d)
    }

    #[test]
    fn empty_arm_is_prior() {
        let c = cfg(2);
        assert_eq!(ArmPosterior::new().posterior_predict(&c, &[0.3, 0.1]).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn interpolates_at_vanishing_noise() {
        let mut c = cfg(1);
        c.obs_noise = 1e-6;
        let mut arm = ArmPosterior::new();
        arm.update(&c, &[0.4], 0.7).unwrap();
        let (m, v) = arm.posterior_predict(&c, &[0.4]).unwrap();
        assert!((m - 0.7).abs() < 1e-6);
        assert!(v < 1e-6);
    }

    #[test]
    fn update_shrinks_variance_and_clamps() {
        let c = cfg(2);
        let mut arm = ArmPosterior::new();
        arm.update(&c, &[0.0, 0.0], 0.2).unwrap();
        let before = arm.posterior_predict(&c, &[0.5, 0.5]).unwrap().1;
        let out = arm.update(&c, &[0.5, 0.5], 1.3).unwrap();
        assert!(out.clamped);
        assert_eq!(arm.rewards()[1], 1.0);
        let after = arm.posterior_predict(&c, &[0.5, 0.5]).unwrap().1;
        assert!(after < before);
    }

    #[test]
    fn dimension_errors() {
        let c = cfg(2);
        let mut arm = ArmPosterior::new();
        assert_eq!(
            arm.update(&c, &[1.0], 0.5),
            Err(BanditError::Dimension { expected: 2, got: 1 })
        );
        assert!(arm.posterior_predict(&c, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn duplicate_contexts_without_noise_are_singular() {
        let mut c = cfg(1);
        c.obs_noise = 1e-300;
        c.jitter = 1e-300;
        let mut arm = ArmPosterior::new();
        arm.update(&c, &[0.5], 0.5).unwrap();
        match arm.update(&c, &[0.5], 0.5) {
            Err(BanditError::Singular { condition }) => assert!(condition > 1e12),
            other => panic!("expected singular, got {other:?}"),
        }
    }

    #[test]
    fn single_arm_never_regrets() {
        let mut c = BanditConfig::new(1, 1);
        c.obs_noise = 0.1;
        let env = SyntheticEnv::constant(&[0.4], vec![0.0]);
        let ledger = run_synthetic(&env, 50, &c, 1).unwrap();
        assert_eq!(ledger.cumulative_regret(), 0.0);
        let x = [0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_arm(&[ArmPosterior::new()], &c, &x, &mut rng).unwrap(), 0);
    }

    #[test]
    fn selection_is_deterministic_for_a_seed() {
        let c = cfg(1);
        let arms = vec![ArmPosterior::new(); 2];
        let pick = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            select_arm(&arms, &c, &[0.5], &mut rng).unwrap()
        };
        assert_eq!(pick(9), pick(9));
    }

    #[test]
    fn csv_header() {
        let env = SyntheticEnv::constant(&[0.9, 0.1], vec![0.0]);
        let ledger = run_synthetic(&env, 3, &cfg(1), 0).unwrap();
        let csv = ledger.to_csv();
        assert!(csv.starts_with("round,arm,reward,regret\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
