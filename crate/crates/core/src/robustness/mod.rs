//! Monte-Carlo study of trust-aware delegation under noise: tier success
//! rates, allocation heatmap, IVF/quality curve and a comparison against a
//! trust-blind baseline.

pub mod stats;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stats::{ols, welch_t_test, OlsFit, StatsError, WelchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Critical,
    High,
    Moderate,
    Low,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Critical, Tier::High, Tier::Moderate, Tier::Low];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Critical => "Critical",
            Tier::High => "High",
            Tier::Moderate => "Moderate",
            Tier::Low => "Low",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RobustnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustProfile {
    pub agents: Vec<String>,
    pub base_trust: Vec<f64>,
    pub drift_std: f64,
    pub hard_fail_prob: f64,
    /// Half-width of the multiplicative jitter on delegation weights.
    pub delegation_jitter: f64,
}

impl Default for TrustProfile {
    fn default() -> Self {
        Self {
            agents: ["A", "B", "C", "D", "E"].map(String::from).to_vec(),
            base_trust: vec![0.85, 0.70, 0.55, 0.40, 0.25],
            drift_std: 0.05,
            hard_fail_prob: 0.15,
            delegation_jitter: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityModel {
    pub q0: f64,
    pub q1: f64,
    pub sigma: f64,
    pub dip_min_ivf: f64,
    pub dip_prob: f64,
    pub low_regime: (f64, f64),
    pub breakthrough_max_ivf: f64,
    pub breakthrough_prob: f64,
    pub high_regime: (f64, f64),
}

impl Default for QualityModel {
    fn default() -> Self {
        Self {
            q0: 0.45,
            q1: 0.35,
            sigma: 0.08,
            dip_min_ivf: 0.7,
            dip_prob: 0.15,
            low_regime: (0.1, 0.3),
            breakthrough_max_ivf: 0.4,
            breakthrough_prob: 0.15,
            high_regime: (0.7, 0.9),
        }
    }
}

/// Trust-blind control: uniform allocation, same hard-failure law, and an
/// unguided per-trial acceptance rate `λ ~ N(mean, std)` applied per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineModel {
    pub acceptance_mean: f64,
    pub acceptance_std: f64,
}

impl Default for BaselineModel {
    fn default() -> Self {
        Self {
            acceptance_mean: 0.776,
            acceptance_std: 0.047,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    pub trust: TrustProfile,
    pub tasks_per_tier: usize,
    pub ivf_bins: usize,
    /// Softmax inverse temperature per tier, Critical first.
    pub kappa: [f64; 4],
    /// Failure severity per tier, Critical first.
    pub severity: [f64; 4],
    pub quality: QualityModel,
    pub baseline: BaselineModel,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            trust: TrustProfile::default(),
            tasks_per_tier: 30,
            ivf_bins: 9,
            kappa: [8.0, 4.0, 2.0, 0.0],
            severity: [1.13, 0.52, 0.23, 0.075],
            quality: QualityModel::default(),
            baseline: BaselineModel::default(),
        }
    }
}

impl RobustnessConfig {
    pub fn validate(&self) -> Result<(), RobustnessError> {
        let bad = |m: &str| Err(RobustnessError::Config(m.into()));
        let t = &self.trust;
        if t.agents.is_empty() || t.agents.len() != t.base_trust.len() {
            return bad("agents and base_trust must be non-empty and the same length");
        }
        if t.base_trust.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return bad("base trust must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&t.hard_fail_prob) || t.drift_std < 0.0 || !(0.0..1.0).contains(&t.delegation_jitter) {
            return bad("hard_fail_prob in [0,1], drift_std >= 0, delegation_jitter in [0,1)");
        }
        if self.tasks_per_tier == 0 || self.ivf_bins == 0 {
            return bad("tasks_per_tier and ivf_bins must be positive");
        }
        if self.severity.iter().any(|s| *s < 0.0) || self.kappa.iter().any(|k| !k.is_finite()) {
            return bad("severities must be non-negative and kappas finite");
        }
        let q = &self.quality;
        if q.sigma < 0.0 || q.low_regime.0 > q.low_regime.1 || q.high_regime.0 > q.high_regime.1 {
            return bad("quality regimes must be ordered intervals with sigma >= 0");
        }
        if self.baseline.acceptance_std < 0.0 {
            return bad("baseline acceptance_std must be >= 0");
        }
        Ok(())
    }

    /// No drift, no jitter, no quality events.
    pub fn noiseless(mut self) -> Self {
        self.trust.drift_std = 0.0;
        self.trust.delegation_jitter = 0.0;
        self.quality.sigma = 0.0;
        self.quality.dip_prob = 0.0;
        self.quality.breakthrough_prob = 0.0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IvfEvent {
    None,
    Dip,
    Breakthrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    pub tier: Tier,
    pub ivf: f64,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: TaskSpec,
    pub agent: usize,
    pub success: bool,
    pub quality: f64,
    pub event: IvfEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub trusts: Vec<f64>,
    pub outcomes: Vec<TaskOutcome>,
}

impl TrialRecord {
    pub fn success_rate(&self, tier: Option<Tier>) -> f64 {
        let sel: Vec<&TaskOutcome> = self
            .outcomes
            .iter()
            .filter(|o| tier.is_none_or(|t| o.task.tier == t))
            .collect();
        sel.iter().filter(|o| o.success).count() as f64 / sel.len().max(1) as f64
    }
}

/// Builds the tier-major task list; bins cycle so every bin is populated in
/// every trial, and the ivf is uniform within its bin.
pub fn draw_tasks(cfg: &RobustnessConfig, rng: &mut ChaCha8Rng) -> Vec<TaskSpec> {
    let bins = cfg.ivf_bins;
    let mut id = 0;
    let mut tasks = Vec::with_capacity(4 * cfg.tasks_per_tier);
    for tier in Tier::ALL {
        for _ in 0..cfg.tasks_per_tier {
            let bin = id % bins;
            let ivf = (bin as f64 + rng.random::<f64>()) / bins as f64;
            tasks.push(TaskSpec { id, tier, ivf, bin });
            id += 1;
        }
    }
    tasks
}

/// Samples an agent from `exp(κ·trust)` weights, each scaled by an
/// independent `U[1 − jitter, 1 + jitter]` factor.
pub fn allocate_task(kappa: f64, trusts: &[f64], jitter: f64, rng: &mut ChaCha8Rng) -> usize {
    let top = trusts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = trusts
        .iter()
        .map(|t| {
            let j = if jitter > 0.0 {
                1.0 - jitter + 2.0 * jitter * rng.random::<f64>()
            } else {
                1.0
            };
            // shift by the max so large κ cannot overflow
            (kappa * (t - top)).exp() * j
        })
        .collect();
    WeightedIndex::new(&weights)
        .expect("weights are positive and finite")
        .sample(rng)
}

fn drift_trusts(cfg: &RobustnessConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let t = &cfg.trust;
    if t.drift_std == 0.0 {
        return t.base_trust.clone();
    }
    let noise = Normal::new(0.0, t.drift_std).expect("drift_std >= 0");
    t.base_trust
        .iter()
        .map(|b| (b + noise.sample(rng)).clamp(0.0, 1.0))
        .collect()
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn hard_fail(cfg: &RobustnessConfig, tier: Tier, trust: f64, rng: &mut ChaCha8Rng) -> bool {
    let p_fail = cfg.trust.hard_fail_prob * (1.0 - trust) * cfg.severity[tier.index()];
    rng.random::<f64>() < p_fail
}

fn guided_quality(q: &QualityModel, ivf: f64, rng: &mut ChaCha8Rng) -> (f64, IvfEvent) {
    let noise = if q.sigma > 0.0 {
        Normal::new(0.0, q.sigma).expect("sigma >= 0").sample(rng)
    } else {
        0.0
    };
    let base = (q.q0 + q.q1 * ivf + noise).clamp(0.0, 1.0);
    let u: f64 = rng.random();
    if ivf >= q.dip_min_ivf && u < q.dip_prob {
        (uniform_in(rng, q.low_regime), IvfEvent::Dip)
    } else if ivf <= q.breakthrough_max_ivf && u < q.breakthrough_prob {
        (uniform_in(rng, q.high_regime), IvfEvent::Breakthrough)
    } else {
        (base, IvfEvent::None)
    }
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const BASELINE_STREAM: u64 = 1 << 32;

pub fn run_trial(cfg: &RobustnessConfig, trial: usize, seed: u64) -> TrialRecord {
    let mut rng = trial_rng(seed, trial as u64);
    let trusts = drift_trusts(cfg, &mut rng);
    let tasks = draw_tasks(cfg, &mut rng);
    let outcomes = tasks
        .into_iter()
        .map(|task| {
            let kappa = cfg.kappa[task.tier.index()];
            let agent = allocate_task(kappa, &trusts, cfg.trust.delegation_jitter, &mut rng);
            let success = !hard_fail(cfg, task.tier, trusts[agent], &mut rng);
            let (quality, event) = guided_quality(&cfg.quality, task.ivf, &mut rng);
            TaskOutcome {
                task,
                agent,
                success,
                quality,
                event,
            }
        })
        .collect();
    TrialRecord { trial, trusts, outcomes }
}

/// Same drift and hard-failure law, uniform allocation, no IVF guidance.
/// The recorded quality is the trial's acceptance rate.
pub fn baseline_trial(cfg: &RobustnessConfig, trial: usize, seed: u64) -> TrialRecord {
    let mut rng = trial_rng(seed, BASELINE_STREAM + trial as u64);
    let trusts = drift_trusts(cfg, &mut rng);
    let tasks = draw_tasks(cfg, &mut rng);
    let b = &cfg.baseline;
    let lambda = if b.acceptance_std > 0.0 {
        Normal::new(b.acceptance_mean, b.acceptance_std).expect("std >= 0").sample(&mut rng)
    } else {
        b.acceptance_mean
    }
    .clamp(0.0, 1.0);
    let n = trusts.len();
    let outcomes = tasks
        .into_iter()
        .map(|task| {
            let agent = rng.random_range(0..n);
            let failed = hard_fail(cfg, task.tier, trusts[agent], &mut rng);
            let accepted = rng.random::<f64>() < lambda;
            TaskOutcome {
                task,
                agent,
                success: !failed && accepted,
                quality: lambda,
                event: IvfEvent::None,
            }
        })
        .collect();
    TrialRecord { trial, trusts, outcomes }
}

pub fn baseline_policy(cfg: &RobustnessConfig, n_trials: usize, seed: u64) -> Vec<TrialRecord> {
    (0..n_trials).map(|t| baseline_trial(cfg, t, seed)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub tier: Tier,
    /// Percent over trials.
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub trial: usize,
    pub bin: usize,
    pub ivf: f64,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinBand {
    pub bin: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRates {
    pub dip_eligible: usize,
    pub dips: usize,
    pub breakthrough_eligible: usize,
    pub breakthroughs: usize,
}

impl EventRates {
    pub fn dip_rate(&self) -> f64 {
        self.dips as f64 / self.dip_eligible.max(1) as f64
    }

    pub fn breakthrough_rate(&self) -> f64 {
        self.breakthroughs as f64 / self.breakthrough_eligible.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTables {
    pub tiers: Vec<TierStats>,
    /// Per-tier row fractions, tier × agent.
    pub heatmap: Vec<Vec<f64>>,
    /// One point per (trial, bin): the bin's mean ivf and quality.
    pub curve: Vec<CurvePoint>,
    pub bands: Vec<BinBand>,
    pub events: EventRates,
    /// Overall success per trial, as a fraction.
    pub trial_success: Vec<f64>,
}

pub fn summarize(cfg: &RobustnessConfig, records: &[TrialRecord]) -> SummaryTables {
    let n_agents = cfg.trust.agents.len();
    let tiers = Tier::ALL
        .iter()
        .map(|&tier| {
            let rates: Vec<f64> = records.iter().map(|r| 100.0 * r.success_rate(Some(tier))).collect();
            TierStats {
                tier,
                mean: stats::mean(&rates),
                std: stats::std_dev(&rates),
            }
        })
        .collect();

    let mut counts = vec![vec![0usize; n_agents]; 4];
    for o in records.iter().flat_map(|r| &r.outcomes) {
        counts[o.task.tier.index()][o.agent] += 1;
    }
    let heatmap = counts
        .iter()
        .map(|row| {
            let total = row.iter().sum::<usize>().max(1) as f64;
            row.iter().map(|c| *c as f64 / total).collect()
        })
        .collect();

    let bins = cfg.ivf_bins;
    let mut curve = Vec::with_capacity(records.len() * bins);
    for r in records {
        for bin in 0..bins {
            let in_bin: Vec<&TaskOutcome> = r.outcomes.iter().filter(|o| o.task.bin == bin).collect();
            if in_bin.is_empty() {
                continue;
            }
            let k = in_bin.len() as f64;
            curve.push(CurvePoint {
                trial: r.trial,
                bin,
                ivf: in_bin.iter().map(|o| o.task.ivf).sum::<f64>() / k,
                quality: in_bin.iter().map(|o| o.quality).sum::<f64>() / k,
            });
        }
    }
    let bands = (0..bins)
        .filter_map(|bin| {
            let qs: Vec<f64> = curve.iter().filter(|p| p.bin == bin).map(|p| p.quality).collect();
            if qs.is_empty() {
                return None;
            }
            let m = stats::mean(&qs);
            let half = if qs.len() > 1 {
                stats::t_critical(0.05, (qs.len() - 1) as f64) * stats::std_dev(&qs) / (qs.len() as f64).sqrt()
            } else {
                0.0
            };
            Some(BinBand {
                bin,
                mean: m,
                lower: m - half,
                upper: m + half,
            })
        })
        .collect();

    let q = &cfg.quality;
    let all: Vec<&TaskOutcome> = records.iter().flat_map(|r| &r.outcomes).collect();
    let events = EventRates {
        dip_eligible: all.iter().filter(|o| o.task.ivf >= q.dip_min_ivf).count(),
        dips: all.iter().filter(|o| o.event == IvfEvent::Dip).count(),
        breakthrough_eligible: all.iter().filter(|o| o.task.ivf <= q.breakthrough_max_ivf).count(),
        breakthroughs: all.iter().filter(|o| o.event == IvfEvent::Breakthrough).count(),
    };

    SummaryTables {
        tiers,
        heatmap,
        curve,
        bands,
        events,
        trial_success: records.iter().map(|r| r.success_rate(None)).collect(),
    }
}

pub fn run_trials(
    cfg: &RobustnessConfig,
    n_trials: usize,
    seed: u64,
) -> Result<(Vec<TrialRecord>, SummaryTables), RobustnessError> {
    cfg.validate()?;
    let records: Vec<TrialRecord> = (0..n_trials).map(|t| run_trial(cfg, t, seed)).collect();
    let summary = summarize(cfg, &records);
    Ok((records, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub summary: SummaryTables,
    pub baseline: SummaryTables,
    pub ttest: WelchResult,
    pub ivf_fit: OlsFit,
}

/// Guided trials, baseline trials, the Welch comparison of their per-trial
/// success rates and the IVF slope fit.
pub fn run_experiment(cfg: &RobustnessConfig, n_trials: usize, seed: u64) -> Result<Experiment, RobustnessError> {
    let (_, summary) = run_trials(cfg, n_trials, seed)?;
    let baseline = summarize(cfg, &baseline_policy(cfg, n_trials, seed));
    let ttest = welch_t_test(&summary.trial_success, &baseline.trial_success)?;
    let x: Vec<f64> = summary.curve.iter().map(|p| p.ivf).collect();
    let y: Vec<f64> = summary.curve.iter().map(|p| p.quality).collect();
    let ivf_fit = ols(&x, &y)?;
    Ok(Experiment {
        summary,
        baseline,
        ttest,
        ivf_fit,
    })
}

impl Experiment {
    pub fn heatmap_csv(&self, agents: &[String]) -> String {
        let mut s = format!("tier,{}\n", agents.join(","));
        for (tier, row) in Tier::ALL.iter().zip(&self.summary.heatmap) {
            let cells: Vec<String> = row.iter().map(|f| format!("{f:.6}")).collect();
            s.push_str(&format!("{},{}\n", tier.name(), cells.join(",")));
        }
        s
    }

    pub fn ivf_points_csv(&self) -> String {
        let mut s = String::from("trial,bin,ivf,quality\n");
        for p in &self.summary.curve {
            s.push_str(&format!("{},{},{:.6},{:.6}\n", p.trial, p.bin, p.ivf, p.quality));
        }
        s
    }

    pub fn success_csv(&self) -> String {
        let mut s = String::from("tier,mean,std\n");
        for t in &self.summary.tiers {
            s.push_str(&format!("{},{:.3},{:.3}\n", t.tier.name(), t.mean, t.std));
        }
        s
    }

    /// Compares the run with the published tier table and effect size.
    pub fn reference_checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for (t, target) in self.summary.tiers.iter().zip(REFERENCE_SUCCESS) {
            out.push(Check::new(
                format!("{} mean {:.2} within 3 of {target}", t.tier.name(), t.mean),
                (t.mean - target).abs() <= 3.0,
            ));
            out.push(Check::new(
                format!("{} std {:.2} in [0.5, 4]", t.tier.name(), t.std),
                (0.5..=4.0).contains(&t.std),
            ));
        }
        let means: Vec<f64> = self.summary.tiers.iter().map(|t| t.mean).collect();
        out.push(Check::new(
            format!("tier ordering {means:.2?}"),
            means.windows(2).all(|w| w[0] <= w[1]),
        ));
        out.push(Check::new(
            format!("welch t {:.2} >= 5, p {:.2e} <= 1e-3", self.ttest.t, self.ttest.p),
            self.ttest.t >= 5.0 && self.ttest.p <= 1e-3,
        ));
        out.push(Check::new(
            format!("ivf slope {:.4} > 0 with p {:.2e} < 0.05", self.ivf_fit.slope, self.ivf_fit.p),
            self.ivf_fit.slope > 0.0 && self.ivf_fit.p < 0.05,
        ));
        let ev = &self.summary.events;
        for (name, rate) in [("dip", ev.dip_rate()), ("breakthrough", ev.breakthrough_rate())] {
            out.push(Check::new(format!("{name} rate {rate:.3} in 0.15 +- 0.03"), (rate - 0.15).abs() <= 0.03));
        }
        let critical = &self.summary.heatmap[0];
        out.push(Check::new(
            format!("critical allocation {critical:.3?} non-increasing, top >= 0.35"),
            critical.windows(2).all(|w| w[0] >= w[1]) && critical[0] >= 0.35,
        ));
        out
    }
}

/// Published per-tier success rates in percent, Critical first.
pub const REFERENCE_SUCCESS: [f64; 4] = [94.1, 97.8, 98.0, 98.5];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
        }
    }
}
