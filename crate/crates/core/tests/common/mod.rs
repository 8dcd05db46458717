//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use orgsim::bandit::{ArmPosterior, BanditConfig};
use orgsim::ctmdp::{RewardForm, RoleModel, RoleModelSpec};
use orgsim::game::{GameSpec, Level};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Random valid model; exit rates are scaled so every pair's coefficient
/// stays below 0.95.
pub fn random_model(rng: &mut ChaCha8Rng, max_states: usize, max_actions: usize) -> RoleModel {
    let n = rng.random_range(1..=max_states);
    let m = rng.random_range(1..=max_actions);
    let gamma: f64 = rng.random_range(0.1..=1.0);
    let mut admissible = Vec::with_capacity(n);
    for _ in 0..n {
        let mut a: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.7)).collect();
        if a.is_empty() {
            a.push(rng.random_range(0..m));
        }
        admissible.push(a);
    }
    let mut durations = vec![vec![0.0; m]; n];
    let mut rates = vec![vec![vec![0.0; n]; m]; n];
    let mut rewards = vec![vec![0.0; m]; n];
    for s in 0..n {
        for a in 0..m {
            let w: f64 = rng.random_range(0.1..3.0);
            durations[s][a] = w;
            rewards[s][a] = rng.random_range(-1.0..1.0);
            let span = (1.0 - (-gamma * w).exp()) / gamma;
            let raw: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.75) { rng.random_range(0.0..1.0) } else { 0.0 })
                .collect();
            let total: f64 = raw.iter().sum();
            if total > 0.0 {
                let target = rng.random_range(0.05..0.95) / span;
                for (t, r) in rates[s][a].iter_mut().zip(&raw) {
                    *t = r / total * target;
                }
            }
        }
    }
    let form = if rng.random_bool(0.5) {
        RewardForm::Discounted
    } else {
        RewardForm::Undiscounted
    };
    let mut spec = RoleModelSpec::dense(n, m, rates, rewards, durations, gamma, form);
    spec.admissible = admissible;
    RoleModel::try_from(spec).expect("generator keeps beta < 1")
}

fn span(spec: &RoleModelSpec, s: usize, a: usize) -> f64 {
    let g = spec.discount;
    (1.0 - (-g * spec.durations[s][a]).exp()) / g
}

fn reward(spec: &RoleModelSpec, s: usize, a: usize) -> f64 {
    match spec.reward_form {
        RewardForm::Discounted => spec.rewards[s][a] * span(spec, s, a),
        RewardForm::Undiscounted => spec.rewards[s][a] * spec.durations[s][a],
    }
}

/// Exact value of a stationary deterministic policy: `(I - M) v = R`.
pub fn evaluate_policy(spec: &RoleModelSpec, policy: &[usize]) -> Vec<f64> {
    let n = spec.states.len();
    let mut a_mat = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let a = policy[s];
        let sp = span(spec, s, a);
        for t in 0..n {
            a_mat[(s, t)] -= sp * spec.rates[s][a][t];
        }
        b[s] = reward(spec, s, a);
    }
    let v = a_mat.lu().solve(&b).expect("I - M is invertible when beta < 1");
    v.iter().copied().collect()
}

pub struct BruteForce {
    pub values: Vec<f64>,
    /// Every policy whose value matches the optimum in all states.
    pub optimal: Vec<Vec<usize>>,
}

pub fn brute_force(model: &RoleModel) -> BruteForce {
    let spec = model.spec();
    let n = spec.states.len();
    let mut policies = vec![vec![]];
    for s in 0..n {
        let mut next = Vec::new();
        for p in &policies {
            for &a in &spec.admissible[s] {
                let mut q: Vec<usize> = p.clone();
                q.push(a);
                next.push(q);
            }
        }
        policies = next;
    }
    let evaluated: Vec<(Vec<usize>, Vec<f64>)> = policies.into_iter().map(|p| {
        let v = evaluate_policy(spec, &p);
        (p, v)
    }).collect();
    let mut best = vec![f64::NEG_INFINITY; n];
    for (_, v) in &evaluated {
        for s in 0..n {
            best[s] = best[s].max(v[s]);
        }
    }
    let optimal = evaluated
        .into_iter()
        .filter(|(_, v)| v.iter().zip(&best).all(|(a, b)| (a - b).abs() <= 1e-9))
        .map(|(p, _)| p)
        .collect();
    BruteForce { values: best, optimal }
}

pub fn random_game(rng: &mut ChaCha8Rng, max_levels: usize, max_actions: usize) -> GameSpec {
    let m = rng.random_range(1..=max_levels);
    let levels: Vec<Level> = (0..m)
        .map(|l| Level {
            label: format!("L{l}"),
            actions: (0..rng.random_range(1..=max_actions)).map(|a| format!("a{a}")).collect(),
        })
        .collect();
    let contexts: Vec<String> = (0..rng.random_range(1..=3)).map(|c| format!("c{c}")).collect();
    GameSpec::from_fn(levels, contexts, |_, _| (0..m).map(|_| rng.random_range(-10.0..10.0)).collect())
        .expect("well-formed game")
}

/// Tabulated backward induction: for every prefix, the completed profile the
/// remaining levels would play, then the leader's best entry.
pub fn spe_oracle(g: &GameSpec, context: usize) -> Vec<usize> {
    fn complete(g: &GameSpec, c: usize, prefix: Vec<usize>) -> Vec<usize> {
        let l = prefix.len();
        if l == g.num_levels() {
            return prefix;
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for a in 0..g.num_actions(l) {
            let mut p = prefix.clone();
            p.push(a);
            let full = complete(g, c, p);
            let u = g.utility(c, &full, l);
            if best.as_ref().is_none_or(|(bu, _)| u > *bu) {
                best = Some((u, full));
            }
        }
        best.expect("at least one action").1
    }
    complete(g, context, Vec::new())
}

/// Dense GP posterior at `x` from the arm's stored observations.
pub fn gp_dense(arm: &ArmPosterior, cfg: &BanditConfig, x: &[f64]) -> (f64, f64) {
    let xs = arm.contexts();
    let n = xs.len();
    let prior = cfg.kernel.eval(x, x);
    if n == 0 {
        return (0.0, prior);
    }
    let noise = cfg.obs_noise * cfg.obs_noise + cfg.jitter;
    let k = DMatrix::from_fn(n, n, |i, j| cfg.kernel.eval(&xs[i], &xs[j]) + if i == j { noise } else { 0.0 });
    let kx = DVector::from_fn(n, |i, _| cfg.kernel.eval(&xs[i], x));
    let y = DVector::from_column_slice(arm.rewards());
    let lu = k.lu();
    let alpha = lu.solve(&y).expect("positive definite");
    let beta = lu.solve(&kx).expect("positive definite");
    (kx.dot(&alpha), prior - kx.dot(&beta))
}
