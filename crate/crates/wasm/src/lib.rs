//! JSON-returning bindings used by `www/index.html`.

use serde_json::json;
use wasm_bindgen::prelude::*;

use orgsim::bandit::{run_synthetic, run_uniform_baseline, BanditConfig, LinearArm, SyntheticEnv};
use orgsim::infotheory::{renyi_divergence, Distribution};
use orgsim::robustness::{run_experiment, RobustnessConfig};

fn error(msg: impl std::fmt::Display) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

/// Delegation experiment with default parameters and `kappa_critical`
/// replacing the Critical-tier softmax sharpness.
#[wasm_bindgen]
pub fn simulate_robustness(seed: u32, trials: u32, kappa_critical: f64) -> String {
    let mut cfg = RobustnessConfig::default();
    cfg.kappa[0] = kappa_critical;
    if let Err(e) = cfg.validate() {
        return error(e);
    }
    match run_experiment(&cfg, trials.max(2) as usize, seed as u64) {
        Ok(exp) => json!({
            "agents": cfg.trust.agents,
            "tiers": exp.summary.tiers,
            "baseline": exp.baseline.tiers,
            "heatmap": exp.summary.heatmap,
            "ttest": exp.ttest,
        })
        .to_string(),
        Err(e) => error(e),
    }
}

fn parse_weights(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: `{s}`")))
        .collect()
}

/// `D_α(p‖q)` in bits for α on a grid over `(0, alpha_max]`. Both inputs are
/// comma-separated weights, normalised here.
#[wasm_bindgen]
pub fn renyi_curve(p: &str, q: &str, alpha_max: f64, points: u32) -> String {
    let build = |text: &str| -> Result<Distribution, String> {
        let w = parse_weights(text)?;
        let labels = (0..w.len()).map(|i| i.to_string()).collect();
        Distribution::from_weights(labels, w).map_err(|e| e.to_string())
    };
    let (p, q) = match (build(p), build(q)) {
        (Ok(p), Ok(q)) if p.len() == q.len() => (p, q),
        (Ok(_), Ok(_)) => return error("p and q need the same number of outcomes"),
        (Err(e), _) | (_, Err(e)) => return error(e),
    };
    let n = points.clamp(2, 400);
    let mut curve = Vec::with_capacity(n as usize);
    for i in 1..=n {
        let alpha = alpha_max * i as f64 / n as f64;
        match renyi_divergence(&p, &q, alpha) {
            Ok(d) => curve.push(json!({ "alpha": alpha, "bits": if d.is_finite() { json!(d) } else { json!(null) } })),
            Err(e) => return error(e),
        }
    }
    json!({ "curve": curve }).to_string()
}

/// Cumulative regret of Thompson sampling and of uniform choice on the
/// three-arm, two-feature synthetic problem.
#[wasm_bindgen]
pub fn thompson_regret(seed: u32, rounds: u32) -> String {
    let env = SyntheticEnv {
        arms: vec![
            LinearArm { bias: 0.5, weights: vec![0.3, -0.2] },
            LinearArm { bias: 0.4, weights: vec![-0.1, 0.4] },
            LinearArm { bias: 0.2, weights: vec![0.1, 0.1] },
        ],
        constant_context: None,
    };
    let cfg = BanditConfig::new(3, 2);
    let rounds = rounds.clamp(1, 3000) as usize;
    let ts = run_synthetic(&env, rounds, &cfg, seed as u64);
    let uni = run_uniform_baseline(&env, rounds, &cfg, seed as u64);
    match (ts, uni) {
        (Ok(ts), Ok(uni)) => {
            let cum = |l: &orgsim::bandit::RegretLedger| l.rows.iter().map(|r| r.cumulative).collect::<Vec<_>>();
            json!({ "thompson": cum(&ts), "uniform": cum(&uni) }).to_string()
        }
        (Err(e), _) | (_, Err(e)) => error(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn robustness_has_four_tiers() {
        let v: Value = serde_json::from_str(&simulate_robustness(42, 5, 8.0)).unwrap();
        assert_eq!(v["tiers"].as_array().unwrap().len(), 4);
        assert_eq!(v["heatmap"][0].as_array().unwrap().len(), 5);
    }

    #[test]
    fn renyi_curve_is_zero_for_equal_inputs() {
        let v: Value = serde_json::from_str(&renyi_curve("1,1,2", "1 1 2", 3.0, 10)).unwrap();
        for pt in v["curve"].as_array().unwrap() {
            assert!(pt["bits"].as_f64().unwrap().abs() < 1e-12);
        }
        let bad: Value = serde_json::from_str(&renyi_curve("1,x", "1,1", 2.0, 5)).unwrap();
        assert!(bad["error"].is_string());
    }

    #[test]
    fn thompson_beats_uniform() {
        let v: Value = serde_json::from_str(&thompson_regret(3, 400)).unwrap();
        let last = |k: &str| v[k].as_array().unwrap().last().unwrap().as_f64().unwrap();
        assert!(last("thompson") < last("uniform"));
    }
}
