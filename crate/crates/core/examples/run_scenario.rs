//! Runs a scenario file and prints the plan, the delegation tree and the
//! per-round phase sequence.

use orgsim::config::ScenarioConfig;
use orgsim::orchestrator::{report_chain, run_episode, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/translation.toml".into());
    let seed = std::env::args().nth(2).map_or(Ok(7), |s| s.parse())?;
    let (cfg, _) = ScenarioConfig::load(&path)?;
    let sc = Scenario::from_config(&cfg)?;
    let (plan, log) = run_episode(&sc, seed)?;
    println!("{}", serde_json::to_string_pretty(&plan)?);
    print!("{}", report_chain(&log).render());
    for r in 1..=plan.rounds {
        let names: Vec<&str> = log.phase_sequence(r).iter().map(|p| p.name()).collect();
        println!("round {r}: {}", names.join(" -> "));
    }
    for e in log.events().iter().filter(|e| e.round <= 2) {
        println!("{} {:<11} {:<10} {:<14} {}", e.round, e.phase.name(), e.role, e.kind, e.detail);
    }
    Ok(())
}
