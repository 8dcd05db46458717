mod common;

use orgsim::config::{ConfigError, ScenarioConfig};
use orgsim::orchestrator::{report_chain, run_episode, Phase, Scenario};

fn load(name: &str) -> Scenario {
    let (cfg, _) = ScenarioConfig::load(common::scenario_path(name)).unwrap();
    Scenario::from_config(&cfg).unwrap()
}

fn translation_with(from: &str, to: &str) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(common::scenario_path("translation.toml")).unwrap();
    assert!(text.contains(from), "fixture lacks {from:?}");
    Scenario::from_config(&ScenarioConfig::parse(&text.replacen(from, to, 1))?)
}

#[test]
fn minimal_scenario_settles_in_two_rounds() {
    let sc = load("minimal.toml");
    assert_eq!(sc.roles.len(), 1);
    let (plan, log) = run_episode(&sc, 0).unwrap();
    assert!(plan.converged);
    assert_eq!(plan.rounds, 2);
    assert_eq!(report_chain(&log).nodes().len(), 1);
}

#[test]
fn translation_hierarchy_closes_every_delegation() {
    let sc = load("translation.toml");
    assert_eq!(sc.roles.len(), 4);
    assert_eq!(sc.num_levels(), 3);
    let (plan, log) = run_episode(&sc, 42).unwrap();
    assert!(plan.converged);
    assert!(plan.escalations.is_empty());
    let tree = report_chain(&log);
    assert_eq!(tree.roots.len(), 1);
    assert_eq!(tree.roots[0].shape(), "CEO->CTO->MM->PM");
    assert!(tree.all_closed());
    let ctx = &plan.solution.contexts["launch"];
    assert_eq!(ctx["strategy"].action, "enterprise");
    assert_eq!(ctx["technology"].action, "vendor_api");
    assert_eq!(ctx["execution"].action, "direct_sales");
}

#[test]
fn round_one_runs_top_down_and_reports_flow_up() {
    let (_, log) = run_episode(&load("translation.toml"), 42).unwrap();
    let first: Vec<(String, String)> = log
        .events()
        .iter()
        .filter(|e| e.round == 1 && matches!(e.kind.as_str(), "action" | "tool"))
        .map(|e| (e.role.clone(), e.kind.clone()))
        .collect();
    let expect = [("CEO", "action"), ("CTO", "action"), ("MM", "action"), ("PM", "action"), ("PM", "tool")];
    assert_eq!(first.len(), expect.len(), "{first:?}");
    for ((r, k), (er, ek)) in first.iter().zip(expect) {
        assert_eq!((r.as_str(), k.as_str()), (er, ek));
    }
    let superior = |r: &str| match r {
        "PM" => "MM",
        "MM" => "CTO",
        "CTO" => "CEO",
        _ => panic!("{r} has no superior"),
    };
    let reports: Vec<_> = log.events().iter().filter(|e| e.kind == "report").collect();
    assert_eq!(reports.len(), 3);
    for e in reports {
        assert_eq!(e.detail["to"].as_str(), Some(superior(&e.role)));
    }
}

#[test]
fn phases_run_in_fixed_order_each_round() {
    let (plan, log) = run_episode(&load("translation.toml"), 9).unwrap();
    for r in 1..=plan.rounds {
        let seq = log.phase_sequence(r);
        assert_eq!(seq.first(), Some(&Phase::Vertical));
        assert_eq!(seq.last(), Some(&Phase::Convergence));
        assert!(seq.windows(2).all(|w| w[0] < w[1]), "round {r}: {seq:?}");
    }
}

#[test]
fn single_round_leaves_open_delegations() {
    let sc = translation_with("max_rounds = 50", "max_rounds = 1").unwrap();
    let (plan, log) = run_episode(&sc, 42).unwrap();
    assert_eq!(plan.rounds, 1);
    assert!(!plan.converged);
    let tree = report_chain(&log);
    assert!(tree.open_count() > 0);
    assert!(tree.render().contains("OPEN"));
}

#[test]
fn undeclared_tool_is_rejected_by_name() {
    let err = translation_with(
        r#"enabled = ["calculator", "corpus_search", "kmeans_segment"]"#,
        r#"enabled = ["calculator", "corpus_search"]"#,
    )
    .unwrap_err();
    assert!(err.to_string().contains("kmeans_segment"), "{err}");
}

#[test]
fn same_seed_same_log() {
    let sc = load("translation.toml");
    let (_, a) = run_episode(&sc, 5).unwrap();
    let (_, b) = run_episode(&sc, 5).unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
}
