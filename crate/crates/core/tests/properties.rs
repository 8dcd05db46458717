mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orgsim::bandit::{ArmPosterior, BanditConfig};
use orgsim::ctmdp::{bellman_backup, greedy_policy, solve_value_iteration, DEFAULT_TIE_TOL};
use orgsim::game::{solve_spe, verify_spe, GameSpec};
use orgsim::infotheory::{renyi_divergence, Distribution};
use orgsim::memory::{
    check, CompareOp, KnowledgeBase, KnowledgeRule, LongTermMemory, Predicate, Proposal, Record, RuleScope,
    ShortTermMemory, Value,
};
use orgsim::tools::kmeans_segment;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn value_iteration_is_a_fixed_point_and_dominates_every_policy(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng, 4, 3);
        let v = solve_value_iteration(&model, 1e-12, 1_000_000).unwrap();
        let tv = bellman_backup(&model, &v).unwrap();
        for (a, b) in tv.values.iter().zip(&v.values) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        let spec = model.spec();
        let random: Vec<usize> = spec.admissible.iter().map(|a| a[rng.random_range(0..a.len())]).collect();
        let vr = common::evaluate_policy(spec, &random);
        for (opt, other) in v.values.iter().zip(&vr) {
            prop_assert!(opt + 1e-8 >= *other);
        }
        let greedy = greedy_policy(&model, &v, DEFAULT_TIE_TOL);
        let vg = common::evaluate_policy(spec, &greedy.choice);
        for (a, b) in vg.iter().zip(&v.values) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn spe_passes_verification_and_ignores_utility_shifts(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_game(&mut rng, 3, 4);
        let path = solve_spe(&g);
        prop_assert!(verify_spe(&g, &path).is_equilibrium());
        let level = rng.random_range(0..g.num_levels());
        let shifted = GameSpec::from_fn(g.levels().to_vec(), g.contexts().to_vec(), |c, p| {
            (0..g.num_levels()).map(|l| g.utility(c, p, l) + if l == level { shift } else { 0.0 }).collect()
        }).unwrap();
        prop_assert_eq!(solve_spe(&shifted).decision, path.decision);
    }

    #[test]
    fn renyi_is_nonnegative_and_zero_on_the_diagonal(
        w in prop::collection::vec(0.01f64..1.0, 2..7),
        v in prop::collection::vec(0.01f64..1.0, 2..7),
        alpha in 0.05f64..8.0,
    ) {
        let n = w.len().min(v.len());
        let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let p = Distribution::from_weights(labels.clone(), w[..n].to_vec()).unwrap();
        let q = Distribution::from_weights(labels, v[..n].to_vec()).unwrap();
        prop_assert!(renyi_divergence(&p, &q, alpha).unwrap() >= 0.0);
        prop_assert!(renyi_divergence(&p, &p, alpha).unwrap() <= 1e-12);
    }

    #[test]
    fn incremental_posterior_matches_dense_solve(
        obs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -0.5f64..1.5), 1..25),
        probe in (-2.0f64..2.0, -2.0f64..2.0),
    ) {
        let cfg = BanditConfig::new(1, 2);
        let mut arm = ArmPosterior::new();
        let x = [probe.0, probe.1];
        let mut last_var = f64::INFINITY;
        for (a, b, r) in obs {
            arm.update(&cfg, &[a, b], r).unwrap();
            let (_, var) = arm.posterior_predict(&cfg, &x).unwrap();
            prop_assert!(var <= last_var + 1e-12);
            last_var = var;
        }
        let (m, var) = arm.posterior_predict(&cfg, &x).unwrap();
        let (dm, dvar) = common::gp_dense(&arm, &cfg, &x);
        prop_assert!((m - dm).abs() <= 1e-8, "mean {} vs {}", m, dm);
        prop_assert!((var - dvar.max(0.0)).abs() <= 1e-8, "var {} vs {}", var, dvar);
    }

    #[test]
    fn violations_do_not_depend_on_rule_order(cost in 0.0f64..200.0, staff in 0.0f64..40.0, rot in 0usize..3) {
        let rule = |id: &str, field: &str, op, v: f64| KnowledgeRule {
            id: id.into(),
            scope: RuleScope::Global,
            predicate: Predicate::Compare { field: field.into(), op, value: Value::Num(v) },
            message: format!("{field} limit"),
        };
        let kb = KnowledgeBase::new(
            ["cost".to_string(), "staff".to_string()],
            vec![
                rule("budget", "cost", CompareOp::Le, 100.0),
                rule("floor", "cost", CompareOp::Ge, 10.0),
                rule("team", "staff", CompareOp::Lt, 25.0),
            ],
        ).unwrap();
        let order: Vec<usize> = (0..3).map(|i| (i + rot) % 3).collect();
        let fields: Record = [("cost".to_string(), Value::Num(cost)), ("staff".to_string(), Value::Num(staff))].into();
        let p = Proposal::new("CFO", fields);
        let ltm = LongTermMemory::new();
        let a = check(&p, &kb, &ltm).unwrap();
        let b = check(&p, &kb.with_rules_reordered(&order), &ltm).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn stm_never_exceeds_capacity(cap in 1usize..10, n in 0usize..30) {
        let mut stm = ShortTermMemory::new(cap);
        for r in 0..n {
            stm.append(orgsim::memory::MemoryEntry {
                round: r as u64,
                role: "r".into(),
                kind: orgsim::memory::EntryKind::Observation,
                payload: Record::new(),
                timestamp: r as u64,
            });
            prop_assert!(stm.len() <= cap);
        }
        prop_assert_eq!(stm.len(), n.min(cap));
    }

    #[test]
    fn kmeans_inertia_never_rises_and_points_sit_at_their_nearest_centroid(
        pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 6..40),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        let points: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
        let res = kmeans_segment(&points, k, seed, 100).unwrap();
        prop_assert!(res.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        for (p, &c) in points.iter().zip(&res.assignments) {
            let own = d2(p, &res.centroids[c]);
            for other in &res.centroids {
                prop_assert!(own <= d2(p, other) + 1e-9);
            }
        }
    }
}
