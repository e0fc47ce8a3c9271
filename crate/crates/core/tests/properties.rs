mod support;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use objsearch_core::affinity::{aggregate_logprobs, score_distribution, AffinityDistribution, AffinityTable, TableScorer, TokenLogprobs};
use objsearch_core::baselines::{self, HashEmbedder};
use objsearch_core::env_graph::{EdgeInput, Environment, GroundTruth};
use objsearch_core::metrics::{self, BatchReport, EpisodeRow, FailurePe};
use objsearch_core::planner::{self, DistanceNormalizer, PlannerConfig, WaypointScores};
use objsearch_core::scenario::load_scenario;
use objsearch_core::search_sim::{self, Outcome, PerceptionModel, SimulationParams};

use support::*;

fn scaled(env: &Environment, factor: f64) -> Environment {
    let edges = env
        .edges()
        .iter()
        .map(|e| EdgeInput {
            a: e.a.clone(),
            b: e.b.clone(),
            length: Some(e.length * factor),
        })
        .collect();
    Environment::new(env.waypoints().to_vec(), edges, env.objects().to_vec(), env.rooms().to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_match_simple_path_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=12);
        let extra = rng.gen_range(0..=n / 2);
        let (wps, edges) = random_graph(&mut rng, n, extra);
        let env = Environment::new(wps, edges, vec![], vec![]).unwrap();
        let ids: Vec<String> = env.waypoints().iter().map(|w| w.id.clone()).collect();
        for a in &ids {
            prop_assert_eq!(env.distance(a, a).unwrap(), 0.0);
            for b in &ids {
                let d = env.distance(a, b).unwrap();
                prop_assert_eq!(d, env.distance(b, a).unwrap());
                let oracle = simple_path_distance(&env, a, b);
                prop_assert!((d - oracle).abs() <= 1e-9 * oracle.max(1.0), "{a}->{b}: {d} vs {oracle}");
                for c in &ids {
                    let via = env.distance(a, c).unwrap() + env.distance(c, b).unwrap();
                    prop_assert!(d <= via + 1e-9);
                }
            }
        }
    }

    #[test]
    fn scenario_round_trip_is_stable(seed in any::<u64>()) {
        let text = lattice_scenario_json(12, 6, 4, seed);
        let first = load_scenario(&text).unwrap();
        let again = load_scenario(&first.to_json()).unwrap();
        prop_assert_eq!(&first.env, &again.env);
        prop_assert_eq!(first.to_json(), again.to_json());
    }

    #[test]
    fn aggregate_is_exp_of_mean_and_order_free(values in prop::collection::vec(-10.0f64..=0.0, 1..64), seed in any::<u64>()) {
        let p = aggregate_logprobs(&TokenLogprobs::from_values(&values)).unwrap();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((p - mean.exp()).abs() <= 1e-12);
        prop_assert!(p > 0.0 && p <= 1.0);
        let mut shuffled = values.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let q = aggregate_logprobs(&TokenLogprobs::from_values(&shuffled)).unwrap();
        prop_assert!((p - q).abs() <= 1e-12);
    }

    #[test]
    fn aggregate_is_monotone_in_each_token(values in prop::collection::vec(-10.0f64..=0.0, 1..64), idx in any::<prop::sample::Index>(), bump in 0.001f64..5.0) {
        let i = idx.index(values.len());
        let mut raised = values.clone();
        raised[i] = (raised[i] + bump).min(0.0);
        let lo = aggregate_logprobs(&TokenLogprobs::from_values(&values)).unwrap();
        let hi = aggregate_logprobs(&TokenLogprobs::from_values(&raised)).unwrap();
        prop_assert!(hi >= lo);
    }

    #[test]
    fn normalization_is_scale_invariant(raw in prop::collection::btree_map("[a-z]{1,8}", 1e-6f64..1.0, 1..12), k in 1e-3f64..1e3) {
        let a = AffinityDistribution::from_raw("t", raw.clone()).unwrap();
        let scaled: BTreeMap<_, _> = raw.iter().map(|(l, v)| (l.clone(), v * k)).collect();
        let b = AffinityDistribution::from_raw("t", scaled).unwrap();
        prop_assert!((a.total() - 1.0).abs() <= 1e-9);
        prop_assert!(a.entries.values().all(|&p| p >= 0.0));
        for (l, p) in &a.entries {
            prop_assert!((p - b.entries[l]).abs() <= 1e-12);
        }
    }

    #[test]
    fn distribution_ignores_label_order(raw in prop::collection::btree_map("[a-z]{1,8}", 0.0f64..=1.0, 1..12), seed in any::<u64>()) {
        let mut table = AffinityTable::new(None);
        for (l, v) in &raw {
            table.insert(l, "target", *v);
        }
        let scorer = TableScorer::new(table);
        let mut labels: Vec<String> = raw.keys().cloned().collect();
        let a = score_distribution(&scorer, &labels, "target").unwrap();
        rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        labels.push(labels[0].to_uppercase());
        let b = score_distribution(&scorer, &labels, " Target ").unwrap();
        prop_assert_eq!(&a.entries, &b.entries);
        prop_assert!((a.total() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn bounded_matches_exhaustive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 12, (1, 7));
        let config = PlannerConfig::default();
        let ex = planner::plan_exhaustive(&inst.env, &inst.start, &inst.scores, &config).unwrap();
        let bd = planner::plan_bounded(&inst.env, &inst.start, &inst.scores, &config).unwrap();
        prop_assert_eq!(ex.sequence(), bd.sequence());
        prop_assert_eq!(ex.cost, bd.cost);
        let direct = planner::path_cost(&ex.sequence(), &inst.start, &inst.scores, &inst.env, &config).unwrap();
        prop_assert!((direct - ex.cost).abs() <= 1e-12);
    }

    #[test]
    fn bounded_matches_exhaustive_on_larger_instances(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 14, (8, 9));
        let config = PlannerConfig::default();
        let ex = planner::plan_exhaustive(&inst.env, &inst.start, &inst.scores, &config).unwrap();
        let bd = planner::plan_bounded(&inst.env, &inst.start, &inst.scores, &config).unwrap();
        prop_assert_eq!(ex.sequence(), bd.sequence());
        prop_assert_eq!(ex.cost, bd.cost);
    }

    #[test]
    fn bounded_matches_exhaustive_under_ties(seed in any::<u64>(), k in 2usize..=6) {
        // unit grid, unit edges and equal scores make many orders cost the same
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = 3;
        let wps: Vec<_> = (0..side * side).map(|i| waypoint(&format!("g{i}"), (i % side) as f64, (i / side) as f64)).collect();
        let mut edges = Vec::new();
        for i in 0..side * side {
            if i % side + 1 < side {
                edges.push(edge(&format!("g{i}"), &format!("g{}", i + 1), 1.0));
            }
            if i + side < side * side {
                edges.push(edge(&format!("g{i}"), &format!("g{}", i + side), 1.0));
            }
        }
        let env = Environment::new(wps, edges, vec![], vec![]).unwrap();
        let mut ids: Vec<String> = env.waypoints().iter().map(|w| w.id.clone()).collect();
        rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut rng);
        let scores = WaypointScores::new(ids.iter().take(k).map(|w| (w.clone(), 1.0 / k as f64)).collect());
        let start = ids[rng.gen_range(0..ids.len())].clone();
        let config = PlannerConfig::default();
        let ex = planner::plan_exhaustive(&env, &start, &scores, &config).unwrap();
        let bd = planner::plan_bounded(&env, &start, &scores, &config).unwrap();
        let (_, oracle) = oracle_best(&env, &start, &scores, &config);
        prop_assert_eq!(ex.sequence(), oracle.iter().map(String::as_str).collect::<Vec<_>>());
        prop_assert_eq!(ex.sequence(), bd.sequence());
    }

    #[test]
    fn plan_is_invariant_to_uniform_edge_scaling(seed in any::<u64>(), factor in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 10, (2, 6));
        let config = PlannerConfig::default();
        let a = planner::plan(&inst.env, &inst.start, &inst.scores, &config).unwrap();
        let b = planner::plan(&scaled(&inst.env, factor), &inst.start, &inst.scores, &config).unwrap();
        prop_assert!((a.cost - b.cost).abs() <= 1e-9 * a.cost.abs().max(1.0));
        let oracle_a = oracle_cost(&inst.env, &inst.start, &b.sequence(), &inst.scores, &config);
        prop_assert!((oracle_a - a.cost).abs() <= 1e-9 * a.cost.abs().max(1.0));
    }

    #[test]
    fn moving_a_higher_score_earlier_never_hurts_at_equal_distance(s1 in 0.0f64..1.0, s2 in 0.0f64..1.0, d in 0.5f64..20.0) {
        // symmetric star: both waypoints at distance d from the start and 2d apart
        let env = Environment::new(
            vec![waypoint("s", 0.0, 0.0), waypoint("a", 1.0, 0.0), waypoint("b", -1.0, 0.0)],
            vec![edge("s", "a", d), edge("s", "b", d)],
            vec![],
            vec![],
        ).unwrap();
        let scores = WaypointScores::new(BTreeMap::from([("a".to_string(), s1), ("b".to_string(), s2)]));
        let config = PlannerConfig { distance_normalizer: DistanceNormalizer::None, ..PlannerConfig::default() };
        let ab = planner::path_cost(&["a", "b"], "s", &scores, &env, &config).unwrap();
        let ba = planner::path_cost(&["b", "a"], "s", &scores, &env, &config).unwrap();
        prop_assert!((ba - ab - (s1 - s2) / 2.0).abs() <= 1e-12);
    }

    #[test]
    fn simulator_is_deterministic_and_consistent(seed in any::<u64>(), tp in 0.0f64..=1.0, fp in 0.0f64..0.5) {
        let scenario = farm();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = scenario.env.waypoints()[rng.gen_range(0..scenario.env.len())].id.clone();
        let host = scenario.env.objects()[rng.gen_range(0..scenario.env.objects().len())].instance_id.clone();
        let dist = score_distribution(&TableScorer::new(scenario.affinity_table.clone().unwrap()), &scenario.seen_labels(), "drill").unwrap();
        let scores = planner::waypoint_scores(&scenario.env, &dist).unwrap();
        let plan = planner::plan(&scenario.env, &start, &scores, &PlannerConfig::default()).unwrap();
        let truth = GroundTruth { target_label: "drill".into(), host_object: host.clone() };
        let params = SimulationParams { perception: PerceptionModel::noisy(tp, fp), seed, ..SimulationParams::default() };
        let a = search_sim::run_episode_seeded(&scenario.env, &plan, &truth, &params).unwrap();
        let b = search_sim::run_episode_seeded(&scenario.env, &plan, &truth, &params).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.steps.len() <= plan.steps.len());
        prop_assert!(a.consumed <= a.total_mass + 1e-12);
        let walked: f64 = a.steps.iter().map(|s| s.leg_meters).sum();
        prop_assert!((walked - a.traversed_length).abs() <= 1e-9);
        let floor = if a.outcome == Outcome::Found { a.ideal_length } else { 0.0 };
        prop_assert!(a.traversed_length + 1e-9 >= floor);
        if a.outcome == Outcome::Found {
            prop_assert_eq!(&a.steps.last().unwrap().waypoint, &a.host_waypoint);
        }
    }

    #[test]
    fn perfect_perception_finds_iff_host_precedes_threshold(seed in any::<u64>()) {
        let scenario = farm();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = scenario.env.waypoints()[rng.gen_range(0..scenario.env.len())].id.clone();
        let host = scenario.env.objects()[rng.gen_range(0..scenario.env.objects().len())].clone();
        let dist = score_distribution(&TableScorer::new(scenario.affinity_table.clone().unwrap()), &scenario.seen_labels(), "drill").unwrap();
        let scores = planner::waypoint_scores(&scenario.env, &dist).unwrap();
        let plan = planner::plan(&scenario.env, &start, &scores, &PlannerConfig::default()).unwrap();
        let truth = GroundTruth { target_label: "drill".into(), host_object: host.instance_id.clone() };
        let params = SimulationParams::default();
        let r = search_sim::run_episode_seeded(&scenario.env, &plan, &truth, &params).unwrap();
        // walk the plan by hand
        let mut consumed = 0.0;
        let mut expected = Outcome::Exhausted;
        for s in &plan.steps {
            if s.waypoint == host.waypoint {
                expected = Outcome::Found;
                break;
            }
            consumed += s.score;
            if consumed >= 0.95 * plan.total_mass - 1e-12 {
                expected = Outcome::Lost;
                break;
            }
        }
        prop_assert_eq!(r.outcome, expected);
    }

    #[test]
    fn spl_never_exceeds_sr(outcomes in prop::collection::vec((0u8..4, 0.0f64..50.0, 0.0f64..50.0), 1..40), rule in prop_oneof![Just(FailurePe::Zero), Just(FailurePe::Traversed)]) {
        let rows: Vec<EpisodeRow> = outcomes
            .iter()
            .enumerate()
            .map(|(i, &(o, extra, ideal))| {
                let outcome = [Outcome::Found, Outcome::FoundFalse, Outcome::Lost, Outcome::Exhausted][o as usize];
                let traversed = if outcome == Outcome::Found { ideal + extra } else { extra };
                let r = episode(outcome, traversed, ideal);
                EpisodeRow::from_result("m", i, "h", &r, rule).unwrap()
            })
            .collect();
        let report = BatchReport::from_rows("m", rows).unwrap();
        let s = &report.summary;
        prop_assert!(s.spl <= s.sr + 1e-15);
        prop_assert!((0.0..=1.0).contains(&s.sr));
        if let Some(m) = s.pe_mean {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        for r in &report.rows {
            if let Some(pe) = r.pe_path {
                prop_assert!(pe > 0.0 && pe <= 1.0);
            }
        }
    }

    #[test]
    fn metrics_are_invariant_to_length_scaling(traversed in 0.1f64..100.0, ideal in 0.1f64..100.0, k in 0.01f64..100.0) {
        let t = traversed.max(ideal);
        let a = metrics::path_efficiency_of(t, ideal).unwrap().unwrap();
        let b = metrics::path_efficiency_of(t * k, ideal * k).unwrap().unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        let sa = metrics::spl_term(true, t, ideal).unwrap();
        let sb = metrics::spl_term(true, t * k, ideal * k).unwrap();
        prop_assert!((sa - sb).abs() <= 1e-12);
    }

    #[test]
    fn ablations_ignore_distance(factor in 0.1f64..10.0, start_idx in 0usize..20) {
        let scenario = farm();
        let env2 = scaled(&scenario.env, factor);
        let start = scenario.env.waypoints()[start_idx].id.clone();
        let dist = score_distribution(&TableScorer::new(scenario.affinity_table.clone().unwrap()), &scenario.seen_labels(), "drill").unwrap();
        let scores = planner::waypoint_scores(&scenario.env, &dist).unwrap();
        let config = PlannerConfig::default();
        let ho1 = baselines::hottest_object_plan(&scenario.env, &dist, &start, &config).unwrap();
        let ho2 = baselines::hottest_object_plan(&env2, &dist, &start, &config).unwrap();
        prop_assert_eq!(ho1.sequence(), ho2.sequence());
        let hw1 = baselines::hottest_waypoint_plan(&scenario.env, &scores, &start, &config).unwrap();
        let hw2 = baselines::hottest_waypoint_plan(&env2, &scores, &start, &config).unwrap();
        prop_assert_eq!(hw1.sequence(), hw2.sequence());
    }

    #[test]
    fn room_search_visits_each_room_once(start_idx in 0usize..20, target in prop::sample::select(vec!["drill", "watering can", "hammer"])) {
        let scenario = farm();
        let start = scenario.env.waypoints()[start_idx].id.clone();
        let rooms = scenario.room_scores.clone().unwrap();
        let dist = baselines::room_scores(&rooms, &scenario.room_names(), target).unwrap();
        prop_assert!((dist.entries.values().sum::<f64>() - 1.0).abs() <= 1e-9);
        let ranking = baselines::similarity_rank(&HashEmbedder::default(), &scenario.seen_labels(), target).unwrap();
        let plan = baselines::plan_room_search(&scenario.env, &dist, &start, &PlannerConfig::default(), &ranking).unwrap();
        let seq = plan.sequence();
        let mut seen = std::collections::BTreeSet::new();
        for w in &seq {
            prop_assert!(seen.insert(*w), "waypoint {w} repeated");
        }
        // rooms appear as contiguous blocks
        let room_of = |w: &str| scenario.env.rooms().iter().find(|r| r.waypoints.contains(w)).map(|r| r.name.clone());
        let mut blocks: Vec<String> = Vec::new();
        for w in &seq {
            let r = room_of(w).unwrap();
            if blocks.last() != Some(&r) {
                prop_assert!(!blocks.contains(&r), "room {r} entered twice");
                blocks.push(r);
            }
        }
    }

    #[test]
    fn similarity_rank_ignores_label_order(seed in any::<u64>()) {
        let scenario = farm();
        let mut labels = scenario.seen_labels();
        let a = baselines::similarity_rank(&HashEmbedder::default(), &labels, "drill").unwrap();
        rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let b = baselines::similarity_rank(&HashEmbedder::default(), &labels, "drill").unwrap();
        prop_assert_eq!(a, b);
    }
}

fn episode(outcome: Outcome, traversed: f64, ideal: f64) -> search_sim::EpisodeResult {
    search_sim::EpisodeResult {
        outcome,
        start: "s".into(),
        host_waypoint: "h".into(),
        traversed_length: traversed,
        ideal_length: ideal,
        consumed: 0.0,
        total_mass: 1.0,
        steps: vec![],
        seed: 0,
    }
}
