mod common;

use common::{leaf_grid, panel, subtree_sum, Oracle};
use hpro::data::{generate_synthetic, SplitSpec, SyntheticConfig};
use hpro::forecasters::{default_space, ForecasterKind, TrialConfig};
use hpro::hpo::{
    argmin, draw_configs, ensemble_mean, evaluate_opt_bu, evaluate_tcv_hier, evaluate_tcv_lowest, make_proxies,
    random_search, reselect_for_new_window, score, select_best, Loss, ObjectiveSpec, ProxySet, TrialFits, TrialOutcome,
    TrialStore,
};
use hpro::hierarchy::aggregate_bottom_up;
use hpro::{Error, ForecastGrid, HierarchyTree, NodeId};
use proptest::prelude::*;

fn naive() -> TrialConfig {
    TrialConfig::new("naive", 0)
}

#[test]
fn tcv_lowest_single_leaf_is_plain_mse() {
    // T=4, H=2, K=1: fit on 1..2, validate on 3..4.
    let p = panel(&[1], vec![vec![1.0, 2.0, 3.0, 5.0, 4.0, 6.0]]);
    let split = SplitSpec::new(4, 2, 1);
    let e = evaluate_tcv_lowest(&p, &split, &ForecasterKind::Naive, &naive(), Loss::Mse).unwrap();
    // naive predicts 2, 2 against 3, 5
    assert_eq!(e.objective, (1.0 + 9.0) / 2.0);
    assert_eq!(e.per_offset, vec![1.0, 9.0]);
}

#[test]
fn naive_is_perfect_on_flat_validation() {
    let p = panel(&[2], vec![vec![1.0, 3.0, 3.0, 3.0, 8.0, 8.0], vec![2.0, 5.0, 5.0, 5.0, 1.0, 1.0]]);
    let split = SplitSpec::new(4, 2, 1);
    assert_eq!(evaluate_tcv_lowest(&p, &split, &ForecasterKind::Naive, &naive(), Loss::Mse).unwrap().objective, 0.0);
    assert_eq!(evaluate_tcv_hier(&p, &split, &ForecasterKind::Naive, &naive(), Loss::Mse).unwrap().objective, 0.0);
}

#[test]
fn perfect_student_scores_zero_everywhere() {
    let p = generate_synthetic(&SyntheticConfig { branching: vec![2, 3], history: 40, horizon: 4, seed: 3, ..Default::default() })
        .unwrap();
    let split = SplitSpec::new(40, 4, 2);
    let oracle = Oracle::exact(&p);
    let cfg = TrialConfig::new("oracle", 0);
    let fits = TrialFits::fit(&p, &split, &oracle, &cfg, true).unwrap();
    let proxies = ProxySet::perfect(&p, &split, 2).unwrap();
    for loss in [Loss::Mse, Loss::Rmsse] {
        for spec in [
            ObjectiveSpec::tcv_lowest(loss),
            ObjectiveSpec::tcv_hier(loss),
            ObjectiveSpec::opt_bu(loss),
            ObjectiveSpec::hpro_top(loss, 3),
            ObjectiveSpec::hpro_avg(loss, 3, 2),
        ] {
            let e = score(&p, &split, &spec, Some(&proxies), &fits).unwrap();
            assert_eq!(e.objective, 0.0, "{}", spec.fingerprint());
            assert!(e.per_offset.iter().all(|&v| v == 0.0));
        }
    }
    assert_eq!(score(&p, &split, &ObjectiveSpec::gold(), None, &fits).unwrap().objective, 0.0);
}

#[test]
fn tcv_hier_hand_aggregation() {
    // Leaves off by +1 each, so the parent is off by +2: (4 + 1) / 2.
    let p = panel(&[2], vec![vec![1.0, 2.0, 3.0, 7.0], vec![4.0, 6.0, 5.0, 2.0]]);
    let split = SplitSpec::new(3, 1, 1);
    let off = Oracle { panel: p.clone(), offset: 1.0 };
    let e = evaluate_tcv_hier(&p, &split, &off, &TrialConfig::new("oracle", 0), Loss::Mse).unwrap();
    assert_eq!(e.objective, 2.5);
}

#[test]
fn hpro_single_term() {
    let p = panel(&[2], vec![vec![1.0, 2.0, 9.0], vec![1.0, 2.0, 9.0]]);
    let split = SplitSpec::new(2, 1, 1);
    let tree = p.tree().clone();
    let fits = TrialFits { test: leaf_grid(&tree, 3, vec![vec![4.0], vec![4.0]]), validation: Vec::new() };
    let mut proxy = ForecastGrid::new(3, 1);
    proxy.insert(NodeId::new(1, 1), vec![9.0]).unwrap();
    let proxies = ProxySet { grid: proxy, levels: 1, provenance: "hand".into() };
    let e = score(&p, &split, &ObjectiveSpec::hpro_top(Loss::Mse, 2), Some(&proxies), &fits).unwrap();
    assert_eq!(e.objective, 1.0);
}

#[test]
fn top_preset_ignores_lower_proxies() {
    let p = generate_synthetic(&SyntheticConfig { branching: vec![2, 2], history: 30, horizon: 3, seed: 1, ..Default::default() })
        .unwrap();
    let split = SplitSpec::new(30, 3, 1);
    let fits = TrialFits::fit(&p, &split, &ForecasterKind::Naive, &naive(), false).unwrap();
    let perfect = ProxySet::perfect(&p, &split, 2).unwrap();
    let mut skewed = perfect.clone();
    for node in p.tree().nodes_at(2) {
        let v: Vec<f64> = skewed.grid.get(node).unwrap().iter().map(|x| x * 3.0 + 7.0).collect();
        skewed.grid.insert(node, v).unwrap();
    }
    let spec = ObjectiveSpec::hpro_top(Loss::Rmsse, 3);
    let a = score(&p, &split, &spec, Some(&perfect), &fits).unwrap();
    let b = score(&p, &split, &spec, Some(&skewed), &fits).unwrap();
    assert_eq!(a, b);
    let avg = ObjectiveSpec::hpro_avg(Loss::Rmsse, 3, 2);
    assert_ne!(score(&p, &split, &avg, Some(&perfect), &fits).unwrap(), score(&p, &split, &avg, Some(&skewed), &fits).unwrap());
}

#[test]
fn single_level_objectives_are_rejected() {
    for spec in [ObjectiveSpec::tcv_hier(Loss::Mse), ObjectiveSpec::opt_bu(Loss::Mse)] {
        assert!(matches!(spec.validate(1), Err(Error::InvalidObjective(_))));
    }
    assert!(ObjectiveSpec::hpro(Loss::Mse, vec![0.5, 0.6]).validate(3).is_err());
    assert!(ObjectiveSpec::hpro(Loss::Mse, vec![1.0]).validate(3).is_err());
}

#[test]
fn missing_proxy_level_is_reported() {
    let p = generate_synthetic(&SyntheticConfig { branching: vec![2, 2], history: 30, horizon: 3, ..Default::default() }).unwrap();
    let split = SplitSpec::new(30, 3, 1);
    let fits = TrialFits::fit(&p, &split, &ForecasterKind::Naive, &naive(), false).unwrap();
    let top_only = ProxySet::perfect(&p, &split, 1).unwrap();
    let err = score(&p, &split, &ObjectiveSpec::hpro_avg(Loss::Mse, 3, 2), Some(&top_only), &fits).unwrap_err();
    assert!(matches!(err, Error::MissingProxyLevel(2)));
}

/// OPT-BU recomputed from scratch: explicit subtree sums and squared errors.
fn opt_bu_oracle(tree: &HierarchyTree, truth: &dyn Fn(NodeId, usize) -> f64, leaves: &ForecastGrid) -> f64 {
    let big_l = tree.num_levels();
    let h = leaves.len();
    let mut total = 0.0;
    for level in 1..big_l {
        let nodes: Vec<NodeId> = tree.nodes_at(level).collect();
        let mut level_sum = 0.0;
        for &node in &nodes {
            let mut se = 0.0;
            for i in 0..h {
                let d = subtree_sum(tree, leaves, node, i) - truth(node, i);
                se += d * d;
            }
            level_sum += se / h as f64;
        }
        total += level_sum / nodes.len() as f64;
    }
    total / (big_l - 1) as f64
}

fn tree_and_grid() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    prop::collection::vec(1usize..=3, 1..=3).prop_flat_map(|branching| {
        let leaves: usize = branching.iter().product();
        let history = prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 8), leaves);
        let forecast = prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), leaves);
        (Just(branching), history, forecast)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn opt_bu_matches_brute_force((branching, history, forecast) in tree_and_grid()) {
        let p = panel(&branching, history);
        let split = SplitSpec::new(5, 3, 1);
        let tree = p.tree().clone();
        let fits = TrialFits { test: leaf_grid(&tree, 6, forecast), validation: Vec::new() };
        let got = score(&p, &split, &ObjectiveSpec::opt_bu(Loss::Mse), None, &fits).unwrap().objective;
        let truth = |n: NodeId, i: usize| p.series(n)[5 + i];
        let want = opt_bu_oracle(&tree, &truth, &fits.test);
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn perfect_proxies_reduce_hpro_to_opt_bu((branching, history, forecast) in tree_and_grid(), loss in prop_oneof![Just(Loss::Mse), Just(Loss::Rmsse)]) {
        let p = panel(&branching, history);
        let split = SplitSpec::new(5, 3, 1);
        let big_l = p.tree().num_levels();
        let fits = TrialFits { test: leaf_grid(&p.tree().clone(), 6, forecast), validation: Vec::new() };
        let proxies = ProxySet::perfect(&p, &split, big_l - 1).unwrap();
        let h = score(&p, &split, &ObjectiveSpec::hpro_uniform(loss, big_l), Some(&proxies), &fits).unwrap();
        let o = score(&p, &split, &ObjectiveSpec::opt_bu(loss), None, &fits).unwrap();
        prop_assert!((h.objective - o.objective).abs() <= 1e-12 * o.objective.max(1.0));
    }

    #[test]
    fn ensemble_commutes_with_aggregation((branching, _h, a) in tree_and_grid(), shift in -10.0f64..10.0, scale in 0.1f64..4.0) {
        let tree = HierarchyTree::balanced(&branching).unwrap();
        let g1 = leaf_grid(&tree, 1, a.clone());
        let g2 = g1.map(|v| v * scale + shift).unwrap();
        let mean_then_agg = aggregate_bottom_up(&tree, &ensemble_mean(&[&g1, &g2]).unwrap()).unwrap();
        let (a1, a2) = (aggregate_bottom_up(&tree, &g1).unwrap(), aggregate_bottom_up(&tree, &g2).unwrap());
        let agg_then_mean = ensemble_mean(&[&a1, &a2]).unwrap();
        for (node, values) in agg_then_mean.iter() {
            for (x, y) in values.iter().zip(mean_then_agg.get(node).unwrap()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}

#[test]
fn draw_configs_examples() {
    let space = default_space(ForecasterKind::Holt);
    assert_eq!(draw_configs("holt", &space, 1, 4).len(), 1);
    assert_eq!(draw_configs("holt", &space, 6, 4), draw_configs("holt", &space, 6, 4));
    assert_ne!(draw_configs("holt", &space, 6, 4), draw_configs("holt", &space, 6, 5));
    let flat = draw_configs("naive", &default_space(ForecasterKind::Naive), 5, 4);
    assert_eq!(flat.len(), 5);
    assert!(flat.iter().all(|c| c.params == flat[0].params));
}

#[test]
fn oracle_teacher_gives_ground_truth() {
    let p = generate_synthetic(&SyntheticConfig { branching: vec![3, 2], history: 36, horizon: 6, seed: 8, ..Default::default() })
        .unwrap();
    let split = SplitSpec::new(36, 6, 1);
    let oracle = Oracle::exact(&p);
    let proxies = make_proxies(&p, &split, &oracle, &oracle_space(), 3, 2, Loss::Mse, 0).unwrap();
    assert_eq!(proxies.grid, ProxySet::perfect(&p, &split, 2).unwrap().grid);
}

fn oracle_space() -> hpro::forecasters::SearchSpace {
    hpro::forecasters::SearchSpace::empty()
}

#[test]
fn naive_teacher_on_flat_series_repeats_last_value() {
    let p = panel(&[2, 2], vec![vec![1.0, 4.0, 4.0, 4.0, 4.0, 9.0]; 4]);
    let split = SplitSpec::new(5, 1, 1);
    let proxies = make_proxies(&p, &split, &ForecasterKind::Naive, &default_space(ForecasterKind::Naive), 2, 2, Loss::Mse, 0).unwrap();
    assert_eq!(proxies.grid.get(NodeId::new(1, 1)).unwrap(), &[16.0]);
    assert_eq!(proxies.grid.get(NodeId::new(2, 2)).unwrap(), &[8.0]);
}

#[test]
fn theta_teacher_is_exact_on_noiseless_lines() {
    let cfg = SyntheticConfig {
        branching: vec![2, 2],
        base: (5.0, 20.0),
        trend_slope: (0.2, 1.5),
        period: 1,
        sigma: 0.0,
        history: 40,
        horizon: 6,
        seed: 12,
        ..Default::default()
    };
    let p = generate_synthetic(&cfg).unwrap();
    let split = SplitSpec::new(40, 6, 1);
    let teacher = ForecasterKind::Theta { period: 1 };
    let proxies = make_proxies(&p, &split, &teacher, &default_space(teacher), 5, 2, Loss::Rmsse, 0).unwrap();
    let truth = ProxySet::perfect(&p, &split, 2).unwrap();
    for (node, values) in proxies.grid.iter() {
        for (a, b) in values.iter().zip(truth.grid.get(node).unwrap()) {
            assert!((a - b).abs() < 1e-4, "{node}: {a} vs {b}");
        }
    }
}

fn stored_search(p: &hpro::data::SeriesPanel, split: &SplitSpec, spec: &ObjectiveSpec, proxies: Option<&ProxySet>) -> TrialStore {
    let model = ForecasterKind::Holt;
    let mut store = random_search("holt", &default_space(model), 12, 21, |c| {
        let fits = TrialFits::fit(p, split, &model, c, spec.kind.needs_validation())?;
        let evaluation = score(p, split, spec, proxies, &fits)?;
        Ok(TrialOutcome { evaluation, leaf_forecasts: Some(fits.test), trained_on: (1, split.history) })
    });
    store.dataset_fingerprint = format!("{}/{}", p.fingerprint(), split.fingerprint());
    store.objective_fingerprint = spec.fingerprint();
    store
}

#[test]
fn reselection_on_the_same_window_is_idempotent() {
    let p = generate_synthetic(&SyntheticConfig { branching: vec![2, 2], history: 48, horizon: 6, seed: 2, ..Default::default() })
        .unwrap();
    let split = SplitSpec::new(48, 6, 1);
    let proxies = ProxySet::perfect(&p, &split, 2).unwrap();
    let model = ForecasterKind::Holt;
    for (spec, prox) in [
        (ObjectiveSpec::hpro_avg(Loss::Rmsse, 3, 2), Some(&proxies)),
        (ObjectiveSpec::tcv_hier(Loss::Rmsse), None),
    ] {
        let store = stored_search(&p, &split, &spec, prox);
        let re = reselect_for_new_window(&store, &p, &split, &model, &spec, prox).unwrap();
        assert_eq!(re.best, select_best(&store).unwrap());
        assert_eq!(re.store.objectives(), store.objectives());
    }
}

#[test]
fn reselection_with_truth_proxies_matches_opt_bu() {
    let p = generate_synthetic(&SyntheticConfig { branching: vec![3, 2], history: 48, horizon: 6, seed: 6, ..Default::default() })
        .unwrap();
    let split = SplitSpec::new(48, 6, 1);
    let model = ForecasterKind::Holt;
    let spec = ObjectiveSpec::hpro_uniform(Loss::Mse, 3);
    let store = stored_search(&p, &split, &ObjectiveSpec::tcv_lowest(Loss::Mse), None);
    let truth = ProxySet::perfect(&p, &split, 2).unwrap();
    let re = reselect_for_new_window(&store, &p, &split, &model, &spec, Some(&truth)).unwrap();
    let opt: Vec<f64> = store.records.iter().map(|r| evaluate_opt_bu(&p, &split, &model, &r.config, Loss::Mse).unwrap()).collect();
    assert_eq!(Some(re.best), argmin(&opt));
}

#[test]
fn reselection_on_a_shifted_window_draws_nothing_new() {
    let p = generate_synthetic(&SyntheticConfig { branching: vec![2, 2], history: 48, horizon: 6, seed: 4, ..Default::default() })
        .unwrap();
    let split = SplitSpec::new(42, 6, 1);
    let spec = ObjectiveSpec::tcv_hier(Loss::Rmsse);
    let store = stored_search(&p, &split, &spec, None);
    let later = SplitSpec::new(48, 6, 1);
    let re = reselect_for_new_window(&store, &p, &later, &ForecasterKind::Holt, &spec, None).unwrap();
    assert_eq!(re.store.len(), store.len());
    let configs = |s: &TrialStore| s.records.iter().map(|r| r.config.clone()).collect::<Vec<_>>();
    assert_eq!(configs(&re.store), configs(&store));
    assert_eq!(re.store.records[0].leaf_forecasts.as_ref().unwrap().start(), 49);

    let other = generate_synthetic(&SyntheticConfig { branching: vec![2, 2], history: 48, horizon: 6, seed: 5, ..Default::default() })
        .unwrap();
    assert!(matches!(
        reselect_for_new_window(&store, &other, &later, &ForecasterKind::Holt, &spec, None),
        Err(Error::FingerprintMismatch { .. })
    ));
}
