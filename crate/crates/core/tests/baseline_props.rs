mod common;

use common::{reference_profit, toy, toy_grid, toy_search};
use echelon::baseline::{optimize_static, simulate_static, SearchOptions, StaticPolicy};
use echelon::supply_net::SupplyNetwork;

#[test]
fn production_profit_matches_reference_on_the_toy_grid() {
    let net = toy();
    for ((s, big_s), want) in toy_grid(&net) {
        let got = simulate_static(&StaticPolicy::uniform(1, s, big_s), &net, 1, net.horizon, 0).unwrap();
        assert!((got - want).abs() < 1e-9, "({s}, {big_s}): {got} vs {want}");
    }
}

#[test]
fn search_recovers_the_grid_optimum() {
    for seed in 0..3 {
        let r = toy_search(seed);
        assert!(!r.truncated);
        assert!(r.monotone);
        assert!((r.grid_best - r.found).abs() <= r.slack, "{r:?}");
        let big_s = r.found_policy.1;
        assert!(r.best_order_up_to.iter().any(|&o| (o - big_s).abs() <= 1), "{r:?}");
    }
}

#[test]
fn zero_policy_matches_reference_trace() {
    let net = SupplyNetwork::builtin("net6").unwrap();
    for seed in 0..5 {
        let zero = vec![(0, 0); net.len()];
        let want = reference_profit(&net, &zero, seed);
        let got = simulate_static(&StaticPolicy { levels: zero }, &net, 1, net.horizon, seed).unwrap();
        assert!((got - want).abs() < 1e-9);
        assert!(got <= 0.0 || net.nodes.iter().any(|n| n.initial_inventory > 0));
    }
}

#[test]
fn static_policy_matches_reference_on_net12() {
    let net = SupplyNetwork::builtin("net12").unwrap();
    let levels: Vec<(i64, i64)> = net
        .nodes
        .iter()
        .map(|n| (n.max_inventory / 4, n.max_inventory / 2))
        .collect();
    let policy = StaticPolicy { levels: levels.clone() };
    let got = simulate_static(&policy, &net, 3, net.horizon, 77).unwrap();
    let want = (0..3).map(|k| reference_profit(&net, &levels, 77 + k)).sum::<f64>() / 3.0;
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn common_random_numbers_make_search_reproducible() {
    let net = SupplyNetwork::builtin("net6").unwrap();
    let p = StaticPolicy::uniform(net.len(), 10, 40);
    let a = simulate_static(&p, &net, 5, net.horizon, 123).unwrap();
    assert_eq!(a, simulate_static(&p, &net, 5, net.horizon, 123).unwrap());
    let opts = SearchOptions {
        n_starts: 3,
        budget: 150,
        episodes: 3,
        ..SearchOptions::default()
    };
    let first = optimize_static(&net, &opts);
    let second = optimize_static(&net, &opts);
    assert_eq!(first, second);
    assert!(first.evaluations <= 150);
    for start in &first.starts {
        assert!(start.accepted.windows(2).all(|w| w[1] > w[0]));
        assert!(start.profit >= start.accepted[0]);
    }
}
