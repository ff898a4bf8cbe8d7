mod common;

use common::{compare_with_reference, random_orders, ref_allocate};
use echelon::env::{allocate, EnvState};
use echelon::supply_net::SupplyNetwork;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_reference_stepper_net6() {
    compare_with_reference("net6", 100, 50).unwrap();
}

#[test]
fn matches_reference_stepper_net12() {
    compare_with_reference("net12", 100, 50).unwrap();
}

#[test]
fn allocation_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let k = rng.gen_range(1..5);
        let requests: Vec<i64> = (0..k).map(|_| rng.gen_range(0..30)).collect();
        let ids: Vec<usize> = (0..k).map(|j| 3 * j + 1).collect();
        let available = rng.gen_range(0..60);
        assert_eq!(allocate(available, &requests, &ids), ref_allocate(available, &requests, &ids));
    }
}

#[test]
fn stepping_after_the_horizon_fails() {
    let mut net = SupplyNetwork::builtin("net6").unwrap();
    net.horizon = 2;
    let (mut state, _) = EnvState::reset(&net, 0);
    let zeros = vec![0; net.len()];
    state.step(&net, &zeros).unwrap();
    assert!(state.step(&net, &zeros).unwrap().done);
    assert!(state.step(&net, &zeros).is_err());
    assert!(EnvState::reset(&net, 0).0.step(&net, &[0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn allocation_respects_bounds(
        requests in proptest::collection::vec(0i64..50, 1..6),
        available in 0i64..120,
    ) {
        let ids: Vec<usize> = (0..requests.len()).collect();
        let g = allocate(available, &requests, &ids);
        let total: i64 = requests.iter().sum();
        prop_assert_eq!(g.iter().sum::<i64>(), available.min(total));
        for (gi, ri) in g.iter().zip(&requests) {
            prop_assert!(*gi >= 0 && gi <= ri);
        }
    }

    #[test]
    fn stock_stays_non_negative_and_units_are_conserved(
        seed in 0u64..10_000,
        net_idx in 0usize..4,
        order_seed in 0u64..1000,
    ) {
        let name = ["net6", "net12", "net18", "net24"][net_idx];
        let net = SupplyNetwork::builtin(name).unwrap();
        let (mut state, _) = EnvState::reset(&net, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(order_seed);
        let units = |s: &EnvState| -> i64 {
            s.inventory.iter().sum::<i64>() + s.pipeline.iter().map(|p| p.qty).sum::<i64>()
        };
        let mut before = units(&state);
        while !state.is_done() {
            let on_hand = state.inventory.clone();
            let orders = random_orders(&net, &mut rng);
            let res = state.step(&net, &orders).unwrap();
            for i in 0..net.len() {
                prop_assert!(state.inventory[i] >= 0);
                prop_assert!(state.inventory[i] <= net.nodes[i].max_inventory);
                prop_assert!(state.backlog[i].iter().all(|&b| b >= 0));
                prop_assert!(res.info[i].shipped <= on_hand[i] + res.info[i].arrivals);
            }
            // inflow from the external supplier, outflow to customers and overflow
            let external: i64 = (0..net.len())
                .filter(|&i| net.is_source(i))
                .map(|i| res.info[i].order)
                .sum();
            let sold: i64 = net.retail_set().iter().map(|&i| res.info[i].shipped).sum();
            let lost: i64 = res.info.iter().map(|r| r.lost).sum();
            let after = units(&state);
            prop_assert_eq!(after, before + external - sold - lost);
            before = after;
        }
    }
}
