//! Property tests over randomly generated instances and walks.

mod common;

use opbeam_core::heuristics::{tsili_probabilities, PrizeOnly, RandomPolicy};
use opbeam_core::{
    cost_level_beam_search, generate_euclidean_instance, greedy_rollout, step_beam_search,
    Instance, PathState, PrizeKind,
};
use proptest::prelude::*;

/// Arbitrary general-OP instance: asymmetric costs in [0, 1), prizes on the
/// percent grid, and a budget that makes a nontrivial fraction of walks
/// feasible.
fn arb_instance() -> impl Strategy<Value = Instance> {
    (2usize..9).prop_flat_map(|n| {
        let costs = proptest::collection::vec(0.0f64..1.0, n * n);
        let prizes = proptest::collection::vec(0u32..=100, n);
        (
            Just(n),
            costs,
            prizes,
            0.0f64..2.0,
            0..n,
            0..n,
        )
            .prop_map(|(n, mut costs, prizes, t_max, start, end)| {
                for i in 0..n {
                    costs[i * n + i] = 0.0;
                }
                let cost: Vec<Vec<f64>> =
                    (0..n).map(|i| costs[i * n..(i + 1) * n].to_vec()).collect();
                let prize: Vec<f64> = prizes.iter().map(|&p| f64::from(p) / 100.0).collect();
                Instance::new(cost, prize, t_max, start, end).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_walks_keep_cached_aggregates_consistent(
        inst in arb_instance(),
        choices in proptest::collection::vec(0usize..64, 0..8),
    ) {
        let mut path = PathState::initial(&inst);
        for c in choices {
            let feasible = path.feasible_extensions(&inst);
            if feasible.is_empty() {
                break;
            }
            path = path.extend(feasible[c % feasible.len()], &inst).unwrap();
            prop_assert!((path.cost_so_far() - path.recomputed_cost(&inst)).abs() < 1e-9);
            prop_assert!((path.prize_so_far() - path.recomputed_prize(&inst)).abs() < 1e-9);
            for &v in path.nodes() {
                prop_assert!(path.is_visited(v));
            }
        }
        if let Ok(closed) = path.close(&inst) {
            prop_assert!(closed.cost_so_far() <= inst.t_max() + 1e-12);
            prop_assert!((closed.cost_so_far() - closed.recomputed_cost(&inst)).abs() < 1e-9);
            prop_assert_eq!(*closed.nodes().last().unwrap(), inst.end());
        }
    }

    #[test]
    fn searches_return_feasible_closed_paths(inst in arb_instance(), k in 1usize..6) {
        let direct_feasible =
            inst.cost(inst.start(), inst.end()) <= inst.t_max();
        let tau = (inst.t_max() / 7.0).max(1e-3);
        let cs = cost_level_beam_search(&inst, &PrizeOnly, k, tau);
        let sb = step_beam_search(&inst, &PrizeOnly, k);
        let gr = greedy_rollout(&inst, &RandomPolicy::new(7));
        for res in [cs, sb, gr] {
            match res {
                Ok(r) => {
                    let p = &r.best_path;
                    prop_assert!(p.is_closed());
                    prop_assert_eq!(p.nodes()[0], inst.start());
                    prop_assert_eq!(*p.nodes().last().unwrap(), inst.end());
                    prop_assert!(p.cost_so_far() <= inst.t_max() + 1e-12);
                    prop_assert!((p.cost_so_far() - p.recomputed_cost(&inst)).abs() < 1e-9);
                    // No interior duplicates (the tour case repeats only the endpoint).
                    let interior = &p.nodes()[..p.nodes().len() - 1];
                    let mut seen = vec![false; inst.n()];
                    for &v in interior {
                        prop_assert!(!seen[v], "duplicate node {} in {:?}", v, p.nodes());
                        seen[v] = true;
                    }
                }
                Err(_) => prop_assert!(!direct_feasible),
            }
        }
    }

    #[test]
    fn tsili_distributions_are_proper(inst in arb_instance(), steps in 0usize..4) {
        let mut path = PathState::initial(&inst);
        for _ in 0..steps {
            let feasible = path.feasible_extensions(&inst);
            if feasible.is_empty() {
                break;
            }
            path = path.extend(feasible[0], &inst).unwrap();
        }
        let probs = tsili_probabilities(&path, &inst);
        let feasible = path.feasible_extensions(&inst);
        prop_assert_eq!(probs.len(), feasible.len());
        if !probs.is_empty() {
            let support = probs.iter().filter(|(_, p)| *p > 0.0).count();
            let zero_cost_edge = feasible
                .iter()
                .any(|&v| inst.cost(path.last(), v) == 0.0);
            if zero_cost_edge {
                // Infinite scores concentrate the mass on the free moves.
                prop_assert!(support >= 1 && support <= feasible.len().min(4));
            } else {
                prop_assert_eq!(support, feasible.len().min(4));
            }
            let total: f64 = probs.iter().map(|(_, p)| p).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_bit_deterministic(
        n in 2usize..30,
        seed in 0u64..1000,
        kind in prop_oneof![
            Just(PrizeKind::Constant),
            Just(PrizeKind::Uniform),
            Just(PrizeKind::Distance)
        ],
    ) {
        let a = generate_euclidean_instance(n, kind, 2.0, seed).unwrap();
        let b = generate_euclidean_instance(n, kind, 2.0, seed).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
