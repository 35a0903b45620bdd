//! Exact-value oracles built on exhaustive enumeration.
//!
//! These exist to verify the learned machinery: a perfect action-value
//! function makes the greedy policy optimal and zeroes the Bellman residual
//! of the double-Q target, so any deviation in those checks points at the
//! surrounding code rather than at training quality.

use crate::heuristics::QFunction;
use crate::instance::Instance;
use crate::path::PathState;

/// Maximum additional prize collectible from `path` onward (excluding the
/// prize already banked), found by depth-first enumeration.
///
/// Exponential in the number of remaining nodes; guarded to small instances.
pub fn optimal_future_prize(inst: &Instance, path: &PathState) -> f64 {
    assert!(
        inst.n() <= 16,
        "optimal_future_prize enumerates exhaustively; {} nodes is too many",
        inst.n()
    );
    best_future(inst, path)
}

fn best_future(inst: &Instance, path: &PathState) -> f64 {
    let mut best = 0.0_f64;
    for v in path.feasible_extensions(inst) {
        let child = path.extend(v, inst).expect("feasible extension");
        let cand = inst.prize(v) + best_future(inst, &child);
        if cand > best {
            best = cand;
        }
    }
    best
}

/// The perfect q-table: `q(s, v)` is the exact optimal total prize
/// collectible after taking `v` in `s` (the prize of `v` itself plus the
/// optimum of the induced subproblem). Values are computed on demand from
/// the enumerator, so this is usable wherever a [`QFunction`] is expected.
pub struct ExactQTable;

impl QFunction for ExactQTable {
    fn q_values(&self, path: &PathState, inst: &Instance, feasible: &[usize]) -> Vec<f64> {
        feasible
            .iter()
            .map(|&v| {
                let child = path.extend(v, inst).expect("feasible extension");
                inst.prize(v) + best_future(inst, &child)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::generate_euclidean_instance;
    use crate::heuristics::{QValueHeuristic, QValuePolicy};
    use crate::instance::PrizeKind;
    use crate::search::{cost_level_beam_search, exhaustive_exact, greedy_rollout};
    use crate::testutil::hand_instance;

    #[test]
    fn future_prize_matches_exhaustive_optimum() {
        for seed in 0..10 {
            let inst = generate_euclidean_instance(8, PrizeKind::Uniform, 0.8, seed).unwrap();
            let init = PathState::initial(&inst);
            let exact = exhaustive_exact(&inst).unwrap();
            assert!(
                (optimal_future_prize(&inst, &init) - exact.prize()).abs() < 1e-12,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn greedy_over_exact_table_is_optimal() {
        // Bellman-greedy property of a perfect value function.
        for seed in 0..20 {
            let inst = generate_euclidean_instance(8, PrizeKind::Distance, 0.8, seed).unwrap();
            let rollout = greedy_rollout(&inst, &QValuePolicy::new(ExactQTable)).unwrap();
            let exact = exhaustive_exact(&inst).unwrap();
            assert!(
                (rollout.prize() - exact.prize()).abs() < 1e-12,
                "seed {seed}: {} vs {}",
                rollout.prize(),
                exact.prize()
            );
        }
    }

    #[test]
    fn cost_level_search_with_exact_heuristic_and_k1_is_optimal() {
        for seed in 0..10 {
            let inst = generate_euclidean_instance(7, PrizeKind::Uniform, 0.7, seed).unwrap();
            let h = QValueHeuristic::new(ExactQTable);
            let res = cost_level_beam_search(&inst, &h, 1, 0.05).unwrap();
            let exact = exhaustive_exact(&inst).unwrap();
            assert!(
                (res.prize() - exact.prize()).abs() < 1e-12,
                "seed {seed}: {} vs {}",
                res.prize(),
                exact.prize()
            );
        }
    }

    #[test]
    fn hand_instance_table_values() {
        let inst = hand_instance();
        let init = PathState::initial(&inst);
        let q = ExactQTable.q_values(&init, &inst, &[1, 2]);
        // Taking a (prize 0.5) or b (prize 0.6) ends the episode either way.
        assert!((q[0] - 0.5).abs() < 1e-12);
        assert!((q[1] - 0.6).abs() < 1e-12);
    }
}
