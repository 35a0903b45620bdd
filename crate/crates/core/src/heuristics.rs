//! Score functions and per-state node policies.
//!
//! Two contracts drive every search in this crate:
//!
//! - [`HeuristicScore`] rates a whole partial path; the cost-level and
//!   step-by-step beam searches keep the highest-scoring paths.
//! - [`StatePolicy`] rates the feasible next nodes of a state; rollouts pick
//!   the argmax or sample from the emitted distribution.
//!
//! Both must be pure and deterministic: evaluating the same input twice
//! yields bit-identical output.

use crate::instance::Instance;
use crate::path::PathState;

/// A heuristic score `f(P, s)` over partial paths; higher is better.
pub trait HeuristicScore: Sync {
    fn score(&self, path: &PathState, inst: &Instance) -> f64;

    /// Scores many paths at once. The default just loops; implementations
    /// backed by a network override this to evaluate the batch jointly.
    /// Results must be identical to sequential `score` calls.
    fn score_batch(&self, paths: &[PathState], inst: &Instance) -> Vec<f64> {
        paths.iter().map(|p| self.score(p, inst)).collect()
    }
}

/// A per-state scorer (or probability distribution) over feasible nodes.
///
/// `node_scores` returns one value per entry of `feasible`, in order.
/// Policies that define a proper distribution also implement
/// `node_probabilities`; the returned vector sums to 1 over its support.
pub trait StatePolicy: Sync {
    fn node_scores(&self, path: &PathState, inst: &Instance, feasible: &[usize]) -> Vec<f64>;

    fn node_probabilities(
        &self,
        _path: &PathState,
        _inst: &Instance,
        _feasible: &[usize],
    ) -> Option<Vec<f64>> {
        None
    }
}

/// A state-action value function `q(s, v)`.
///
/// Implemented by the attention network and by the exact-value oracle table;
/// both the learned heuristic and the greedy q-policy are generic over it.
pub trait QFunction: Sync {
    /// Values for each node of `feasible` (same order) at the given state.
    fn q_values(&self, path: &PathState, inst: &Instance, feasible: &[usize]) -> Vec<f64>;

    /// Batched evaluation; must agree with per-state calls.
    fn q_values_batch(
        &self,
        items: &[(&Instance, &PathState, &[usize])],
    ) -> Vec<Vec<f64>> {
        items
            .iter()
            .map(|(inst, path, feasible)| self.q_values(path, inst, feasible))
            .collect()
    }
}

impl<T: QFunction + ?Sized> QFunction for &T {
    fn q_values(&self, path: &PathState, inst: &Instance, feasible: &[usize]) -> Vec<f64> {
        (**self).q_values(path, inst, feasible)
    }

    fn q_values_batch(&self, items: &[(&Instance, &PathState, &[usize])]) -> Vec<Vec<f64>> {
        (**self).q_values_batch(items)
    }
}

impl<T: QFunction + ?Sized + Send> QFunction for std::sync::Arc<T> {
    fn q_values(&self, path: &PathState, inst: &Instance, feasible: &[usize]) -> Vec<f64> {
        (**self).q_values(path, inst, feasible)
    }

    fn q_values_batch(&self, items: &[(&Instance, &PathState, &[usize])]) -> Vec<Vec<f64>> {
        (**self).q_values_batch(items)
    }
}

/// Scores a path by its collected prize, ignoring the remaining budget.
pub struct PrizeOnly;

impl HeuristicScore for PrizeOnly {
    fn score(&self, path: &PathState, _inst: &Instance) -> f64 {
        path.prize_so_far()
    }
}

/// Tsili desirability of moving to `v`: `(R_v / C_{last,v})^4`.
///
/// A zero-cost hop to a node is scored `+inf`, ranked above every finite
/// score: a free prized node is always the best move under this heuristic,
/// and the ratio is undefined there otherwise.
pub fn tsili_node_score(v: usize, path: &PathState, inst: &Instance) -> f64 {
    let c = inst.cost(path.last(), v);
    if c == 0.0 {
        f64::INFINITY
    } else {
        (inst.prize(v) / c).powi(4)
    }
}

/// Tsili selection probabilities over the feasible nodes of a state.
///
/// `S` is the set of `min(4, |feasible|)` feasible nodes with the highest
/// [`tsili_node_score`]; nodes in `S` get probability proportional to their
/// score and every other feasible node gets 0. Returned as
/// `(node, probability)` pairs in ascending node order, one per feasible
/// node. All-zero scores normalize to the uniform distribution over `S`,
/// and if `S` contains infinite scores the mass is split uniformly among
/// those.
pub fn tsili_probabilities(path: &PathState, inst: &Instance) -> Vec<(usize, f64)> {
    let feasible = path.feasible_extensions(inst);
    let probs = tsili_probabilities_for(path, inst, &feasible);
    feasible.into_iter().zip(probs).collect()
}

pub(crate) fn tsili_probabilities_for(
    path: &PathState,
    inst: &Instance,
    feasible: &[usize],
) -> Vec<f64> {
    let k = feasible.len();
    if k == 0 {
        return Vec::new();
    }
    let scores: Vec<f64> = feasible
        .iter()
        .map(|&v| tsili_node_score(v, path, inst))
        .collect();

    // Pick S: the min(4, k) positions with the highest score, ties broken by
    // lower node index (which is ascending position order here).
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("tsili scores are never NaN")
            .then(a.cmp(&b))
    });
    let support = &order[..4.min(k)];

    let mut probs = vec![0.0; k];
    let infinite: Vec<usize> = support
        .iter()
        .copied()
        .filter(|&i| scores[i].is_infinite())
        .collect();
    if !infinite.is_empty() {
        let p = 1.0 / infinite.len() as f64;
        for i in infinite {
            probs[i] = p;
        }
        return probs;
    }
    let total: f64 = support.iter().map(|&i| scores[i]).sum();
    if total == 0.0 {
        let p = 1.0 / support.len() as f64;
        for &i in support {
            probs[i] = p;
        }
    } else {
        for &i in support {
            probs[i] = scores[i] / total;
        }
    }
    probs
}

/// Greedy Tsili policy: argmax of the node score over *all* feasible nodes,
/// not just the top-4 support used for sampling.
pub struct TsiliGreedy;

impl StatePolicy for TsiliGreedy {
    fn node_scores(&self, path: &PathState, inst: &Instance, feasible: &[usize]) -> Vec<f64> {
        feasible
            .iter()
            .map(|&v| tsili_node_score(v, path, inst))
            .collect()
    }
}

/// Stochastic Tsili policy: samples from [`tsili_probabilities`].
pub struct TsiliStochastic;

impl StatePolicy for TsiliStochastic {
    fn node_scores(&self, path: &PathState, inst: &Instance, feasible: &[usize]) -> Vec<f64> {
        tsili_probabilities_for(path, inst, feasible)
    }

    fn node_probabilities(
        &self,
        path: &PathState,
        inst: &Instance,
        feasible: &[usize],
    ) -> Option<Vec<f64>> {
        Some(tsili_probabilities_for(path, inst, feasible))
    }
}

/// Uniform-random policy.
///
/// Probabilities are uniform over the feasible nodes. Scores are
/// deterministic pseudorandom values keyed on `(seed, path, node)`, so a
/// greedy rollout over this policy behaves like a seeded random walk while
/// staying a pure function of the state.
pub struct RandomPolicy {
    seed: u64,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { seed }
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl StatePolicy for RandomPolicy {
    fn node_scores(&self, path: &PathState, _inst: &Instance, feasible: &[usize]) -> Vec<f64> {
        let mut h = splitmix64(self.seed);
        for &v in path.nodes() {
            h = splitmix64(h ^ (v as u64).wrapping_add(0x517c_c1b7_2722_0a95));
        }
        feasible
            .iter()
            .map(|&v| {
                let bits = splitmix64(h ^ (v as u64));
                (bits >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    fn node_probabilities(
        &self,
        _path: &PathState,
        _inst: &Instance,
        feasible: &[usize],
    ) -> Option<Vec<f64>> {
        let k = feasible.len();
        Some(vec![1.0 / k as f64; k])
    }
}

/// Path score as the accumulated log-likelihood of its selection steps,
/// `sum_i log p(v_i | s_i)`, under the wrapped probabilistic policy.
///
/// This is the beam-search scorer for sampling policies: the path is
/// replayed from the start and each chosen node's probability is looked up
/// in the policy's distribution at that prefix. A zero-probability step
/// scores `-inf`.
pub struct LogProbScorer<P: StatePolicy> {
    policy: P,
}

impl<P: StatePolicy> LogProbScorer<P> {
    pub fn new(policy: P) -> Self {
        LogProbScorer { policy }
    }
}

impl<P: StatePolicy> HeuristicScore for LogProbScorer<P> {
    fn score(&self, path: &PathState, inst: &Instance) -> f64 {
        let steps = if path.is_closed() {
            &path.nodes()[1..path.nodes().len() - 1]
        } else {
            &path.nodes()[1..]
        };
        let mut prefix = PathState::initial(inst);
        let mut total = 0.0;
        for &v in steps {
            let feasible = prefix.feasible_extensions(inst);
            let probs = self
                .policy
                .node_probabilities(&prefix, inst, &feasible)
                .expect("LogProbScorer requires a probabilistic policy");
            let p = feasible
                .iter()
                .position(|&w| w == v)
                .map(|i| probs[i])
                .unwrap_or(0.0);
            if p == 0.0 {
                return f64::NEG_INFINITY;
            }
            total += p.ln();
            prefix = prefix
                .extend(v, inst)
                .expect("replayed step must be extendable");
        }
        total
    }
}

/// The learned heuristic `f(P, s) = prize(P) + e(s')`, where `s'` is the
/// subproblem induced by `P` and `e` is the maximum action value over the
/// feasible nodes of `s'` (0 at terminal states, so the score collapses to
/// the collected prize exactly).
pub struct QValueHeuristic<Q: QFunction> {
    q: Q,
}

impl<Q: QFunction> QValueHeuristic<Q> {
    pub fn new(q: Q) -> Self {
        QValueHeuristic { q }
    }
}

fn max_or_zero(values: &[f64]) -> f64 {
    values.iter().cloned().fold(0.0_f64, f64::max)
}

impl<Q: QFunction> HeuristicScore for QValueHeuristic<Q> {
    fn score(&self, path: &PathState, inst: &Instance) -> f64 {
        let feasible = path.feasible_extensions(inst);
        if feasible.is_empty() {
            return path.prize_so_far();
        }
        let q = self.q.q_values(path, inst, &feasible);
        path.prize_so_far() + max_or_zero(&q)
    }

    fn score_batch(&self, paths: &[PathState], inst: &Instance) -> Vec<f64> {
        let feasibles: Vec<Vec<usize>> =
            paths.iter().map(|p| p.feasible_extensions(inst)).collect();
        let items: Vec<(&Instance, &PathState, &[usize])> = paths
            .iter()
            .zip(&feasibles)
            .filter(|(_, f)| !f.is_empty())
            .map(|(p, f)| (inst, p, f.as_slice()))
            .collect();
        let mut evaluated = self.q.q_values_batch(&items).into_iter();
        paths
            .iter()
            .zip(&feasibles)
            .map(|(p, f)| {
                if f.is_empty() {
                    p.prize_so_far()
                } else {
                    let q = evaluated.next().expect("one result per nonterminal state");
                    p.prize_so_far() + max_or_zero(&q)
                }
            })
            .collect()
    }
}

/// Greedy policy over a q-function: scores are the raw action values.
pub struct QValuePolicy<Q: QFunction> {
    q: Q,
}

impl<Q: QFunction> QValuePolicy<Q> {
    pub fn new(q: Q) -> Self {
        QValuePolicy { q }
    }
}

impl<Q: QFunction> StatePolicy for QValuePolicy<Q> {
    fn node_scores(&self, path: &PathState, inst: &Instance, feasible: &[usize]) -> Vec<f64> {
        self.q.q_values(path, inst, feasible)
    }
}
