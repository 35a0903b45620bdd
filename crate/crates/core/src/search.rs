//! Search algorithms over orienteering instances.
//!
//! The centerpiece is [`cost_level_beam_search`]: partial paths are bucketed
//! into priority queues indexed by `ceil(cost(P)/tau)`, each queue keeping
//! only the `K` paths with the highest heuristic score. Draining queues in
//! ascending cost order keeps many more alternatives alive in the early,
//! least reliable stage of the search than a step-synchronized beam does.
//! The unpruned variant (`K` large, `tau` below the smallest positive edge
//! cost) is an exact interval search.
//!
//! Also provided: the classic step-by-step beam search, greedy and sampled
//! rollouts for per-state policies, and a branch-and-bound exhaustive
//! enumerator used as the verification oracle throughout the test suite.

use crate::heuristics::{HeuristicScore, StatePolicy};
use crate::instance::Instance;
use crate::path::PathState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no feasible path from start to end within the budget")]
    NoFeasiblePath,
    #[error("instance has {n} nodes, exhaustive enumeration is limited to {limit}")]
    InstanceTooLarge { n: usize, limit: usize },
    #[error("policy distribution has empty support but {feasible} nodes are feasible")]
    EmptySupport { feasible: usize },
    #[error("policy does not define node probabilities")]
    NotProbabilistic,
    #[error("policy distribution sums to {total}, expected 1")]
    BadDistribution { total: f64 },
}

/// Outcome of a search: the best closed path found plus basic effort stats.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_path: PathState,
    /// Number of partial paths expanded (popped or stepped).
    pub expanded: u64,
    pub elapsed: Duration,
}

impl SearchResult {
    pub fn prize(&self) -> f64 {
        self.best_path.prize_so_far()
    }
}

/// Cost interval a path belongs to: `ceil(cost/tau)`, with cost 0 in
/// interval 0.
pub(crate) fn queue_index(cost: f64, tau: f64) -> usize {
    if cost <= 0.0 {
        0
    } else {
        (cost / tau).ceil() as usize
    }
}

struct Entry {
    path: PathState,
    score: f64,
    seq: u64,
}

/// Bounded priority queue per cost interval. When a queue grows beyond its
/// capacity the entry with the minimal heuristic score is evicted; among
/// equal scores the latest insertion loses, so earlier entries survive.
struct BoundedQueue {
    entries: Vec<Entry>,
    capacity: usize,
}

impl BoundedQueue {
    fn new(capacity: usize) -> Self {
        BoundedQueue {
            entries: Vec::new(),
            capacity,
        }
    }

    fn insert(&mut self, entry: Entry) {
        self.entries.push(entry);
        if self.entries.len() > self.capacity {
            let mut worst = 0;
            for i in 1..self.entries.len() {
                let e = &self.entries[i];
                let w = &self.entries[worst];
                if e.score < w.score || (e.score == w.score && e.seq > w.seq) {
                    worst = i;
                }
            }
            self.entries.swap_remove(worst);
        }
    }

    /// Removes every entry, best first (score descending, earlier insertion
    /// winning ties).
    fn drain_ranked(&mut self) -> Vec<Entry> {
        let mut batch = std::mem::take(&mut self.entries);
        batch.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.seq.cmp(&b.seq)));
        batch
    }

    fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Cost-level beam search.
///
/// Maintains `ceil(T/tau) + 1` bounded priority queues. The empty path seeds
/// queue 0; queues are drained in ascending interval order. Every popped
/// path is extended by each feasible node `v` (only extensions that can
/// still reach the end within the budget are generated), the child is
/// scored by `f` and inserted into queue `ceil(cost(P+v)/tau)` — which may
/// be the queue currently being drained when an edge is shorter than `tau`.
/// A global incumbent tracks the highest-prize path over everything ever
/// generated; the returned path is the incumbent closed onto the end node.
///
/// Children of one drain pass are scored with a single `score_batch` call so
/// network-backed heuristics can evaluate them jointly.
///
/// An instance with no feasible prized node yields the direct start-to-end
/// path. `NoFeasiblePath` is returned only when even that path exceeds the
/// budget.
pub fn cost_level_beam_search(
    inst: &Instance,
    f: &dyn HeuristicScore,
    k: usize,
    tau: f64,
) -> Result<SearchResult, SearchError> {
    assert!(k >= 1, "beam capacity K must be at least 1");
    assert!(
        tau > 0.0 && (inst.t_max() == 0.0 || tau <= inst.t_max()),
        "tau must satisfy 0 < tau <= t_max"
    );
    let start_time = Instant::now();
    let n_queues = queue_index(inst.t_max(), tau) + 1;
    let mut queues: Vec<BoundedQueue> = (0..n_queues).map(|_| BoundedQueue::new(k)).collect();

    let init = PathState::initial(inst);
    let mut incumbent = init.clone();
    let mut seq = 0u64;
    let init_score = f.score(&init, inst);
    queues[0].insert(Entry {
        path: init,
        score: init_score,
        seq,
    });
    seq += 1;

    let mut expanded = 0u64;
    for t in 0..n_queues {
        while !queues[t].is_empty() {
            let batch = queues[t].drain_ranked();
            expanded += batch.len() as u64;

            // Generate all children of this drain pass, then score them in
            // one batched call. Insertion order is (parent rank, node index).
            let mut children: Vec<PathState> = Vec::new();
            for entry in &batch {
                for v in entry.path.feasible_extensions(inst) {
                    children.push(
                        entry
                            .path
                            .extend(v, inst)
                            .expect("feasible extension must be extendable"),
                    );
                }
            }
            if children.is_empty() {
                continue;
            }
            let scores = f.score_batch(&children, inst);
            for (child, score) in children.into_iter().zip(scores) {
                if child.prize_so_far() > incumbent.prize_so_far() {
                    incumbent = child.clone();
                }
                let idx = queue_index(child.cost_so_far(), tau);
                debug_assert!(idx >= t && idx < n_queues);
                queues[idx].insert(Entry {
                    path: child,
                    score,
                    seq,
                });
                seq += 1;
            }
        }
    }

    let best_path = incumbent
        .close(inst)
        .map_err(|_| SearchError::NoFeasiblePath)?;
    Ok(SearchResult {
        best_path,
        expanded,
        elapsed: start_time.elapsed(),
    })
}

/// Classic step-by-step beam search, synchronized by path length.
///
/// At step `t` the `beam` highest-scoring open paths of length `t` are kept
/// and each is extended by every feasible node; the search stops when no
/// open path remains. The best prize seen over all generated paths (each is
/// closable by construction) decides the returned path.
pub fn step_beam_search(
    inst: &Instance,
    scorer: &dyn HeuristicScore,
    beam: usize,
) -> Result<SearchResult, SearchError> {
    assert!(beam >= 1, "beam size must be at least 1");
    let start_time = Instant::now();
    let init = PathState::initial(inst);
    let mut incumbent = init.clone();
    let mut level: Vec<PathState> = vec![init];
    let mut expanded = 0u64;

    while !level.is_empty() {
        expanded += level.len() as u64;
        let mut children: Vec<PathState> = Vec::new();
        for path in &level {
            for v in path.feasible_extensions(inst) {
                children.push(path.extend(v, inst).expect("feasible extension"));
            }
        }
        if children.is_empty() {
            break;
        }
        for child in &children {
            if child.prize_so_far() > incumbent.prize_so_far() {
                incumbent = child.clone();
            }
        }
        let scores = scorer.score_batch(&children, inst);
        let mut order: Vec<usize> = (0..children.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(beam);
        order.sort_unstable();
        let mut keep = Vec::with_capacity(order.len());
        let mut children = children;
        for idx in order.into_iter().rev() {
            keep.push(children.swap_remove(idx));
        }
        keep.reverse();
        level = keep;
    }

    let best_path = incumbent
        .close(inst)
        .map_err(|_| SearchError::NoFeasiblePath)?;
    Ok(SearchResult {
        best_path,
        expanded,
        elapsed: start_time.elapsed(),
    })
}

/// Greedy rollout: repeatedly take the feasible node with the highest policy
/// score (ties to the lowest node index) until nothing is feasible, then
/// close onto the end node.
pub fn greedy_rollout(
    inst: &Instance,
    policy: &dyn StatePolicy,
) -> Result<SearchResult, SearchError> {
    let start_time = Instant::now();
    let mut path = PathState::initial(inst);
    let mut expanded = 0u64;
    loop {
        let feasible = path.feasible_extensions(inst);
        if feasible.is_empty() {
            break;
        }
        expanded += 1;
        let scores = policy.node_scores(&path, inst, &feasible);
        let mut best = 0;
        for i in 1..feasible.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        path = path
            .extend(feasible[best], inst)
            .expect("feasible extension");
    }
    let best_path = path.close(inst).map_err(|_| SearchError::NoFeasiblePath)?;
    Ok(SearchResult {
        best_path,
        expanded,
        elapsed: start_time.elapsed(),
    })
}

/// Stochastic rollout: samples each step from the policy's distribution
/// over feasible nodes. Deterministic given the seed.
pub fn sampled_rollout(
    inst: &Instance,
    policy: &dyn StatePolicy,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    let start_time = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = PathState::initial(inst);
    let mut expanded = 0u64;
    loop {
        let feasible = path.feasible_extensions(inst);
        if feasible.is_empty() {
            break;
        }
        expanded += 1;
        let probs = policy
            .node_probabilities(&path, inst, &feasible)
            .ok_or(SearchError::NotProbabilistic)?;
        let total: f64 = probs.iter().sum();
        if total == 0.0 {
            return Err(SearchError::EmptySupport {
                feasible: feasible.len(),
            });
        }
        if (total - 1.0).abs() > 1e-6 {
            return Err(SearchError::BadDistribution { total });
        }
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = feasible.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            if u < p {
                chosen = i;
                break;
            }
            u -= p;
        }
        // Guard against landing on a zero-probability tail slot.
        if probs[chosen] == 0.0 {
            chosen = probs
                .iter()
                .rposition(|&p| p > 0.0)
                .expect("support checked nonempty");
        }
        path = path
            .extend(feasible[chosen], inst)
            .expect("feasible extension");
    }
    let best_path = path.close(inst).map_err(|_| SearchError::NoFeasiblePath)?;
    Ok(SearchResult {
        best_path,
        expanded,
        elapsed: start_time.elapsed(),
    })
}

/// Options for the exhaustive enumerator.
#[derive(Debug, Clone, Copy)]
pub struct ExactOptions {
    /// Refuse instances larger than this (enumeration is exponential).
    pub node_limit: usize,
    /// Branch-and-bound pruning; never changes the optimum, only the effort.
    pub prune: bool,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            node_limit: 16,
            prune: true,
        }
    }
}

/// Depth-first enumeration of every feasible node sequence, returning a
/// provably optimal path. See [`exhaustive_exact_with`] for the guard knob.
pub fn exhaustive_exact(inst: &Instance) -> Result<SearchResult, SearchError> {
    exhaustive_exact_with(inst, ExactOptions::default())
}

/// Exhaustive search with explicit options.
///
/// The pruning bound is admissible for the Euclidean instances this oracle
/// is used on: collected prize plus the prizes of all nodes individually
/// reachable within the remaining budget.
pub fn exhaustive_exact_with(
    inst: &Instance,
    opts: ExactOptions,
) -> Result<SearchResult, SearchError> {
    if inst.n() > opts.node_limit {
        return Err(SearchError::InstanceTooLarge {
            n: inst.n(),
            limit: opts.node_limit,
        });
    }
    let start_time = Instant::now();
    let init = PathState::initial(inst);
    let mut best = init.clone();
    let mut expanded = 0u64;
    dfs(inst, &init, &mut best, &mut expanded, opts.prune);
    let best_path = best.close(inst).map_err(|_| SearchError::NoFeasiblePath)?;
    Ok(SearchResult {
        best_path,
        expanded,
        elapsed: start_time.elapsed(),
    })
}

fn dfs(inst: &Instance, path: &PathState, best: &mut PathState, expanded: &mut u64, prune: bool) {
    *expanded += 1;
    if path.prize_so_far() > best.prize_so_far() {
        *best = path.clone();
    }
    let feasible = path.feasible_extensions(inst);
    if prune {
        let bound: f64 =
            path.prize_so_far() + feasible.iter().map(|&v| inst.prize(v)).sum::<f64>();
        if bound <= best.prize_so_far() {
            return;
        }
    }
    for v in feasible {
        let child = path.extend(v, inst).expect("feasible extension");
        dfs(inst, &child, best, expanded, prune);
    }
}
