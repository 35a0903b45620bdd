//! Solver toolkit for the general orienteering problem.
//!
//! The orienteering problem asks for a start-to-end path that maximizes the
//! total prize collected at visited nodes while keeping the travel cost
//! within a budget. This crate works on the *general* variant — any
//! nonnegative cost matrix, not just planar Euclidean distances — and
//! provides:
//!
//! - the instance/path data model, random instance generation, and a JSON
//!   file format ([`instance`], [`path`], [`generate`], [`io`]);
//! - a cost-level beam search that buckets partial paths by accumulated
//!   travel cost, plus a classic step-by-step beam search, greedy and
//!   sampled rollouts, and an exact branch-and-bound enumerator
//!   ([`search`]);
//! - pluggable heuristic score functions: collected prize, the Tsili ratio
//!   heuristic, log-likelihood accumulation, and a learned action-value
//!   heuristic ([`heuristics`]);
//! - an edge-aware attention network with exact reverse-mode gradients
//!   ([`neural`]) and a double Q-learning training loop ([`training`]);
//! - exact-value oracles for verification ([`oracle`]).

pub mod generate;
pub mod heuristics;
pub mod instance;
pub mod io;
pub mod neural;
pub mod oracle;
pub mod path;
pub mod search;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;

pub use generate::{default_t_max, generate_euclidean_instance, GenerateError};
pub use heuristics::{
    HeuristicScore, LogProbScorer, PrizeOnly, QFunction, QValueHeuristic, QValuePolicy,
    RandomPolicy, StatePolicy, TsiliGreedy, TsiliStochastic,
};
pub use instance::{Instance, InstanceError, PrizeKind};
pub use io::{read_instance, write_instance, IoError};
pub use neural::{
    load_checkpoint, save_checkpoint, QNetwork, QNetworkConfig, QNetworkParams, QValues,
};
pub use path::{PathError, PathState};
pub use search::{
    cost_level_beam_search, exhaustive_exact, exhaustive_exact_with, greedy_rollout,
    sampled_rollout, step_beam_search, ExactOptions, SearchError, SearchResult,
};
pub use training::{
    double_q_target, env_step, epsilon_greedy, evaluate, evaluate_network, train, ReplayMemory,
    TrainConfig, TrainError, TrainLogRecord, TrainOutcome, Trainer, Transition,
};
