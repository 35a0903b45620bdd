//! Partial and closed paths over an [`Instance`].
//!
//! A [`PathState`] caches the running cost, collected prize, and visited set
//! of a path that starts at the instance's start node. All operations are
//! pure: they return new states and never mutate their input.

use crate::instance::Instance;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("node {0} was already visited")]
    AlreadyVisited(usize),
    #[error("node {0} out of range")]
    OutOfRange(usize),
    #[error("path is already closed")]
    Closed,
    #[error("closing the path would exceed the budget ({cost} > {t_max})")]
    BudgetExceeded { cost: f64, t_max: f64 },
}

/// A path under construction (or closed), with cached aggregates.
///
/// Invariants: `cost_so_far` equals the sum of cost entries along consecutive
/// node pairs, `prize_so_far` equals the sum of prizes of visited nodes, and
/// the visited mask agrees with `nodes`. A closed path ends at the instance's
/// end node (which may repeat the start node in the tour case) and respects
/// the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    nodes: Vec<usize>,
    visited: Vec<bool>,
    cost_so_far: f64,
    prize_so_far: f64,
    closed: bool,
}

impl PathState {
    /// The empty path, sitting at the instance's start node.
    pub fn initial(inst: &Instance) -> Self {
        let mut visited = vec![false; inst.n()];
        visited[inst.start()] = true;
        PathState {
            nodes: vec![inst.start()],
            visited,
            cost_so_far: 0.0,
            prize_so_far: 0.0,
            closed: false,
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Last selected node.
    pub fn last(&self) -> usize {
        *self.nodes.last().expect("path always contains the start node")
    }

    #[inline]
    pub fn is_visited(&self, v: usize) -> bool {
        self.visited[v]
    }

    pub fn cost_so_far(&self) -> f64 {
        self.cost_so_far
    }

    pub fn prize_so_far(&self) -> f64 {
        self.prize_so_far
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Number of selection steps taken so far (excludes the start node).
    pub fn len_steps(&self) -> usize {
        if self.closed {
            self.nodes.len() - 2
        } else {
            self.nodes.len() - 1
        }
    }

    /// Returns a new state with `v` appended.
    ///
    /// Does not check the budget; feasibility is the caller's concern (see
    /// [`PathState::feasible_extensions`]).
    pub fn extend(&self, v: usize, inst: &Instance) -> Result<PathState, PathError> {
        if self.closed {
            return Err(PathError::Closed);
        }
        if v >= inst.n() {
            return Err(PathError::OutOfRange(v));
        }
        if self.visited[v] {
            return Err(PathError::AlreadyVisited(v));
        }
        let mut next = self.clone();
        next.cost_so_far += inst.cost(self.last(), v);
        next.prize_so_far += inst.prize(v);
        next.nodes.push(v);
        next.visited[v] = true;
        Ok(next)
    }

    /// All unvisited nodes (excluding the end node) that can still be visited
    /// and leave enough budget to reach the end, in ascending index order.
    ///
    /// An empty result signals that the path must close. Feasibility is
    /// inclusive: a node costing exactly the remaining budget is feasible.
    pub fn feasible_extensions(&self, inst: &Instance) -> Vec<usize> {
        if self.closed {
            return Vec::new();
        }
        let last = self.last();
        let t_max = inst.t_max();
        let mut out = Vec::new();
        for v in 0..inst.n() {
            if self.visited[v] || v == inst.end() {
                continue;
            }
            let through = self.cost_so_far + inst.cost(last, v) + inst.cost(v, inst.end());
            if through <= t_max {
                out.push(v);
            }
        }
        out
    }

    /// Appends the end node and marks the path closed.
    pub fn close(&self, inst: &Instance) -> Result<PathState, PathError> {
        if self.closed {
            return Err(PathError::Closed);
        }
        let end = inst.end();
        let total = self.cost_so_far + inst.cost(self.last(), end);
        if total > inst.t_max() {
            return Err(PathError::BudgetExceeded {
                cost: total,
                t_max: inst.t_max(),
            });
        }
        let mut next = self.clone();
        next.cost_so_far = total;
        next.nodes.push(end);
        next.visited[end] = true;
        next.closed = true;
        Ok(next)
    }

    /// Remaining budget `T - cost(P)`.
    pub fn remaining_budget(&self, inst: &Instance) -> f64 {
        inst.t_max() - self.cost_so_far
    }

    /// Recomputes the path cost from scratch; used by invariant checks.
    pub fn recomputed_cost(&self, inst: &Instance) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| inst.cost(w[0], w[1]))
            .sum()
    }

    /// Recomputes the collected prize from scratch.
    pub fn recomputed_prize(&self, inst: &Instance) -> f64 {
        let mut seen = vec![false; inst.n()];
        let mut total = 0.0;
        for &v in &self.nodes {
            if !seen[v] {
                seen[v] = true;
                total += inst.prize(v);
            }
        }
        total
    }
}
