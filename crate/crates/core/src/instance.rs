//! Problem instances for the general orienteering problem.
//!
//! An instance is the six-element tuple of nodes, cost matrix, prize vector,
//! budget, start node, and end node. The cost matrix is arbitrary: it does
//! not have to be symmetric or satisfy the triangle inequality. Optional
//! planar coordinates are kept only for generation and visualization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation errors raised when constructing or deserializing an [`Instance`].
#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("cost matrix is not square: row {row} has {len} entries, expected {n}")]
    NonSquareMatrix { row: usize, len: usize, n: usize },
    #[error("prize vector has {len} entries, expected {n}")]
    PrizeLengthMismatch { len: usize, n: usize },
    #[error("coords has {len} entries, expected {n}")]
    CoordsLengthMismatch { len: usize, n: usize },
    #[error("cost[{v}][{w}] = {value} is negative or non-finite")]
    BadCost { v: usize, w: usize, value: f64 },
    #[error("cost[{v}][{v}] = {value}, diagonal entries must be zero")]
    NonzeroDiagonal { v: usize, value: f64 },
    #[error("{which} node index {index} out of range for {n} nodes")]
    IndexOutOfRange {
        which: &'static str,
        index: usize,
        n: usize,
    },
    #[error("prize[{v}] = {value} outside [0, 1]")]
    BadPrize { v: usize, value: f64 },
    #[error("budget t_max = {value} must be finite and nonnegative")]
    BadBudget { value: f64 },
    #[error("instance must have at least one node")]
    Empty,
}

/// Prize distributions used by the instance generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrizeKind {
    /// Every prized node is worth 1.
    Constant,
    /// Integer draw from {1..100}, divided by 100.
    Uniform,
    /// Discretized prize proportional to the distance from the start node.
    Distance,
}

impl std::str::FromStr for PrizeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(PrizeKind::Constant),
            "uniform" => Ok(PrizeKind::Uniform),
            "distance" => Ok(PrizeKind::Distance),
            other => Err(format!(
                "unknown prize kind {other:?}, expected constant|uniform|distance"
            )),
        }
    }
}

impl std::fmt::Display for PrizeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrizeKind::Constant => write!(f, "constant"),
            PrizeKind::Uniform => write!(f, "uniform"),
            PrizeKind::Distance => write!(f, "distance"),
        }
    }
}

/// An orienteering problem instance.
///
/// Immutable after construction; fields are only reachable through accessors
/// so the invariants checked by [`Instance::new`] cannot be broken later.
/// Start and end may be the same index (the tour case). Prizes of the start
/// and end node are forced to zero on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct Instance {
    n: usize,
    t_max: f64,
    start: usize,
    end: usize,
    prize: Vec<f64>,
    cost: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<[f64; 2]>>,
}

/// Wire-format mirror of [`Instance`]; deserialization funnels through
/// [`Instance::try_from`] so files are validated like constructor input.
#[derive(Deserialize)]
struct RawInstance {
    n: usize,
    t_max: f64,
    start: usize,
    end: usize,
    prize: Vec<f64>,
    cost: Vec<Vec<f64>>,
    #[serde(default)]
    coords: Option<Vec<[f64; 2]>>,
}

impl TryFrom<RawInstance> for Instance {
    type Error = InstanceError;

    fn try_from(raw: RawInstance) -> Result<Self, InstanceError> {
        if raw.cost.len() != raw.n {
            return Err(InstanceError::NonSquareMatrix {
                row: 0,
                len: raw.cost.len(),
                n: raw.n,
            });
        }
        let mut inst = Instance::new(raw.cost, raw.prize, raw.t_max, raw.start, raw.end)?;
        if let Some(coords) = raw.coords {
            inst = inst.with_coords(coords)?;
        }
        Ok(inst)
    }
}

impl Instance {
    /// Builds a validated instance.
    ///
    /// `cost` must be square with a zero diagonal and nonnegative finite
    /// entries, `prize` entries must lie in `[0, 1]`, and the node indices
    /// must be in range. Prizes of `start` and `end` are overwritten with 0
    /// so path prizes never count the endpoints.
    pub fn new(
        cost: Vec<Vec<f64>>,
        mut prize: Vec<f64>,
        t_max: f64,
        start: usize,
        end: usize,
    ) -> Result<Self, InstanceError> {
        let n = cost.len();
        if n == 0 {
            return Err(InstanceError::Empty);
        }
        for (row, r) in cost.iter().enumerate() {
            if r.len() != n {
                return Err(InstanceError::NonSquareMatrix {
                    row,
                    len: r.len(),
                    n,
                });
            }
        }
        if prize.len() != n {
            return Err(InstanceError::PrizeLengthMismatch {
                len: prize.len(),
                n,
            });
        }
        if start >= n {
            return Err(InstanceError::IndexOutOfRange {
                which: "start",
                index: start,
                n,
            });
        }
        if end >= n {
            return Err(InstanceError::IndexOutOfRange {
                which: "end",
                index: end,
                n,
            });
        }
        if !t_max.is_finite() || t_max < 0.0 {
            return Err(InstanceError::BadBudget { value: t_max });
        }
        for (v, row) in cost.iter().enumerate() {
            for (w, &c) in row.iter().enumerate() {
                if !c.is_finite() || c < 0.0 {
                    return Err(InstanceError::BadCost { v, w, value: c });
                }
                if v == w && c != 0.0 {
                    return Err(InstanceError::NonzeroDiagonal { v, value: c });
                }
            }
        }
        for (v, &p) in prize.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(InstanceError::BadPrize { v, value: p });
            }
        }
        prize[start] = 0.0;
        prize[end] = 0.0;
        Ok(Instance {
            n,
            t_max,
            start,
            end,
            prize,
            cost,
            coords: None,
        })
    }

    /// Attaches planar coordinates (used by the generator and the renderer).
    pub fn with_coords(mut self, coords: Vec<[f64; 2]>) -> Result<Self, InstanceError> {
        if coords.len() != self.n {
            return Err(InstanceError::CoordsLengthMismatch {
                len: coords.len(),
                n: self.n,
            });
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    #[inline]
    pub fn cost(&self, from: usize, to: usize) -> f64 {
        self.cost[from][to]
    }

    #[inline]
    pub fn prize(&self, v: usize) -> f64 {
        self.prize[v]
    }

    pub fn prizes(&self) -> &[f64] {
        &self.prize
    }

    pub fn cost_row(&self, from: usize) -> &[f64] {
        &self.cost[from]
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    /// Smallest strictly positive cost entry, if any.
    pub fn min_positive_cost(&self) -> Option<f64> {
        let mut min: Option<f64> = None;
        for row in &self.cost {
            for &c in row {
                if c > 0.0 && min.is_none_or(|m| c < m) {
                    min = Some(c);
                }
            }
        }
        min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_matrix(n: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; n]; n]
    }

    #[test]
    fn degenerate_two_node_instance_is_valid() {
        let inst = Instance::new(zero_matrix(2), vec![0.0, 0.0], 1.0, 0, 1).unwrap();
        assert_eq!(inst.n(), 2);
        assert_eq!(inst.t_max(), 1.0);
    }

    #[test]
    fn nonzero_diagonal_rejected() {
        let mut cost = zero_matrix(2);
        cost[0][0] = 0.1;
        let err = Instance::new(cost, vec![0.0, 0.0], 1.0, 0, 1).unwrap_err();
        assert!(matches!(err, InstanceError::NonzeroDiagonal { v: 0, .. }));
    }

    #[test]
    fn asymmetric_matrix_accepted() {
        let mut cost = zero_matrix(3);
        cost[0][1] = 0.2;
        cost[1][0] = 0.9;
        let inst = Instance::new(cost, vec![0.0, 0.5, 0.0], 1.0, 0, 2).unwrap();
        assert_eq!(inst.cost(0, 1), 0.2);
        assert_eq!(inst.cost(1, 0), 0.9);
    }

    #[test]
    fn negative_cost_rejected() {
        let mut cost = zero_matrix(2);
        cost[0][1] = -0.5;
        let err = Instance::new(cost, vec![0.0, 0.0], 1.0, 0, 1).unwrap_err();
        assert!(matches!(err, InstanceError::BadCost { v: 0, w: 1, .. }));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cost = vec![vec![0.0, 0.0], vec![0.0]];
        let err = Instance::new(cost, vec![0.0, 0.0], 1.0, 0, 1).unwrap_err();
        assert!(matches!(err, InstanceError::NonSquareMatrix { row: 1, .. }));

        let err = Instance::new(zero_matrix(2), vec![0.0], 1.0, 0, 1).unwrap_err();
        assert!(matches!(err, InstanceError::PrizeLengthMismatch { .. }));
    }

    #[test]
    fn out_of_range_indices_rejected() {
        let err = Instance::new(zero_matrix(2), vec![0.0, 0.0], 1.0, 2, 1).unwrap_err();
        assert!(matches!(
            err,
            InstanceError::IndexOutOfRange { which: "start", .. }
        ));
        let err = Instance::new(zero_matrix(2), vec![0.0, 0.0], 1.0, 0, 5).unwrap_err();
        assert!(matches!(
            err,
            InstanceError::IndexOutOfRange { which: "end", .. }
        ));
    }

    #[test]
    fn endpoint_prizes_forced_to_zero() {
        let inst = Instance::new(zero_matrix(3), vec![0.7, 0.5, 0.9], 1.0, 0, 2).unwrap();
        assert_eq!(inst.prize(0), 0.0);
        assert_eq!(inst.prize(1), 0.5);
        assert_eq!(inst.prize(2), 0.0);
    }

    #[test]
    fn prize_out_of_range_rejected() {
        let err = Instance::new(zero_matrix(2), vec![0.0, 1.5], 1.0, 0, 0).unwrap_err();
        assert!(matches!(err, InstanceError::BadPrize { v: 1, .. }));
    }

    #[test]
    fn min_positive_cost_ignores_zeros() {
        let mut cost = zero_matrix(3);
        cost[0][1] = 0.4;
        cost[1][2] = 0.25;
        let inst = Instance::new(cost, vec![0.0; 3], 1.0, 0, 0).unwrap();
        assert_eq!(inst.min_positive_cost(), Some(0.25));

        let inst = Instance::new(zero_matrix(2), vec![0.0; 2], 1.0, 0, 1).unwrap();
        assert_eq!(inst.min_positive_cost(), None);
    }

    #[test]
    fn prize_kind_parses() {
        assert_eq!("distance".parse::<PrizeKind>().unwrap(), PrizeKind::Distance);
        assert_eq!("Uniform".parse::<PrizeKind>().unwrap(), PrizeKind::Uniform);
        assert!("planar".parse::<PrizeKind>().is_err());
    }
}
