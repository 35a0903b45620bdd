//! Random Euclidean instance generation.
//!
//! Nodes are sampled uniformly in the unit square, costs are pairwise
//! Euclidean distances, and node 0 doubles as start and end. Generation is
//! fully deterministic given the seed.

use crate::instance::{Instance, InstanceError, PrizeKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// Conventional budget for the standard benchmark sizes (20, 50, 100).
pub fn default_t_max(n: usize) -> Option<f64> {
    match n {
        20 => Some(2.0),
        50 => Some(3.0),
        100 => Some(4.0),
        _ => None,
    }
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Discretized prizes proportional to the distance from the start node:
/// `(1 + floor(99 * d_v / d_max)) / 100`, so the farthest node is worth 1.00
/// and a node coincident with the start is worth 0.01.
fn distance_prizes(coords: &[[f64; 2]], start: usize) -> Vec<f64> {
    let d: Vec<f64> = coords.iter().map(|&c| euclid(coords[start], c)).collect();
    let d_max = d.iter().cloned().fold(0.0, f64::max);
    d.iter()
        .map(|&dv| {
            let ratio = if d_max > 0.0 { dv / d_max } else { 0.0 };
            (1.0 + (99.0 * ratio).floor()) / 100.0
        })
        .collect()
}

/// Generates an `n`-node instance with uniform-random coordinates in the
/// unit square, Euclidean costs, and `start = end = 0`.
///
/// Identical arguments produce a bit-identical instance.
pub fn generate_euclidean_instance(
    n: usize,
    kind: PrizeKind,
    t_max: f64,
    seed: u64,
) -> Result<Instance, GenerateError> {
    if n < 2 {
        return Err(GenerateError::TooFewNodes(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();

    let mut cost = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclid(coords[i], coords[j]);
            cost[i][j] = d;
            cost[j][i] = d;
        }
    }

    let prize = match kind {
        PrizeKind::Constant => vec![1.0; n],
        PrizeKind::Uniform => (0..n)
            .map(|_| f64::from(rng.gen_range(1..=100u32)) / 100.0)
            .collect(),
        PrizeKind::Distance => distance_prizes(&coords, 0),
    };

    let inst = Instance::new(cost, prize, t_max, 0, 0)?.with_coords(coords)?;
    Ok(inst)
}
