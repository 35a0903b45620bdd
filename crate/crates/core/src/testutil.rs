//! Shared fixtures for unit tests.

use crate::instance::Instance;

/// Four-node hand instance used across the test suite.
///
/// Node 0 = start at (0, 0), node 1 = a at (0.3, 0) with prize 0.5,
/// node 2 = b at (0, 0.3) with prize 0.6, node 3 = end at (0, 0).
/// Costs are Euclidean, budget T = 0.7.
pub fn hand_instance() -> Instance {
    let coords: [[f64; 2]; 4] = [[0.0, 0.0], [0.3, 0.0], [0.0, 0.3], [0.0, 0.0]];
    let n = coords.len();
    let mut cost = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            cost[i][j] = (dx * dx + dy * dy).sqrt();
        }
    }
    Instance::new(cost, vec![0.0, 0.5, 0.6, 0.0], 0.7, 0, 3)
        .unwrap()
        .with_coords(coords.to_vec())
        .unwrap()
}
