//! Helpers shared by the integration suites.
//!
//! `brute_force_best_prize` is the independent oracle: it enumerates raw
//! node sequences straight off the cost matrix, touching none of the
//! library's search or path machinery, so agreement with it is meaningful.

use opbeam_core::Instance;

/// Four-node hand instance: start at (0,0), a at (0.3,0) with prize 0.5,
/// b at (0,0.3) with prize 0.6, end at (0,0); budget 0.7; Euclidean costs.
pub fn hand_instance() -> Instance {
    let coords: Vec<[f64; 2]> = vec![[0.0, 0.0], [0.3, 0.0], [0.0, 0.3], [0.0, 0.0]];
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
        .with_coords(coords)
        .unwrap()
}

/// Best collectible prize over every feasible node sequence, by plain
/// recursion over the matrix.
pub fn brute_force_best_prize(inst: &Instance) -> f64 {
    assert!(inst.n() <= 12, "oracle is factorial in n");
    let mut best = f64::NEG_INFINITY;
    let visited = 1u64 << inst.start();
    recurse(inst, inst.start(), visited, 0.0, 0.0, &mut best);
    best
}

fn recurse(inst: &Instance, current: usize, visited: u64, cost: f64, prize: f64, best: &mut f64) {
    if cost + inst.cost(current, inst.end()) <= inst.t_max() && prize > *best {
        *best = prize;
    }
    for v in 0..inst.n() {
        if v == inst.end() || visited & (1 << v) != 0 {
            continue;
        }
        let c = cost + inst.cost(current, v);
        if c > inst.t_max() {
            continue;
        }
        recurse(inst, v, visited | (1 << v), c, prize + inst.prize(v), best);
    }
}
