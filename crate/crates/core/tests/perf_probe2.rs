//! Finer-grained timing probes; run with --ignored --nocapture.

use ndarray::Array2;
use std::time::Instant;

#[test]
#[ignore]
fn raw_matmul_throughput() {
    let a = Array2::<f64>::from_elem((640, 32), 0.5);
    let w1 = Array2::<f64>::from_elem((32, 128), 0.25);
    let w2 = Array2::<f64>::from_elem((128, 32), 0.25);
    let t = Instant::now();
    let reps = 200;
    let mut acc = 0.0;
    for _ in 0..reps {
        let h = a.dot(&w1);
        let o = h.dot(&w2);
        acc += o[(0, 0)];
    }
    let dt = t.elapsed().as_secs_f64() / reps as f64;
    let flops = 2.0 * (640.0 * 32.0 * 128.0 * 2.0);
    println!(
        "ffn pair 640x32x128x32: {:.3} ms  ({:.1} GFLOP/s)  [{acc}]",
        dt * 1e3,
        flops / dt / 1e9
    );

    let qkv = Array2::<f64>::from_elem((640, 32), 0.5);
    let w = Array2::<f64>::from_elem((32, 32), 0.25);
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        for _ in 0..4 {
            let q = qkv.dot(&w);
            acc += q[(0, 0)];
        }
    }
    let dt = t.elapsed().as_secs_f64() / reps as f64;
    println!(
        "qkvo 4x 640x32x32: {:.3} ms ({:.1} GFLOP/s) [{acc}]",
        dt * 1e3,
        2.0 * 4.0 * 640.0 * 32.0 * 32.0 / dt / 1e9
    );

    // Small per-block attention dots as in the fused MHSA.
    let qb = Array2::<f64>::from_elem((20, 4), 0.5);
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        for _ in 0..(32 * 8) {
            let s = qb.dot(&qb.t());
            acc += s[(0, 0)];
        }
    }
    let dt = t.elapsed().as_secs_f64() / reps as f64;
    println!("256 block dots 20x4x20: {:.3} ms [{acc}]", dt * 1e3);

    // Layer norm style pass over 640x32.
    let x = Array2::<f64>::from_elem((640, 32), 0.5);
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        let mut out = Array2::<f64>::zeros(x.raw_dim());
        for (i, row) in x.rows().into_iter().enumerate() {
            let mean = row.sum() / 32.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 32.0;
            let std = (var + 1e-5).sqrt();
            for (j, &v) in row.iter().enumerate() {
                out[(i, j)] = (v - mean) / std;
            }
        }
        acc += out[(0, 0)];
    }
    let dt = t.elapsed().as_secs_f64() / reps as f64;
    println!("layer_norm 640x32: {:.3} ms [{acc}]", dt * 1e3);
}

#[test]
#[ignore]
fn q_batch_chunk_scaling() {
    use opbeam_core::neural::{QNetwork, QNetworkConfig};
    use opbeam_core::{generate_euclidean_instance, Instance, PathState, PrizeKind};
    let net = QNetwork::new(QNetworkConfig {
        hidden: 32,
        gat_heads: 4,
        tel_heads: 8,
        tel_layers: 4,
        ..QNetworkConfig::default()
    })
    .unwrap();
    let instances: Vec<Instance> = (0..64)
        .map(|s| generate_euclidean_instance(20, PrizeKind::Uniform, 2.0, s).unwrap())
        .collect();
    let states: Vec<PathState> = instances.iter().map(PathState::initial).collect();
    for size in [1usize, 8, 16, 32] {
        let items: Vec<(&Instance, &PathState)> = instances
            .iter()
            .zip(&states)
            .take(size)
            .map(|(i, s)| (i, s))
            .collect();
        let reps = (256 / size).max(4);
        let t = Instant::now();
        for _ in 0..reps {
            let _ = net.q_batch(&items);
        }
        let dt = t.elapsed().as_secs_f64() / reps as f64;
        println!(
            "q_batch({size}): {:.2} ms total, {:.0} us/state",
            dt * 1e3,
            dt * 1e6 / size as f64
        );
    }
}
