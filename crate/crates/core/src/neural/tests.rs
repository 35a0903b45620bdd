use super::layers::{bind_params, forward_batch};
use super::tape::Tape;
use super::*;
use crate::generate::generate_euclidean_instance;
use crate::instance::PrizeKind;
use crate::testutil::hand_instance;
use ndarray::Array2;

fn small_cfg() -> QNetworkConfig {
    QNetworkConfig {
        hidden: 8,
        gat_heads: 2,
        tel_heads: 2,
        tel_layers: 2,
        ..QNetworkConfig::default()
    }
}

#[test]
fn encode_initial_state() {
    let inst = generate_euclidean_instance(10, PrizeKind::Uniform, 1.0, 3).unwrap();
    let p = PathState::initial(&inst);
    let enc = encode_state(&inst, &p);
    assert_eq!(enc.node_ids.len(), 10);
    assert_eq!(enc.remaining_budget, inst.t_max());
    // Start doubles as current and end (tour case), prize feature zeroed.
    assert_eq!(enc.node_feat[(0, 0)], 0.0);
    assert_eq!(enc.node_feat[(0, 1)], 1.0);
    assert_eq!(enc.node_feat[(0, 2)], 1.0);
    assert_eq!(
        enc.node_feat.column(1).iter().filter(|&&f| f == 1.0).count(),
        1
    );
    for i in 0..10 {
        assert_eq!(enc.edge_cost[(i, i)], 0.0);
    }
    assert!(!enc.mask[0]);
}

#[test]
fn encode_removes_visited_interior_nodes() {
    // 20 nodes, distinct start and end; visiting two prized nodes leaves
    // 18 rows: the two visited-and-left nodes (start and the first prized
    // node) drop out, the current node and the end stay.
    let n = 20;
    let cost = vec![vec![0.0; n]; n];
    let mut prize = vec![0.5; n];
    prize[0] = 0.0;
    prize[1] = 0.0;
    let inst = Instance::new(cost, prize, 1.0, 0, 1).unwrap();
    let p = PathState::initial(&inst)
        .extend(2, &inst)
        .unwrap()
        .extend(3, &inst)
        .unwrap();
    let enc = encode_state(&inst, &p);
    assert_eq!(enc.node_ids.len(), 18);
    assert!(!enc.node_ids.contains(&0));
    assert!(!enc.node_ids.contains(&2));
    let cur = enc.row_of(3).unwrap();
    assert_eq!(enc.node_feat[(cur, 1)], 1.0);
    assert_eq!(enc.node_feat[(cur, 0)], 0.0);
    let end = enc.row_of(1).unwrap();
    assert_eq!(enc.node_feat[(end, 2)], 1.0);
}

#[test]
fn encode_after_all_prized_nodes_visited() {
    let inst = hand_instance();
    let p = PathState::initial(&inst)
        .extend(1, &inst)
        .unwrap();
    // Node 2 is unvisited but infeasible; rows are {1 (current), 2, 3 (end)}.
    let enc = encode_state(&inst, &p);
    assert_eq!(enc.node_ids, vec![1, 2, 3]);
    assert_eq!(enc.mask, vec![false, false, false]);
}

#[test]
fn init_params_deterministic_and_finite() {
    let cfg = small_cfg();
    let a = init_params(&cfg);
    let b = init_params(&cfg);
    assert_eq!(a, b);
    let mut cfg2 = cfg.clone();
    cfg2.seed = 1;
    assert_ne!(a, init_params(&cfg2));
    for (name, t) in a.tensors() {
        assert!(t.iter().all(|v| v.is_finite()), "{name} has non-finite values");
    }
    // Layer-norm gains start at 1, biases at 0.
    assert!(a.tel[0].ln_attn_gain.iter().all(|&v| v == 1.0));
    assert!(a.tel[0].b_query.iter().all(|&v| v == 0.0));
}

#[test]
fn config_validation() {
    let mut cfg = small_cfg();
    cfg.tel_heads = 3;
    assert!(cfg.validate().is_err(), "hidden must divide tel_heads");
    let mut cfg = small_cfg();
    cfg.gat_heads = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = small_cfg();
    cfg.tel_layers = 0;
    assert!(cfg.validate().is_ok(), "an empty TEL stack is allowed");
}

#[test]
fn attention_rows_sum_to_one_everywhere() {
    let cfg = small_cfg();
    let net = QNetwork::new(cfg.clone()).unwrap();
    let inst = generate_euclidean_instance(9, PrizeKind::Distance, 1.0, 5).unwrap();
    let p = PathState::initial(&inst).extend(3, &inst).unwrap();
    let enc = encode_state(&inst, &p);

    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, net.params());
    let (_, _, trace) = forward_batch(&mut tape, &cfg, &bound, &[&enc]);
    for &node in &trace.gat_nodes {
        for alpha in tape.gat_attention(node) {
            for row in alpha.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }
    for &node in &trace.tel_nodes {
        for attn in tape.mhsa_attention(node) {
            for row in attn.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn gat_attention_symmetric_neighbors_split_evenly() {
    // Three nodes: the two neighbors of row 0 have identical features and
    // identical edge costs, so row 0 attends 0.5 / 0.5.
    let cfg = small_cfg();
    let net = QNetwork::new(cfg.clone()).unwrap();
    let enc = StateEncoding {
        node_feat: ndarray::array![[0.0, 1.0, 1.0], [0.4, 0.0, 0.0], [0.4, 0.0, 0.0]],
        edge_cost: ndarray::array![[0.0, 0.3, 0.3], [0.3, 0.0, 0.5], [0.3, 0.5, 0.0]],
        remaining_budget: 1.0,
        node_ids: vec![0, 1, 2],
        mask: vec![false, true, true],
    };
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, net.params());
    let (_, _, trace) = forward_batch(&mut tape, &cfg, &bound, &[&enc]);
    for &node in &trace.gat_nodes {
        let alpha = &tape.gat_attention(node)[0];
        assert!((alpha[(0, 1)] - 0.5).abs() < 1e-12);
        assert!((alpha[(0, 2)] - 0.5).abs() < 1e-12);
        assert!(alpha[(0, 0)].abs() < 1e-12, "diagonal must be masked");
    }
}

#[test]
fn forward_is_permutation_equivariant() {
    let cfg = small_cfg();
    let net = QNetwork::new(cfg.clone()).unwrap();
    let inst = generate_euclidean_instance(8, PrizeKind::Uniform, 1.0, 11).unwrap();
    let p = PathState::initial(&inst);
    let enc = encode_state(&inst, &p);
    let m = enc.node_ids.len();
    // Reverse the row order (an arbitrary permutation).
    let perm: Vec<usize> = (0..m).rev().collect();
    let mut node_feat = Array2::zeros((m, NODE_FEATURES));
    let mut edge_cost = Array2::zeros((m, m));
    for (to, &from) in perm.iter().enumerate() {
        for c in 0..NODE_FEATURES {
            node_feat[(to, c)] = enc.node_feat[(from, c)];
        }
        for (to2, &from2) in perm.iter().enumerate() {
            edge_cost[(to, to2)] = enc.edge_cost[(from, from2)];
        }
    }
    let permuted = StateEncoding {
        node_feat,
        edge_cost,
        remaining_budget: enc.remaining_budget,
        node_ids: enc.node_ids.clone(),
        mask: perm.iter().map(|&i| enc.mask[i]).collect(),
    };

    let run = |e: &StateEncoding| -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, net.params());
        let (q, _, _) = forward_batch(&mut tape, &cfg, &bound, &[e]);
        tape.value(q).column(0).to_vec()
    };
    let base = run(&enc);
    let perm_out = run(&permuted);
    for (to, &from) in perm.iter().enumerate() {
        assert!(
            (perm_out[to] - base[from]).abs() < 1e-9,
            "row {to}: {} vs {}",
            perm_out[to],
            base[from]
        );
    }
}

#[test]
fn empty_tel_stack_is_identity() {
    let mut cfg = small_cfg();
    cfg.tel_layers = 0;
    let net = QNetwork::new(cfg.clone()).unwrap();
    let inst = generate_euclidean_instance(6, PrizeKind::Uniform, 0.8, 2).unwrap();
    let enc = encode_state(&inst, &PathState::initial(&inst));
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, net.params());
    // With no TEL layers the projection applies directly to the GAT output;
    // reconstruct that product and compare.
    let (q, _, _) = forward_batch(&mut tape, &cfg, &bound, &[&enc]);
    assert_eq!(tape.value(q).nrows(), enc.node_ids.len());
    // Degenerate proj = 0 gives q = 0 under an empty stack.
    let mut zeroed = net.clone();
    zeroed.params_mut().proj.fill(0.0);
    let qv = zeroed.q_values_for(&inst, &PathState::initial(&inst));
    for (&v, &m) in qv.values().iter().zip(qv.mask()) {
        if m {
            assert_eq!(v, 0.0);
        }
    }
}

#[test]
fn projection_is_linear_in_embeddings() {
    // q = U . h: zero U nulls the output, a one-hot U selects one column.
    let cfg = QNetworkConfig {
        tel_layers: 0,
        ..small_cfg()
    };
    let inst = generate_euclidean_instance(6, PrizeKind::Uniform, 0.8, 4).unwrap();
    let p = PathState::initial(&inst);
    let enc = encode_state(&inst, &p);

    let base = QNetwork::new(cfg.clone()).unwrap();
    let run_proj = |proj: Array2<f64>| -> Vec<f64> {
        let mut net = base.clone();
        net.params_mut().proj = proj;
        let qv = net.q_values_for(&inst, &p);
        qv.values()
            .iter()
            .zip(qv.mask())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    };

    let h = cfg.hidden;
    let zero = run_proj(Array2::zeros((h, 1)));
    assert!(zero.iter().all(|&v| v == 0.0));

    // One-hot selects embedding column j; additivity over two projections.
    let mut u1 = Array2::zeros((h, 1));
    u1[(2, 0)] = 1.0;
    let mut u2 = Array2::zeros((h, 1));
    u2[(5, 0)] = 1.0;
    let q1 = run_proj(u1.clone());
    let q2 = run_proj(u2.clone());
    let q12 = run_proj(&u1 + &u2);
    for i in 0..q1.len() {
        assert!((q12[i] - (q1[i] + q2[i])).abs() < 1e-12);
    }
    let _ = enc;
}

#[test]
fn batch_evaluation_matches_sequential() {
    let net = QNetwork::new(small_cfg()).unwrap();
    let inst = generate_euclidean_instance(12, PrizeKind::Distance, 1.3, 6).unwrap();
    let p0 = PathState::initial(&inst);
    let p1 = p0.extend(4, &inst).unwrap();
    let p2 = p0.extend(7, &inst).unwrap();
    let items: Vec<(&Instance, &PathState)> = vec![(&inst, &p0), (&inst, &p1), (&inst, &p2)];
    let batched = net.q_batch(&items);
    for (qv, (i, p)) in batched.iter().zip(&items) {
        let single = net.q_values_for(i, p);
        assert_eq!(qv.node_ids(), single.node_ids());
        for (a, b) in qv.values().iter().zip(single.values()) {
            assert_eq!(a.to_bits(), b.to_bits(), "batched vs sequential mismatch");
        }
    }
}

#[test]
fn masked_nodes_never_win_argmax_or_max() {
    let net = QNetwork::new(small_cfg()).unwrap();
    let inst = hand_instance();
    // After visiting a, node b is present in the encoding but infeasible.
    let p = PathState::initial(&inst).extend(1, &inst).unwrap();
    let qv = net.q_values_for(&inst, &p);
    assert_eq!(qv.feasible_max(), None);
    assert_eq!(qv.feasible_argmax(), None);
    for (&v, &m) in qv.values().iter().zip(qv.mask()) {
        if !m {
            assert_eq!(v, f64::NEG_INFINITY);
        }
    }

    // A state with both feasible and infeasible nodes: perturbing the
    // infeasible node's prize never changes the feasible argmax or max.
    let mut cost = vec![vec![0.0; 5]; 5];
    for (i, j, c) in [
        (0, 1, 0.2),
        (0, 2, 0.3),
        (0, 3, 0.9),
        (1, 2, 0.2),
        (1, 3, 0.9),
        (2, 3, 0.9),
        (0, 4, 0.1),
        (1, 4, 0.2),
        (2, 4, 0.3),
        (3, 4, 0.9),
    ] {
        cost[i][j] = c;
        cost[j][i] = c;
    }
    let mk = |prize3: f64| {
        Instance::new(
            cost.clone(),
            vec![0.0, 0.4, 0.7, prize3, 0.0],
            0.8,
            0,
            4,
        )
        .unwrap()
    };
    let a = mk(0.1);
    let b = mk(0.9);
    let pa = PathState::initial(&a);
    let pb = PathState::initial(&b);
    // Node 3 is out of reach (0.9 + 0.9 > 0.8) in both.
    assert!(!pa.feasible_extensions(&a).contains(&3));
    let qa = net.q_values_for(&a, &pa);
    let qb = net.q_values_for(&b, &pb);
    assert_eq!(qa.feasible_argmax(), qb.feasible_argmax());
}

#[test]
fn zero_params_give_zero_loss_and_zero_grads() {
    let cfg = QNetworkConfig {
        hidden: 4,
        gat_heads: 1,
        tel_heads: 1,
        tel_layers: 0,
        ..QNetworkConfig::default()
    };
    let mut net = QNetwork::new(cfg).unwrap();
    for (_, t) in net.params_mut().tensors_mut() {
        t.fill(0.0);
    }
    let inst = hand_instance();
    let p = PathState::initial(&inst);
    let item = TdItem {
        instance: &inst,
        state: &p,
        action: 1,
        target: 0.0,
    };
    let (loss, grads) = td_loss_and_grads(&net, &[item]).unwrap();
    // Everything is zero, so q = 0 and the loss and its gradients vanish.
    assert_eq!(loss, 0.0);
    for (name, g) in grads.tensors() {
        assert!(g.iter().all(|&v| v == 0.0), "{name} grad nonzero");
    }
}

#[test]
fn projection_gradient_is_the_embedding_row() {
    // With loss = (y - q)^2 and y chosen so that 2(q - y) = 1, the gradient
    // with respect to U is exactly the action's embedding row h'. That row
    // is recovered independently by probing with one-hot projections.
    let cfg = QNetworkConfig {
        hidden: 4,
        gat_heads: 2,
        tel_heads: 2,
        tel_layers: 1,
        ..QNetworkConfig::default()
    };
    let net = QNetwork::new(cfg.clone()).unwrap();
    let inst = generate_euclidean_instance(6, PrizeKind::Uniform, 0.8, 21).unwrap();
    let p = PathState::initial(&inst);
    let action = p.feasible_extensions(&inst)[0];

    let q = net.q_values_for(&inst, &p).value_for(action).unwrap();
    let target = q - 0.5;
    let item = TdItem {
        instance: &inst,
        state: &p,
        action,
        target,
    };
    let (_, grads) = td_loss_and_grads(&net, &[item]).unwrap();

    // d loss / d U_j = 2 (q - y) h'_j, with the same float operations the
    // backward pass performs.
    let d = q - target;
    let factor = d + d;
    for j in 0..cfg.hidden {
        let mut probe = net.clone();
        probe.params_mut().proj.fill(0.0);
        probe.params_mut().proj[(j, 0)] = 1.0;
        let h_j = probe.q_values_for(&inst, &p).value_for(action).unwrap();
        assert_eq!(
            grads.proj[(j, 0)].to_bits(),
            (h_j * factor).to_bits(),
            "component {j}"
        );
    }
}

#[test]
fn finite_difference_spot_check_full_network() {
    let cfg = QNetworkConfig {
        hidden: 4,
        gat_heads: 2,
        tel_heads: 2,
        tel_layers: 1,
        ..QNetworkConfig::default()
    };
    let net = QNetwork::new(cfg).unwrap();
    let inst = (9..)
        .map(|s| generate_euclidean_instance(6, PrizeKind::Uniform, 0.8, s).unwrap())
        .find(|i| !PathState::initial(i).feasible_extensions(i).is_empty())
        .unwrap();
    let p = PathState::initial(&inst);
    let feasible = p.feasible_extensions(&inst);
    let action = feasible[0];
    fn mk_item<'a>(inst: &'a Instance, p: &'a PathState, action: usize) -> TdItem<'a> {
        TdItem {
            instance: inst,
            state: p,
            action,
            target: 0.7,
        }
    }

    let (_, grads) = td_loss_and_grads(&net, &[mk_item(&inst, &p, action)]).unwrap();
    let names: Vec<String> = net.params().tensors().iter().map(|(n, _)| n.clone()).collect();
    let eps = 1e-5;
    for name in [
        "gat.0.w_node",
        "gat.1.attn",
        "tel.0.w_query",
        "tel.0.ff_w1",
        "tel.0.ln_attn_gain",
        "proj",
    ] {
        let idx = names.iter().position(|n| n == name).unwrap();
        let dim = net.params().tensors()[idx].1.dim();
        let coord = (dim.0 / 2, dim.1 / 2);
        let eval = |delta: f64| -> f64 {
            let mut perturbed = net.clone();
            perturbed.params_mut().tensors_mut()[idx].1[coord] += delta;
            let items = [mk_item(&inst, &p, action)];
            let (loss, _) = td_loss_and_grads(&perturbed, &items).unwrap();
            loss
        };
        let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
        let analytic = grads.tensors()[idx].1[coord];
        let denom = fd.abs().max(analytic.abs()).max(1e-8);
        assert!(
            ((fd - analytic) / denom).abs() < 1e-3,
            "{name}{coord:?}: fd {fd} vs analytic {analytic}"
        );
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt.json");
    let net = QNetwork::new(small_cfg()).unwrap();
    save_checkpoint(&net, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), net.config());
    for ((na, a), (nb, b)) in back.params().tensors().iter().zip(net.params().tensors()) {
        assert_eq!(na, &nb);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits(), "{na} differs after round trip");
        }
    }
}

#[test]
fn q_function_view_matches_qvalues() {
    use crate::heuristics::QFunction;
    let net = QNetwork::new(small_cfg()).unwrap();
    let inst = generate_euclidean_instance(9, PrizeKind::Uniform, 1.0, 12).unwrap();
    let p = PathState::initial(&inst);
    let feasible = p.feasible_extensions(&inst);
    let via_trait = net.q_values(&p, &inst, &feasible);
    let qv = net.q_values_for(&inst, &p);
    for (&v, q) in feasible.iter().zip(via_trait) {
        assert_eq!(qv.value_for(v).unwrap().to_bits(), q.to_bits());
    }
    // e(s) is the max over the map; the greedy action is its argmax.
    let e = qv.feasible_max().unwrap();
    let best = qv.feasible_argmax().unwrap();
    assert_eq!(qv.value_for(best).unwrap(), e);
}
