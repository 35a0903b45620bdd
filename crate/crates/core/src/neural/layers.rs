//! Network forward pass on the autodiff tape.
//!
//! A batch of states is processed jointly: every state's node-feature rows
//! are stacked into one tall matrix so the linear projections and the
//! feedforward sublayers run as a few large matrix products, while the
//! attention (which never mixes states) runs inside fused per-block ops.
//! Batched results are identical to evaluating states one by one.

use super::tape::{GatAttnIds, Tape, ValueId};
use super::{GatActivation, QNetworkConfig, QNetworkParams, StateEncoding};
use ndarray::Array2;
use std::sync::Arc;

pub(crate) struct BoundGatHead {
    w_node: ValueId,
    w_neighbor: ValueId,
    w_edge: ValueId,
    w_global: ValueId,
    attn: ValueId,
}

pub(crate) struct BoundTelLayer {
    w_query: ValueId,
    b_query: ValueId,
    w_key: ValueId,
    b_key: ValueId,
    w_value: ValueId,
    b_value: ValueId,
    w_out: ValueId,
    b_out: ValueId,
    ln_attn_gain: ValueId,
    ln_attn_bias: ValueId,
    ff_w1: ValueId,
    ff_b1: ValueId,
    ff_w2: ValueId,
    ff_b2: ValueId,
    ln_ff_gain: ValueId,
    ln_ff_bias: ValueId,
}

pub(crate) struct BoundParams {
    pub(crate) gat: Vec<BoundGatHead>,
    pub(crate) tel: Vec<BoundTelLayer>,
    pub(crate) proj: ValueId,
}

pub(crate) fn bind_params(tape: &mut Tape, params: &QNetworkParams) -> BoundParams {
    let gat = params
        .gat
        .iter()
        .map(|h| BoundGatHead {
            w_node: tape.leaf(h.w_node.clone()),
            w_neighbor: tape.leaf(h.w_neighbor.clone()),
            w_edge: tape.leaf(h.w_edge.clone()),
            w_global: tape.leaf(h.w_global.clone()),
            attn: tape.leaf(h.attn.clone()),
        })
        .collect();
    let tel = params
        .tel
        .iter()
        .map(|l| BoundTelLayer {
            w_query: tape.leaf(l.w_query.clone()),
            b_query: tape.leaf(l.b_query.clone()),
            w_key: tape.leaf(l.w_key.clone()),
            b_key: tape.leaf(l.b_key.clone()),
            w_value: tape.leaf(l.w_value.clone()),
            b_value: tape.leaf(l.b_value.clone()),
            w_out: tape.leaf(l.w_out.clone()),
            b_out: tape.leaf(l.b_out.clone()),
            ln_attn_gain: tape.leaf(l.ln_attn_gain.clone()),
            ln_attn_bias: tape.leaf(l.ln_attn_bias.clone()),
            ff_w1: tape.leaf(l.ff_w1.clone()),
            ff_b1: tape.leaf(l.ff_b1.clone()),
            ff_w2: tape.leaf(l.ff_w2.clone()),
            ff_b2: tape.leaf(l.ff_b2.clone()),
            ln_ff_gain: tape.leaf(l.ln_ff_gain.clone()),
            ln_ff_bias: tape.leaf(l.ln_ff_bias.clone()),
        })
        .collect();
    BoundParams {
        gat,
        tel,
        proj: tape.leaf(params.proj.clone()),
    }
}

/// Gradients extracted for every bound parameter, in the same structure as
/// [`QNetworkParams`]. Parameters a loss does not touch keep zero grads.
pub(crate) fn extract_grads(
    tape: &Tape,
    bound: &BoundParams,
    cfg: &QNetworkConfig,
) -> QNetworkParams {
    let mut grads = QNetworkParams::zeros(cfg);
    let pull = |id: ValueId, dst: &mut Array2<f64>| {
        if let Some(g) = tape.grad(id) {
            dst.assign(g);
        }
    };
    for (h, b) in grads.gat.iter_mut().zip(&bound.gat) {
        pull(b.w_node, &mut h.w_node);
        pull(b.w_neighbor, &mut h.w_neighbor);
        pull(b.w_edge, &mut h.w_edge);
        pull(b.w_global, &mut h.w_global);
        pull(b.attn, &mut h.attn);
    }
    for (l, b) in grads.tel.iter_mut().zip(&bound.tel) {
        pull(b.w_query, &mut l.w_query);
        pull(b.b_query, &mut l.b_query);
        pull(b.w_key, &mut l.w_key);
        pull(b.b_key, &mut l.b_key);
        pull(b.w_value, &mut l.w_value);
        pull(b.b_value, &mut l.b_value);
        pull(b.w_out, &mut l.w_out);
        pull(b.b_out, &mut l.b_out);
        pull(b.ln_attn_gain, &mut l.ln_attn_gain);
        pull(b.ln_attn_bias, &mut l.ln_attn_bias);
        pull(b.ff_w1, &mut l.ff_w1);
        pull(b.ff_b1, &mut l.ff_b1);
        pull(b.ff_w2, &mut l.ff_w2);
        pull(b.ff_b2, &mut l.ff_b2);
        pull(b.ln_ff_gain, &mut l.ln_ff_gain);
        pull(b.ln_ff_bias, &mut l.ln_ff_bias);
    }
    pull(bound.proj, &mut grads.proj);
    grads
}

/// Row layout of a state batch inside the stacked feature matrix.
pub(crate) struct BatchLayout {
    pub(crate) offsets: Vec<usize>,
    pub(crate) sizes: Vec<usize>,
    pub(crate) total: usize,
}

impl BatchLayout {
    fn of(encodings: &[&StateEncoding]) -> Self {
        let mut offsets = Vec::with_capacity(encodings.len());
        let mut sizes = Vec::with_capacity(encodings.len());
        let mut total = 0;
        for enc in encodings {
            offsets.push(total);
            let m = enc.node_ids.len();
            sizes.push(m);
            total += m;
        }
        BatchLayout {
            offsets,
            sizes,
            total,
        }
    }
}

/// Handles to the fused attention nodes of one forward pass, for reading
/// the attention matrices back out.
pub(crate) struct ForwardTrace {
    /// One fused GAT node per head; per-block matrices via
    /// [`Tape::gat_attention`].
    pub(crate) gat_nodes: Vec<ValueId>,
    /// One fused MHSA node per TEL layer; `block * heads + head` matrices
    /// via [`Tape::mhsa_attention`].
    pub(crate) tel_nodes: Vec<ValueId>,
}

fn apply_activation(tape: &mut Tape, act: GatActivation, x: ValueId) -> ValueId {
    match act {
        GatActivation::Elu => tape.elu(x),
        GatActivation::Sigmoid => tape.sigmoid(x),
        GatActivation::Relu => tape.relu(x),
    }
}

/// Runs the full network over a batch of encoded states.
///
/// Returns the stacked per-node q column (`total x 1`, rows grouped per
/// state according to the layout) plus the attention trace.
pub(crate) fn forward_batch(
    tape: &mut Tape,
    cfg: &QNetworkConfig,
    bound: &BoundParams,
    encodings: &[&StateEncoding],
) -> (ValueId, BatchLayout, ForwardTrace) {
    let layout = BatchLayout::of(encodings);
    let mut stacked = Array2::zeros((layout.total, super::NODE_FEATURES));
    for (enc, &off) in encodings.iter().zip(&layout.offsets) {
        stacked
            .slice_mut(ndarray::s![off..off + enc.node_ids.len(), ..])
            .assign(&enc.node_feat);
    }
    let x_all = tape.leaf(stacked);

    let blocks: Arc<Vec<(usize, usize)>> = Arc::new(
        layout
            .offsets
            .iter()
            .zip(&layout.sizes)
            .map(|(&o, &m)| (o, m))
            .collect(),
    );
    let edges: Arc<Vec<Array2<f64>>> =
        Arc::new(encodings.iter().map(|e| e.edge_cost.clone()).collect());
    let budgets: Arc<Vec<f64>> =
        Arc::new(encodings.iter().map(|e| e.remaining_budget).collect());

    let mut gat_nodes = Vec::with_capacity(cfg.gat_heads);
    let mut head_sum: Option<ValueId> = None;
    for head in &bound.gat {
        let p_self = tape.matmul(x_all, head.w_node);
        let q_nbr = tape.matmul(x_all, head.w_neighbor);
        let s_col = tape.matmul(p_self, head.attn);
        let t_col = tape.matmul(q_nbr, head.attn);
        let c_edge = tape.matmul(head.w_edge, head.attn);
        let c_global = tape.matmul(head.w_global, head.attn);
        let fused = tape.gat_block_attention(
            GatAttnIds {
                s: s_col,
                t: t_col,
                p: p_self,
                q: q_nbr,
                c_edge,
                c_global,
                w_edge: head.w_edge,
                w_global: head.w_global,
            },
            Arc::clone(&blocks),
            Arc::clone(&edges),
            Arc::clone(&budgets),
            cfg.leaky_slope,
        );
        gat_nodes.push(fused);
        head_sum = Some(match head_sum {
            None => fused,
            Some(acc) => tape.add(acc, fused),
        });
    }
    let mean = {
        let sum = head_sum.expect("at least one GAT head");
        tape.scale(sum, 1.0 / cfg.gat_heads as f64)
    };
    let mut h = apply_activation(tape, cfg.activation, mean);

    let head_dim = cfg.hidden / cfg.tel_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut tel_nodes = Vec::with_capacity(cfg.tel_layers);
    for layer in &bound.tel {
        let q_lin = tape.matmul(h, layer.w_query);
        let q_all = tape.add(q_lin, layer.b_query);
        let k_lin = tape.matmul(h, layer.w_key);
        let k_all = tape.add(k_lin, layer.b_key);
        let v_lin = tape.matmul(h, layer.w_value);
        let v_all = tape.add(v_lin, layer.b_value);

        let merged = tape.block_mhsa(
            q_all,
            k_all,
            v_all,
            Arc::clone(&blocks),
            cfg.tel_heads,
            scale,
        );
        tel_nodes.push(merged);
        let projected = tape.matmul(merged, layer.w_out);
        let attn_out = tape.add(projected, layer.b_out);
        let residual = tape.add(h, attn_out);
        let normed = tape.layer_norm_rows(residual, layer.ln_attn_gain, layer.ln_attn_bias);

        let ff_lin = tape.matmul(normed, layer.ff_w1);
        let ff_pre = tape.add(ff_lin, layer.ff_b1);
        let ff_act = tape.relu(ff_pre);
        let ff_lin2 = tape.matmul(ff_act, layer.ff_w2);
        let ff_out = tape.add(ff_lin2, layer.ff_b2);
        let residual2 = tape.add(normed, ff_out);
        h = tape.layer_norm_rows(residual2, layer.ln_ff_gain, layer.ln_ff_bias);
    }

    let q_col = tape.matmul(h, bound.proj);
    (
        q_col,
        layout,
        ForwardTrace {
            gat_nodes,
            tel_nodes,
        },
    )
}
