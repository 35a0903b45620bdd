//! Edge-aware attention network estimating per-node action values.
//!
//! A state (a partial path viewed as the subproblem it induces) is encoded
//! as per-node features, the pairwise travel-cost matrix over the remaining
//! nodes, and the remaining budget as a global feature. The network runs an
//! edge-aware graph attention layer over the complete graph of remaining
//! nodes (multi-head, averaged), a stack of standard Transformer encoder
//! layers without positional encoding, and a linear projection of each
//! node's embedding to a scalar q-value. `e(s) = max_v q(s, v)` over the
//! feasible nodes is the prize estimate used by the learned heuristic.
//!
//! Everything is plain `f64` on the CPU with exact reverse-mode gradients
//! from the [`tape`] engine.

mod checkpoint;
mod layers;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use crate::heuristics::QFunction;
use crate::instance::Instance;
use crate::path::PathState;
use layers::{bind_params, extract_grads, forward_batch};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tape::Tape;
use thiserror::Error;

/// States per tape when batching; fixed so results never depend on the
/// number of worker threads.
const EVAL_CHUNK: usize = 32;
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid network config: {0}")]
    BadConfig(String),
    #[error("parameter {name} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Tape(#[from] tape::TapeError),
}

/// Activation applied to the averaged multi-head GAT aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GatActivation {
    #[default]
    Elu,
    Sigmoid,
    Relu,
}

/// Hyperparameters of the q-network. Parameter shapes derive from this
/// config alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QNetworkConfig {
    /// Embedding width H.
    pub hidden: usize,
    /// Attention heads in the edge-aware GAT layer.
    pub gat_heads: usize,
    /// Attention heads per Transformer encoding layer; must divide `hidden`.
    pub tel_heads: usize,
    /// Number of stacked Transformer encoding layers (0 = identity).
    pub tel_layers: usize,
    /// Negative slope of the LeakyReLU inside the GAT attention logits.
    pub leaky_slope: f64,
    pub activation: GatActivation,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for QNetworkConfig {
    fn default() -> Self {
        QNetworkConfig {
            hidden: 64,
            gat_heads: 20,
            tel_heads: 8,
            tel_layers: 4,
            leaky_slope: 0.2,
            activation: GatActivation::Elu,
            seed: 0,
        }
    }
}

impl QNetworkConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.hidden == 0 || self.gat_heads == 0 || self.tel_heads == 0 {
            return Err(NeuralError::BadConfig(
                "hidden, gat_heads and tel_heads must be at least 1".into(),
            ));
        }
        if self.hidden % self.tel_heads != 0 {
            return Err(NeuralError::BadConfig(format!(
                "hidden ({}) must be divisible by tel_heads ({})",
                self.hidden, self.tel_heads
            )));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(NeuralError::BadConfig(format!(
                "leaky_slope {} must be finite and nonnegative",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    fn ff_width(&self) -> usize {
        4 * self.hidden
    }
}

/// Number of per-node input features: prize, is-current flag, is-end flag.
pub const NODE_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GatHeadParams {
    /// Block of W applied to the anchor node's features (3 x H).
    pub w_node: Array2<f64>,
    /// Block applied to the neighbor's features (3 x H).
    pub w_neighbor: Array2<f64>,
    /// Block applied to the edge cost (1 x H).
    pub w_edge: Array2<f64>,
    /// Block applied to the global remaining-budget feature (1 x H).
    pub w_global: Array2<f64>,
    /// Attention vector a (H x 1).
    pub attn: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelLayerParams {
    pub w_query: Array2<f64>,
    pub b_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub b_key: Array2<f64>,
    pub w_value: Array2<f64>,
    pub b_value: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array2<f64>,
    pub ln_attn_gain: Array2<f64>,
    pub ln_attn_bias: Array2<f64>,
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array2<f64>,
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array2<f64>,
    pub ln_ff_gain: Array2<f64>,
    pub ln_ff_bias: Array2<f64>,
}

/// Every learnable tensor of the network. Also used as the container for
/// gradients and optimizer moments, which share the same structure.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams {
    pub gat: Vec<GatHeadParams>,
    pub tel: Vec<TelLayerParams>,
    /// Projection vector U (H x 1).
    pub proj: Array2<f64>,
}

impl QNetworkParams {
    /// All-zero tensors with the shapes implied by `cfg`.
    pub fn zeros(cfg: &QNetworkConfig) -> Self {
        let h = cfg.hidden;
        let f = cfg.ff_width();
        QNetworkParams {
            gat: (0..cfg.gat_heads)
                .map(|_| GatHeadParams {
                    w_node: Array2::zeros((NODE_FEATURES, h)),
                    w_neighbor: Array2::zeros((NODE_FEATURES, h)),
                    w_edge: Array2::zeros((1, h)),
                    w_global: Array2::zeros((1, h)),
                    attn: Array2::zeros((h, 1)),
                })
                .collect(),
            tel: (0..cfg.tel_layers)
                .map(|_| TelLayerParams {
                    w_query: Array2::zeros((h, h)),
                    b_query: Array2::zeros((1, h)),
                    w_key: Array2::zeros((h, h)),
                    b_key: Array2::zeros((1, h)),
                    w_value: Array2::zeros((h, h)),
                    b_value: Array2::zeros((1, h)),
                    w_out: Array2::zeros((h, h)),
                    b_out: Array2::zeros((1, h)),
                    ln_attn_gain: Array2::zeros((1, h)),
                    ln_attn_bias: Array2::zeros((1, h)),
                    ff_w1: Array2::zeros((h, f)),
                    ff_b1: Array2::zeros((1, f)),
                    ff_w2: Array2::zeros((f, h)),
                    ff_b2: Array2::zeros((1, h)),
                    ln_ff_gain: Array2::zeros((1, h)),
                    ln_ff_bias: Array2::zeros((1, h)),
                })
                .collect(),
            proj: Array2::zeros((h, 1)),
        }
    }

    /// Named views of every tensor, in a fixed canonical order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (i, head) in self.gat.iter().enumerate() {
            out.push((format!("gat.{i}.w_node"), &head.w_node));
            out.push((format!("gat.{i}.w_neighbor"), &head.w_neighbor));
            out.push((format!("gat.{i}.w_edge"), &head.w_edge));
            out.push((format!("gat.{i}.w_global"), &head.w_global));
            out.push((format!("gat.{i}.attn"), &head.attn));
        }
        for (i, layer) in self.tel.iter().enumerate() {
            out.push((format!("tel.{i}.w_query"), &layer.w_query));
            out.push((format!("tel.{i}.b_query"), &layer.b_query));
            out.push((format!("tel.{i}.w_key"), &layer.w_key));
            out.push((format!("tel.{i}.b_key"), &layer.b_key));
            out.push((format!("tel.{i}.w_value"), &layer.w_value));
            out.push((format!("tel.{i}.b_value"), &layer.b_value));
            out.push((format!("tel.{i}.w_out"), &layer.w_out));
            out.push((format!("tel.{i}.b_out"), &layer.b_out));
            out.push((format!("tel.{i}.ln_attn_gain"), &layer.ln_attn_gain));
            out.push((format!("tel.{i}.ln_attn_bias"), &layer.ln_attn_bias));
            out.push((format!("tel.{i}.ff_w1"), &layer.ff_w1));
            out.push((format!("tel.{i}.ff_b1"), &layer.ff_b1));
            out.push((format!("tel.{i}.ff_w2"), &layer.ff_w2));
            out.push((format!("tel.{i}.ff_b2"), &layer.ff_b2));
            out.push((format!("tel.{i}.ln_ff_gain"), &layer.ln_ff_gain));
            out.push((format!("tel.{i}.ln_ff_bias"), &layer.ln_ff_bias));
        }
        out.push(("proj".to_string(), &self.proj));
        out
    }

    /// Mutable variant of [`QNetworkParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = Vec::new();
        for (i, head) in self.gat.iter_mut().enumerate() {
            out.push((format!("gat.{i}.w_node"), &mut head.w_node));
            out.push((format!("gat.{i}.w_neighbor"), &mut head.w_neighbor));
            out.push((format!("gat.{i}.w_edge"), &mut head.w_edge));
            out.push((format!("gat.{i}.w_global"), &mut head.w_global));
            out.push((format!("gat.{i}.attn"), &mut head.attn));
        }
        for (i, layer) in self.tel.iter_mut().enumerate() {
            out.push((format!("tel.{i}.w_query"), &mut layer.w_query));
            out.push((format!("tel.{i}.b_query"), &mut layer.b_query));
            out.push((format!("tel.{i}.w_key"), &mut layer.w_key));
            out.push((format!("tel.{i}.b_key"), &mut layer.b_key));
            out.push((format!("tel.{i}.w_value"), &mut layer.w_value));
            out.push((format!("tel.{i}.b_value"), &mut layer.b_value));
            out.push((format!("tel.{i}.w_out"), &mut layer.w_out));
            out.push((format!("tel.{i}.b_out"), &mut layer.b_out));
            out.push((format!("tel.{i}.ln_attn_gain"), &mut layer.ln_attn_gain));
            out.push((format!("tel.{i}.ln_attn_bias"), &mut layer.ln_attn_bias));
            out.push((format!("tel.{i}.ff_w1"), &mut layer.ff_w1));
            out.push((format!("tel.{i}.ff_b1"), &mut layer.ff_b1));
            out.push((format!("tel.{i}.ff_w2"), &mut layer.ff_w2));
            out.push((format!("tel.{i}.ff_b2"), &mut layer.ff_b2));
            out.push((format!("tel.{i}.ln_ff_gain"), &mut layer.ln_ff_gain));
            out.push((format!("tel.{i}.ln_ff_bias"), &mut layer.ln_ff_bias));
        }
        out.push(("proj".to_string(), &mut self.proj));
        out
    }

    pub fn add_assign(&mut self, other: &QNetworkParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (_, a) in self.tensors_mut() {
            a.mapv_inplace(|v| v * c);
        }
    }

    fn validate_shapes(&self, cfg: &QNetworkConfig) -> Result<(), NeuralError> {
        let expected = QNetworkParams::zeros(cfg);
        if self.gat.len() != expected.gat.len() || self.tel.len() != expected.tel.len() {
            return Err(NeuralError::BadConfig(format!(
                "parameter stack has {} GAT heads / {} TEL layers, config wants {} / {}",
                self.gat.len(),
                self.tel.len(),
                expected.gat.len(),
                expected.tel.len()
            )));
        }
        for ((name, got), (_, want)) in self.tensors().into_iter().zip(expected.tensors()) {
            if got.dim() != want.dim() {
                return Err(NeuralError::ShapeMismatch {
                    name,
                    expected: want.dim(),
                    got: got.dim(),
                });
            }
        }
        Ok(())
    }
}

/// Deterministic initialization: weights uniform in
/// `[-1/sqrt(fan_in), +1/sqrt(fan_in))`, layer-norm gains 1, biases 0.
pub fn init_params(cfg: &QNetworkConfig) -> QNetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = QNetworkParams::zeros(cfg);

    fn fill(rng: &mut ChaCha8Rng, t: &mut Array2<f64>, fan_in: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in t.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
    }

    // The GAT blocks are column slices of one conceptual W over the
    // concatenated [x_v || x_k || u_vk || g] input, so they share its fan-in.
    let gat_fan_in = 2 * NODE_FEATURES + 2;
    let h = cfg.hidden;
    for head in &mut params.gat {
        fill(&mut rng, &mut head.w_node, gat_fan_in);
        fill(&mut rng, &mut head.w_neighbor, gat_fan_in);
        fill(&mut rng, &mut head.w_edge, gat_fan_in);
        fill(&mut rng, &mut head.w_global, gat_fan_in);
        fill(&mut rng, &mut head.attn, h);
    }
    for layer in &mut params.tel {
        fill(&mut rng, &mut layer.w_query, h);
        fill(&mut rng, &mut layer.w_key, h);
        fill(&mut rng, &mut layer.w_value, h);
        fill(&mut rng, &mut layer.w_out, h);
        layer.ln_attn_gain.fill(1.0);
        fill(&mut rng, &mut layer.ff_w1, h);
        fill(&mut rng, &mut layer.ff_w2, cfg.ff_width());
        layer.ln_ff_gain.fill(1.0);
    }
    fill(&mut rng, &mut params.proj, h);
    params
}

/// Feature view of a state: the subproblem spanned by the unvisited nodes
/// plus the current node and the end node.
#[derive(Debug, Clone)]
pub struct StateEncoding {
    /// Per-row `[prize, is_current, is_end]`; the prize feature of the
    /// current and end rows is zero, mirroring the endpoint convention of
    /// the subproblem instance.
    pub node_feat: Array2<f64>,
    /// Travel costs restricted to the remaining nodes (diagonal zero).
    pub edge_cost: Array2<f64>,
    /// Global feature g: the subproblem budget `T - cost(P)`.
    pub remaining_budget: f64,
    /// Original node index of each row, ascending.
    pub node_ids: Vec<usize>,
    /// True for rows that are feasible actions (unvisited, not the end node,
    /// and reachable with enough budget left to close the path).
    pub mask: Vec<bool>,
}

impl StateEncoding {
    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.node_ids.binary_search(&node).ok()
    }
}

/// Encodes the subproblem induced by a partial path.
///
/// Rows are the unvisited nodes plus the current node (`last(P)`) and the
/// end node, in ascending index order; visited-and-left nodes are removed
/// entirely rather than masked. Exactly one row carries `is_current` and one
/// carries `is_end` (the same row in the tour case once the path returns to
/// the start).
pub fn encode_state(inst: &Instance, path: &PathState) -> StateEncoding {
    debug_assert!(!path.is_closed(), "closed paths have no successor state");
    let last = path.last();
    let end = inst.end();
    let node_ids: Vec<usize> = (0..inst.n())
        .filter(|&v| !path.is_visited(v) || v == last || v == end)
        .collect();
    let m = node_ids.len();
    let feasible = path.feasible_extensions(inst);

    let mut node_feat = Array2::zeros((m, NODE_FEATURES));
    let mut mask = vec![false; m];
    for (i, &v) in node_ids.iter().enumerate() {
        let is_current = v == last;
        let is_end = v == end;
        node_feat[(i, 0)] = if is_current || is_end { 0.0 } else { inst.prize(v) };
        node_feat[(i, 1)] = if is_current { 1.0 } else { 0.0 };
        node_feat[(i, 2)] = if is_end { 1.0 } else { 0.0 };
        mask[i] = feasible.binary_search(&v).is_ok();
    }
    let mut edge_cost = Array2::zeros((m, m));
    for (i, &v) in node_ids.iter().enumerate() {
        for (j, &w) in node_ids.iter().enumerate() {
            edge_cost[(i, j)] = inst.cost(v, w);
        }
    }
    StateEncoding {
        node_feat,
        edge_cost,
        remaining_budget: path.remaining_budget(inst),
        node_ids,
        mask,
    }
}

/// Per-node action values for one state. Masked (infeasible) nodes carry a
/// `-inf` sentinel so they can never win a max or argmax.
#[derive(Debug, Clone)]
pub struct QValues {
    node_ids: Vec<usize>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl QValues {
    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    /// Values aligned with `node_ids`; `-inf` at masked rows.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn value_for(&self, node: usize) -> Option<f64> {
        self.node_ids
            .binary_search(&node)
            .ok()
            .map(|i| self.values[i])
    }

    /// `e(s) = max_v q(s, v)` over feasible nodes; `None` at terminal states.
    pub fn feasible_max(&self) -> Option<f64> {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    /// Feasible node with the highest value; ties go to the lowest index.
    pub fn feasible_argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for ((&id, &v), &m) in self.node_ids.iter().zip(&self.values).zip(&self.mask) {
            if m && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((id, v));
            }
        }
        best.map(|(id, _)| id)
    }
}

/// The q-network: a config plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    cfg: QNetworkConfig,
    params: QNetworkParams,
}

impl QNetwork {
    /// Freshly initialized network (deterministic in `cfg.seed`).
    pub fn new(cfg: QNetworkConfig) -> Result<Self, NeuralError> {
        cfg.validate()?;
        let params = init_params(&cfg);
        Ok(QNetwork { cfg, params })
    }

    pub fn from_parts(cfg: QNetworkConfig, params: QNetworkParams) -> Result<Self, NeuralError> {
        cfg.validate()?;
        params.validate_shapes(&cfg)?;
        Ok(QNetwork { cfg, params })
    }

    pub fn config(&self) -> &QNetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &QNetworkParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut QNetworkParams {
        &mut self.params
    }

    /// Action values for a single state.
    pub fn q_values_for(&self, inst: &Instance, path: &PathState) -> QValues {
        self.q_batch(&[(inst, path)]).pop().expect("one result")
    }

    /// Batched evaluation; identical to evaluating each state on its own.
    /// Large batches are split into fixed-size chunks evaluated in parallel.
    pub fn q_batch(&self, items: &[(&Instance, &PathState)]) -> Vec<QValues> {
        let eval_chunk = |chunk: &[(&Instance, &PathState)]| -> Vec<QValues> {
            let encodings: Vec<StateEncoding> =
                chunk.iter().map(|(inst, p)| encode_state(inst, p)).collect();
            let refs: Vec<&StateEncoding> = encodings.iter().collect();
            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &self.params);
            let (q_col, layout, _) = forward_batch(&mut tape, &self.cfg, &bound, &refs);
            let col = tape.value(q_col);
            encodings
                .iter()
                .enumerate()
                .map(|(i, enc)| {
                    let off = layout.offsets[i];
                    let values: Vec<f64> = enc
                        .mask
                        .iter()
                        .enumerate()
                        .map(|(r, &ok)| {
                            if ok {
                                col[(off + r, 0)]
                            } else {
                                f64::NEG_INFINITY
                            }
                        })
                        .collect();
                    QValues {
                        node_ids: enc.node_ids.clone(),
                        values,
                        mask: enc.mask.clone(),
                    }
                })
                .collect()
        };
        if items.len() <= EVAL_CHUNK {
            eval_chunk(items)
        } else {
            items
                .par_chunks(EVAL_CHUNK)
                .map(eval_chunk)
                .collect::<Vec<_>>()
                .into_iter()
                .flatten()
                .collect()
        }
    }
}

impl QFunction for QNetwork {
    fn q_values(&self, path: &PathState, inst: &Instance, feasible: &[usize]) -> Vec<f64> {
        let qv = self.q_values_for(inst, path);
        feasible
            .iter()
            .map(|&v| qv.value_for(v).expect("feasible node is in the encoding"))
            .collect()
    }

    fn q_values_batch(&self, items: &[(&Instance, &PathState, &[usize])]) -> Vec<Vec<f64>> {
        let pairs: Vec<(&Instance, &PathState)> =
            items.iter().map(|&(inst, p, _)| (inst, p)).collect();
        self.q_batch(&pairs)
            .into_iter()
            .zip(items)
            .map(|(qv, &(_, _, feasible))| {
                feasible
                    .iter()
                    .map(|&v| qv.value_for(v).expect("feasible node is in the encoding"))
                    .collect()
            })
            .collect()
    }
}

/// One supervised target for the TD loss.
pub struct TdItem<'a> {
    pub instance: &'a Instance,
    pub state: &'a PathState,
    pub action: usize,
    pub target: f64,
}

/// Mean squared TD error over a batch plus exact gradients for every
/// parameter tensor: `loss = mean_i (target_i - q(s_i, a_i))^2`.
///
/// The batch is split into fixed-size chunks whose gradients are summed in
/// index order, so the result is bit-identical regardless of thread count.
pub fn td_loss_and_grads(
    net: &QNetwork,
    batch: &[TdItem<'_>],
) -> Result<(f64, QNetworkParams), NeuralError> {
    if batch.is_empty() {
        return Ok((0.0, QNetworkParams::zeros(&net.cfg)));
    }

    let chunk_grads = |chunk: &[TdItem<'_>]| -> Result<(f64, QNetworkParams), NeuralError> {
        let encodings: Vec<StateEncoding> = chunk
            .iter()
            .map(|item| encode_state(item.instance, item.state))
            .collect();
        let refs: Vec<&StateEncoding> = encodings.iter().collect();
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &net.params);
        let (q_col, layout, _) = forward_batch(&mut tape, &net.cfg, &bound, &refs);

        let mut acc = None;
        for (i, item) in chunk.iter().enumerate() {
            let row = encodings[i]
                .row_of(item.action)
                .expect("action must be part of the state encoding");
            let picked = tape.slice_rows(q_col, layout.offsets[i] + row, 1);
            let target = tape.scalar(item.target);
            let diff = tape.sub(picked, target);
            let sq = tape.mul(diff, diff);
            acc = Some(match acc {
                None => sq,
                Some(prev) => tape.add(prev, sq),
            });
        }
        let total = acc.expect("chunk is nonempty");
        let loss_sum = tape.value(total)[(0, 0)];
        tape.backward(total)?;
        Ok((loss_sum, extract_grads(&tape, &bound, &net.cfg)))
    };

    let chunks: Vec<&[TdItem<'_>]> = batch.chunks(GRAD_CHUNK).collect();
    let partials: Result<Vec<(f64, QNetworkParams)>, NeuralError> = if chunks.len() > 1 {
        chunks.par_iter().map(|c| chunk_grads(c)).collect()
    } else {
        chunks.iter().map(|c| chunk_grads(c)).collect()
    };
    let partials = partials?;

    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = QNetworkParams::zeros(&net.cfg);
    for (l, g) in &partials {
        loss += l;
        grads.add_assign(g);
    }
    grads.scale(inv);
    Ok((loss * inv, grads))
}

#[cfg(test)]
mod tests;
