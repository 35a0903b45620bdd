//! Tape-based reverse-mode automatic differentiation over `f64` matrices.
//!
//! Every tensor is a 2-D array (vectors are 1xN or Nx1). Operations compute
//! eagerly and record themselves on the tape; [`Tape::backward`] runs the
//! reverse sweep from a scalar output and accumulates gradients into every
//! node. Leaves created with `requires_grad = false` still receive
//! gradients, they are simply never read.
//!
//! The engine is deliberately minimal: exactly the ops needed by the
//! attention network, each with a hand-written adjoint. Gradient
//! correctness is enforced by finite-difference checks in the tests and the
//! acceptance suite.

use ndarray::{concatenate, s, Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("non-finite gradient encountered in {op} node")]
    NonFinite { op: &'static str },
    #[error("backward requires a 1x1 scalar output, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
}

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ValueId(usize);

/// Logit offset removing an entry from a softmax; exp(-1e30) underflows to
/// exactly zero.
pub(crate) const NEG_MASK: f64 = -1e30;

/// Per-state attention data of a fused block-attention op.
struct BlockAttnState {
    attn: Vec<Array2<f64>>,
}

/// Saved forward state of the fused GAT attention (per block: softmax
/// output and the pre-activation logits for the LeakyReLU adjoint).
struct GatAttnState {
    attn: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    row_alpha: Vec<Vec<f64>>,
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, f64),
    Transpose(ValueId),
    SoftmaxRows(ValueId),
    LeakyRelu(ValueId, f64),
    Elu(ValueId),
    Relu(ValueId),
    Sigmoid(ValueId),
    LayerNormRows {
        x: ValueId,
        gain: ValueId,
        bias: ValueId,
    },
    /// `x W + b` with the bias row folded into the product pass.
    Linear {
        x: ValueId,
        w: ValueId,
        b: ValueId,
    },
    /// `layer_norm(x + r)` without materializing the sum.
    ResidualLayerNorm {
        x: ValueId,
        r: ValueId,
        gain: ValueId,
        bias: ValueId,
    },
    SliceRows {
        x: ValueId,
        start: usize,
    },
    SliceCols {
        x: ValueId,
        start: usize,
    },
    ConcatRows(Vec<ValueId>),
    ConcatCols(Vec<ValueId>),
    RowSums(ValueId),
    SumAll(ValueId),
    BlockMhsa {
        q: ValueId,
        k: ValueId,
        v: ValueId,
        blocks: std::sync::Arc<Vec<(usize, usize)>>,
        heads: usize,
        scale: f64,
        state: std::sync::Arc<BlockAttnState>,
    },
    GatBlockAttention {
        inputs: GatAttnIds,
        blocks: std::sync::Arc<Vec<(usize, usize)>>,
        edges: std::sync::Arc<Vec<Array2<f64>>>,
        budgets: std::sync::Arc<Vec<f64>>,
        slope: f64,
        state: std::sync::Arc<GatAttnState>,
    },
}

/// Tape handles feeding one fused GAT attention head.
#[derive(Clone, Copy)]
pub(crate) struct GatAttnIds {
    /// Anchor logit column `P a` (total x 1).
    pub(crate) s: ValueId,
    /// Neighbor logit column `Q a` (total x 1).
    pub(crate) t: ValueId,
    /// Anchor messages `X W_node` (total x H).
    pub(crate) p: ValueId,
    /// Neighbor messages `X W_neighbor` (total x H).
    pub(crate) q: ValueId,
    /// Edge logit coefficient `a . w_edge` (1 x 1).
    pub(crate) c_edge: ValueId,
    /// Global logit coefficient `a . w_global` (1 x 1).
    pub(crate) c_global: ValueId,
    /// Edge message weights (1 x H).
    pub(crate) w_edge: ValueId,
    /// Global message weights (1 x H).
    pub(crate) w_global: ValueId,
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Transpose(..) => "transpose",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Elu(..) => "elu",
        Op::Relu(..) => "relu",
        Op::Sigmoid(..) => "sigmoid",
        Op::LayerNormRows { .. } => "layer_norm_rows",
        Op::Linear { .. } => "linear",
        Op::ResidualLayerNorm { .. } => "residual_layer_norm",
        Op::SliceRows { .. } => "slice_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatRows(..) => "concat_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::RowSums(..) => "row_sums",
        Op::SumAll(..) => "sum_all",
        Op::BlockMhsa { .. } => "block_mhsa",
        Op::GatBlockAttention { .. } => "gat_block_attention",
    }
}

/// Row-wise softmax adjoint: `dx = y * (dy - rowdot(dy, y))`.
fn softmax_backward_into(y: &Array2<f64>, dy: &Array2<f64>, dx: &mut Array2<f64>) {
    for ((yrow, dyrow), mut dxrow) in y
        .rows()
        .into_iter()
        .zip(dy.rows())
        .zip(dx.rows_mut())
    {
        let dot: f64 = yrow.iter().zip(dyrow.iter()).map(|(y, g)| y * g).sum();
        for ((&yv, &gv), out) in yrow.iter().zip(dyrow.iter()).zip(dxrow.iter_mut()) {
            *out = yv * (gv - dot);
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

pub(crate) struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

fn broadcast_dim(a: usize, b: usize) -> usize {
    debug_assert!(a == b || a == 1 || b == 1, "incompatible dims {a} vs {b}");
    a.max(b)
}

/// Sums `g` down to `shape` along the axes that were broadcast.
fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() > 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() > 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    debug_assert_eq!(g.dim(), shape);
    g
}

fn broadcast_binary(
    a: &Array2<f64>,
    b: &Array2<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> Array2<f64> {
    // Fast paths for the shapes the network actually uses; the generic
    // broadcast below only serves odd test inputs.
    if a.dim() == b.dim() {
        let mut out = a.clone();
        ndarray::Zip::from(&mut out).and(b).for_each(|o, &y| *o = f(*o, y));
        return out;
    }
    if b.nrows() == 1 && b.ncols() == a.ncols() && a.is_standard_layout() {
        let mut out = a.clone();
        if let Some(bs) = b.row(0).to_slice() {
            for mut row in out.rows_mut() {
                let rs = row.as_slice_mut().expect("standard layout rows");
                for (o, &y) in rs.iter_mut().zip(bs) {
                    *o = f(*o, y);
                }
            }
            return out;
        }
    }
    if b.dim() == (1, 1) {
        let y = b[(0, 0)];
        return a.mapv(|x| f(x, y));
    }
    if a.dim() == (1, 1) {
        let x = a[(0, 0)];
        return b.mapv(|y| f(x, y));
    }
    let dim = (
        broadcast_dim(a.nrows(), b.nrows()),
        broadcast_dim(a.ncols(), b.ncols()),
    );
    let av = a.broadcast(dim).expect("lhs broadcast");
    let bv = b.broadcast(dim).expect("rhs broadcast");
    let mut out = Array2::zeros(dim);
    ndarray::Zip::from(&mut out)
        .and(&av)
        .and(&bv)
        .for_each(|o, &x, &y| *o = f(x, y));
    out
}

impl Tape {
    pub(crate) fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    pub(crate) fn leaf(&mut self, value: Array2<f64>) -> ValueId {
        self.push(value, Op::Leaf)
    }

    pub(crate) fn scalar(&mut self, value: f64) -> ValueId {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub(crate) fn value(&self, id: ValueId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub(crate) fn grad(&self, id: ValueId) -> Option<&Array2<f64>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub(crate) fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let value = broadcast_binary(self.value(a), self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub(crate) fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let value = broadcast_binary(self.value(a), self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub(crate) fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let value = broadcast_binary(self.value(a), self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub(crate) fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let value = self.value(a).mapv(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub(crate) fn transpose(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).t().as_standard_layout().into_owned();
        self.push(value, Op::Transpose(a))
    }

    /// Numerically stable row-wise softmax.
    pub(crate) fn softmax_rows(&mut self, a: ValueId) -> ValueId {
        let x = self.value(a);
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub(crate) fn leaky_relu(&mut self, a: ValueId, slope: f64) -> ValueId {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub(crate) fn elu(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { x.exp() - 1.0 });
        self.push(value, Op::Elu(a))
    }

    pub(crate) fn relu(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub(crate) fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    /// Row-wise layer normalization with learnable gain and bias (both 1xH).
    pub(crate) fn layer_norm_rows(&mut self, x: ValueId, gain: ValueId, bias: ValueId) -> ValueId {
        let xv = self.value(x);
        let g = self.value(gain).row(0);
        let b = self.value(bias).row(0);
        let g = g.to_slice().expect("gain is contiguous");
        let b = b.to_slice().expect("bias is contiguous");
        let h = xv.ncols() as f64;
        let mut out = Array2::zeros(xv.raw_dim());
        for (row, mut orow) in xv.rows().into_iter().zip(out.rows_mut()) {
            let row = row.to_slice().expect("input rows are contiguous");
            let orow = orow.as_slice_mut().expect("output rows are contiguous");
            let mean = row.iter().sum::<f64>() / h;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..row.len() {
                orow[j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        self.push(out, Op::LayerNormRows { x, gain, bias })
    }

    /// Affine map `x W + b` (b is 1xN, added to every row in place).
    pub(crate) fn linear(&mut self, x: ValueId, w: ValueId, b: ValueId) -> ValueId {
        let mut value = self.value(x).dot(self.value(w));
        let bias = self.value(b).row(0);
        let bias = bias.to_slice().expect("bias is contiguous");
        for mut row in value.rows_mut() {
            let row = row.as_slice_mut().expect("product rows are contiguous");
            for (o, &y) in row.iter_mut().zip(bias) {
                *o += y;
            }
        }
        self.push(value, Op::Linear { x, w, b })
    }

    /// Post-norm residual block: `layer_norm(x + r)` with gain and bias.
    pub(crate) fn residual_layer_norm(
        &mut self,
        x: ValueId,
        r: ValueId,
        gain: ValueId,
        bias: ValueId,
    ) -> ValueId {
        let xv = self.value(x);
        let rv = self.value(r);
        debug_assert_eq!(xv.dim(), rv.dim());
        let g = self.value(gain).row(0);
        let g = g.to_slice().expect("gain is contiguous");
        let b = self.value(bias).row(0);
        let b = b.to_slice().expect("bias is contiguous");
        let width = xv.ncols();
        let h = width as f64;
        let mut out = Array2::zeros(xv.raw_dim());
        let mut sum = vec![0.0; width];
        for ((xrow, rrow), mut orow) in xv
            .rows()
            .into_iter()
            .zip(rv.rows())
            .zip(out.rows_mut())
        {
            let xrow = xrow.to_slice().expect("contiguous");
            let rrow = rrow.to_slice().expect("contiguous");
            let orow = orow.as_slice_mut().expect("contiguous");
            let mut mean = 0.0;
            for c in 0..width {
                sum[c] = xrow[c] + rrow[c];
                mean += sum[c];
            }
            mean /= h;
            let var = sum.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for c in 0..width {
                orow[c] = (sum[c] - mean) * inv_std * g[c] + b[c];
            }
        }
        self.push(out, Op::ResidualLayerNorm { x, r, gain, bias })
    }

    pub(crate) fn slice_rows(&mut self, x: ValueId, start: usize, len: usize) -> ValueId {
        let value = self.value(x).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::SliceRows { x, start })
    }

    pub(crate) fn slice_cols(&mut self, x: ValueId, start: usize, len: usize) -> ValueId {
        let value = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols { x, start })
    }

    pub(crate) fn concat_rows(&mut self, parts: Vec<ValueId>) -> ValueId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("row concat");
        self.push(value, Op::ConcatRows(parts))
    }

    pub(crate) fn concat_cols(&mut self, parts: Vec<ValueId>) -> ValueId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("col concat");
        self.push(value, Op::ConcatCols(parts))
    }

    /// Sum along each row: MxN -> Mx1.
    pub(crate) fn row_sums(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::RowSums(a))
    }

    pub(crate) fn sum_all(&mut self, a: ValueId) -> ValueId {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// Fused multi-head self-attention over per-state row blocks: for every
    /// block and head, `softmax(Q Kᵀ * scale) V`, head outputs side by side.
    /// One tape node instead of thousands of small ones.
    pub(crate) fn block_mhsa(
        &mut self,
        q: ValueId,
        k: ValueId,
        v: ValueId,
        blocks: std::sync::Arc<Vec<(usize, usize)>>,
        heads: usize,
        scale: f64,
    ) -> ValueId {
        let qv = self.value(q);
        let kv = self.value(k);
        let vv = self.value(v);
        let h = qv.ncols();
        let dh = h / heads;
        let mut out = Array2::zeros(qv.raw_dim());
        let mut attn = Vec::with_capacity(blocks.len() * heads);
        for &(off, m) in blocks.iter() {
            for head in 0..heads {
                let window = s![off..off + m, head * dh..(head + 1) * dh];
                let qb = qv.slice(window);
                let kb = kv.slice(window);
                let vb = vv.slice(window);
                let mut scores = qb.dot(&kb.t());
                scores.mapv_inplace(|x| x * scale);
                for mut row in scores.rows_mut() {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        total += *x;
                    }
                    for x in row.iter_mut() {
                        *x /= total;
                    }
                }
                out.slice_mut(window).assign(&scores.dot(&vb));
                attn.push(scores);
            }
        }
        self.push(
            out,
            Op::BlockMhsa {
                q,
                k,
                v,
                blocks,
                heads,
                scale,
                state: std::sync::Arc::new(BlockAttnState { attn }),
            },
        )
    }

    /// Attention matrices of a [`Tape::block_mhsa`] node, indexed
    /// `block * heads + head`.
    pub(crate) fn mhsa_attention(&self, id: ValueId) -> &[Array2<f64>] {
        match &self.nodes[id.0].op {
            Op::BlockMhsa { state, .. } => &state.attn,
            _ => panic!("not a block_mhsa node"),
        }
    }

    /// Fused edge-aware GAT attention head over per-state blocks.
    ///
    /// For each block with `m > 1` rows: logits
    /// `z[i][j] = s[i] + t[j] + c_edge * u[i][j] + c_global * g`, attention
    /// `A = softmax_rows(LeakyReLU(z) + diag_mask)`, output rows
    /// `P[i] * rowsum(A)[i] + (A Q)[i] + rowsum(A ⊙ u)[i] * w_edge
    ///  + rowsum(A)[i] * g * w_global`.
    /// Single-row blocks have no neighbors and produce zero rows.
    pub(crate) fn gat_block_attention(
        &mut self,
        inputs: GatAttnIds,
        blocks: std::sync::Arc<Vec<(usize, usize)>>,
        edges: std::sync::Arc<Vec<Array2<f64>>>,
        budgets: std::sync::Arc<Vec<f64>>,
        slope: f64,
    ) -> ValueId {
        let sv = self.value(inputs.s);
        let tv = self.value(inputs.t);
        let pv = self.value(inputs.p);
        let qv = self.value(inputs.q);
        let cu = self.value(inputs.c_edge)[(0, 0)];
        let cg = self.value(inputs.c_global)[(0, 0)];
        let we = self.value(inputs.w_edge);
        let wg = self.value(inputs.w_global);
        let h = pv.ncols();

        let mut out = Array2::zeros(pv.raw_dim());
        let mut attn = Vec::with_capacity(blocks.len());
        let mut pre = Vec::with_capacity(blocks.len());
        let mut row_alpha_all = Vec::with_capacity(blocks.len());
        for (b, &(off, m)) in blocks.iter().enumerate() {
            if m <= 1 {
                attn.push(Array2::zeros((m, m)));
                pre.push(Array2::zeros((m, m)));
                row_alpha_all.push(vec![0.0; m]);
                continue;
            }
            let u = &edges[b];
            let g = budgets[b];
            let base = cg * g;
            let mut z = Array2::zeros((m, m));
            for i in 0..m {
                let si = sv[(off + i, 0)] + base;
                let urow = u.row(i);
                let urow = urow.to_slice().expect("edge rows are contiguous");
                let zrow = z.row_mut(i).into_slice().expect("contiguous");
                for j in 0..m {
                    zrow[j] = si + tv[(off + j, 0)] + cu * urow[j];
                }
            }
            let mut a = z.mapv(|x| if x > 0.0 { x } else { slope * x });
            for i in 0..m {
                a[(i, i)] += NEG_MASK;
            }
            for mut row in a.rows_mut() {
                let row = row.as_slice_mut().expect("contiguous");
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                for x in row.iter_mut() {
                    *x /= total;
                }
            }

            let q_block = qv.slice(s![off..off + m, ..]);
            let nbr = a.dot(&q_block);
            let wes = we.row(0);
            let wes = wes.to_slice().expect("contiguous");
            let wgs = wg.row(0);
            let wgs = wgs.to_slice().expect("contiguous");
            let mut row_alpha = vec![0.0; m];
            for i in 0..m {
                let arow = a.row(i);
                let arow = arow.to_slice().expect("contiguous");
                let urow = u.row(i);
                let urow = urow.to_slice().expect("contiguous");
                let mut ra = 0.0;
                let mut uw = 0.0;
                for j in 0..m {
                    ra += arow[j];
                    uw += arow[j] * urow[j];
                }
                row_alpha[i] = ra;
                let gterm = ra * g;
                let prow = pv.row(off + i);
                let prow = prow.to_slice().expect("contiguous");
                let nrow = nbr.row(i);
                let nrow = nrow.to_slice().expect("contiguous");
                let orow = out.row_mut(off + i).into_slice().expect("contiguous");
                for c in 0..h {
                    orow[c] = prow[c] * ra + nrow[c] + uw * wes[c] + gterm * wgs[c];
                }
            }
            attn.push(a);
            pre.push(z);
            row_alpha_all.push(row_alpha);
        }
        self.push(
            out,
            Op::GatBlockAttention {
                inputs,
                blocks,
                edges,
                budgets,
                slope,
                state: std::sync::Arc::new(GatAttnState {
                    attn,
                    pre,
                    row_alpha: row_alpha_all,
                }),
            },
        )
    }

    /// Attention matrices of a [`Tape::gat_block_attention`] node, one per
    /// block.
    pub(crate) fn gat_attention(&self, id: ValueId) -> &[Array2<f64>] {
        match &self.nodes[id.0].op {
            Op::GatBlockAttention { state, .. } => &state.attn,
            _ => panic!("not a gat_block_attention node"),
        }
    }

    fn accumulate(&mut self, id: ValueId, contribution: Array2<f64>) {
        match &mut self.grads[id.0] {
            Some(g) => *g += &contribution,
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Reverse sweep from the scalar `out`. Gradients of every node are
    /// available through [`Tape::grad`] afterwards. Non-finite gradients
    /// abort with the offending op's name.
    pub(crate) fn backward(&mut self, out: ValueId) -> Result<(), TapeError> {
        let dim = self.value(out).dim();
        if dim != (1, 1) {
            return Err(TapeError::NotScalar {
                rows: dim.0,
                cols: dim.1,
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(Array2::ones((1, 1)));

        for i in (0..self.nodes.len()).rev() {
            let Some(go) = self.grads[i].take() else {
                continue;
            };
            // Keep upstream gradients in standard layout so the slice-based
            // adjoints below always apply.
            let go = if go.is_standard_layout() {
                go
            } else {
                go.as_standard_layout().into_owned()
            };
            let op = self.nodes[i].op.clone();
            if !go.iter().all(|v| v.is_finite()) {
                return Err(TapeError::NonFinite { op: op_name(&op) });
            }
            // Ops only reference earlier nodes, so reads of parent values and
            // writes of parent grads never alias node i.
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = go.dot(&self.value(b).t());
                    let gb = self.value(a).t().dot(&go);
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::Add(a, b) => {
                    let ga = reduce_to(go.clone(), self.value(a).dim());
                    let gb = reduce_to(go.clone(), self.value(b).dim());
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::Sub(a, b) => {
                    let ga = reduce_to(go.clone(), self.value(a).dim());
                    let gb = reduce_to(go.mapv(|v| -v), self.value(b).dim());
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::Mul(a, b) => {
                    let ga = reduce_to(
                        broadcast_binary(&go, self.value(b), |g, y| g * y),
                        self.value(a).dim(),
                    );
                    let gb = reduce_to(
                        broadcast_binary(&go, self.value(a), |g, x| g * x),
                        self.value(b).dim(),
                    );
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::Scale(a, c) => {
                    self.accumulate(a, go.mapv(|v| v * c));
                }
                Op::Transpose(a) => {
                    self.accumulate(a, go.t().to_owned());
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let mut ga = Array2::zeros(y.raw_dim());
                    for (r, (yrow, grow)) in
                        y.rows().into_iter().zip(go.rows()).enumerate()
                    {
                        let dot: f64 = yrow.iter().zip(grow.iter()).map(|(y, g)| y * g).sum();
                        for (c, (&yv, &gv)) in yrow.iter().zip(grow.iter()).enumerate() {
                            ga[(r, c)] = yv * (gv - dot);
                        }
                    }
                    self.accumulate(a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(a);
                    let ga = ndarray::Zip::from(&go)
                        .and(x)
                        .map_collect(|&g, &x| if x > 0.0 { g } else { g * slope });
                    self.accumulate(a, ga);
                }
                Op::Elu(a) => {
                    let y = &self.nodes[i].value;
                    let x = &self.nodes[a.0].value;
                    let mut ga = Array2::zeros(y.raw_dim());
                    ndarray::Zip::from(&mut ga)
                        .and(&go)
                        .and(x)
                        .and(y)
                        .for_each(|o, &g, &x, &y| *o = if x > 0.0 { g } else { g * (y + 1.0) });
                    self.accumulate(a, ga);
                }
                Op::Relu(a) => {
                    let x = self.value(a);
                    let ga = ndarray::Zip::from(&go)
                        .and(x)
                        .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                    self.accumulate(a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let ga = ndarray::Zip::from(&go)
                        .and(y)
                        .map_collect(|&g, &y| g * y * (1.0 - y));
                    self.accumulate(a, ga);
                }
                Op::LayerNormRows { x, gain, bias } => {
                    let xv = self.value(x);
                    let gv = self.value(gain).row(0);
                    let gs = gv.to_slice().expect("gain is contiguous");
                    let width = xv.ncols();
                    let h = width as f64;
                    let mut gx = Array2::zeros(xv.raw_dim());
                    let mut ggain = Array2::zeros((1, width));
                    let mut gbias = Array2::zeros((1, width));
                    let mut xhat = vec![0.0; width];
                    let mut dxhat = vec![0.0; width];
                    {
                        let ggain = ggain.row_mut(0).into_slice().expect("contiguous");
                        let gbias = gbias.row_mut(0).into_slice().expect("contiguous");
                        for ((row, gorow), mut gxrow) in xv
                            .rows()
                            .into_iter()
                            .zip(go.rows())
                            .zip(gx.rows_mut())
                        {
                            let row = row.to_slice().expect("contiguous");
                            let gorow = gorow.to_slice().expect("contiguous");
                            let gxrow = gxrow.as_slice_mut().expect("contiguous");
                            let mean = row.iter().sum::<f64>() / h;
                            let var = row
                                .iter()
                                .map(|v| (v - mean) * (v - mean))
                                .sum::<f64>()
                                / h;
                            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                            let mut mean_dxhat = 0.0;
                            let mut mean_dxhat_xhat = 0.0;
                            for c in 0..width {
                                xhat[c] = (row[c] - mean) * inv_std;
                                dxhat[c] = gorow[c] * gs[c];
                                mean_dxhat += dxhat[c];
                                mean_dxhat_xhat += dxhat[c] * xhat[c];
                            }
                            mean_dxhat /= h;
                            mean_dxhat_xhat /= h;
                            for c in 0..width {
                                gxrow[c] = (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat)
                                    * inv_std;
                                ggain[c] += gorow[c] * xhat[c];
                                gbias[c] += gorow[c];
                            }
                        }
                    }
                    self.accumulate(x, gx);
                    self.accumulate(gain, ggain);
                    self.accumulate(bias, gbias);
                }
                Op::Linear { x, w, b } => {
                    let gx = go.dot(&self.value(w).t());
                    let gw = self.value(x).t().dot(&go);
                    let gb = go.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(x, gx);
                    self.accumulate(w, gw);
                    self.accumulate(b, gb);
                }
                Op::ResidualLayerNorm { x, r, gain, bias } => {
                    let xv = self.value(x);
                    let rv = self.value(r);
                    let gv = self.value(gain).row(0);
                    let gs = gv.to_slice().expect("gain is contiguous");
                    let width = xv.ncols();
                    let h = width as f64;
                    let mut gx = Array2::zeros(xv.raw_dim());
                    let mut ggain = Array2::zeros((1, width));
                    let mut gbias = Array2::zeros((1, width));
                    let mut sum = vec![0.0; width];
                    let mut xhat = vec![0.0; width];
                    let mut dxhat = vec![0.0; width];
                    {
                        let ggain = ggain.row_mut(0).into_slice().expect("contiguous");
                        let gbias = gbias.row_mut(0).into_slice().expect("contiguous");
                        for (((xrow, rrow), gorow), mut gxrow) in xv
                            .rows()
                            .into_iter()
                            .zip(rv.rows())
                            .zip(go.rows())
                            .zip(gx.rows_mut())
                        {
                            let xrow = xrow.to_slice().expect("contiguous");
                            let rrow = rrow.to_slice().expect("contiguous");
                            let gorow = gorow.to_slice().expect("contiguous");
                            let gxrow = gxrow.as_slice_mut().expect("contiguous");
                            let mut mean = 0.0;
                            for c in 0..width {
                                sum[c] = xrow[c] + rrow[c];
                                mean += sum[c];
                            }
                            mean /= h;
                            let var =
                                sum.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
                            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                            let mut mean_dxhat = 0.0;
                            let mut mean_dxhat_xhat = 0.0;
                            for c in 0..width {
                                xhat[c] = (sum[c] - mean) * inv_std;
                                dxhat[c] = gorow[c] * gs[c];
                                mean_dxhat += dxhat[c];
                                mean_dxhat_xhat += dxhat[c] * xhat[c];
                            }
                            mean_dxhat /= h;
                            mean_dxhat_xhat /= h;
                            for c in 0..width {
                                gxrow[c] = (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat)
                                    * inv_std;
                                ggain[c] += gorow[c] * xhat[c];
                                gbias[c] += gorow[c];
                            }
                        }
                    }
                    // The sum node was never materialized; both addends share
                    // its gradient.
                    self.accumulate(x, gx.clone());
                    self.accumulate(r, gx);
                    self.accumulate(gain, ggain);
                    self.accumulate(bias, gbias);
                }
                Op::SliceRows { x, start } => {
                    let mut gx = Array2::zeros(self.value(x).raw_dim());
                    gx.slice_mut(s![start..start + go.nrows(), ..]).assign(&go);
                    self.accumulate(x, gx);
                }
                Op::SliceCols { x, start } => {
                    let mut gx = Array2::zeros(self.value(x).raw_dim());
                    gx.slice_mut(s![.., start..start + go.ncols()]).assign(&go);
                    self.accumulate(x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(p).nrows();
                        let gp = go.slice(s![offset..offset + rows, ..]).to_owned();
                        offset += rows;
                        self.accumulate(p, gp);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(p).ncols();
                        let gp = go.slice(s![.., offset..offset + cols]).to_owned();
                        offset += cols;
                        self.accumulate(p, gp);
                    }
                }
                Op::RowSums(a) => {
                    let dim = self.value(a).dim();
                    let gx = go
                        .broadcast(dim)
                        .expect("row_sums grad broadcast")
                        .to_owned();
                    self.accumulate(a, gx);
                }
                Op::SumAll(a) => {
                    let gx = Array2::from_elem(self.value(a).raw_dim(), go[(0, 0)]);
                    self.accumulate(a, gx);
                }
                Op::BlockMhsa {
                    q,
                    k,
                    v,
                    blocks,
                    heads,
                    scale,
                    state,
                } => {
                    let qv = self.value(q);
                    let kv = self.value(k);
                    let vv = self.value(v);
                    let h = qv.ncols();
                    let dh = h / heads;
                    let mut dq = Array2::zeros(qv.raw_dim());
                    let mut dk = Array2::zeros(kv.raw_dim());
                    let mut dv = Array2::zeros(vv.raw_dim());
                    for (b, &(off, m)) in blocks.iter().enumerate() {
                        for head in 0..heads {
                            let a = &state.attn[b * heads + head];
                            let window = s![off..off + m, head * dh..(head + 1) * dh];
                            let go_b = go.slice(window);
                            let qb = qv.slice(window);
                            let kb = kv.slice(window);
                            let vb = vv.slice(window);
                            let d_attn = go_b.dot(&vb.t());
                            dv.slice_mut(window).scaled_add(1.0, &a.t().dot(&go_b));
                            let mut d_scores = Array2::zeros((m, m));
                            softmax_backward_into(a, &d_attn, &mut d_scores);
                            d_scores.mapv_inplace(|x| x * scale);
                            dq.slice_mut(window).scaled_add(1.0, &d_scores.dot(&kb));
                            dk.slice_mut(window).scaled_add(1.0, &d_scores.t().dot(&qb));
                        }
                    }
                    self.accumulate(q, dq);
                    self.accumulate(k, dk);
                    self.accumulate(v, dv);
                }
                Op::GatBlockAttention {
                    inputs,
                    blocks,
                    edges,
                    budgets,
                    slope,
                    state,
                } => {
                    let pv = self.value(inputs.p);
                    let qv = self.value(inputs.q);
                    let we = self.value(inputs.w_edge);
                    let wg = self.value(inputs.w_global);
                    let h = pv.ncols();
                    let total = pv.nrows();
                    let mut ds = Array2::zeros((total, 1));
                    let mut dt = Array2::zeros((total, 1));
                    let mut dp = Array2::zeros((total, h));
                    let mut dq = Array2::zeros((total, h));
                    let mut dwe = Array2::zeros((1, h));
                    let mut dwg = Array2::zeros((1, h));
                    let mut dcu = 0.0;
                    let mut dcg = 0.0;
                    for (b, &(off, m)) in blocks.iter().enumerate() {
                        if m <= 1 {
                            continue;
                        }
                        let a = &state.attn[b];
                        let z = &state.pre[b];
                        let row_alpha = &state.row_alpha[b];
                        let u = &edges[b];
                        let g = budgets[b];
                        let go_b = go.slice(s![off..off + m, ..]);
                        let q_block = qv.slice(s![off..off + m, ..]);

                        // Neighbor-message adjoints.
                        let mut d_attn = go_b.dot(&q_block.t());
                        dq.slice_mut(s![off..off + m, ..])
                            .scaled_add(1.0, &a.t().dot(&go_b));

                        for i in 0..m {
                            // Anchor message: out += P[i] * row_alpha[i].
                            let mut d_row_alpha = 0.0;
                            let mut d_uw = 0.0;
                            let mut uw = 0.0;
                            for j in 0..m {
                                uw += a[(i, j)] * u[(i, j)];
                            }
                            for c in 0..h {
                                let gval = go_b[(i, c)];
                                dp[(off + i, c)] += gval * row_alpha[i];
                                d_row_alpha += gval * (pv[(off + i, c)] + g * wg[(0, c)]);
                                d_uw += gval * we[(0, c)];
                                dwe[(0, c)] += uw * gval;
                                dwg[(0, c)] += g * row_alpha[i] * gval;
                            }
                            for j in 0..m {
                                d_attn[(i, j)] += d_uw * u[(i, j)] + d_row_alpha;
                            }
                        }

                        let mut d_logits = Array2::zeros((m, m));
                        softmax_backward_into(a, &d_attn, &mut d_logits);
                        for i in 0..m {
                            let mut dzi_sum = 0.0;
                            for j in 0..m {
                                let dz = d_logits[(i, j)]
                                    * if z[(i, j)] > 0.0 { 1.0 } else { slope };
                                dzi_sum += dz;
                                dt[(off + j, 0)] += dz;
                                dcu += dz * u[(i, j)];
                                dcg += dz * g;
                            }
                            ds[(off + i, 0)] += dzi_sum;
                        }
                    }
                    self.accumulate(inputs.s, ds);
                    self.accumulate(inputs.t, dt);
                    self.accumulate(inputs.p, dp);
                    self.accumulate(inputs.q, dq);
                    self.accumulate(inputs.w_edge, dwe);
                    self.accumulate(inputs.w_global, dwg);
                    self.accumulate(inputs.c_edge, Array2::from_elem((1, 1), dcu));
                    self.accumulate(inputs.c_global, Array2::from_elem((1, 1), dcg));
                }
            }
            // Retain the gradient so callers can query any node after the sweep.
            self.grads[i] = Some(go);
        }
        Ok(())
    }
}
