//! Small shared building blocks: two-layer perceptrons and the
//! LeakyReLU-scored neighborhood attention used by the center aggregation
//! and the GAT-style decoder layers.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::params::{derived_seed, glorot_init, ParamId, ParamSet};

/// Logit penalty standing in for -inf on non-neighbor entries.
pub const MASK_PENALTY: f64 = -1e9;

/// Two-layer perceptron (ReLU hidden layer), with biases.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

pub fn init_mlp(
    set: &mut ParamSet,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    master_seed: u64,
) -> Result<MlpParams> {
    let mut weight = |name: String, rows: usize, cols: usize, scale: f64| -> Result<ParamId> {
        let seed = derived_seed(master_seed, &name);
        set.add(name, glorot_init(rows, cols, seed).scale(scale), true)
    };
    let w1 = weight(format!("{prefix}.w1"), in_dim, hidden, 1.0)?;
    let w2 = weight(format!("{prefix}.w2"), hidden, out_dim, 1.0)?;
    // Small nonzero biases keep ReLU pre-activations off the exact kink,
    // where the gradient is undefined.
    let b1 = weight(format!("{prefix}.b1"), 1, hidden, 0.1)?;
    let b2 = weight(format!("{prefix}.b2"), 1, out_dim, 0.1)?;
    Ok(MlpParams { w1, b1, w2, b2 })
}

pub fn mlp_on_tape(tape: &mut Tape, leaves: &[Var], mlp: &MlpParams, input: Var) -> Result<Var> {
    let lin1 = tape.matmul(input, leaves[mlp.w1.0])?;
    let lin1 = tape.add_row_broadcast(lin1, leaves[mlp.b1.0])?;
    let hidden = tape.relu(lin1)?;
    let lin2 = tape.matmul(hidden, leaves[mlp.w2.0])?;
    tape.add_row_broadcast(lin2, leaves[mlp.b2.0])
}

/// Conventional GCN propagation operator with self-loops:
/// D~^{-1/2} (A + I) D~^{-1/2}.
pub fn gcn_propagation(g: &Graph) -> Matrix {
    let n = g.node_count();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt()).collect();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        p.set(i, i, inv_sqrt[i] * inv_sqrt[i]);
    }
    for &(u, v) in g.edges() {
        let w = inv_sqrt[u] * inv_sqrt[v];
        p.set(u, v, w);
        p.set(v, u, w);
    }
    p
}

/// Additive mask for attention logits: 0 on each node's neighborhood
/// (graph neighbors plus self), `MASK_PENALTY` elsewhere.
pub fn attention_mask_penalty(g: &Graph) -> Matrix {
    let n = g.node_count();
    let mut m = Matrix::filled(n, n, MASK_PENALTY);
    for i in 0..n {
        m.set(i, i, 0.0);
    }
    for &(u, v) in g.edges() {
        m.set(u, v, 0.0);
        m.set(v, u, 0.0);
    }
    m
}

/// Attention coefficients over each node's neighborhood.
///
/// `transformed` holds the already-projected per-node vectors (n x c); the
/// scoring vector is split into its first and second halves so that
/// a . [w_i || w_j] = a_left . w_i + a_right . w_j, computed for all pairs at
/// once. Scores pass LeakyReLU(0.2), non-neighbors are pushed to -1e9, and a
/// row softmax normalizes each neighborhood.
pub fn gat_attention(
    tape: &mut Tape,
    transformed: Var,
    attn_vec: Var,
    mask_penalty: Var,
) -> Result<Var> {
    let n = tape.value(transformed).rows();
    let c = tape.value(transformed).cols();
    let left_idx: Vec<usize> = (0..c).collect();
    let right_idx: Vec<usize> = (c..2 * c).collect();
    let a_left = tape.gather_rows(attn_vec, &left_idx)?;
    let a_right = tape.gather_rows(attn_vec, &right_idx)?;
    let s_left = tape.matmul(transformed, a_left)?;
    let s_right = tape.matmul(transformed, a_right)?;

    let ones_row = tape.constant(Matrix::filled(1, n, 1.0))?;
    let ones_col = tape.constant(Matrix::filled(n, 1, 1.0))?;
    let left_mat = tape.matmul(s_left, ones_row)?;
    let s_right_t = tape.transpose(s_right)?;
    let right_mat = tape.matmul(ones_col, s_right_t)?;
    let scores = tape.add(left_mat, right_mat)?;
    let scores = tape.leaky_relu(scores, 0.2)?;
    let masked = tape.add(scores, mask_penalty)?;
    tape.row_softmax(masked)
}
