//! Attribute and structure decoders, the reconstruction loss, and per-node
//! anomaly scores.
//!
//! The structure decoder embeds nodes with one graph layer and reconstructs
//! the adjacency as sigmoid(E E^T); the attribute decoder is one graph layer
//! mapping the hidden space back to the feature space. Both layers come in
//! GAT and GCN flavors and are linear in their output (no activation), so
//! negative attribute values stay reachable.

use crate::autodiff::{Tape, Var};
use crate::error::{NkError, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::neighbor::SQRT_GUARD;
use crate::nn::{attention_mask_penalty, gat_attention, gcn_propagation};
use crate::params::{derived_seed, glorot_init, ParamId, ParamSet};

/// Flavor of a decoder graph layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderKind {
    Gat,
    Gcn,
}

impl DecoderKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gat" => Ok(DecoderKind::Gat),
            "gcn" => Ok(DecoderKind::Gcn),
            other => Err(NkError::contract(format!(
                "decoder kind must be 'gat' or 'gcn', got '{other}'"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Gat => "gat",
            DecoderKind::Gcn => "gcn",
        }
    }
}

/// One graph layer: a weight matrix plus, for the GAT flavor, its attention
/// scoring vector.
#[derive(Clone, Debug)]
pub struct GraphLayerParams {
    pub kind: DecoderKind,
    pub weight: ParamId,
    pub attn: Option<ParamId>,
}

/// The attribute decoder (hidden -> feature space) and structure embedder
/// (hidden -> hidden).
#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub attr: GraphLayerParams,
    pub struct_emb: GraphLayerParams,
}

fn init_layer(
    set: &mut ParamSet,
    prefix: &str,
    kind: DecoderKind,
    in_dim: usize,
    out_dim: usize,
    master_seed: u64,
) -> Result<GraphLayerParams> {
    let wname = format!("{prefix}.weight");
    let weight = set.add(
        wname.clone(),
        glorot_init(in_dim, out_dim, derived_seed(master_seed, &wname)),
        true,
    )?;
    let attn = match kind {
        DecoderKind::Gcn => None,
        DecoderKind::Gat => {
            let aname = format!("{prefix}.attn");
            Some(set.add(
                aname.clone(),
                glorot_init(2 * out_dim, 1, derived_seed(master_seed, &aname)),
                true,
            )?)
        }
    };
    Ok(GraphLayerParams { kind, weight, attn })
}

pub fn init_decoder_params(
    set: &mut ParamSet,
    hidden: usize,
    dim: usize,
    attr_kind: DecoderKind,
    struct_kind: DecoderKind,
    master_seed: u64,
) -> Result<DecoderParams> {
    Ok(DecoderParams {
        attr: init_layer(set, "decoder.attr", attr_kind, hidden, dim, master_seed)?,
        struct_emb: init_layer(set, "decoder.struct", struct_kind, hidden, hidden, master_seed)?,
    })
}

/// Graph-derived constants the decoders need; built once per graph.
#[derive(Clone, Debug)]
pub struct DecoderOps {
    pub gcn_prop: Matrix,
    pub mask_penalty: Matrix,
}

impl DecoderOps {
    pub fn new(g: &Graph) -> Self {
        DecoderOps {
            gcn_prop: gcn_propagation(g),
            mask_penalty: attention_mask_penalty(g),
        }
    }
}

fn graph_layer_on_tape(
    tape: &mut Tape,
    leaves: &[Var],
    layer: &GraphLayerParams,
    input: Var,
    gcn_prop: Var,
    mask_penalty: Var,
) -> Result<Var> {
    let transformed = tape.matmul(input, leaves[layer.weight.0])?;
    match layer.kind {
        DecoderKind::Gcn => tape.matmul(gcn_prop, transformed),
        DecoderKind::Gat => {
            let attn = layer.attn.expect("gat layer has attention params");
            let alpha = gat_attention(tape, transformed, leaves[attn.0], mask_penalty)?;
            tape.matmul(alpha, transformed)
        }
    }
}

/// Decoder tape nodes.
pub struct DecodeVars {
    pub x_hat: Var,
    pub a_hat: Var,
}

/// Reconstruct attributes and adjacency from the refined representations:
/// x_hat from the attribute layer, a_hat = sigmoid(E E^T) from the structure
/// embedding. a_hat is symmetric by construction.
pub fn decode_on_tape(
    tape: &mut Tape,
    leaves: &[Var],
    dec: &DecoderParams,
    h_tilde: Var,
    gcn_prop: Var,
    mask_penalty: Var,
) -> Result<DecodeVars> {
    let x_hat = graph_layer_on_tape(tape, leaves, &dec.attr, h_tilde, gcn_prop, mask_penalty)?;
    let e = graph_layer_on_tape(tape, leaves, &dec.struct_emb, h_tilde, gcn_prop, mask_penalty)?;
    let e_t = tape.transpose(e)?;
    let gram = tape.matmul(e, e_t)?;
    let a_hat = tape.sigmoid(gram)?;
    Ok(DecodeVars { x_hat, a_hat })
}

/// Loss tape nodes.
pub struct ReconLossVars {
    pub att: Var,
    pub str_: Var,
    pub rec: Var,
}

fn mean_row_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff)?;
    let row_sq = tape.row_sum(sq)?;
    let row_norm = tape.sqrt_guard(row_sq, SQRT_GUARD)?;
    tape.mean(row_norm)
}

/// Attribute and structure reconstruction losses plus their lambda_cs blend.
///
/// Both losses are means of row-wise L2 errors, which makes the mean of the
/// per-node scores equal the blended loss exactly.
pub fn reconstruction_loss_on_tape(
    tape: &mut Tape,
    decode: &DecodeVars,
    x: Var,
    a: Var,
    lambda: f64,
) -> Result<ReconLossVars> {
    let att = mean_row_distance(tape, decode.x_hat, x)?;
    let str_ = mean_row_distance(tape, decode.a_hat, a)?;
    let att_part = tape.scale(att, lambda)?;
    let str_part = tape.scale(str_, 1.0 - lambda)?;
    let rec = tape.add(att_part, str_part)?;
    Ok(ReconLossVars { att, str_, rec })
}

/// Population standard deviation over every entry of a matrix.
fn population_std(m: &Matrix) -> f64 {
    let n = (m.rows() * m.cols()) as f64;
    let mean = m.sum() / n;
    let var = m.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Trade-off coefficient lambda_cs = std(A) / (std(A) + std(X)) over all
/// dense adjacency entries and all feature entries. Falls back to 0.5 with a
/// warning when both inputs are constant.
pub fn lambda_cs(g: &Graph) -> f64 {
    let std_a = population_std(&g.adjacency());
    let std_x = population_std(g.features());
    let denom = std_a + std_x;
    if denom == 0.0 {
        eprintln!("warning: std(A) + std(X) = 0 (all-constant inputs); lambda_cs defaults to 0.5");
        return 0.5;
    }
    std_a / denom
}

/// Full reconstruction stage output.
#[derive(Clone, Debug)]
pub struct ReconOutput {
    pub x_hat: Matrix,
    pub a_hat: Matrix,
    pub lambda_cs: f64,
    pub loss_att: f64,
    pub loss_str: f64,
    pub loss_rec: f64,
    pub node_scores: Vec<f64>,
}

/// Value-level decode.
pub fn decode(
    params: &ParamSet,
    dec: &DecoderParams,
    h_tilde: &Matrix,
    g: &Graph,
) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params
        .iter()
        .map(|(_, p)| tape.constant(p.value.clone()))
        .collect::<Result<_>>()?;
    let ops = DecoderOps::new(g);
    let gcn_prop = tape.constant(ops.gcn_prop)?;
    let mask = tape.constant(ops.mask_penalty)?;
    let h = tape.constant(h_tilde.clone())?;
    let out = decode_on_tape(&mut tape, &leaves, dec, h, gcn_prop, mask)?;
    Ok((tape.value(out.x_hat).clone(), tape.value(out.a_hat).clone()))
}

fn guarded_row_distance(a: &Matrix, b: &Matrix, row: usize) -> f64 {
    let sq: f64 = a
        .row(row)
        .iter()
        .zip(b.row(row))
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    (sq + SQRT_GUARD).sqrt()
}

/// Value-level reconstruction loss: (lambda_cs, loss_att, loss_str, loss_rec).
pub fn reconstruction_loss(x_hat: &Matrix, a_hat: &Matrix, g: &Graph) -> Result<(f64, f64, f64, f64)> {
    let n = g.node_count();
    if x_hat.shape() != g.features().shape() {
        return Err(NkError::shape(
            "reconstruction_loss",
            format!("x_hat {:?} vs features {:?}", x_hat.shape(), g.features().shape()),
        ));
    }
    if a_hat.shape() != (n, n) {
        return Err(NkError::shape(
            "reconstruction_loss",
            format!("a_hat {:?} vs adjacency {n}x{n}", a_hat.shape()),
        ));
    }
    let lambda = lambda_cs(g);
    let a = g.adjacency();
    let x = g.features();
    let mut att = 0.0;
    let mut str_ = 0.0;
    for i in 0..n {
        att += guarded_row_distance(x_hat, x, i);
        str_ += guarded_row_distance(a_hat, &a, i);
    }
    att /= n as f64;
    str_ /= n as f64;
    Ok((lambda, att, str_, lambda * att + (1.0 - lambda) * str_))
}

/// Per-node anomaly scores: s_i = lambda * ||x_hat_i - x_i|| +
/// (1 - lambda) * ||a_hat_i - a_i|| over rows.
pub fn node_scores(x_hat: &Matrix, a_hat: &Matrix, g: &Graph, lambda: f64) -> Result<Vec<f64>> {
    let n = g.node_count();
    if x_hat.rows() != n || a_hat.shape() != (n, n) {
        return Err(NkError::shape(
            "node_scores",
            format!("x_hat {:?}, a_hat {:?} for n={n}", x_hat.shape(), a_hat.shape()),
        ));
    }
    let a = g.adjacency();
    let x = g.features();
    Ok((0..n)
        .map(|i| {
            lambda * guarded_row_distance(x_hat, x, i)
                + (1.0 - lambda) * guarded_row_distance(a_hat, &a, i)
        })
        .collect())
}

/// Total training loss: reconstruction plus neighbor reconstruction.
pub fn total_loss(loss_rec: f64, loss_nr: f64) -> Result<f64> {
    if loss_rec < 0.0 || loss_nr < 0.0 {
        return Err(NkError::contract(format!(
            "total_loss requires nonnegative terms, got ({loss_rec}, {loss_nr})"
        )));
    }
    Ok(loss_rec + loss_nr)
}

/// sigmoid(E E^T) on plain matrices; test oracle helper and score-path reuse.
pub fn adjacency_head(e: &Matrix) -> Result<Matrix> {
    let gram = e.matmul(&e.transpose())?;
    Ok(gram.map(|v| 1.0 / (1.0 + (-v).exp())))
}
