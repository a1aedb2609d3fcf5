//! Neighbor knowledge: self-feature reconstruction, neighbor
//! feature-distribution prediction (mean / std / covariance) with their
//! losses, and attention-based center aggregation.

use crate::autodiff::{Tape, Var};
use crate::encoder::{EncoderOutput, EncoderVars};
use crate::error::{NkError, Result};
use crate::graph::{neighbor_stats, Graph, NeighborStats};
use crate::matrix::Matrix;
use crate::nn::{attention_mask_penalty, gat_attention, init_mlp, mlp_on_tape, MlpParams};
use crate::params::{ParamId, ParamSet};

/// Guard added under square roots so gradients stay finite at zero.
pub const SQRT_GUARD: f64 = 1e-12;
/// Guard in the L2 normalization of flattened covariance rows.
pub const NORM_GUARD: f64 = 1e-12;

/// The three prediction heads: self-feature, neighbor mean, neighbor std.
#[derive(Clone, Debug)]
pub struct NeighborHeads {
    pub self_mlp: MlpParams,
    pub mu_mlp: MlpParams,
    pub sigma_mlp: MlpParams,
}

pub fn init_neighbor_heads(set: &mut ParamSet, hidden: usize, master_seed: u64) -> Result<NeighborHeads> {
    Ok(NeighborHeads {
        self_mlp: init_mlp(set, "heads.self", hidden, hidden, hidden, master_seed)?,
        mu_mlp: init_mlp(set, "heads.mu", hidden, hidden, hidden, master_seed)?,
        sigma_mlp: init_mlp(set, "heads.sigma", hidden, hidden, hidden, master_seed)?,
    })
}

/// Attention parameters and output MLPs for center aggregation. The
/// covariance branch runs on flattened d^2 vectors, so its weight matrix is
/// d^2 x d^2 and its scoring vector has length 2d^2.
#[derive(Clone, Debug)]
pub struct CenterAggParams {
    pub mean_w: ParamId,
    pub mean_a: ParamId,
    pub cov_w: ParamId,
    pub cov_a: ParamId,
    pub mean_out: MlpParams,
    pub cov_out: MlpParams,
}

pub fn init_center_params(set: &mut ParamSet, hidden: usize, master_seed: u64) -> Result<CenterAggParams> {
    use crate::params::{derived_seed, glorot_init};
    let d2 = hidden * hidden;
    let weight = |set: &mut ParamSet, name: String, rows: usize, cols: usize| -> Result<ParamId> {
        let seed = derived_seed(master_seed, &name);
        set.add(name, glorot_init(rows, cols, seed), true)
    };
    let mean_w = weight(set, "center.mean_w".to_string(), hidden, hidden)?;
    let mean_a = weight(set, "center.mean_a".to_string(), 2 * hidden, 1)?;
    let cov_w = weight(set, "center.cov_w".to_string(), d2, d2)?;
    let cov_a = weight(set, "center.cov_a".to_string(), 2 * d2, 1)?;
    let mean_out = init_mlp(set, "center.mean_out", hidden, hidden, hidden, master_seed)?;
    let cov_out = init_mlp(set, "center.cov_out", d2, d2, d2, master_seed)?;
    Ok(CenterAggParams {
        mean_w,
        mean_a,
        cov_w,
        cov_a,
        mean_out,
        cov_out,
    })
}

/// Tape nodes for the true neighbor statistics of `h0` (differentiable).
pub struct TrueStatsVars {
    pub mu: Var,
    pub sigma: Var,
    pub cov: Vec<Var>,
}

/// Differentiable neighbor statistics matching [`neighbor_stats`]: per-node
/// neighbor mean, sample std (guarded sqrt), and covariance, with zeros where
/// the degree leaves them undefined.
pub fn true_stats_on_tape(tape: &mut Tape, g: &Graph, h0: Var) -> Result<TrueStatsVars> {
    let n = g.node_count();
    let d = tape.value(h0).cols();
    let mut mu_rows = Vec::with_capacity(n);
    let mut sigma_rows = Vec::with_capacity(n);
    let mut cov = Vec::with_capacity(n);
    let zero_row = tape.constant(Matrix::zeros(1, d))?;
    let zero_cov = tape.constant(Matrix::zeros(d, d))?;
    for i in 0..n {
        let nbrs = g.neighbors(i);
        let k = nbrs.len();
        if k == 0 {
            mu_rows.push(zero_row);
            sigma_rows.push(zero_row);
            cov.push(zero_cov);
            continue;
        }
        let gathered = tape.gather_rows(h0, nbrs)?;
        let ones = tape.constant(Matrix::filled(1, k, 1.0))?;
        let sum = tape.matmul(ones, gathered)?;
        let mu_i = tape.scale(sum, 1.0 / k as f64)?;
        mu_rows.push(mu_i);
        if k < 2 {
            sigma_rows.push(zero_row);
            cov.push(zero_cov);
            continue;
        }
        let ones_col = tape.constant(Matrix::filled(k, 1, 1.0))?;
        let mu_tiled = tape.matmul(ones_col, mu_i)?;
        let diffs = tape.sub(gathered, mu_tiled)?;
        let sq = tape.square(diffs)?;
        let col_sums = tape.matmul(ones, sq)?;
        let var = tape.scale(col_sums, 1.0 / (k - 1) as f64)?;
        let sigma_i = tape.sqrt_guard(var, SQRT_GUARD)?;
        sigma_rows.push(sigma_i);
        let diffs_t = tape.transpose(diffs)?;
        let outer = tape.matmul(diffs_t, diffs)?;
        cov.push(tape.scale(outer, 1.0 / (k - 1) as f64)?);
    }
    let mu = tape.stack_rows(&mu_rows)?;
    let sigma = tape.stack_rows(&sigma_rows)?;
    Ok(TrueStatsVars { mu, sigma, cov })
}

/// Tape nodes for the predicted statistics.
pub struct PredictedStatsVars {
    pub h0_hat: Var,
    pub mu_hat: Var,
    pub sigma_hat: Var,
    pub cov_hat: Vec<Var>,
}

/// Predicted statistics as concrete matrices.
#[derive(Clone, Debug)]
pub struct PredictedStats {
    pub h0_hat: Matrix,
    pub mu_hat: Matrix,
    pub sigma_hat: Matrix,
    pub cov_hat: Vec<Matrix>,
}

/// Prediction heads: h0_hat from Z, mu_hat from the low-frequency branch,
/// sigma_hat from the high-frequency branch, and the predicted per-node
/// covariance assembled from (h0_hat, mu_hat) exactly like the true one.
pub fn predict_stats_on_tape(
    tape: &mut Tape,
    leaves: &[Var],
    heads: &NeighborHeads,
    enc: &EncoderVars,
    g: &Graph,
) -> Result<PredictedStatsVars> {
    let h0_hat = mlp_on_tape(tape, leaves, &heads.self_mlp, enc.z)?;
    let mu_hat = mlp_on_tape(tape, leaves, &heads.mu_mlp, enc.h_low)?;
    let sigma_hat = mlp_on_tape(tape, leaves, &heads.sigma_mlp, enc.h_high)?;

    let n = g.node_count();
    let d = tape.value(h0_hat).cols();
    let zero_cov = tape.constant(Matrix::zeros(d, d))?;
    let mut cov_hat = Vec::with_capacity(n);
    for i in 0..n {
        let nbrs = g.neighbors(i);
        let k = nbrs.len();
        if k < 2 {
            cov_hat.push(zero_cov);
            continue;
        }
        let gathered = tape.gather_rows(h0_hat, nbrs)?;
        let mu_i = tape.gather_rows(mu_hat, &[i])?;
        let ones_col = tape.constant(Matrix::filled(k, 1, 1.0))?;
        let mu_tiled = tape.matmul(ones_col, mu_i)?;
        let diffs = tape.sub(gathered, mu_tiled)?;
        let diffs_t = tape.transpose(diffs)?;
        let outer = tape.matmul(diffs_t, diffs)?;
        cov_hat.push(tape.scale(outer, 1.0 / (k - 1) as f64)?);
    }
    Ok(PredictedStatsVars {
        h0_hat,
        mu_hat,
        sigma_hat,
        cov_hat,
    })
}

/// Mean over rows of the row-wise L2 distance between two equal-shape nodes.
fn mean_row_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff)?;
    let row_sq = tape.row_sum(sq)?;
    let row_norm = tape.sqrt_guard(row_sq, SQRT_GUARD)?;
    tape.mean(row_norm)
}

fn masked_row_distance(tape: &mut Tape, a: Var, b: Var, mask: &[bool]) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff)?;
    let row_sq = tape.row_sum(sq)?;
    let row_norm = tape.sqrt_guard(row_sq, SQRT_GUARD)?;
    tape.masked_mean_rows(row_norm, mask)
}

/// Loss nodes for the neighbor reconstruction module.
pub struct NeighborLossVars {
    pub fr: Var,
    pub mu: Var,
    pub sigma: Var,
    pub cov: Var,
    pub nr: Var,
}

/// Assemble the four neighbor-reconstruction losses and their sum.
///
/// Masked statistics (degree 0 for the mean, degree <= 1 for std/cov) are
/// excluded from both the numerator and the denominator of each mean. A term
/// with no valid node contributes 0; `warn_empty` reports that on stderr.
pub fn neighbor_losses_on_tape(
    tape: &mut Tape,
    pred: &PredictedStatsVars,
    truth: &TrueStatsVars,
    h0: Var,
    valid_mean: &[bool],
    valid_cov: &[bool],
    warn_empty: bool,
) -> Result<NeighborLossVars> {
    if warn_empty {
        if !valid_mean.iter().any(|&b| b) {
            eprintln!("warning: no node has a defined neighbor mean; mu loss term is 0");
        }
        if !valid_cov.iter().any(|&b| b) {
            eprintln!("warning: no node has a defined neighbor std/covariance; sigma and cov loss terms are 0");
        }
    }
    let fr = mean_row_distance(tape, pred.h0_hat, h0)?;
    let mu = masked_row_distance(tape, pred.mu_hat, truth.mu, valid_mean)?;
    let sigma = masked_row_distance(tape, pred.sigma_hat, truth.sigma, valid_cov)?;

    // Per-node Frobenius distance of covariances, then a masked mean.
    let n = valid_cov.len();
    let mut frob_rows = Vec::with_capacity(n);
    let zero = tape.constant(Matrix::zeros(1, 1))?;
    for i in 0..n {
        if !valid_cov[i] {
            frob_rows.push(zero);
            continue;
        }
        let diff = tape.sub(pred.cov_hat[i], truth.cov[i])?;
        let sq = tape.square(diff)?;
        let total = tape.sum(sq)?;
        frob_rows.push(tape.sqrt_guard(total, SQRT_GUARD)?);
    }
    let frob_col = tape.stack_rows(&frob_rows)?;
    let cov = tape.masked_mean_rows(frob_col, valid_cov)?;

    let fr_mu = tape.add(fr, mu)?;
    let fr_mu_sigma = tape.add(fr_mu, sigma)?;
    let nr = tape.add(fr_mu_sigma, cov)?;
    Ok(NeighborLossVars {
        fr,
        mu,
        sigma,
        cov,
        nr,
    })
}

/// Tape nodes for center aggregation.
pub struct CenterVars {
    pub mu_tilde: Var,
    pub sigma_tilde: Vec<Var>,
    pub h_tilde: Var,
}

/// Center-aggregation output as concrete matrices.
#[derive(Clone, Debug)]
pub struct CenterOutput {
    pub mu_tilde: Matrix,
    pub sigma_tilde_mats: Vec<Matrix>,
    pub h_tilde: Matrix,
    /// Attention coefficients of the mean branch (n x n, zero off-neighborhood).
    pub mean_attention: Matrix,
}

/// Attention-aggregate predicted means and flattened covariances over each
/// node's neighborhood (self included), then mix the result into Z:
/// h_i = (1 - lambda_ca) z_i + lambda_ca * (mu_tilde_i as row) * Sigma_tilde_i.
pub fn center_aggregate_on_tape(
    tape: &mut Tape,
    leaves: &[Var],
    center: &CenterAggParams,
    pred: &PredictedStatsVars,
    z: Var,
    g: &Graph,
    lambda_ca: f64,
) -> Result<(CenterVars, Var)> {
    if !(0.0..=1.0).contains(&lambda_ca) {
        return Err(NkError::contract(format!(
            "lambda_ca must be in [0,1], got {lambda_ca}"
        )));
    }
    let n = g.node_count();
    let d = tape.value(pred.mu_hat).cols();
    let mask = tape.constant(attention_mask_penalty(g))?;

    // Mean branch.
    let wm = tape.matmul(pred.mu_hat, leaves[center.mean_w.0])?;
    let alpha_mean = gat_attention(tape, wm, leaves[center.mean_a.0], mask)?;
    let agg_mean = tape.matmul(alpha_mean, wm)?;
    let z_mean = tape.relu(agg_mean)?;
    let mu_tilde = mlp_on_tape(tape, leaves, &center.mean_out, z_mean)?;

    // Covariance branch on flattened d^2 rows.
    let mut flat_rows = Vec::with_capacity(n);
    for i in 0..n {
        flat_rows.push(tape.reshape(pred.cov_hat[i], 1, d * d)?);
    }
    let z_cov0 = tape.stack_rows(&flat_rows)?;
    let wc = tape.matmul(z_cov0, leaves[center.cov_w.0])?;
    let alpha_cov = gat_attention(tape, wc, leaves[center.cov_a.0], mask)?;
    let agg_cov = tape.matmul(alpha_cov, wc)?;
    let z_cov = tape.relu(agg_cov)?;
    let cov_out = mlp_on_tape(tape, leaves, &center.cov_out, z_cov)?;
    let cov_normed = tape.row_normalize(cov_out, NORM_GUARD)?;

    // Reshape each row to d x d, symmetrize, and form mu_tilde_i * Sigma_i.
    let mut sigma_tilde = Vec::with_capacity(n);
    let mut mixed_rows = Vec::with_capacity(n);
    for i in 0..n {
        let row = tape.gather_rows(cov_normed, &[i])?;
        let mat = tape.reshape(row, d, d)?;
        let mat_t = tape.transpose(mat)?;
        let sym_sum = tape.add(mat, mat_t)?;
        let sym = tape.scale(sym_sum, 0.5)?;
        sigma_tilde.push(sym);
        let mu_row = tape.gather_rows(mu_tilde, &[i])?;
        mixed_rows.push(tape.matmul(mu_row, sym)?);
    }
    let mixed = tape.stack_rows(&mixed_rows)?;
    let z_part = tape.scale(z, 1.0 - lambda_ca)?;
    let mixed_part = tape.scale(mixed, lambda_ca)?;
    let h_tilde = tape.add(z_part, mixed_part)?;
    Ok((
        CenterVars {
            mu_tilde,
            sigma_tilde,
            h_tilde,
        },
        alpha_mean,
    ))
}

// ---------------------------------------------------------------------------
// Value-level operation surface (thin wrappers over the tape builders).
// ---------------------------------------------------------------------------

fn constant_leaves(tape: &mut Tape, params: &ParamSet) -> Result<Vec<Var>> {
    params
        .iter()
        .map(|(_, p)| tape.constant(p.value.clone()))
        .collect()
}

/// Reconstruct H0 from Z with the self head; the loss is the mean row-wise
/// L2 distance to H0.
pub fn reconstruct_self(
    params: &ParamSet,
    heads: &NeighborHeads,
    z: &Matrix,
    h0: &Matrix,
) -> Result<(Matrix, f64)> {
    if z.shape() != h0.shape() {
        return Err(NkError::shape(
            "reconstruct_self",
            format!("z {:?} vs h0 {:?}", z.shape(), h0.shape()),
        ));
    }
    let mut tape = Tape::new();
    let leaves = constant_leaves(&mut tape, params)?;
    let z_var = tape.constant(z.clone())?;
    let h0_var = tape.constant(h0.clone())?;
    let h0_hat = mlp_on_tape(&mut tape, &leaves, &heads.self_mlp, z_var)?;
    let loss = mean_row_distance(&mut tape, h0_hat, h0_var)?;
    Ok((tape.value(h0_hat).clone(), tape.scalar(loss)?))
}

/// Predicted neighbor statistics as matrices.
pub fn predict_stats(
    params: &ParamSet,
    heads: &NeighborHeads,
    enc: &EncoderOutput,
    g: &Graph,
) -> Result<PredictedStats> {
    let mut tape = Tape::new();
    let leaves = constant_leaves(&mut tape, params)?;
    let enc_vars = EncoderVars {
        h0: tape.constant(enc.h0.clone())?,
        h_low: tape.constant(enc.h_low.clone())?,
        h_high: tape.constant(enc.h_high.clone())?,
        z: tape.constant(enc.z.clone())?,
    };
    let pred = predict_stats_on_tape(&mut tape, &leaves, heads, &enc_vars, g)?;
    Ok(PredictedStats {
        h0_hat: tape.value(pred.h0_hat).clone(),
        mu_hat: tape.value(pred.mu_hat).clone(),
        sigma_hat: tape.value(pred.sigma_hat).clone(),
        cov_hat: pred.cov_hat.iter().map(|&v| tape.value(v).clone()).collect(),
    })
}

/// The four neighbor-reconstruction loss values (mu, sigma, cov, nr), given
/// a precomputed feature-reconstruction loss.
pub fn neighbor_losses(
    pred: &PredictedStats,
    true_stats: &NeighborStats,
    loss_fr: f64,
) -> Result<(f64, f64, f64, f64)> {
    let n = true_stats.valid_mean_mask.len();
    if pred.mu_hat.rows() != n {
        return Err(NkError::shape(
            "neighbor_losses",
            format!("{} predicted rows for {n} nodes", pred.mu_hat.rows()),
        ));
    }
    let masked_mean = |rows: &dyn Fn(usize) -> f64, mask: &[bool]| -> f64 {
        let count = mask.iter().filter(|&&b| b).count();
        if count == 0 {
            return 0.0;
        }
        let sum: f64 = (0..n).filter(|&i| mask[i]).map(rows).sum();
        sum / count as f64
    };
    if !true_stats.valid_mean_mask.iter().any(|&b| b) {
        eprintln!("warning: no node has a defined neighbor mean; mu loss term is 0");
    }
    if !true_stats.valid_cov_mask.iter().any(|&b| b) {
        eprintln!("warning: no node has a defined neighbor std/covariance; sigma and cov loss terms are 0");
    }
    let row_dist = |a: &Matrix, b: &Matrix, i: usize| -> f64 {
        let sq: f64 = a
            .row(i)
            .iter()
            .zip(b.row(i))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        (sq + SQRT_GUARD).sqrt()
    };
    let loss_mu = masked_mean(
        &|i| row_dist(&pred.mu_hat, &true_stats.mean, i),
        &true_stats.valid_mean_mask,
    );
    let loss_sigma = masked_mean(
        &|i| row_dist(&pred.sigma_hat, &true_stats.std, i),
        &true_stats.valid_cov_mask,
    );
    let loss_cov = masked_mean(
        &|i| {
            let diff = pred.cov_hat[i].sub(&true_stats.cov[i]).expect("cov shape");
            let sq: f64 = diff.data().iter().map(|x| x * x).sum();
            (sq + SQRT_GUARD).sqrt()
        },
        &true_stats.valid_cov_mask,
    );
    let loss_nr = loss_fr + loss_mu + loss_sigma + loss_cov;
    Ok((loss_mu, loss_sigma, loss_cov, loss_nr))
}

/// Center aggregation as matrices.
pub fn center_aggregate(
    params: &ParamSet,
    center: &CenterAggParams,
    pred: &PredictedStats,
    z: &Matrix,
    g: &Graph,
    lambda_ca: f64,
) -> Result<CenterOutput> {
    let mut tape = Tape::new();
    let leaves = constant_leaves(&mut tape, params)?;
    let pred_vars = PredictedStatsVars {
        h0_hat: tape.constant(pred.h0_hat.clone())?,
        mu_hat: tape.constant(pred.mu_hat.clone())?,
        sigma_hat: tape.constant(pred.sigma_hat.clone())?,
        cov_hat: pred
            .cov_hat
            .iter()
            .map(|c| tape.constant(c.clone()))
            .collect::<Result<_>>()?,
    };
    let z_var = tape.constant(z.clone())?;
    let (vars, alpha) =
        center_aggregate_on_tape(&mut tape, &leaves, center, &pred_vars, z_var, g, lambda_ca)?;
    Ok(CenterOutput {
        mu_tilde: tape.value(vars.mu_tilde).clone(),
        sigma_tilde_mats: vars.sigma_tilde.iter().map(|&v| tape.value(v).clone()).collect(),
        h_tilde: tape.value(vars.h_tilde).clone(),
        mean_attention: tape.value(alpha).clone(),
    })
}

/// Feature reconstruction loss on plain matrices (mean row-wise L2, guarded).
pub fn feature_reconstruction_loss(h0_hat: &Matrix, h0: &Matrix) -> Result<f64> {
    if h0_hat.shape() != h0.shape() {
        return Err(NkError::shape(
            "feature_reconstruction_loss",
            format!("{:?} vs {:?}", h0_hat.shape(), h0.shape()),
        ));
    }
    let n = h0.rows();
    let mut total = 0.0;
    for i in 0..n {
        let sq: f64 = h0_hat
            .row(i)
            .iter()
            .zip(h0.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += (sq + SQRT_GUARD).sqrt();
    }
    Ok(total / n as f64)
}

/// True neighbor statistics, re-exported here for symmetry with the
/// prediction path.
pub fn true_stats(g: &Graph, h0: &Matrix) -> Result<NeighborStats> {
    neighbor_stats(g, h0)
}
