//! Joint graph convolutional encoder: an input projection feeding parallel
//! low-pass and high-pass filter stacks, mixed by a trade-off coefficient.
//!
//! Filters are applied spatially as the dense operators 2I - L and L; the
//! spectral form only appears in tests as an oracle. The filter layers carry
//! no nonlinearity.

use crate::autodiff::{Tape, Var};
use crate::error::{NkError, Result};
use crate::graph::{filter_operators, Graph};
use crate::matrix::Matrix;
use crate::params::{derived_seed, glorot_init, ParamId, ParamSet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parameter handles for the encoder: input projection plus one weight matrix
/// per filter layer on each branch.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub input_linear: ParamId,
    pub low_weights: Vec<ParamId>,
    pub high_weights: Vec<ParamId>,
}

/// Register encoder parameters (Glorot-initialized, per-leaf seeds derived
/// from the master seed and the leaf name).
pub fn init_encoder_params(
    set: &mut ParamSet,
    dim: usize,
    hidden: usize,
    low_layers: usize,
    high_layers: usize,
    master_seed: u64,
) -> Result<EncoderParams> {
    if low_layers == 0 || high_layers == 0 {
        return Err(NkError::contract(
            "encoder needs at least one layer per branch".to_string(),
        ));
    }
    let add = |set: &mut ParamSet, name: String, rows: usize, cols: usize| -> Result<ParamId> {
        let seed = derived_seed(master_seed, &name);
        set.add(name, glorot_init(rows, cols, seed), true)
    };
    let input_linear = add(set, "encoder.input_linear".to_string(), dim, hidden)?;
    let low_weights = (0..low_layers)
        .map(|l| add(set, format!("encoder.low.{l}"), hidden, hidden))
        .collect::<Result<Vec<_>>>()?;
    let high_weights = (0..high_layers)
        .map(|l| add(set, format!("encoder.high.{l}"), hidden, hidden))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncoderParams {
        input_linear,
        low_weights,
        high_weights,
    })
}

/// Knobs for one encoder evaluation.
#[derive(Clone, Copy, Debug)]
pub struct EncodeSettings {
    pub lambda_joint: f64,
    pub dropout: f64,
    pub training: bool,
    pub rng_seed: u64,
}

impl EncodeSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_joint) {
            return Err(NkError::contract(format!(
                "lambda_joint must be in [0,1], got {}",
                self.lambda_joint
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NkError::contract(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Tape nodes produced by the encoder.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub h0: Var,
    pub h_low: Var,
    pub h_high: Var,
    pub z: Var,
}

/// Encoder outputs as concrete matrices.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub h0: Matrix,
    pub h_low: Matrix,
    pub h_high: Matrix,
    pub z: Matrix,
}

/// Inverted-scaling dropout as a constant mask; identity when not training.
pub fn apply_dropout(
    tape: &mut Tape,
    v: Var,
    rate: f64,
    training: bool,
    seed: u64,
) -> Result<Var> {
    if !training || rate == 0.0 {
        return Ok(v);
    }
    let (rows, cols) = tape.value(v).shape();
    let keep = 1.0 - rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = tape.constant(Matrix::from_vec(rows, cols, data)?)?;
    tape.mul(v, mask)
}

/// Build the encoder forward pass on a tape.
///
/// `x` is the n x dim feature constant; `f_low`/`f_high` the filter operator
/// constants; `leaves` the per-parameter vars in `ParamSet` order. Both filter
/// branches start from the projected H0.
pub fn encode_on_tape(
    tape: &mut Tape,
    x: Var,
    f_low: Var,
    f_high: Var,
    leaves: &[Var],
    enc: &EncoderParams,
    settings: &EncodeSettings,
) -> Result<EncoderVars> {
    settings.validate()?;
    let h0_raw = tape.matmul(x, leaves[enc.input_linear.0])?;
    let h0 = apply_dropout(
        tape,
        h0_raw,
        settings.dropout,
        settings.training,
        derived_seed(settings.rng_seed, "dropout.h0"),
    )?;

    let run_branch = |tape: &mut Tape, filter: Var, weights: &[ParamId], label: &str| -> Result<Var> {
        let mut h = h0;
        for (l, w) in weights.iter().enumerate() {
            let propagated = tape.matmul(filter, h)?;
            h = tape.matmul(propagated, leaves[w.0])?;
            h = apply_dropout(
                tape,
                h,
                settings.dropout,
                settings.training,
                derived_seed(settings.rng_seed, &format!("dropout.{label}.{l}")),
            )?;
        }
        Ok(h)
    };
    let h_low = run_branch(tape, f_low, &enc.low_weights, "low")?;
    let h_high = run_branch(tape, f_high, &enc.high_weights, "high")?;

    let low_part = tape.scale(h_low, 1.0 - settings.lambda_joint)?;
    let high_part = tape.scale(h_high, settings.lambda_joint)?;
    let z = tape.add(low_part, high_part)?;
    Ok(EncoderVars { h0, h_low, h_high, z })
}

/// Evaluate the encoder to concrete matrices.
pub fn encode(
    g: &Graph,
    params: &ParamSet,
    enc: &EncoderParams,
    settings: &EncodeSettings,
) -> Result<EncoderOutput> {
    if g.feature_dim() != params.get(enc.input_linear).rows() {
        return Err(NkError::shape(
            "encode",
            format!(
                "feature dim {} vs input projection rows {}",
                g.feature_dim(),
                params.get(enc.input_linear).rows()
            ),
        ));
    }
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params
        .iter()
        .map(|(_, p)| tape.constant(p.value.clone()))
        .collect::<Result<_>>()?;
    let x = tape.constant(g.features().clone())?;
    let (f_low_m, f_high_m) = filter_operators(g);
    let f_low = tape.constant(f_low_m)?;
    let f_high = tape.constant(f_high_m)?;
    let vars = encode_on_tape(&mut tape, x, f_low, f_high, &leaves, enc, settings)?;
    Ok(EncoderOutput {
        h0: tape.value(vars.h0).clone(),
        h_low: tape.value(vars.h_low).clone(),
        h_high: tape.value(vars.h_high).clone(),
        z: tape.value(vars.z).clone(),
    })
}
