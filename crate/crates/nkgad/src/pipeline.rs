//! Model assembly, full-batch training, scoring, ablation variants, and
//! model persistence.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::{evaluate_extras, evaluate_with_gradients_extras, Tape, Var};
use crate::encoder::{encode_on_tape, init_encoder_params, EncodeSettings, EncoderParams, EncoderVars};
use crate::error::{NkError, Result};
use crate::graph::{filter_operators, Graph};
use crate::matrix::Matrix;
use crate::neighbor::{
    center_aggregate_on_tape, init_center_params, init_neighbor_heads, neighbor_losses_on_tape,
    predict_stats_on_tape, true_stats_on_tape, CenterAggParams, NeighborHeads,
};
use crate::nn::{attention_mask_penalty, gcn_propagation};
use crate::params::{derived_seed, glorot_init, optimizer_step, AdamState, ParamId, ParamSet};
use crate::recon::{
    decode_on_tape, init_decoder_params, lambda_cs, node_scores, reconstruction_loss_on_tape,
    DecoderKind, DecoderParams,
};

/// Ablation variants: `Full` is the whole model; `Dagger` swaps the joint
/// encoder for a plain GCN and drops both knowledge modules; `Ddagger` keeps
/// the joint encoder but drops both modules; `Section` drops only center
/// aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    Dagger,
    Ddagger,
    Section,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "dagger" => Ok(Variant::Dagger),
            "ddagger" => Ok(Variant::Ddagger),
            "section" => Ok(Variant::Section),
            other => Err(NkError::contract(format!(
                "variant must be one of full|dagger|ddagger|section, got '{other}'"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Dagger => "dagger",
            Variant::Ddagger => "ddagger",
            Variant::Section => "section",
        }
    }

    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Section, Variant::Ddagger, Variant::Dagger];
}

/// Training configuration; defaults follow the reference hyperparameters
/// (30 epochs, dropout 0.3, weight decay 1e-5, lr 1e-4, d = 16).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub low_layers: usize,
    pub high_layers: usize,
    pub lambda_joint: f64,
    pub lambda_ca: f64,
    pub decoder_att: DecoderKind,
    pub decoder_str: DecoderKind,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-4,
            weight_decay: 1e-5,
            dropout: 0.3,
            hidden_dim: 16,
            low_layers: 1,
            high_layers: 1,
            lambda_joint: 0.5,
            lambda_ca: 0.5,
            decoder_att: DecoderKind::Gat,
            decoder_str: DecoderKind::Gcn,
            seed: 0,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(NkError::contract("epochs must be >= 1".to_string()));
        }
        if !(self.lr > 0.0) {
            return Err(NkError::contract(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(NkError::contract(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NkError::contract(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        if self.hidden_dim == 0 {
            return Err(NkError::contract("hidden_dim must be >= 1".to_string()));
        }
        if self.low_layers == 0 || self.high_layers == 0 {
            return Err(NkError::contract("layer depths must be >= 1".to_string()));
        }
        for (name, v) in [("lambda_joint", self.lambda_joint), ("lambda_ca", self.lambda_ca)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(NkError::contract(format!("{name} must be in [0,1], got {v}")));
            }
        }
        Ok(())
    }

    /// Apply one `key = value` setting; unknown keys are rejected.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| NkError::contract(format!("invalid {what} value: '{value}'"));
        match key {
            "epochs" => self.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("lr"))?,
            "weight_decay" => self.weight_decay = value.parse().map_err(|_| bad("weight_decay"))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad("dropout"))?,
            "hidden_dim" => self.hidden_dim = value.parse().map_err(|_| bad("hidden_dim"))?,
            "low_layers" => self.low_layers = value.parse().map_err(|_| bad("low_layers"))?,
            "high_layers" => self.high_layers = value.parse().map_err(|_| bad("high_layers"))?,
            "lambda_joint" => self.lambda_joint = value.parse().map_err(|_| bad("lambda_joint"))?,
            "lambda_ca" => self.lambda_ca = value.parse().map_err(|_| bad("lambda_ca"))?,
            "decoder_att" => self.decoder_att = DecoderKind::parse(value)?,
            "decoder_str" => self.decoder_str = DecoderKind::parse(value)?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "variant" => self.variant = Variant::parse(value)?,
            other => {
                return Err(NkError::contract(format!("unknown config key: '{other}'")));
            }
        }
        Ok(())
    }

    /// Parse a line-oriented `key = value` config file. Blank lines and `#`
    /// comments are ignored; unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let text = fs::read_to_string(path).map_err(|e| NkError::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(NkError::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("expected 'key = value', got '{line}'"),
                });
            };
            cfg.apply_kv(key.trim(), value.trim()).map_err(|e| NkError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    fn to_kv_lines(&self) -> String {
        format!(
            "epochs = {}\nlr = {}\nweight_decay = {}\ndropout = {}\nhidden_dim = {}\nlow_layers = {}\nhigh_layers = {}\nlambda_joint = {}\nlambda_ca = {}\ndecoder_att = {}\ndecoder_str = {}\nseed = {}\nvariant = {}\n",
            self.epochs,
            self.lr,
            self.weight_decay,
            self.dropout,
            self.hidden_dim,
            self.low_layers,
            self.high_layers,
            self.lambda_joint,
            self.lambda_ca,
            self.decoder_att.as_str(),
            self.decoder_str.as_str(),
            self.seed,
            self.variant.as_str()
        )
    }
}

/// Which model pieces are active; derived from the variant. `nr_weight`
/// scales the neighbor-reconstruction loss inside the total (training only).
#[derive(Clone, Copy, Debug)]
pub struct Wiring {
    pub plain_gcn_encoder: bool,
    pub neighbor_module: bool,
    pub center_aggregation: bool,
    pub nr_weight: f64,
}

impl Wiring {
    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::Full => Wiring {
                plain_gcn_encoder: false,
                neighbor_module: true,
                center_aggregation: true,
                nr_weight: 1.0,
            },
            Variant::Section => Wiring {
                plain_gcn_encoder: false,
                neighbor_module: true,
                center_aggregation: false,
                nr_weight: 1.0,
            },
            Variant::Ddagger => Wiring {
                plain_gcn_encoder: false,
                neighbor_module: false,
                center_aggregation: false,
                nr_weight: 1.0,
            },
            Variant::Dagger => Wiring {
                plain_gcn_encoder: true,
                neighbor_module: false,
                center_aggregation: false,
                nr_weight: 1.0,
            },
        }
    }
}

/// Parameter handles for whichever submodules the wiring activates.
#[derive(Clone, Debug)]
pub struct ModelHandles {
    pub encoder: Option<EncoderParams>,
    pub gcn_encoder: Option<Vec<ParamId>>,
    pub heads: Option<NeighborHeads>,
    pub center: Option<CenterAggParams>,
    pub decoders: DecoderParams,
}

fn init_model(cfg: &TrainConfig, wiring: &Wiring, dim: usize) -> Result<(ParamSet, ModelHandles)> {
    let mut set = ParamSet::new();
    let d = cfg.hidden_dim;
    let seed = cfg.seed;
    let (encoder, gcn_encoder) = if wiring.plain_gcn_encoder {
        let mut ids = Vec::new();
        for l in 0..cfg.low_layers {
            let name = format!("encoder.gcn.{l}");
            let in_dim = if l == 0 { dim } else { d };
            let id = set.add(name.clone(), glorot_init(in_dim, d, derived_seed(seed, &name)), true)?;
            ids.push(id);
        }
        (None, Some(ids))
    } else {
        (
            Some(init_encoder_params(&mut set, dim, d, cfg.low_layers, cfg.high_layers, seed)?),
            None,
        )
    };
    let heads = if wiring.neighbor_module {
        Some(init_neighbor_heads(&mut set, d, seed)?)
    } else {
        None
    };
    let center = if wiring.center_aggregation {
        Some(init_center_params(&mut set, d, seed)?)
    } else {
        None
    };
    let decoders = init_decoder_params(&mut set, d, dim, cfg.decoder_att, cfg.decoder_str, seed)?;
    Ok((
        set,
        ModelHandles {
            encoder,
            gcn_encoder,
            heads,
            center,
            decoders,
        },
    ))
}

/// Graph-derived constants shared by every epoch.
struct Precomp {
    features: Matrix,
    adjacency: Matrix,
    f_low: Matrix,
    f_high: Matrix,
    gcn_prop: Matrix,
    mask_penalty: Matrix,
    lambda_cs: f64,
    valid_mean: Vec<bool>,
    valid_cov: Vec<bool>,
}

impl Precomp {
    fn new(g: &Graph) -> Self {
        let (f_low, f_high) = filter_operators(g);
        let n = g.node_count();
        let valid_mean: Vec<bool> = (0..n).map(|i| g.degree(i) >= 1).collect();
        let valid_cov: Vec<bool> = (0..n).map(|i| g.degree(i) >= 2).collect();
        Precomp {
            features: g.features().clone(),
            adjacency: g.adjacency(),
            f_low,
            f_high,
            gcn_prop: gcn_propagation(g),
            mask_penalty: attention_mask_penalty(g),
            lambda_cs: lambda_cs(g),
            valid_mean,
            valid_cov,
        }
    }
}

/// Loss breakdown for one forward pass. `fr`, `mu`, `sigma`, `cov` are zero
/// for variants without the neighbor module.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub fr: f64,
    pub mu: f64,
    pub sigma: f64,
    pub cov: f64,
    pub att: f64,
    pub str_: f64,
    pub rec: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.fr, self.mu, self.sigma, self.cov, self.att, self.str_, self.rec, self.total]
            .iter()
            .all(|x| x.is_finite())
    }
}

struct ForwardExtras {
    losses: LossBreakdown,
    x_hat: Matrix,
    a_hat: Matrix,
}

#[allow(clippy::too_many_arguments)]
fn build_forward(
    tape: &mut Tape,
    leaves: &[Var],
    g: &Graph,
    pre: &Precomp,
    cfg: &TrainConfig,
    wiring: &Wiring,
    handles: &ModelHandles,
    training: bool,
    epoch_seed: u64,
    warn_empty: bool,
) -> Result<(Var, ForwardExtras)> {
    let x = tape.constant(pre.features.clone())?;
    let (h0, h_low, h_high, z);
    if wiring.plain_gcn_encoder {
        let prop = tape.constant(pre.gcn_prop.clone())?;
        let mut h = x;
        let ids = handles.gcn_encoder.as_ref().expect("gcn encoder handles");
        for (l, id) in ids.iter().enumerate() {
            let transformed = tape.matmul(h, leaves[id.0])?;
            let propagated = tape.matmul(prop, transformed)?;
            h = tape.relu(propagated)?;
            h = crate::encoder::apply_dropout(
                tape,
                h,
                cfg.dropout,
                training,
                derived_seed(epoch_seed, &format!("dropout.gcn.{l}")),
            )?;
        }
        h0 = h;
        h_low = h;
        h_high = h;
        z = h;
    } else {
        let f_low = tape.constant(pre.f_low.clone())?;
        let f_high = tape.constant(pre.f_high.clone())?;
        let enc = handles.encoder.as_ref().expect("joint encoder handles");
        let settings = EncodeSettings {
            lambda_joint: cfg.lambda_joint,
            dropout: cfg.dropout,
            training,
            rng_seed: epoch_seed,
        };
        let vars: EncoderVars = encode_on_tape(tape, x, f_low, f_high, leaves, enc, &settings)?;
        h0 = vars.h0;
        h_low = vars.h_low;
        h_high = vars.h_high;
        z = vars.z;
    }
    let _ = (h_low, h_high);

    let mut nr_losses = None;
    let mut pred_vars = None;
    if wiring.neighbor_module {
        let heads = handles.heads.as_ref().expect("neighbor heads");
        let enc_vars = EncoderVars { h0, h_low, h_high, z };
        let truth = true_stats_on_tape(tape, g, h0)?;
        let pred = predict_stats_on_tape(tape, leaves, heads, &enc_vars, g)?;
        let losses = neighbor_losses_on_tape(
            tape,
            &pred,
            &truth,
            h0,
            &pre.valid_mean,
            &pre.valid_cov,
            warn_empty,
        )?;
        nr_losses = Some(losses);
        pred_vars = Some(pred);
    }

    let h_tilde = if wiring.center_aggregation {
        let center = handles.center.as_ref().expect("center params");
        let pred = pred_vars.as_ref().expect("center aggregation needs predicted stats");
        let (center_vars, _) =
            center_aggregate_on_tape(tape, leaves, center, pred, z, g, cfg.lambda_ca)?;
        center_vars.h_tilde
    } else {
        z
    };

    let gcn_prop = tape.constant(pre.gcn_prop.clone())?;
    let mask = tape.constant(pre.mask_penalty.clone())?;
    let decoded = decode_on_tape(tape, leaves, &handles.decoders, h_tilde, gcn_prop, mask)?;
    let a = tape.constant(pre.adjacency.clone())?;
    let rec = reconstruction_loss_on_tape(tape, &decoded, x, a, pre.lambda_cs)?;

    let total = match &nr_losses {
        Some(nl) => {
            let weighted = tape.scale(nl.nr, wiring.nr_weight)?;
            tape.add(rec.rec, weighted)?
        }
        None => rec.rec,
    };

    let scalar_or_zero = |tape: &Tape, v: Option<Var>| -> Result<f64> {
        match v {
            Some(v) => tape.scalar(v),
            None => Ok(0.0),
        }
    };
    let losses = LossBreakdown {
        fr: scalar_or_zero(tape, nr_losses.as_ref().map(|l| l.fr))?,
        mu: scalar_or_zero(tape, nr_losses.as_ref().map(|l| l.mu))?,
        sigma: scalar_or_zero(tape, nr_losses.as_ref().map(|l| l.sigma))?,
        cov: scalar_or_zero(tape, nr_losses.as_ref().map(|l| l.cov))?,
        att: tape.scalar(rec.att)?,
        str_: tape.scalar(rec.str_)?,
        rec: tape.scalar(rec.rec)?,
        total: tape.scalar(total)?,
    };
    Ok((
        total,
        ForwardExtras {
            losses,
            x_hat: tape.value(decoded.x_hat).clone(),
            a_hat: tape.value(decoded.a_hat).clone(),
        },
    ))
}

/// Per-epoch loss history entry.
pub type EpochLosses = LossBreakdown;

/// A trained model: parameters, configuration, loss history.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: ParamSet,
    pub handles: ModelHandles,
    pub config: TrainConfig,
    pub feature_dim: usize,
    pub final_losses: LossBreakdown,
    pub history: Vec<EpochLosses>,
}

/// Per-node anomaly scores plus the loss breakdown of the scoring pass.
#[derive(Clone, Debug)]
pub struct ScoreReport {
    pub scores: Vec<f64>,
    pub losses: LossBreakdown,
}

/// Train with the wiring implied by `cfg.variant`.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainedModel> {
    train_wired(g, cfg, &Wiring::for_variant(cfg.variant))
}

/// Train with explicit wiring (exposed for modular-consistency checks).
pub fn train_wired(g: &Graph, cfg: &TrainConfig, wiring: &Wiring) -> Result<TrainedModel> {
    cfg.validate()?;
    if g.node_count() == 0 || g.feature_dim() == 0 {
        return Err(NkError::contract("training requires a nonempty graph with features".to_string()));
    }
    let (mut params, handles) = init_model(cfg, wiring, g.feature_dim())?;
    let pre = Precomp::new(g);
    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_seed = derived_seed(cfg.seed, &format!("epoch.{epoch}"));
        let result = evaluate_with_gradients_extras(&params, |tape, leaves| {
            build_forward(
                tape,
                leaves,
                g,
                &pre,
                cfg,
                wiring,
                &handles,
                true,
                epoch_seed,
                epoch == 0,
            )
        });
        let (_, grads, extras) = result.map_err(|e| match e {
            NkError::Numeric { op, msg } => NkError::Numeric {
                op,
                msg: format!("{msg} (epoch {epoch})"),
            },
            other => other,
        })?;
        if !extras.losses.is_finite() {
            return Err(NkError::numeric(
                "train",
                format!("non-finite loss at epoch {epoch}: {:?}", extras.losses),
            ));
        }
        history.push(extras.losses);
        optimizer_step(&mut params, &grads, &mut adam, cfg.lr, cfg.weight_decay)?;
    }
    // Post-training loss, measured like a training epoch (dropout active).
    let final_seed = derived_seed(cfg.seed, &format!("epoch.{}", cfg.epochs));
    let (_, extras) = evaluate_extras(&params, |tape, leaves| {
        build_forward(tape, leaves, g, &pre, cfg, wiring, &handles, true, final_seed, false)
    })?;
    Ok(TrainedModel {
        params,
        handles,
        config: cfg.clone(),
        feature_dim: g.feature_dim(),
        final_losses: extras.losses,
        history,
    })
}

const MODEL_MAGIC: &[u8; 4] = b"NKGD";
const MODEL_VERSION: u32 = 1;

fn io_err(path: &Path, msg: &str) -> NkError {
    NkError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}

/// Write a trained model: magic, version, config text block, named parameter
/// matrices as 64-bit little-endian floats, final losses, and loss history.
pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.feature_dim as u64).to_le_bytes());
    let cfg_text = model.config.to_kv_lines();
    buf.extend_from_slice(&(cfg_text.len() as u64).to_le_bytes());
    buf.extend_from_slice(cfg_text.as_bytes());
    buf.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for (_, p) in model.params.iter() {
        buf.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(u8::from(p.trainable));
        buf.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let push_losses = |buf: &mut Vec<u8>, l: &LossBreakdown| {
        for v in [l.fr, l.mu, l.sigma, l.cov, l.att, l.str_, l.rec, l.total] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    push_losses(&mut buf, &model.final_losses);
    buf.extend_from_slice(&(model.history.len() as u64).to_le_bytes());
    for entry in &model.history {
        push_losses(&mut buf, entry);
    }
    let mut file = fs::File::create(path).map_err(|e| NkError::io(path, e))?;
    file.write_all(&buf).map_err(|e| NkError::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(io_err(self.path, "truncated model file"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| io_err(self.path, "invalid utf8 in model file"))
    }

    fn losses(&mut self) -> Result<LossBreakdown> {
        Ok(LossBreakdown {
            fr: self.f64()?,
            mu: self.f64()?,
            sigma: self.f64()?,
            cov: self.f64()?,
            att: self.f64()?,
            str_: self.f64()?,
            rec: self.f64()?,
            total: self.f64()?,
        })
    }
}

/// Load a model saved by [`save_model`]. The file is parsed fully before any
/// model state is built, so a corrupt or truncated file yields no partial
/// model; a newer format version is rejected explicitly.
pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| NkError::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| NkError::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(4)? != MODEL_MAGIC {
        return Err(io_err(path, "bad magic: not a model file"));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(NkError::Version {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let feature_dim = r.u64()? as usize;
    let cfg_text = r.string()?;
    let mut config = TrainConfig::default();
    for line in cfg_text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| io_err(path, "malformed config block"))?;
        config.apply_kv(key.trim(), value.trim())?;
    }
    config.validate()?;

    let count = r.u64()? as usize;
    let mut stored: Vec<(String, bool, Matrix)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let trainable = r.take(1)?[0] != 0;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if rows.checked_mul(cols).is_none_or(|total| total > 1 << 28) {
            return Err(io_err(path, "implausible matrix size in model file"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        stored.push((name, trainable, Matrix::from_vec(rows, cols, data)?));
    }
    let final_losses = r.losses()?;
    let history_len = r.u64()? as usize;
    let mut history = Vec::with_capacity(history_len);
    for _ in 0..history_len {
        history.push(r.losses()?);
    }

    // Rebuild the parameter layout from the config, then overwrite values.
    let wiring = Wiring::for_variant(config.variant);
    let (mut params, handles) = init_model(&config, &wiring, feature_dim)?;
    if params.len() != stored.len() {
        return Err(io_err(
            path,
            &format!("model has {} parameters, file has {}", params.len(), stored.len()),
        ));
    }
    for (idx, (name, trainable, value)) in stored.into_iter().enumerate() {
        let id = ParamId(idx);
        if params.name(id) != name || params.is_trainable(id) != trainable {
            return Err(io_err(path, &format!("parameter layout mismatch at '{name}'")));
        }
        params.set_value(id, value)?;
    }
    Ok(TrainedModel {
        params,
        handles,
        config,
        feature_dim,
        final_losses,
        history,
    })
}

/// Score a graph with a trained model: dropout disabled, deterministic.
pub fn score(model: &TrainedModel, g: &Graph) -> Result<ScoreReport> {
    if g.feature_dim() != model.feature_dim {
        return Err(NkError::shape(
            "score",
            format!(
                "graph feature dim {} vs model feature dim {}",
                g.feature_dim(),
                model.feature_dim
            ),
        ));
    }
    let wiring = Wiring::for_variant(model.config.variant);
    let pre = Precomp::new(g);
    let (_, extras) = evaluate_extras(&model.params, |tape, leaves| {
        build_forward(tape, leaves, g, &pre, &model.config, &wiring, &model.handles, false, 0, false)
    })?;
    let scores = node_scores(&extras.x_hat, &extras.a_hat, g, pre.lambda_cs)?;
    Ok(ScoreReport {
        scores,
        losses: extras.losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_graph(seed: u64, n: usize, dim: usize, p: f64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        let data = (0..n * dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        Graph::new(n, &edges, Matrix::from_vec(n, dim, data).unwrap(), None).unwrap()
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 5,
            hidden_dim: 4,
            lr: 0.005,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn epochs_zero_rejected() {
        let g = random_graph(1, 8, 3, 0.3);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train(&g, &cfg).is_err());
    }

    #[test]
    fn same_seed_identical_histories() {
        let g = random_graph(2, 12, 3, 0.3);
        let cfg = small_cfg(9);
        let a = train(&g, &cfg).unwrap();
        let b = train(&g, &cfg).unwrap();
        assert_eq!(a.history.len(), cfg.epochs);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x, y);
        }
        assert_eq!(a.final_losses, b.final_losses);
    }

    #[test]
    fn thirty_node_loss_decreases() {
        let g = random_graph(3, 30, 4, 0.15);
        let cfg = TrainConfig {
            epochs: 30,
            hidden_dim: 8,
            lr: 0.005,
            seed: 0,
            ..TrainConfig::default()
        };
        let model = train(&g, &cfg).unwrap();
        let initial = model.history[0].total;
        let final_ = model.final_losses.total;
        assert!(
            final_ < initial,
            "loss did not decrease: {initial} -> {final_}"
        );
        for entry in &model.history {
            for v in [entry.fr, entry.mu, entry.sigma, entry.cov, entry.rec] {
                assert!(v >= 0.0 && v.is_finite());
            }
        }
    }

    #[test]
    fn all_variants_train_and_score() {
        let g = random_graph(4, 14, 3, 0.3);
        for variant in Variant::ALL {
            let cfg = TrainConfig { variant, ..small_cfg(5) };
            let model = train(&g, &cfg).unwrap();
            let report = score(&model, &g).unwrap();
            assert_eq!(report.scores.len(), 14);
            for s in &report.scores {
                assert!(*s >= 0.0, "negative score in {variant:?}");
            }
            if matches!(variant, Variant::Dagger | Variant::Ddagger) {
                assert_eq!(model.history[0].fr, 0.0);
                assert_eq!(model.history[0].mu, 0.0);
            }
        }
    }

    #[test]
    fn scoring_is_deterministic() {
        let g = random_graph(6, 10, 3, 0.35);
        let model = train(&g, &small_cfg(1)).unwrap();
        let a = score(&model, &g).unwrap();
        let b = score(&model, &g).unwrap();
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn score_rejects_dim_mismatch() {
        let g = random_graph(7, 10, 3, 0.35);
        let model = train(&g, &small_cfg(1)).unwrap();
        let g_bad = random_graph(8, 10, 5, 0.35);
        assert!(score(&model, &g_bad).is_err());
    }

    #[test]
    fn ddagger_matches_full_with_dead_modules() {
        // Disabling center aggregation (lambda_ca = 0) and weighting the
        // neighbor losses to zero must reproduce the ddagger L_rec trajectory
        // bit for bit: shared leaves initialize per-name.
        let g = random_graph(9, 12, 3, 0.35);
        let cfg_dd = TrainConfig { variant: Variant::Ddagger, ..small_cfg(3) };
        let dd = train(&g, &cfg_dd).unwrap();
        let cfg_full = TrainConfig {
            variant: Variant::Full,
            lambda_ca: 0.0,
            ..small_cfg(3)
        };
        let wiring = Wiring {
            plain_gcn_encoder: false,
            neighbor_module: true,
            center_aggregation: true,
            nr_weight: 0.0,
        };
        let full = train_wired(&g, &cfg_full, &wiring).unwrap();
        for (a, b) in dd.history.iter().zip(&full.history) {
            assert_eq!(a.rec, b.rec, "rec trajectories diverged");
            assert_eq!(a.att, b.att);
            assert_eq!(a.str_, b.str_);
        }
    }

    #[test]
    fn save_load_roundtrip_preserves_scores() {
        let g = random_graph(10, 10, 3, 0.35);
        let model = train(&g, &small_cfg(2)).unwrap();
        let before = score(&model, &g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nkgd");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let after = score(&loaded, &g).unwrap();
        assert_eq!(before.scores, after.scores);
        assert_eq!(model.history.len(), loaded.history.len());
        assert_eq!(model.final_losses, loaded.final_losses);
    }

    #[test]
    fn truncated_model_rejected() {
        let g = random_graph(11, 8, 3, 0.35);
        let model = train(&g, &small_cfg(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nkgd");
        save_model(&model, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let cut = dir.path().join("cut.nkgd");
        fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_model(&cut).is_err());
    }

    #[test]
    fn future_version_rejected() {
        let g = random_graph(12, 8, 3, 0.35);
        let model = train(&g, &small_cfg(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nkgd");
        save_model(&model, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match load_model(&path).unwrap_err() {
            NkError::Version { found, supported } => {
                assert_eq!(found, 99);
                assert_eq!(supported, MODEL_VERSION);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn exploding_training_aborts_with_epoch() {
        let g = random_graph(13, 8, 3, 0.35);
        let cfg = TrainConfig {
            lr: 1e120,
            epochs: 5,
            hidden_dim: 4,
            ..TrainConfig::default()
        };
        let err = train(&g, &cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epoch"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn config_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        fs::write(
            &path,
            "# comment\nepochs = 7\nlr = 0.001\nvariant = section\ndecoder_att = gcn\n",
        )
        .unwrap();
        let cfg = TrainConfig::from_file(&path).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.variant, Variant::Section);
        assert_eq!(cfg.decoder_att, DecoderKind::Gcn);

        fs::write(&path, "bogus_key = 3\n").unwrap();
        let err = TrainConfig::from_file(&path).unwrap_err().to_string();
        assert!(err.contains("unknown config key"), "{err}");

        fs::write(&path, "epochs 3\n").unwrap();
        assert!(TrainConfig::from_file(&path).is_err());
    }
}
