//! Named parameter collections, initialization, and the Adam optimizer step.

use crate::error::{NkError, Result};
use crate::matrix::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Handle to one leaf of a [`ParamSet`]; doubles as its index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub trainable: bool,
}

/// Ordered collection of named matrix leaves. Iteration order is insertion
/// order and is part of the determinism contract; shapes are fixed after
/// construction.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|p| p.name == name) {
            return Err(NkError::contract(format!("duplicate parameter name: {name}")));
        }
        if !value.is_finite() {
            return Err(NkError::numeric("param_set.add", format!("non-finite init for {name}")));
        }
        self.entries.push(Param {
            name,
            value,
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Replace a leaf's value; the shape must match the original.
    pub fn set_value(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(NkError::shape(
                "param_set.set_value",
                format!(
                    "{}: {:?} -> {:?}",
                    entry.name,
                    entry.value.shape(),
                    value.shape()
                ),
            ));
        }
        entry.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.value.is_finite())
    }
}

/// One gradient matrix per trainable leaf of a [`ParamSet`], aligned by index.
#[derive(Clone, Debug)]
pub struct GradSet {
    grads: Vec<Option<Matrix>>,
}

impl GradSet {
    pub fn new(grads: Vec<Option<Matrix>>) -> Self {
        GradSet { grads }
    }

    /// All-zero gradients for the trainable leaves of `params`.
    pub fn zeros(params: &ParamSet) -> Self {
        let grads = params
            .iter()
            .map(|(_, p)| {
                p.trainable
                    .then(|| Matrix::zeros(p.value.rows(), p.value.cols()))
            })
            .collect();
        GradSet { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn congruent_with(&self, params: &ParamSet) -> bool {
        self.grads.len() == params.len()
            && params.iter().all(|(id, p)| match &self.grads[id.0] {
                Some(g) => p.trainable && g.shape() == p.value.shape(),
                None => !p.trainable,
            })
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Matrix::is_finite)
    }
}

/// Glorot/Xavier uniform initialization: entries uniform in
/// ±sqrt(6/(rows+cols)), reproducible from the seed.
pub fn glorot_init(rows: usize, cols: usize, rng_seed: u64) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("glorot size")
}

/// FNV-1a over a label; stable across runs, unlike the std hasher.
pub fn stable_hash64(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Per-leaf RNG seed derived from a master seed and a label, so the same leaf
/// initializes identically regardless of which other leaves exist.
pub fn derived_seed(master: u64, label: &str) -> u64 {
    let mut z = master ^ stable_hash64(label);
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First/second moment buffers for Adam, aligned with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let m = params
            .iter()
            .map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect::<Vec<_>>();
        AdamState {
            step: 0,
            m: m.clone(),
            v: m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with decoupled weight decay, applied in place to every
/// trainable leaf. Deterministic given inputs.
pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &GradSet,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(NkError::contract(format!("learning rate must be > 0, got {lr}")));
    }
    if weight_decay < 0.0 {
        return Err(NkError::contract(format!(
            "weight decay must be >= 0, got {weight_decay}"
        )));
    }
    if !grads.congruent_with(params) {
        return Err(NkError::shape(
            "optimizer_step",
            "gradient set not congruent with parameter set".to_string(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);

    for idx in 0..params.len() {
        let id = ParamId(idx);
        let Some(g) = grads.get(id) else { continue };
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let value = &mut params.entries[idx].value;
        for ((theta, gi), (mi, vi)) in value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
            *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS) + lr * weight_decay * *theta;
        }
        if !value.is_finite() {
            return Err(NkError::numeric(
                "optimizer_step",
                format!("non-finite parameter after update: {}", params.entries[idx].name),
            ));
        }
    }
    Ok(())
}
