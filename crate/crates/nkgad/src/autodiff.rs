//! Reverse-mode automatic differentiation over matrices.
//!
//! A `Tape` records a matrix-valued computation built from a fixed primitive
//! set; `backward` then yields exact gradients for every leaf. Every node's
//! value is checked for finiteness as it is produced, so a numeric failure
//! names the primitive that caused it.

use crate::error::{NkError, Result};
use crate::matrix::Matrix;
use crate::params::{GradSet, ParamSet};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf { grad_wanted: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Scale(usize, f64),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Exp(usize),
    Square(usize),
    SqrtGuard(usize),
    RowSoftmax(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    Reshape(usize),
    StackRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    MaskedMeanRows(usize, Vec<bool>),
    AddRowBroadcast(usize, usize),
    RowNormalizeGuard(usize, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Square(..) => "square",
            Op::SqrtGuard(..) => "sqrt_guard",
            Op::RowSoftmax(..) => "row_softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::Reshape(..) => "reshape",
            Op::StackRows(..) => "stack_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::MaskedMeanRows(..) => "masked_mean_rows",
            Op::AddRowBroadcast(..) => "add_row_broadcast",
            Op::RowNormalizeGuard(..) => "row_normalize",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records a differentiable matrix program.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Extract the single entry of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let m = self.value(v);
        if m.shape() != (1, 1) {
            return Err(NkError::shape(
                "scalar",
                format!("expected 1x1, got {}x{}", m.rows(), m.cols()),
            ));
        }
        Ok(m.get(0, 0))
    }

    fn push(&mut self, value: Matrix, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(NkError::numeric(op.name(), "non-finite intermediate value"));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf whose gradient is reported by `backward`.
    pub fn leaf(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf { grad_wanted: true })
    }

    /// Leaf treated as a constant (no gradient reported).
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf { grad_wanted: false })
    }

    pub fn scalar_constant(&mut self, value: f64) -> Result<Var> {
        self.constant(Matrix::from_vec(1, 1, vec![value])?)
    }

    fn check_same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NkError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "add")?;
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "sub")?;
        let value = self.value(a).sub(self.value(b))?;
        self.push(value, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "mul")?;
        let value = self.value(a).hadamard(self.value(b))?;
        self.push(value, Op::Mul(a.0, b.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a.0, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a.0, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a.0))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a.0))
    }

    /// Elementwise sqrt(x + eps); the guard keeps the gradient finite at 0.
    pub fn sqrt_guard(&mut self, a: Var, eps: f64) -> Result<Var> {
        let value = self.value(a).map(|x| (x + eps).sqrt());
        self.push(value, Op::SqrtGuard(a.0))
    }

    /// Softmax over each row.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let input = self.value(a);
        let mut value = input.clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(value, Op::RowSoftmax(a.0))
    }

    /// Sum of all entries (1x1).
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).sum()])?;
        self.push(value, Op::Sum(a.0))
    }

    /// Mean of all entries (1x1).
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let len = (m.rows() * m.cols()) as f64;
        if len == 0.0 {
            return Err(NkError::shape("mean", "empty matrix".to_string()));
        }
        let value = Matrix::from_vec(1, 1, vec![m.sum() / len])?;
        self.push(value, Op::Mean(a.0))
    }

    /// Per-row sum: n x c -> n x 1.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let sums: Vec<f64> = (0..m.rows()).map(|i| m.row(i).iter().sum()).collect();
        let value = Matrix::column(&sums);
        self.push(value, Op::RowSum(a.0))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let m = self.value(a);
        if m.rows() * m.cols() != rows * cols {
            return Err(NkError::shape(
                "reshape",
                format!("{}x{} -> {rows}x{cols}", m.rows(), m.cols()),
            ));
        }
        let value = Matrix::from_vec(rows, cols, m.data().to_vec())?;
        self.push(value, Op::Reshape(a.0))
    }

    /// Vertical concatenation of the given nodes (all with equal column count).
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NkError::shape("stack_rows", "no parts".to_string()));
        }
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(NkError::shape(
                    "stack_rows",
                    format!("column mismatch: {} vs {cols}", m.cols()),
                ));
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        self.push(value, Op::StackRows(parts.iter().map(|v| v.0).collect()))
    }

    /// Two-part vertical concatenation.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.stack_rows(&[a, b])
    }

    /// Select rows by index (duplicates allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let m = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * m.cols());
        for &i in indices {
            if i >= m.rows() {
                return Err(NkError::shape(
                    "gather_rows",
                    format!("row {i} out of range (n={})", m.rows()),
                ));
            }
            data.extend_from_slice(m.row(i));
        }
        let value = Matrix::from_vec(indices.len(), m.cols(), data)?;
        self.push(value, Op::GatherRows(a.0, indices.to_vec()))
    }

    /// Mean over the masked entries of a column vector; 0 when the mask is
    /// empty (the caller decides whether that warrants a warning).
    pub fn masked_mean_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let m = self.value(a);
        if m.cols() != 1 || m.rows() != mask.len() {
            return Err(NkError::shape(
                "masked_mean_rows",
                format!("need {}x1 input, got {}x{}", mask.len(), m.rows(), m.cols()),
            ));
        }
        let count = mask.iter().filter(|&&b| b).count();
        let value = if count == 0 {
            0.0
        } else {
            let mut s = 0.0;
            for (i, &keep) in mask.iter().enumerate() {
                if keep {
                    s += m.get(i, 0);
                }
            }
            s / count as f64
        };
        let value = Matrix::from_vec(1, 1, vec![value])?;
        self.push(value, Op::MaskedMeanRows(a.0, mask.to_vec()))
    }

    /// Add a 1 x c row vector to every row of an n x c matrix.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, mb) = (self.value(a), self.value(b));
        if mb.rows() != 1 || mb.cols() != ma.cols() {
            return Err(NkError::shape(
                "add_row_broadcast",
                format!("{:?} + {:?}", ma.shape(), mb.shape()),
            ));
        }
        let mut value = ma.clone();
        for i in 0..value.rows() {
            for (x, y) in value.row_mut(i).iter_mut().zip(mb.row(0)) {
                *x += y;
            }
        }
        self.push(value, Op::AddRowBroadcast(a.0, b.0))
    }

    /// L2-normalize each row: x / (||x||_2 + eps).
    pub fn row_normalize(&mut self, a: Var, eps: f64) -> Result<Var> {
        let m = self.value(a);
        let mut value = m.clone();
        for i in 0..value.rows() {
            let norm = crate::matrix::l2_norm(m.row(i));
            let t = norm + eps;
            for x in value.row_mut(i) {
                *x /= t;
            }
        }
        self.push(value, Op::RowNormalizeGuard(a.0, eps))
    }

    /// Reverse pass from a 1x1 output node. Returns one gradient per node
    /// index; only leaves created with `leaf` are guaranteed to be present.
    pub fn backward(&self, out: Var) -> Result<Vec<Option<Matrix>>> {
        let out_shape = self.value(out).shape();
        if out_shape != (1, 1) {
            return Err(NkError::shape(
                "backward",
                format!("output must be 1x1, got {out_shape:?}"),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Matrix::from_vec(1, 1, vec![1.0])?);

        // Constants never need gradients; skipping them avoids the large
        // adjoint matmuls against graph-operator constants.
        let wants = |idx: usize| !matches!(self.nodes[idx].op, Op::Leaf { grad_wanted: false });

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if wants(*b) {
                        accumulate(&mut grads, *b, g.clone())?;
                    }
                    if wants(*a) {
                        accumulate(&mut grads, *a, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0))?;
                    }
                    if wants(*a) {
                        accumulate(&mut grads, *a, g)?;
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        let ga = g.hadamard(&self.nodes[*b].value)?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if wants(*b) {
                        let gb = g.hadamard(&self.nodes[*a].value)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        let ga = g.matmul(&self.nodes[*b].value.transpose())?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if wants(*b) {
                        let gb = self.nodes[*a].value.transpose().matmul(&g)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.transpose())?;
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, g.scale(*s))?;
                }
                Op::Relu(a) => {
                    let input = &self.nodes[*a].value;
                    let ga = g.zip_with(input, |gi, x| if x > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::LeakyRelu(a, slope) => {
                    let input = &self.nodes[*a].value;
                    let slope = *slope;
                    let ga = g.zip_with(input, |gi, x| if x > 0.0 { gi } else { slope * gi });
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = g.zip_with(y, |gi, yi| gi * yi * (1.0 - yi));
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Exp(a) => {
                    let ga = g.hadamard(&node.value)?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Square(a) => {
                    let input = &self.nodes[*a].value;
                    let ga = g.zip_with(input, |gi, x| gi * 2.0 * x);
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SqrtGuard(a) => {
                    let y = &node.value;
                    let ga = g.zip_with(y, |gi, yi| gi * 0.5 / yi);
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                        for (out, (yi, gi)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *out = yi * (gi - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Sum(a) => {
                    let shape = self.nodes[*a].value.shape();
                    let ga = Matrix::filled(shape.0, shape.1, g.get(0, 0));
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Mean(a) => {
                    let shape = self.nodes[*a].value.shape();
                    let len = (shape.0 * shape.1) as f64;
                    let ga = Matrix::filled(shape.0, shape.1, g.get(0, 0) / len);
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::RowSum(a) => {
                    let shape = self.nodes[*a].value.shape();
                    let mut ga = Matrix::zeros(shape.0, shape.1);
                    for i in 0..shape.0 {
                        let gi = g.get(i, 0);
                        for x in ga.row_mut(i) {
                            *x = gi;
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Reshape(a) => {
                    let shape = self.nodes[*a].value.shape();
                    let ga = Matrix::from_vec(shape.0, shape.1, g.data().to_vec())?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.rows();
                        let cols = self.nodes[p].value.cols();
                        let mut gp = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(g.row(offset + r));
                        }
                        offset += rows;
                        accumulate(&mut grads, p, gp)?;
                    }
                }
                Op::GatherRows(a, indices) => {
                    let shape = self.nodes[*a].value.shape();
                    let mut ga = Matrix::zeros(shape.0, shape.1);
                    for (r, &src) in indices.iter().enumerate() {
                        for (x, y) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::MaskedMeanRows(a, mask) => {
                    let count = mask.iter().filter(|&&b| b).count();
                    let mut ga = Matrix::zeros(mask.len(), 1);
                    if count > 0 {
                        let gi = g.get(0, 0) / count as f64;
                        for (i, &keep) in mask.iter().enumerate() {
                            if keep {
                                ga.set(i, 0, gi);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::AddRowBroadcast(a, b) => {
                    if wants(*b) {
                        let cols = g.cols();
                        let mut gb = Matrix::zeros(1, cols);
                        for i in 0..g.rows() {
                            for (x, y) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                                *x += y;
                            }
                        }
                        accumulate(&mut grads, *b, gb)?;
                    }
                    if wants(*a) {
                        accumulate(&mut grads, *a, g)?;
                    }
                }
                Op::RowNormalizeGuard(a, eps) => {
                    let input = &self.nodes[*a].value;
                    let mut ga = Matrix::zeros(input.rows(), input.cols());
                    for i in 0..input.rows() {
                        let x = input.row(i);
                        let s = crate::matrix::l2_norm(x);
                        let t = s + eps;
                        let gr = g.row(i);
                        let gx: f64 = gr.iter().zip(x).map(|(gi, xi)| gi * xi).sum();
                        let coef = if s > 0.0 { gx / (s * t * t) } else { 0.0 };
                        for (out, (gi, xi)) in ga.row_mut(i).iter_mut().zip(gr.iter().zip(x)) {
                            *out = gi / t - coef * xi;
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) -> Result<()> {
    match &mut grads[idx] {
        Some(existing) => {
            *existing = existing.add(&g)?;
        }
        slot @ None => {
            *slot = Some(g);
        }
    }
    Ok(())
}

impl Matrix {
    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        debug_assert_eq!(self.shape(), other.shape());
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| f(*a, *b))
            .collect();
        Matrix::from_vec(self.rows(), self.cols(), data).expect("zip_with shape")
    }
}

/// Evaluate a scalar program over the leaves of `params` and return its value
/// together with the gradient of every trainable leaf.
///
/// The builder receives one `Var` per parameter, in `ParamSet` order.
pub fn evaluate_with_gradients<F>(params: &ParamSet, program: F) -> Result<(f64, GradSet)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (value, grads, ()) =
        evaluate_with_gradients_extras(params, |tape, leaves| Ok((program(tape, leaves)?, ())))?;
    Ok((value, grads))
}

/// Like [`evaluate_with_gradients`], but the program also returns extra data
/// it pulled off the tape (loss components, reconstructed matrices, ...).
pub fn evaluate_with_gradients_extras<F, T>(params: &ParamSet, program: F) -> Result<(f64, GradSet, T)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<(Var, T)>,
{
    let mut tape = Tape::new();
    let leaves = alloc_leaves(&mut tape, params)?;
    let (out, extras) = program(&mut tape, &leaves)?;
    let value = tape.scalar(out)?;
    let node_grads = tape.backward(out)?;
    let grads: Vec<Option<Matrix>> = params
        .iter()
        .zip(&leaves)
        .map(|((_, p), leaf)| {
            if p.trainable {
                Some(match &node_grads[leaf.0] {
                    Some(g) => g.clone(),
                    None => Matrix::zeros(p.value.rows(), p.value.cols()),
                })
            } else {
                None
            }
        })
        .collect();
    let grads = GradSet::new(grads);
    if !grads.all_finite() {
        return Err(NkError::numeric("backward", "non-finite gradient"));
    }
    Ok((value, grads, extras))
}

/// Evaluate the program's value only.
pub fn evaluate<F>(params: &ParamSet, program: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves = alloc_leaves(&mut tape, params)?;
    let out = program(&mut tape, &leaves)?;
    tape.scalar(out)
}

/// Evaluate value-only, returning the program's extra data as well.
pub fn evaluate_extras<F, T>(params: &ParamSet, program: F) -> Result<(f64, T)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<(Var, T)>,
{
    let mut tape = Tape::new();
    let leaves = alloc_leaves(&mut tape, params)?;
    let (out, extras) = program(&mut tape, &leaves)?;
    Ok((tape.scalar(out)?, extras))
}

fn alloc_leaves(tape: &mut Tape, params: &ParamSet) -> Result<Vec<Var>> {
    params
        .iter()
        .map(|(_, p)| {
            if p.trainable {
                tape.leaf(p.value.clone())
            } else {
                tape.constant(p.value.clone())
            }
        })
        .collect()
}

/// Central finite differences over every trainable entry; the independent
/// oracle for gradient checks. Only forward evaluation is used.
pub fn finite_difference_gradients<F>(params: &ParamSet, program: F, step: f64) -> Result<GradSet>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work = params.clone();
    let ids: Vec<_> = work.iter().map(|(id, _)| id).collect();
    let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(ids.len());
    for id in ids {
        if !work.is_trainable(id) {
            grads.push(None);
            continue;
        }
        let base = work.get(id).clone();
        let (rows, cols) = base.shape();
        let mut g = Matrix::zeros(rows, cols);
        for entry in 0..rows * cols {
            let mut plus = base.clone();
            plus.data_mut()[entry] += step;
            work.set_value(id, plus)?;
            let f_plus = evaluate(&work, &program)?;

            let mut minus = base.clone();
            minus.data_mut()[entry] -= step;
            work.set_value(id, minus)?;
            let f_minus = evaluate(&work, &program)?;

            g.data_mut()[entry] = (f_plus - f_minus) / (2.0 * step);
        }
        work.set_value(id, base)?;
        grads.push(Some(g));
    }
    Ok(GradSet::new(grads))
}

/// Largest relative error between analytic and finite-difference gradients,
/// restricted to entries whose reference magnitude exceeds `min_magnitude`.
pub fn max_relative_grad_error(
    params: &ParamSet,
    analytic: &GradSet,
    numeric: &GradSet,
    min_magnitude: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (id, p) in params.iter() {
        if !p.trainable {
            continue;
        }
        let (Some(a), Some(n)) = (analytic.get(id), numeric.get(id)) else {
            continue;
        };
        for (x, y) in a.data().iter().zip(n.data()) {
            let denom = x.abs().max(y.abs());
            if denom > min_magnitude {
                worst = worst.max((x - y).abs() / denom);
            }
        }
    }
    worst
}
