use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NumError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// User-supplied differentiable operation.
///
/// The tape stores the output computed by the caller and, during the reverse
/// sweep, asks the op for the adjoint of each input. Returning `None` for an
/// input means it receives no gradient.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&[f64]], output: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Param(ParamId),
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sqrt(Var),
    Exp(Var),
    Gelu(Var),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    SumAll(Var),
    Transpose(Var),
    Reshape(Var),
    SliceLast {
        x: Var,
        start: usize,
    },
    Broadcast(Var),
    IndexRows {
        table: Var,
        rows: Vec<usize>,
    },
    Pick {
        x: Var,
        cols: Vec<usize>,
    },
    Custom {
        op: Box<dyn CustomOp>,
        inputs: Vec<Var>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Adjoints produced by one reverse sweep.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    params: Vec<(ParamId, Vec<f64>)>,
    leaves: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    /// Parameter adjoints in tape order. A parameter copied onto the tape more
    /// than once appears once per copy.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    /// Adjoint of a gradient-tracking leaf created with [`Tape::leaf`].
    pub fn wrt(&self, leaf: Var) -> Option<&[f64]> {
        self.leaves.get(&leaf).map(Vec::as_slice)
    }
}

/// Dynamic computation tape. Rebuilt for every forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `out += op(a) · op(b)` for row-major operands, where `op` optionally
/// transposes. `a` is `m×k` after `op`, `b` is `k×n`, `out` is `m×n`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(a: &[f64], ta: bool, b: &[f64], tb: bool, out: &mut [f64], m: usize, k: usize, n: usize) {
    // Strides of the logical (possibly transposed) operands.
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements, and the
    // strides address a dense row-major layout of those shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    /// Evaluation-mode tape: dropout is the identity.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode tape whose dropout masks come from `seed`.
    pub fn training(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies the value of `v` out into a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node shape is consistent")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- leaves -------------------------------------------------------

    /// Records a leaf. Its adjoint is reported by [`Gradients::wrt`] when
    /// the tensor requires gradients.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Records a constant that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(NumError::shape("constant", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, false, Op::Leaf))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.push(shape.to_vec(), vec![0.0; numel(shape)], false, Op::Leaf)
    }

    /// Copies a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad(),
            Op::Param(id),
        )
    }

    /// Same value as `x`, cut off from the gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, false, Op::Leaf)
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a), false, self.value(b), false, &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, rg, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(NumError::contract("transpose", format!("expected 2-D input, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![c, r], out, rg, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) || shape.contains(&0) {
            return Err(NumError::shape("reshape", self.shape(x), shape));
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), value, rg, Op::Reshape(x)))
    }

    // ---- elementwise ---------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::shape(name, self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, rg, op))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Inverted dropout. Identity on an evaluation tape or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumError::contract("dropout", format!("p must lie in [0, 1), got {p}")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, rg, Op::Dropout(x, mask)))
    }

    // ---- normalisation -------------------------------------------------

    fn last_dim(&self, x: Var, op: &'static str) -> Result<usize> {
        self.shape(x)
            .last()
            .copied()
            .ok_or_else(|| NumError::contract(op, "input must have at least one axis"))
    }

    /// Softmax over the last axis, stabilised by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.last_dim(x, "softmax")?;
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for (row, o) in v.chunks(n).zip(out.chunks_mut(n)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(NumError::NonFinite {
                    context: format!("softmax row with maximum {max}"),
                });
            }
            let mut sum = 0.0;
            for (oi, &ri) in o.iter_mut().zip(row) {
                *oi = (ri - max).exp();
                sum += *oi;
            }
            o.iter_mut().for_each(|oi| *oi /= sum);
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, rg, Op::Softmax(x)))
    }

    /// Log-softmax over the last axis via log-sum-exp.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.last_dim(x, "log_softmax")?;
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for (row, o) in v.chunks(n).zip(out.chunks_mut(n)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(NumError::NonFinite {
                    context: format!("log_softmax row with maximum {max}"),
                });
            }
            let lse = max + row.iter().map(|r| (r - max).exp()).sum::<f64>().ln();
            for (oi, &ri) in o.iter_mut().zip(row) {
                *oi = ri - lse;
            }
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, rg, Op::LogSoftmax(x)))
    }

    /// Layer normalisation over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(NumError::contract("layer_norm", format!("eps must be positive, got {eps}")));
        }
        let d = self.last_dim(x, "layer_norm")?;
        if self.shape(gain) != [d] {
            return Err(NumError::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        if self.shape(bias) != [d] {
            return Err(NumError::shape("layer_norm", self.shape(x), self.shape(bias)));
        }
        let v = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let rows = v.len() / d;
        let mut xhat = vec![0.0; v.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    // ---- structural ----------------------------------------------------

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NumError::contract("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(NumError::contract("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(NumError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NumError::contract("concat", "no inputs"))?;
        let axis = self.shape(first).len().saturating_sub(1);
        self.concat(parts, axis)
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(NumError::contract("sum_axis", format!("axis {axis} out of range for {s:?}")));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let v = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &v[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (dst, &sv) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += sv;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|o| *o /= len as f64);
        }
        let mut shape = s;
        shape.remove(axis);
        let rg = self.rg(x);
        let op = if mean {
            Op::MeanAxis(x, axis)
        } else {
            Op::SumAxis(x, axis)
        };
        Ok(self.push(shape, out, rg, op))
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    /// Sum of every element as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(Vec::new(), vec![s], rg, Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// `x[..., start..start + len]`
    pub fn slice_lastdim(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| NumError::contract("slice", "scalar input"))?;
        if len == 0 || start + len > d {
            return Err(NumError::contract(
                "slice",
                format!("range {start}..{} outside last axis of {s:?}", start + len),
            ));
        }
        let v = self.value(x);
        let out: Vec<f64> = v.chunks(d).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.push(shape, out, rg, Op::SliceLast { x, start }))
    }

    /// Repeats `x` along a new leading axis of size `n`.
    pub fn broadcast(&mut self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(NumError::contract("broadcast", "leading size must be positive"));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(v.len() * n);
        for _ in 0..n {
            out.extend_from_slice(v);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape(x));
        let rg = self.rg(x);
        Ok(self.push(shape, out, rg, Op::Broadcast(x)))
    }

    /// Adds a vector to every row: `x[..., j] + b[j]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || self.shape(b) != &s[1..] {
            return Err(NumError::shape("add_row", &s, self.shape(b)));
        }
        let bb = self.broadcast(b, s[0])?;
        self.add(x, bb)
    }

    /// Gathers rows of a 2-D table: `out[i] = table[rows[i]]`.
    pub fn index_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(NumError::contract("index_rows", format!("expected 2-D table, got {s:?}")));
        }
        if rows.is_empty() {
            return Err(NumError::contract("index_rows", "no rows requested"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= s[0]) {
            return Err(NumError::contract("index_rows", format!("row {bad} out of range for {s:?}")));
        }
        let c = s[1];
        let v = self.value(table);
        let out: Vec<f64> = rows.iter().flat_map(|&r| v[r * c..(r + 1) * c].iter().copied()).collect();
        let rg = self.rg(table);
        Ok(self.push(
            vec![rows.len(), c],
            out,
            rg,
            Op::IndexRows {
                table,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Picks one entry per row of a 2-D tensor: `out[i] = x[i, cols[i]]`.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != cols.len() {
            return Err(NumError::shape("pick", &s, &[cols.len()]));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= s[1]) {
            return Err(NumError::contract("pick", format!("column {bad} out of range for {s:?}")));
        }
        let v = self.value(x);
        let out = cols.iter().enumerate().map(|(i, &c)| v[i * s[1] + c]).collect();
        let rg = self.rg(x);
        Ok(self.push(
            vec![cols.len()],
            out,
            rg,
            Op::Pick {
                x,
                cols: cols.to_vec(),
            },
        ))
    }

    /// Records a custom op whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        op: Box<dyn CustomOp>,
        inputs: &[Var],
        shape: Vec<usize>,
        value: Vec<f64>,
    ) -> Result<Var> {
        if numel(&shape) != value.len() {
            return Err(NumError::shape(op.name(), &shape, &[value.len()]));
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            shape,
            value,
            rg,
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
        ))
    }

    // ---- reverse sweep -------------------------------------------------

    /// Reverse sweep from a scalar loss. The tape is cleared afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            let shape = self.nodes[loss.0].shape.clone();
            self.clear();
            return Err(NumError::contract(
                "backward",
                format!("loss must be a scalar, got shape {shape:?}"),
            ));
        }
        self.backward_seeded(vec![(loss, vec![1.0])])
    }

    /// Reverse sweep seeded with explicit output adjoints, for graphs whose
    /// outputs are consumed by another tape. The tape is cleared afterwards.
    pub fn backward_seeded(&mut self, seeds: Vec<(Var, Vec<f64>)>) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        let mut start = 0;
        for (v, g) in seeds {
            if g.len() != self.nodes[v.0].value.len() {
                let shape = self.nodes[v.0].shape.clone();
                self.clear();
                return Err(NumError::shape("backward_seeded", &shape, &[g.len()]));
            }
            accumulate(&mut grads[v.0], g);
            start = start.max(v.0 + 1);
        }

        let mut out = Gradients::default();
        for i in (0..start).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(i), g);
                }
                Op::Param(id) => out.params.push((*id, g)),
                op => self.propagate(op, node, g, &mut grads),
            }
        }
        out.params.reverse();
        self.clear();
        Ok(out)
    }

    /// Adds `g` into the adjoint slot of `v` if `v` tracks gradients.
    fn send(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if self.nodes[v.0].requires_grad {
            accumulate(&mut grads[v.0], g);
        }
    }

    fn propagate(&self, op: &Op, node: &Node, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.as_slice();
        let shp = |v: Var| self.nodes[v.0].shape.as_slice();
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Matmul(a, b) => {
                let (m, k) = (shp(*a)[0], shp(*a)[1]);
                let n = shp(*b)[1];
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_acc(&g, false, val(*b), true, &mut da, m, n, k);
                    self.send(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_acc(val(*a), true, &g, false, &mut db, k, m, n);
                    self.send(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*b) {
                    self.send(grads, *b, g.clone());
                }
                self.send(grads, *a, g);
            }
            Op::Sub(a, b) => {
                if self.rg(*b) {
                    self.send(grads, *b, g.iter().map(|v| -v).collect());
                }
                self.send(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.rg(*a) {
                    self.send(grads, *a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                }
                if self.rg(*b) {
                    self.send(grads, *b, g.iter().zip(av).map(|(x, y)| x * y).collect());
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.rg(*a) {
                    self.send(grads, *a, g.iter().zip(bv).map(|(x, y)| x / y).collect());
                }
                if self.rg(*b) {
                    let db = g
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(gv, (x, y))| -gv * x / (y * y))
                        .collect();
                    self.send(grads, *b, db);
                }
            }
            Op::Scale(x, s) => self.send(grads, *x, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => self.send(grads, *x, g),
            Op::Sqrt(x) => {
                let d = g.iter().zip(&node.value).map(|(gv, y)| gv / (2.0 * y)).collect();
                self.send(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = g.iter().zip(&node.value).map(|(gv, y)| gv * y).collect();
                self.send(grads, *x, d);
            }
            Op::Gelu(x) => {
                let d = g.iter().zip(val(*x)).map(|(gv, &xv)| gv * gelu_grad(xv)).collect();
                self.send(grads, *x, d);
            }
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(val(*x))
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.send(grads, *x, d);
            }
            Op::Dropout(x, mask) => {
                let d = g.iter().zip(mask).map(|(gv, m)| gv * m).collect();
                self.send(grads, *x, d);
            }
            Op::Softmax(x) => {
                let n = *node.shape.last().unwrap();
                let mut d = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks(n).zip(node.value.chunks(n)).zip(d.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((dv, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *dv = yv * (gv - dot);
                    }
                }
                self.send(grads, *x, d);
            }
            Op::LogSoftmax(x) => {
                let n = *node.shape.last().unwrap();
                let mut d = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks(n).zip(node.value.chunks(n)).zip(d.chunks_mut(n)) {
                    let gsum: f64 = gr.iter().sum();
                    for ((dv, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *dv = gv - yv.exp() * gsum;
                    }
                }
                self.send(grads, *x, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = *node.shape.last().unwrap();
                let gv = val(*gain);
                if self.rg(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dhh = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dhh += dh * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dhh /= d as f64;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            dx[r * d + j] = rs * (dh - mean_dh - hr[j] * mean_dhh);
                        }
                    }
                    self.send(grads, *x, dx);
                }
                if self.rg(*gain) {
                    let mut dg = vec![0.0; d];
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    self.send(grads, *gain, dg);
                }
                if self.rg(*bias) {
                    let mut db = vec![0.0; d];
                    for gr in g.chunks(d) {
                        for j in 0..d {
                            db[j] += gr[j];
                        }
                    }
                    self.send(grads, *bias, db);
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = shp(p)[*axis];
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let s = (o * total + offset) * inner;
                            d.extend_from_slice(&g[s..s + len * inner]);
                        }
                        self.send(grads, p, d);
                    }
                    offset += len;
                }
            }
            Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
                let (outer, len, inner) = split_axis(shp(*x), *axis);
                let scale = if matches!(op, Op::MeanAxis(..)) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        let dst = &mut d[(o * len + a) * inner..(o * len + a + 1) * inner];
                        for (dv, &sv) in dst.iter_mut().zip(src) {
                            *dv = sv * scale;
                        }
                    }
                }
                self.send(grads, *x, d);
            }
            Op::SumAll(x) => {
                let n = val(*x).len();
                self.send(grads, *x, vec![g[0]; n]);
            }
            Op::Transpose(x) => {
                let (r, c) = (shp(*x)[0], shp(*x)[1]);
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g[j * r + i];
                    }
                }
                self.send(grads, *x, d);
            }
            Op::SliceLast { x, start } => {
                let full = *shp(*x).last().unwrap();
                let len = *node.shape.last().unwrap();
                let mut d = vec![0.0; val(*x).len()];
                for (dr, gr) in d.chunks_mut(full).zip(g.chunks(len)) {
                    dr[*start..start + len].copy_from_slice(gr);
                }
                self.send(grads, *x, d);
            }
            Op::Broadcast(x) => {
                let n = val(*x).len();
                let mut d = vec![0.0; n];
                for chunk in g.chunks(n) {
                    for (dv, gv) in d.iter_mut().zip(chunk) {
                        *dv += gv;
                    }
                }
                self.send(grads, *x, d);
            }
            Op::IndexRows { table, rows } => {
                let c = shp(*table)[1];
                let mut d = vec![0.0; val(*table).len()];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        d[r * c + j] += g[i * c + j];
                    }
                }
                self.send(grads, *table, d);
            }
            Op::Pick { x, cols } => {
                let c = shp(*x)[1];
                let mut d = vec![0.0; val(*x).len()];
                for (i, &col) in cols.iter().enumerate() {
                    d[i * c + col] = g[i];
                }
                self.send(grads, *x, d);
            }
            Op::Custom { op, inputs } => {
                let ins: Vec<&[f64]> = inputs.iter().map(|&v| val(v)).collect();
                let ds = op.backward(&ins, &node.value, &g);
                for (&v, d) in inputs.iter().zip(ds) {
                    if let Some(d) = d {
                        self.send(grads, v, d);
                    }
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}
