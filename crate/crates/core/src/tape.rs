//! Reverse-mode differentiation over a recorded list of tensor operations.
//!
//! Every operation appends a node holding its value and a backward rule.
//! [`Tape::backward`] walks the nodes in reverse order and accumulates
//! gradients into every node that depends on a [`Tape::param`] leaf. Constant
//! inputs (data, masks) never receive gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before `ln`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Statistics scope of the normalisation op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// Mean and variance per row (per sequence position, across channels).
    Row,
    /// Mean and variance over every entry of the matrix.
    All,
}

/// Operation kinds whose backward rule can be deliberately corrupted, so that
/// gradient checks can be shown to catch a broken rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    MatMul,
    Relu,
    Softmax,
    Norm,
}

impl std::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matmul" => Ok(Fault::MatMul),
            "relu" => Ok(Fault::Relu),
            "softmax" => Ok(Fault::Softmax),
            "norm" | "layer_norm" => Ok(Fault::Norm),
            other => Err(Error::Config(format!("unknown fault kind `{other}`"))),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    SoftmaxRows(usize),
    Norm {
        x: usize,
        gain: usize,
        bias: usize,
        scope: NormScope,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    MeanRows(usize),
    Reshape(usize),
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    Sum(usize),
    Mean(usize),
    CrossEntropy {
        probs: usize,
        labels: Vec<usize>,
    },
    DiscLoss {
        real: usize,
        fake: usize,
    },
    GenLoss(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Ordered record of executed operations.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    backward_done: bool,
    fault: Option<Fault>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
            fault: None,
        }
    }

    /// Tape whose backward rule for `fault` is scaled by 1.5.
    pub fn with_fault(fault: Fault) -> Self {
        Self {
            fault: Some(fault),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf. Its gradient is available after [`Tape::backward`].
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push_unchecked(t.clone(), Op::Leaf, true)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_unchecked(t, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.check_fast(v)].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the loss with respect to a leaf, after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.check(v).ok()?;
        self.nodes[v.idx].grad.as_deref()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(v.idx)
    }

    fn check_fast(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable does not belong to this tape");
        v.idx
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn dims2(&self, idx: usize, op: &'static str) -> Result<(usize, usize)> {
        let s = self.nodes[idx].value.shape();
        match s.len() {
            2 => Ok((s[0], s[1])),
            _ => Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("{op} expects a matrix"),
            }),
        }
    }

    fn data(&self, idx: usize) -> &[f64] {
        self.nodes[idx].value.data()
    }

    // ---- forward operations ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.dims2(ai, "matmul")?;
        let (k2, n) = self.dims2(bi, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.data(ai), self.data(bi), &mut out, m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(ai, bi), &[ai, bi])
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.dims2(ai, "matmul_nt")?;
        let (n, k2) = self.dims2(bi, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(self.data(ai), self.data(bi), &mut out, m, k, n);
        self.push("matmul_nt", Tensor::from_parts(vec![m, n], out), Op::MatMulNT(ai, bi), &[ai, bi])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let (m, n) = self.dims2(ai, "transpose")?;
        let src = self.data(ai);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push("transpose", Tensor::from_parts(vec![n, m], out), Op::Transpose(ai), &[ai])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out = self.data(ai).iter().zip(self.data(bi)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push("add", Tensor::from_parts(shape, out), Op::Add(ai, bi), &[ai, bi])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let out = self.data(ai).iter().zip(self.data(bi)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", Tensor::from_parts(shape, out), Op::Mul(ai, bi), &[ai, bi])
    }

    /// `x[m×n] + b`, with `b` holding `n` values added to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xi, bi) = (self.check(x)?, self.check(b)?);
        let (m, n) = self.dims2(xi, "add_row")?;
        if self.value(b).len() != n {
            return Err(Error::shape("add_row", self.shape(x), self.shape(b)));
        }
        let bias = self.data(bi);
        let mut out = self.data(xi).to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
        }
        self.push("add_row", Tensor::from_parts(vec![m, n], out), Op::AddRow(xi, bi), &[xi, bi])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.data(xi).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", Tensor::from_parts(shape, out), Op::Scale(xi, c), &[xi])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.data(xi).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push("relu", Tensor::from_parts(shape, out), Op::Relu(xi), &[xi])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self
            .data(xi)
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("leaky_relu", Tensor::from_parts(shape, out), Op::LeakyRelu(xi, slope), &[xi])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.data(xi).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("sigmoid", Tensor::from_parts(shape, out), Op::Sigmoid(xi), &[xi])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let (m, n) = self.dims2(xi, "softmax_rows")?;
        let mut out = self.data(xi).to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push("softmax_rows", Tensor::from_parts(vec![m, n], out), Op::SoftmaxRows(xi), &[xi])
    }

    /// Normalises `x[m×n]` to zero mean and unit variance within each group
    /// (each row, or the whole matrix), dividing by `sqrt(var + eps)`, then
    /// applies a per-column affine map `gain[j] * x̂ + bias[j]`.
    pub fn norm(&mut self, x: Var, gain: Var, bias: Var, scope: NormScope, eps: f64) -> Result<Var> {
        let (xi, gi, bi) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let (m, n) = self.dims2(xi, "norm")?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::shape("norm", self.shape(x), self.shape(gain)));
        }
        if !(eps > 0.0) {
            return Err(Error::Config("norm epsilon must be positive".into()));
        }
        let src = self.data(xi);
        let group = match scope {
            NormScope::Row => n,
            NormScope::All => m * n,
        };
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m * n / group);
        for (g, chunk) in src.chunks(group).enumerate() {
            let mean = chunk.iter().sum::<f64>() / group as f64;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / group as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (o, v) in xhat[g * group..(g + 1) * group].iter_mut().zip(chunk) {
                *o = (v - mean) * inv;
            }
        }
        let (gd, bd) = (self.data(gi), self.data(bi));
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, h)| h * gd[i % n] + bd[i % n])
            .collect();
        let op = Op::Norm {
            x: xi,
            gain: gi,
            bias: bi,
            scope,
            xhat,
            inv_std,
        };
        self.push("norm", Tensor::from_parts(vec![m, n], out), op, &[xi, gi, bi])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let (m, n) = self.dims2(xi, "slice_cols")?;
        if start >= end || end > n {
            return Err(Error::InvalidShape {
                shape: vec![m, n],
                reason: format!("column slice {start}..{end} out of range"),
            });
        }
        let w = end - start;
        let src = self.data(xi);
        let out = (0..m).flat_map(|i| src[i * n + start..i * n + end].iter().copied()).collect();
        self.push("slice_cols", Tensor::from_parts(vec![m, w], out), Op::SliceCols { x: xi, start }, &[xi])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let first = *idx.first().ok_or_else(|| Error::Config("concat of nothing".into()))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (mi, ni) = self.dims2(i, "concat_cols")?;
            if mi != m {
                return Err(Error::shape("concat_cols", self.nodes[first].value.shape(), self.nodes[i].value.shape()));
            }
            widths.push(ni);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (&i, &w) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.data(i)[r * w..(r + 1) * w]);
            }
        }
        self.push("concat_cols", Tensor::from_parts(vec![m, n], out), Op::ConcatCols(idx.clone()), &idx)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let first = *idx.first().ok_or_else(|| Error::Config("concat of nothing".into()))?;
        let (_, n) = self.dims2(first, "concat_rows")?;
        let mut m = 0;
        let mut out = Vec::new();
        for &i in &idx {
            let (mi, ni) = self.dims2(i, "concat_rows")?;
            if ni != n {
                return Err(Error::shape("concat_rows", self.nodes[first].value.shape(), self.nodes[i].value.shape()));
            }
            m += mi;
            out.extend_from_slice(self.data(i));
        }
        self.push("concat_rows", Tensor::from_parts(vec![m, n], out), Op::ConcatRows(idx.clone()), &idx)
    }

    /// Mean over rows: `x[m×n] -> [1×n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let (m, n) = self.dims2(xi, "mean_rows")?;
        let mut out = vec![0.0; n];
        for row in self.data(xi).chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        self.push("mean_rows", Tensor::from_parts(vec![1, n], out), Op::MeanRows(xi), &[xi])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.check(x)?;
        let t = self.nodes[xi].value.clone().reshape(shape.to_vec())?;
        self.push("reshape", t, Op::Reshape(xi), &[xi])
    }

    /// Inverted dropout: zero each entry with probability `p` and scale
    /// survivors by `1 / (1 - p)`. Identity when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut SeededRng) -> Result<Var> {
        self.check(x)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with an explicit multiplicative mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xi = self.check(x)?;
        if mask.len() != self.value(x).len() {
            return Err(Error::shape("dropout", self.shape(x), &[mask.len()]));
        }
        let out = self.data(xi).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        self.push("dropout", Tensor::from_parts(shape, out), Op::Dropout { x: xi, mask }, &[xi])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let s = self.data(xi).iter().sum();
        self.push("sum", Tensor::from_parts(vec![1], vec![s]), Op::Sum(xi), &[xi])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let d = self.data(xi);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push("mean", Tensor::from_parts(vec![1], vec![s]), Op::Mean(xi), &[xi])
    }

    /// Mean categorical cross-entropy `-ln p[label]` over the rows of a
    /// probability matrix, with probabilities clamped at [`PROB_FLOOR`].
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let pi = self.check(probs)?;
        let (m, n) = self.dims2(pi, "cross_entropy")?;
        if labels.len() != m {
            return Err(Error::shape("cross_entropy", &[m, n], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::LabelOutOfRange { label: bad, num_classes: n });
        }
        let p = self.data(pi);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -p[i * n + l].max(PROB_FLOOR).ln())
            .sum::<f64>()
            / m as f64;
        let op = Op::CrossEntropy {
            probs: pi,
            labels: labels.to_vec(),
        };
        self.push("cross_entropy", Tensor::from_parts(vec![1], vec![loss]), op, &[pi])
    }

    /// Discriminator loss `-(mean ln D(x) + mean ln(1 - D(G(z))))`.
    pub fn disc_loss(&mut self, d_real: Var, d_fake: Var) -> Result<Var> {
        let (ri, fi) = (self.check(d_real)?, self.check(d_fake)?);
        let real = self.data(ri);
        let fake = self.data(fi);
        let lr = real.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / real.len() as f64;
        let lf = fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()).sum::<f64>() / fake.len() as f64;
        let op = Op::DiscLoss { real: ri, fake: fi };
        self.push("disc_loss", Tensor::from_parts(vec![1], vec![-(lr + lf)]), op, &[ri, fi])
    }

    /// Generator loss `-mean ln D(G(z))`.
    pub fn gen_loss(&mut self, d_fake: Var) -> Result<Var> {
        let fi = self.check(d_fake)?;
        let fake = self.data(fi);
        let l = -fake.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / fake.len() as f64;
        self.push("gen_loss", Tensor::from_parts(vec![1], vec![l]), Op::GenLoss(fi), &[fi])
    }

    /// Smallest `|x|` fed to any ReLU or leaky ReLU on the tape, infinite
    /// when there are none. Finite differences closer than this to a kink
    /// are unreliable.
    pub fn kink_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.data(x).iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    // ---- backward ----------------------------------------------------------

    /// Accumulates `∂loss/∂v` into every node that depends on a parameter
    /// leaf. May run once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.check(loss)?;
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.nodes[li].value.len() != 1 {
            return Err(Error::NotScalar(self.nodes[li].value.shape().to_vec()));
        }
        self.backward_done = true;
        if !self.nodes[li].requires_grad {
            return Ok(());
        }
        self.nodes[li].grad = Some(vec![1.0]);
        for idx in (0..=li).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &g);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                self.nodes[idx].grad = Some(g);
            }
        }
        Ok(())
    }

    fn fault_factor(&self, kind: Fault) -> f64 {
        if self.fault == Some(kind) {
            1.5
        } else {
            1.0
        }
    }

    fn acc(&mut self, idx: usize, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[idx];
        if !node.requires_grad {
            return;
        }
        let n = node.value.len();
        let slot = node.grad.get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn acc_slice(&mut self, idx: usize, g: &[f64]) {
        self.acc(idx, |slot| slot.iter_mut().zip(g).for_each(|(s, v)| *s += v));
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        // Take the op out so its cached buffers can be read while other nodes
        // are mutated; restored at the end.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Constant);
        match &op {
            Op::Leaf | Op::Constant => {}
            &Op::MatMul(a, b) => {
                let f = self.fault_factor(Fault::MatMul);
                let (m, k) = self.dims2(a, "matmul").expect("recorded");
                let n = self.nodes[b].value.cols();
                let gs: Vec<f64> = g.iter().map(|v| v * f).collect();
                if self.needs(a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt_acc(&gs, self.data(b), &mut da, m, n, k);
                    self.acc_slice(a, &da);
                }
                if self.needs(b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn_acc(self.data(a), &gs, &mut db, m, k, n);
                    self.acc_slice(b, &db);
                }
            }
            &Op::MatMulNT(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let f = self.fault_factor(Fault::MatMul);
                let (m, k) = self.dims2(a, "matmul_nt").expect("recorded");
                let n = self.nodes[b].value.rows();
                let gs: Vec<f64> = g.iter().map(|v| v * f).collect();
                if self.needs(a) {
                    let mut da = vec![0.0; m * k];
                    gemm_acc(&gs, self.data(b), &mut da, m, n, k);
                    self.acc_slice(a, &da);
                }
                if self.needs(b) {
                    let mut db = vec![0.0; n * k];
                    gemm_tn_acc(&gs, self.data(a), &mut db, m, n, k);
                    self.acc_slice(b, &db);
                }
            }
            &Op::Transpose(a) => {
                let (m, n) = self.dims2(a, "transpose").expect("recorded");
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[j * m + i];
                    }
                }
                self.acc_slice(a, &da);
            }
            &Op::Add(a, b) => {
                self.acc_slice(a, g);
                self.acc_slice(b, g);
            }
            &Op::Mul(a, b) => {
                if self.needs(a) {
                    let da: Vec<f64> = g.iter().zip(self.data(b)).map(|(g, y)| g * y).collect();
                    self.acc_slice(a, &da);
                }
                if self.needs(b) {
                    let db: Vec<f64> = g.iter().zip(self.data(a)).map(|(g, x)| g * x).collect();
                    self.acc_slice(b, &db);
                }
            }
            &Op::AddRow(x, b) => {
                self.acc_slice(x, g);
                if self.needs(b) {
                    let n = self.nodes[b].value.len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    self.acc_slice(b, &db);
                }
            }
            &Op::Scale(x, c) => {
                self.acc(x, |s| s.iter_mut().zip(g).for_each(|(s, v)| *s += c * v));
            }
            &Op::Relu(x) => {
                let f = self.fault_factor(Fault::Relu);
                let dx: Vec<f64> = self
                    .data(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| if v > 0.0 { g * f } else { 0.0 })
                    .collect();
                self.acc_slice(x, &dx);
            }
            &Op::LeakyRelu(x, slope) => {
                let dx: Vec<f64> = self
                    .data(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
                    .collect();
                self.acc_slice(x, &dx);
            }
            &Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.data();
                let dx: Vec<f64> = y.iter().zip(g).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                self.acc_slice(x, &dx);
            }
            &Op::SoftmaxRows(x) => {
                let f = self.fault_factor(Fault::Softmax);
                let y = self.nodes[idx].value.data();
                let n = self.nodes[idx].value.cols();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = f * yv * (gv - dot);
                    }
                }
                self.acc_slice(x, &dx);
            }
            Op::Norm {
                x,
                gain,
                bias,
                scope,
                xhat,
                inv_std,
            } => {
                let f = self.fault_factor(Fault::Norm);
                let (x, gain, bias) = (*x, *gain, *bias);
                let (m, n) = self.dims2(x, "norm").expect("recorded");
                let group = match scope {
                    NormScope::Row => n,
                    NormScope::All => m * n,
                };
                if self.needs(gain) {
                    let mut dg = vec![0.0; n];
                    for (i, (gv, h)) in g.iter().zip(xhat).enumerate() {
                        dg[i % n] += gv * h;
                    }
                    self.acc_slice(gain, &dg);
                }
                if self.needs(bias) {
                    let mut db = vec![0.0; n];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % n] += gv;
                    }
                    self.acc_slice(bias, &db);
                }
                if self.needs(x) {
                    let gd = self.data(gain).to_vec();
                    let mut dx = vec![0.0; m * n];
                    for (gi, &inv) in inv_std.iter().enumerate() {
                        let range = gi * group..(gi + 1) * group;
                        let dh: Vec<f64> = range.clone().map(|i| g[i] * gd[i % n]).collect();
                        let hs = &xhat[range.clone()];
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hs).map(|(a, b)| a * b).sum();
                        let cnt = group as f64;
                        for ((d, &dhv), &h) in dx[range].iter_mut().zip(&dh).zip(hs) {
                            *d = f * inv / cnt * (cnt * dhv - sum_dh - h * sum_dh_h);
                        }
                    }
                    self.acc_slice(x, &dx);
                }
            }
            &Op::SliceCols { x, start } => {
                let n = self.nodes[x].value.cols();
                let w = self.nodes[idx].value.cols();
                self.acc(x, |s| {
                    for (r, gr) in g.chunks(w).enumerate() {
                        s[r * n + start..r * n + start + w]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(s, v)| *s += v);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = self.nodes[idx].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    self.acc(p, |s| {
                        for (r, sr) in s.chunks_mut(w).enumerate() {
                            sr.iter_mut()
                                .zip(&g[r * n + offset..r * n + offset + w])
                                .for_each(|(s, v)| *s += v);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    self.acc_slice(p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            &Op::MeanRows(x) => {
                let (m, n) = self.dims2(x, "mean_rows").expect("recorded");
                self.acc(x, |s| {
                    for row in s.chunks_mut(n) {
                        row.iter_mut().zip(g).for_each(|(s, v)| *s += v / m as f64);
                    }
                });
            }
            &Op::Reshape(x) => self.acc_slice(x, g),
            Op::Dropout { x, mask } => {
                let dx: Vec<f64> = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.acc_slice(*x, &dx);
            }
            &Op::Sum(x) => self.acc(x, |s| s.iter_mut().for_each(|s| *s += g[0])),
            &Op::Mean(x) => {
                let len = self.nodes[x].value.len() as f64;
                self.acc(x, |s| s.iter_mut().for_each(|s| *s += g[0] / len));
            }
            Op::CrossEntropy { probs, labels } => {
                let probs = *probs;
                let n = self.nodes[probs].value.cols();
                let m = labels.len() as f64;
                let p = self.data(probs);
                let mut dp = vec![0.0; p.len()];
                for (i, &l) in labels.iter().enumerate() {
                    let pv = p[i * n + l];
                    if pv >= PROB_FLOOR {
                        dp[i * n + l] = -g[0] / (m * pv);
                    }
                }
                self.acc_slice(probs, &dp);
            }
            &Op::DiscLoss { real, fake } => {
                let nr = self.nodes[real].value.len() as f64;
                let dr: Vec<f64> = self
                    .data(real)
                    .iter()
                    .map(|&p| if in_prob_range(p) { -g[0] / (nr * p) } else { 0.0 })
                    .collect();
                let nf = self.nodes[fake].value.len() as f64;
                let df: Vec<f64> = self
                    .data(fake)
                    .iter()
                    .map(|&p| if in_prob_range(p) { g[0] / (nf * (1.0 - p)) } else { 0.0 })
                    .collect();
                self.acc_slice(real, &dr);
                self.acc_slice(fake, &df);
            }
            &Op::GenLoss(fake) => {
                let nf = self.nodes[fake].value.len() as f64;
                let df: Vec<f64> = self
                    .data(fake)
                    .iter()
                    .map(|&p| if in_prob_range(p) { -g[0] / (nf * p) } else { 0.0 })
                    .collect();
                self.acc_slice(fake, &df);
            }
        }
        self.nodes[idx].op = op;
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Stable softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn in_prob_range(p: f64) -> bool {
    (PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p)
}
