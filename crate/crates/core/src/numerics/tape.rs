//! Reverse-mode differentiation over [`Tensor2`] values.
//!
//! Every differentiable operation appends one node to the [`Tape`] holding
//! its output value and whatever the backward rule needs. [`Tape::backward`]
//! walks the nodes in exact reverse order of execution.

use super::param::{ParamId, ParamSet};
use super::tensor::{Mask, Tensor2};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor2,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor2,
    },
    BceLogits {
        logits: Var,
        targets: Tensor2,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
}

/// Append-only record of a forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, ParamId)>,
}

/// Gradients of one scalar with respect to every tape value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn dim_err(op: &'static str, a: &Tensor2, b: &Tensor2) -> Error {
    Error::Dimension {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax restricted to the entries `mask` allows. Disallowed
/// entries come out exactly zero.
pub fn masked_row_softmax(scores: &Tensor2, mask: Option<&Mask>) -> Result<Tensor2> {
    if let Some(m) = mask {
        if m.shape() != scores.shape() {
            return Err(Error::Dimension {
                op: "masked_row_softmax",
                left: scores.shape(),
                right: m.shape(),
            });
        }
    }
    let allowed = |r: usize, c: usize| mask.is_none_or(|m| m.allowed(r, c));
    let mut out = Tensor2::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        let row = scores.row(r);
        let max = (0..row.len())
            .filter(|&c| allowed(r, c))
            .map(|c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateMask { row: r });
        }
        let o = out.row_mut(r);
        let mut sum = 0.0;
        for c in 0..row.len() {
            if allowed(r, c) {
                let e = (row[c] - max).exp();
                o[c] = e;
                sum += e;
            }
        }
        for v in o.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite value produced by {}", op_name(&op))));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Records a constant input (no gradient flows anywhere from it).
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Records the current value of a parameter as a leaf.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let v = self.constant(params.value(id).clone());
        self.params.push((v, id));
        v
    }

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.params.iter().copied()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err("add", ta, tb));
        }
        let out = ta.zip_map(tb, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 × cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(dim_err("add_row", tx, tb));
        }
        let mut out = tx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, bias))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err("mul", ta, tb));
        }
        let out = ta.zip_map(tb, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Smooth GELU nonlinearity (tanh approximation).
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// `x · w + b` with `b` a `1 × out` bias row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn masked_row_softmax(&mut self, scores: Var, mask: Option<&Mask>) -> Result<Var> {
        let out = masked_row_softmax(self.value(scores), mask)?;
        self.push(out, Op::Softmax(scores))
    }

    /// Per-row feature normalization with learned `1 × cols` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tg.shape() != (1, tx.cols()) {
            return Err(dim_err("layer_norm", tx, tg));
        }
        if tb.shape() != (1, tx.cols()) {
            return Err(dim_err("layer_norm", tx, tb));
        }
        let n = tx.cols() as f64;
        let mut xhat = Tensor2::zeros(tx.rows(), tx.cols());
        let mut out = Tensor2::zeros(tx.rows(), tx.cols());
        let mut inv_std = Vec::with_capacity(tx.rows());
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..row.len() {
                let h = (row[c] - mean) * inv;
                xhat.set(r, c, h);
                out.set(r, c, h * tg.data()[c] + tb.data()[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor2::concat_cols(&tensors)?;
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Mean over rows of `−log softmax(logits)[target]`, as a `1 × 1` value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if targets.len() != tl.rows() {
            return Err(Error::Label(format!(
                "{} targets for {} logit rows",
                targets.len(),
                tl.rows()
            )));
        }
        if tl.rows() == 0 {
            return Err(Error::Label("cross entropy over zero rows".into()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= tl.cols()) {
            return Err(Error::Label(format!(
                "target {bad} out of range for {} classes",
                tl.cols()
            )));
        }
        let probs = masked_row_softmax(tl, None)?;
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = tl.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += lse - row[t];
        }
        loss /= targets.len() as f64;
        self.push(
            Tensor2::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor2) -> Result<Var> {
        let tl = self.value(logits);
        if tl.shape() != targets.shape() {
            return Err(dim_err("bce_with_logits", tl, targets));
        }
        let n = tl.data().len();
        if n == 0 {
            return Err(Error::Label("binary cross entropy over zero entries".into()));
        }
        let loss = tl
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n as f64;
        self.push(
            Tensor2::scalar(loss),
            Op::BceLogits {
                logits,
                targets: targets.clone(),
            },
        )
    }

    /// Reverse pass from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                left: out.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor2>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Tensor2::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b))?;
                    let gb = self.value(*a).matmul_tn(&g)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    // out = A Bᵀ: dA = G B, dB = Gᵀ A
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.matmul_tn(self.value(*a))?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(x, bias) => {
                    let mut gb = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *bias, gb);
                    acc(&mut grads, *x, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |gv, bv| gv * bv);
                    let gb = g.zip_map(self.value(*a), |gv, av| gv * av);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|v| v * s)),
                Op::Gelu(a) => {
                    let ga = g.zip_map(self.value(*a), |gv, x| gv * gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Tensor2::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (o, (p, q)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = p * (q - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let tg = self.value(*gamma);
                    let cols = xhat.cols();
                    let n = cols as f64;
                    let mut gx = Tensor2::zeros(xhat.rows(), cols);
                    let mut ggamma = Tensor2::zeros(1, cols);
                    let mut gbeta = Tensor2::zeros(1, cols);
                    for r in 0..xhat.rows() {
                        let (h, gr) = (xhat.row(r), g.row(r));
                        let dh: Vec<f64> = gr.iter().zip(tg.data()).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                        let inv = inv_std[r];
                        for c in 0..cols {
                            gx.set(r, c, inv / n * (n * dh[c] - sum_dh - h[c] * sum_dh_h));
                        }
                        for c in 0..cols {
                            ggamma.data_mut()[c] += gr[c] * h[c];
                            gbeta.data_mut()[c] += gr[c];
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        acc(&mut grads, *p, g.slice_cols(start, w));
                        start += w;
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = g.item() / targets.len() as f64;
                    let mut gl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let v = gl.get(r, t);
                        gl.set(r, t, v - 1.0);
                    }
                    acc(&mut grads, *logits, gl.map(|v| v * scale));
                }
                Op::BceLogits { logits, targets } => {
                    let scale = g.item() / targets.data().len() as f64;
                    let gl = self.value(*logits).zip_map(targets, |x, y| (sigmoid(x) - y) * scale);
                    acc(&mut grads, *logits, gl);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulNt(..) => "matmul_nt",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Gelu(..) => "gelu",
        Op::Sigmoid(..) => "sigmoid",
        Op::Softmax(..) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::ConcatCols(..) => "concat_cols",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::BceLogits { .. } => "bce_with_logits",
    }
}
