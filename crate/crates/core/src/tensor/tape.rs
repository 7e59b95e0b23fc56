//! Define-by-run gradient tape.
//!
//! A [`Tape`] records every operation of one forward pass. [`Tape::backward`]
//! replays the records in reverse and accumulates a gradient per node. The
//! tape is single-writer and is thrown away after the optimizer step.

use super::{gelu, gelu_grad, matmul_nn, matmul_nt, matmul_tn, transpose, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// a[m×k] · b[k×n]
    Matmul { a: Var, b: Var },
    /// a[m×k] · b[j×k]ᵀ
    MatmulNT { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    /// x[m×n] + bias[n] broadcast over rows
    AddRowBias { x: Var, bias: Var },
    SoftmaxRows { x: Var },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Saved per-row 1/sqrt(var + eps).
        inv_std: Vec<f64>,
        /// Saved normalized input (before gamma/beta).
        normed: Vec<f64>,
    },
    Gelu { x: Var },
    MeanRows { x: Var },
    MeanAll { x: Var },
    Sum { x: Var },
    ConcatCols { parts: Vec<Var> },
    ConcatRows { parts: Vec<Var> },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records one forward pass for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf value (input or parameter). The tensor is copied in.
    pub fn leaf(&mut self, value: &Tensor) -> Var {
        self.push(Op::Leaf, value.clone())
    }

    /// Value of a recorded node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if !t.is_scalar() {
            return Err(Error::Contract(format!(
                "expected scalar, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    // -- ops ----------------------------------------------------------------

    /// `a[m×k] · b[k×n]`, gradients dA = G·Bᵀ and dB = Aᵀ·G.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (kb, n) = (tb.rows(), tb.cols());
        if k != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = matmul_nn(ta.data(), tb.data(), m, k, n);
        let value = Tensor::matrix(m, n, data)?;
        Ok(self.push(Op::Matmul { a, b }, value))
    }

    /// `a[m×k] · b[j×k]ᵀ`, the transposed product used by attention scores.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (j, kb) = (tb.rows(), tb.cols());
        if k != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = matmul_nt(ta.data(), tb.data(), m, k, j);
        let value = Tensor::matrix(m, j, data)?;
        Ok(self.push(Op::MatmulNT { a, b }, value))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let data = transpose(t.data(), r, c);
        let value = Tensor::matrix(c, r, data).expect("transpose shape");
        self.push(Op::Transpose { x }, value)
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * c).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("scale shape");
        self.push(Op::Scale { x, c }, value)
    }

    /// Adds a rank-1 bias of length `n` to every row of `x[m×n]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (m, n) = (tx.rows(), tx.cols());
        if tb.shape().len() != 1 || tb.numel() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let _ = m;
        Ok(self.push(Op::AddRowBias { x, bias }, value))
    }

    /// Row-wise softmax with max subtraction for overflow safety.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("softmax shape");
        self.push(Op::SoftmaxRows { x }, value)
    }

    /// Per-row normalization to zero mean / unit variance (eps-regularized),
    /// then scale by `gamma` and shift by `beta` (both rank-1 of length n).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.cols();
        if tg.numel() != n || tb.numel() != n {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let rows = tx.rows();
        let mut normed = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let xn = (row[j] - mean) * is;
                normed[r * n + j] = xn;
                out[r * n + j] = tg.data()[j] * xn + tb.data()[j];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
                normed,
            },
            value,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| gelu(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("gelu shape");
        self.push(Op::Gelu { x }, value)
    }

    /// Column-wise mean over rows: `[m×n] -> [1×n]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; n];
        for row in t.data().chunks(n) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= m as f64;
        }
        let value = Tensor::matrix(1, n, out).expect("mean_rows shape");
        self.push(Op::MeanRows { x }, value)
    }

    /// Mean over every element, producing a scalar.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mean = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::MeanAll { x }, Tensor::scalar(mean))
    }

    /// Sum over every element, producing a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>();
        self.push(Op::Sum { x }, Tensor::scalar(s))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols needs at least one part".into()));
        }
        let m = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            total += t.cols();
        }
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for r in 0..m {
                data[r * total + offset..r * total + offset + c]
                    .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let value = Tensor::matrix(m, total, data)?;
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    /// Stacks matrices with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows needs at least one part".into()));
        }
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(rows, n, data)?;
        Ok(self.push(
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    // -- backward -----------------------------------------------------------

    /// Reverse pass from a scalar loss. Returns one gradient per node;
    /// nodes not on a path to the loss get exact zeros.
    ///
    /// The pass reads the tape but leaves it untouched, so several losses
    /// recorded on one tape can each be differentiated independently.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], v: Var, delta_shape: &[usize], delta: &[f64]) {
        let slot = &mut grads[v.0];
        match slot {
            Some(t) => {
                debug_assert_eq!(t.shape(), delta_shape);
                for (a, &b) in t.data_mut().iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => {
                *slot = Some(Tensor::new(delta_shape.to_vec(), delta.to_vec()).expect("grad shape"));
            }
        }
    }

    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G·Bᵀ, dB = Aᵀ·G
                let da = matmul_nt(g.data(), tb.data(), m, n, k);
                let db = matmul_tn(ta.data(), g.data(), m, k, n);
                self.add_grad(grads, *a, ta.shape(), &da);
                self.add_grad(grads, *b, tb.shape(), &db);
            }
            Op::MatmulNT { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, j) = (ta.rows(), ta.cols(), tb.rows());
                // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                let da = matmul_nn(g.data(), tb.data(), m, j, k);
                let db = matmul_tn(g.data(), ta.data(), m, j, k);
                self.add_grad(grads, *a, ta.shape(), &da);
                self.add_grad(grads, *b, tb.shape(), &db);
            }
            Op::Transpose { x } => {
                let tx = self.value(*x);
                let gt = transpose(g.data(), g.rows(), g.cols());
                self.add_grad(grads, *x, tx.shape(), &gt);
            }
            Op::Add { a, b } => {
                self.add_grad(grads, *a, g.shape(), g.data());
                self.add_grad(grads, *b, g.shape(), g.data());
            }
            Op::Sub { a, b } => {
                self.add_grad(grads, *a, g.shape(), g.data());
                let neg: Vec<f64> = g.data().iter().map(|&v| -v).collect();
                self.add_grad(grads, *b, g.shape(), &neg);
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da: Vec<f64> = g.data().iter().zip(tb.data()).map(|(&g, &b)| g * b).collect();
                let db: Vec<f64> = g.data().iter().zip(ta.data()).map(|(&g, &a)| g * a).collect();
                self.add_grad(grads, *a, ta.shape(), &da);
                self.add_grad(grads, *b, tb.shape(), &db);
            }
            Op::Scale { x, c } => {
                let tx = self.value(*x);
                let dx: Vec<f64> = g.data().iter().map(|&v| v * c).collect();
                self.add_grad(grads, *x, tx.shape(), &dx);
            }
            Op::AddRowBias { x, bias } => {
                let (tx, tb) = (self.value(*x), self.value(*bias));
                let n = tx.cols();
                self.add_grad(grads, *x, tx.shape(), g.data());
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                self.add_grad(grads, *bias, tb.shape(), &db);
            }
            Op::SoftmaxRows { x } => {
                let tx = self.value(*x);
                let y = &self.nodes[idx].value;
                let n = y.cols();
                let mut dx = vec![0.0; y.numel()];
                for (r, (yrow, grow)) in y.data().chunks(n).zip(g.data().chunks(n)).enumerate() {
                    let dot: f64 = yrow.iter().zip(grow).map(|(&y, &g)| y * g).sum();
                    for j in 0..n {
                        dx[r * n + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.add_grad(grads, *x, tx.shape(), &dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
                normed,
            } => {
                let (tx, tg, tb) = (self.value(*x), self.value(*gamma), self.value(*beta));
                let n = tx.cols();
                let rows = tx.rows();
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut dx = vec![0.0; tx.numel()];
                for r in 0..rows {
                    let grow = &g.data()[r * n..(r + 1) * n];
                    let xhat = &normed[r * n..(r + 1) * n];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..n {
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        let dxhat = grow[j] * tg.data()[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat[j];
                    }
                    mean_dxhat /= n as f64;
                    mean_dxhat_xhat /= n as f64;
                    for j in 0..n {
                        let dxhat = grow[j] * tg.data()[j];
                        dx[r * n + j] =
                            inv_std[r] * (dxhat - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                self.add_grad(grads, *x, tx.shape(), &dx);
                self.add_grad(grads, *gamma, tg.shape(), &dgamma);
                self.add_grad(grads, *beta, tb.shape(), &dbeta);
            }
            Op::Gelu { x } => {
                let tx = self.value(*x);
                let dx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(&g, &x)| g * gelu_grad(x))
                    .collect();
                self.add_grad(grads, *x, tx.shape(), &dx);
            }
            Op::MeanRows { x } => {
                let tx = self.value(*x);
                let (m, n) = (tx.rows(), tx.cols());
                let scale = 1.0 / m as f64;
                let mut dx = vec![0.0; tx.numel()];
                for r in 0..m {
                    for j in 0..n {
                        dx[r * n + j] = g.data()[j] * scale;
                    }
                }
                self.add_grad(grads, *x, tx.shape(), &dx);
            }
            Op::MeanAll { x } => {
                let tx = self.value(*x);
                let scale = g.data()[0] / tx.numel() as f64;
                let dx = vec![scale; tx.numel()];
                self.add_grad(grads, *x, tx.shape(), &dx);
            }
            Op::Sum { x } => {
                let tx = self.value(*x);
                let dx = vec![g.data()[0]; tx.numel()];
                self.add_grad(grads, *x, tx.shape(), &dx);
            }
            Op::ConcatCols { parts } => {
                let total = self.nodes[idx].value.cols();
                let m = self.nodes[idx].value.rows();
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let c = tp.cols();
                    let mut dp = vec![0.0; tp.numel()];
                    for r in 0..m {
                        dp[r * c..(r + 1) * c]
                            .copy_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    self.add_grad(grads, p, tp.shape(), &dp);
                    offset += c;
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let len = tp.numel();
                    self.add_grad(grads, p, tp.shape(), &g.data()[offset..offset + len]);
                    offset += len;
                }
            }
        }
    }
}

/// Gradients produced by one [`Tape::backward`] call, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v` if it lies on a path to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, exact zeros when `v` does not reach the loss.
    pub fn get_or_zero(&self, v: Var, tape: &Tape) -> Tensor {
        match self.grads[v.0].as_ref() {
            Some(t) => t.clone(),
            None => Tensor::zeros(tape.value(v).shape().to_vec()),
        }
    }
}
