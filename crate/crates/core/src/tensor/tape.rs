//! Dynamic tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and enough context to
//! compute the vector-Jacobian product later. Nodes are only ever appended,
//! so reverse index order is a valid topological order for the backward pass.

use std::ops::Range;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::kernels::{matmul_into, matmul_nt_into, matmul_tn_into};
use super::{Tensor, Tridiagonal};

const GELU_COEFF: f64 = 0.044715;
// sqrt(2 / pi)
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_SCALE * (x + GELU_COEFF * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_SCALE * (x + GELU_COEFF * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_SCALE * (1.0 + 3.0 * GELU_COEFF * x * x)
}

/// Row ranges averaged by uniform pooling of `n` rows into `m` rows.
///
/// Range `j` is `[floor(j·n/m), max(floor((j+1)·n/m), floor(j·n/m)+1))`,
/// clamped to `n`. Every range is non-empty, so `n < m` replicates rows and
/// `n >= m` averages contiguous blocks.
pub fn pool_segments(n: usize, m: usize) -> Vec<Range<usize>> {
    (0..m)
        .map(|j| {
            let start = (j * n / m).min(n - 1);
            let end = ((j + 1) * n / m).max(start + 1).min(n);
            start..end
        })
        .collect()
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Propagate(Var, Rc<Tridiagonal>),
    Pool(Var, Vec<Range<usize>>),
    Rmse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every tracked leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a tracked leaf; `None` for untracked or intermediate nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a tracked leaf, or zeros of the leaf's shape when the
    /// loss does not depend on it.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()))
    }
}

/// Append-only record of a differentiable computation.
#[derive(Debug, Default)]
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

    /// Tracked leaf: gradients will be reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).as_matrix(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.tracks(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul_nt")?;
        let (n, k2) = self.matrix(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.tracks(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNT(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(op, self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.tracks(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.tracks(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b), rg))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "add_row")?;
        if self.value(bias).numel() != n {
            return Err(Error::dim("add_row", self.value(x).shape(), self.value(bias).shape()));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let rg = self.tracks(&[x, bias]);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * s).collect();
        let shape = t.shape().to_vec();
        let rg = self.tracks(&[x]);
        self.push(Tensor::from_parts(shape, data), Op::Scale(x, s), rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        let rg = self.tracks(&[x]);
        self.push(Tensor::from_parts(shape, data), op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "softmax_rows")?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.tracks(&[x]);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::SoftmaxRows(x), rg))
    }

    /// Per-row standardisation (population variance plus `eps`) followed by
    /// an elementwise gain and bias.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.matrix(x, "layer_norm_rows")?;
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("layer norm eps must be > 0, got {eps}")));
        }
        for p in [gain, bias] {
            if self.value(p).numel() != n {
                return Err(Error::dim("layer_norm_rows", self.value(x).shape(), self.value(p).shape()));
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(m);
        let mut out = vec![0.0; m * n];
        for (row, out_row) in xhat.chunks_mut(n).zip(out.chunks_mut(n)) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for ((v, o), (gv, bv)) in row.iter_mut().zip(out_row).zip(g.iter().zip(b)) {
                *v = (*v - mean) * is;
                *o = *v * gv + bv;
            }
        }
        let rg = self.tracks(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.tracks(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (m, _) = self.matrix(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix(p, "concat_cols")?;
            if r != m {
                return Err(Error::dim("concat_cols", self.value(first).shape(), self.value(p).shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.tracks(parts);
        Ok(self.push(
            Tensor::from_parts(vec![m, total], data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let (_, n) = self.matrix(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.matrix(p, "concat_rows")?;
            if c != n {
                return Err(Error::dim("concat_rows", self.value(first).shape(), self.value(p).shape()));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.tracks(parts);
        Ok(self.push(
            Tensor::from_parts(vec![rows, n], data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.matrix(x, "slice_cols")?;
        if width == 0 || start + width > n {
            return Err(Error::dim("slice_cols", &[m, n], &[start, width]));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(m * width);
        for r in 0..m {
            data.extend_from_slice(&t.row(r)[start..start + width]);
        }
        let rg = self.tracks(&[x]);
        Ok(self.push(Tensor::from_parts(vec![m, width], data), Op::SliceCols(x, start), rg))
    }

    /// Rows `start..start + count`.
    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (m, n) = self.matrix(x, "slice_rows")?;
        if count == 0 || start + count > m {
            return Err(Error::dim("slice_rows", &[m, n], &[start, count]));
        }
        let data = self.value(x).data()[start * n..(start + count) * n].to_vec();
        let rg = self.tracks(&[x]);
        Ok(self.push(Tensor::from_parts(vec![count, n], data), Op::SliceRows(x, start), rg))
    }

    /// `P · x` for a tridiagonal propagation matrix `P`.
    pub fn propagate(&mut self, p: Rc<Tridiagonal>, x: Var) -> Result<Var> {
        let (n, c) = self.matrix(x, "propagate")?;
        if n != p.n() {
            return Err(Error::dim("propagate", &[p.n(), p.n()], self.value(x).shape()));
        }
        let mut out = vec![0.0; n * c];
        p.apply_into(self.value(x).data(), &mut out, c);
        let rg = self.tracks(&[x]);
        Ok(self.push(Tensor::from_parts(vec![n, c], out), Op::Propagate(x, p), rg))
    }

    /// Uniform pooling of the rows of `x` into `m` rows (see [`pool_segments`]).
    pub fn pool_rows(&mut self, x: Var, m: usize) -> Result<Var> {
        if m == 0 {
            return Err(Error::Domain("pooled node count must be >= 1".into()));
        }
        let (n, c) = self.matrix(x, "pool_rows")?;
        let segments = pool_segments(n, m);
        let t = self.value(x);
        let mut data = vec![0.0; m * c];
        for (out_row, seg) in data.chunks_mut(c).zip(&segments) {
            let w = 1.0 / seg.len() as f64;
            for r in seg.clone() {
                for (o, &v) in out_row.iter_mut().zip(t.row(r)) {
                    *o += v;
                }
            }
            for o in out_row.iter_mut() {
                *o *= w;
            }
        }
        let rg = self.tracks(&[x]);
        Ok(self.push(Tensor::from_parts(vec![m, c], data), Op::Pool(x, segments), rg))
    }

    /// `sqrt(mean((pred - target)²))` over all elements.
    pub fn rmse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "rmse")?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let mse = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64;
        let rg = self.tracks(&[pred, target]);
        Ok(self.push(Tensor::scalar(mse.sqrt()), Op::Rmse(pred, target), rg))
    }

    /// Reverse pass from a one-element `loss`. Every call starts from zeroed
    /// gradient buffers.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = node.op {
                leaf_grads[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            self.propagate_grad(node, &g, &mut grads);
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate_grad(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = out.cols();
                if let Some(ga) = self.grad_slot(grads, *a) {
                    matmul_nt_into(g, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    matmul_tn_into(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = out.cols();
                if let Some(ga) = self.grad_slot(grads, *a) {
                    matmul_into(g, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    matmul_tn_into(g, self.value(*a).data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.grad_slot(grads, *v) {
                        axpy(gv, g, 1.0);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                let n = out.cols();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    axpy(gx, g, 1.0);
                }
                if let Some(gb) = self.grad_slot(grads, *bias) {
                    for row in g.chunks(n) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    axpy(gx, g, *s);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for ((o, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for ((o, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                        *o += gi * gelu_grad(*xi);
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let n = out.cols();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for ((gx_row, g_row), y_row) in
                        gx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n))
                    {
                        let dot: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                        for ((o, gi), yi) in gx_row.iter_mut().zip(g_row).zip(y_row) {
                            *o += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = out.cols();
                if let Some(gg) = self.grad_slot(grads, *gain) {
                    for (g_row, xh_row) in g.chunks(n).zip(xhat.chunks(n)) {
                        for ((o, gi), xh) in gg.iter_mut().zip(g_row).zip(xh_row) {
                            *o += gi * xh;
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *bias) {
                    for g_row in g.chunks(n) {
                        axpy(gb, g_row, 1.0);
                    }
                }
                let gain_v = self.value(*gain).data();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let mut dxhat = vec![0.0; n];
                    for (((gx_row, g_row), xh_row), is) in gx
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(xhat.chunks(n))
                        .zip(inv_std)
                    {
                        for ((d, gi), gn) in dxhat.iter_mut().zip(g_row).zip(gain_v) {
                            *d = gi * gn;
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx =
                            dxhat.iter().zip(xh_row).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for ((o, d), xh) in gx_row.iter_mut().zip(&dxhat).zip(xh_row) {
                            *o += is * (d - mean_d - xh * mean_dx);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        for (gp_row, g_row) in gp.chunks_mut(w).zip(g.chunks(total)) {
                            axpy(gp_row, &g_row[offset..offset + w], 1.0);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        axpy(gp, &g[offset..offset + len], 1.0);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let w = out.cols();
                let n = self.value(*x).cols();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for (gx_row, g_row) in gx.chunks_mut(n).zip(g.chunks(w)) {
                        axpy(&mut gx_row[*start..start + w], g_row, 1.0);
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let n = out.cols();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    axpy(&mut gx[start * n..start * n + g.len()], g, 1.0);
                }
            }
            Op::Propagate(x, p) => {
                let c = out.cols();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    p.apply_transpose_into(g, gx, c);
                }
            }
            Op::Pool(x, segments) => {
                let c = out.cols();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for (g_row, seg) in g.chunks(c).zip(segments) {
                        let w = 1.0 / seg.len() as f64;
                        for r in seg.clone() {
                            axpy(&mut gx[r * c..(r + 1) * c], g_row, w);
                        }
                    }
                }
            }
            Op::Rmse(pred, target) => {
                let r = out.data()[0];
                if r == 0.0 {
                    // subgradient 0 at the minimum
                    return;
                }
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let coef = g[0] / (p.len() as f64 * r);
                if let Some(gp) = self.grad_slot(grads, *pred) {
                    for ((o, pi), ti) in gp.iter_mut().zip(p).zip(t) {
                        *o += coef * (pi - ti);
                    }
                }
                if let Some(gt) = self.grad_slot(grads, *target) {
                    for ((o, pi), ti) in gt.iter_mut().zip(p).zip(t) {
                        *o -= coef * (pi - ti);
                    }
                }
            }
        }
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
