//! Dynamic tape: every forward op appends a node, `backward` walks the nodes
//! in reverse once and then retires the tape.

use std::sync::Arc;

use super::params::{GradientMap, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatView, OutView, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Constant subtracted inside the positive feature exponent before `exp`.
///
/// Query features tolerate a per-row constant and key features a global one:
/// both cancel in the normalised attention output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stabilizer {
    None,
    RowMax,
    GlobalMax,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, idx: Arc<[usize]> },
    ScatterAddRows { x: Var, idx: Arc<[usize]> },
    ScaleRows { x: Var, w: Var },
    DivRows { x: Var, d: Var },
    RowDot(Var, Var),
    SegmentSoftmax { x: Var, seg: Arc<[usize]> },
    PositiveFeatures { x: Var, omega: Arc<Tensor>, scale: f64 },
    SumAll(Var),
    MeanAll(Var),
    AddN(Vec<Var>),
    BceWithLogits { z: Var, labels: Arc<[f64]> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.is_matrix() {
        Ok((t.rows(), t.cols()))
    } else {
        Err(Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())))
    }
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

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise stabilised softmax, shared by the tape op and plain helpers.
pub(crate) fn softmax_row(input: &[f64], out: &mut [f64]) {
    let max = input.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(input) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Leaf,
            needs_grad: true,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds every parameter in `store`; index the result with `ParamId::index`.
    pub fn bind_all(&mut self, store: &ParamStore) -> Vec<Var> {
        store.ids().map(|id| self.param(store, id)).collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, true)
    }

    /// `a^T * b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, true, false)
    }

    fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = dims(self.value(a), "matmul")?;
        let (br, bc) = dims(self.value(b), "matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!(
                    "inner extents differ: {:?}{} x {:?}{}",
                    self.value(a).shape(),
                    if ta { "^T" } else { "" },
                    self.value(b).shape(),
                    if tb { "^T" } else { "" }
                ),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            MatView::new(self.value(a).data(), m, k, ta),
            MatView::new(self.value(b).data(), k, n, tb),
            OutView::new(&mut out, m, n, false),
            false,
        );
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(a, b, op)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_map(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_map(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_map(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `1 x c` bias to every row of an `r x c` matrix. The only
    /// broadcasting the engine supports.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = dims(self.value(x), "add_row_bias")?;
        if self.shape(bias) != [1, c] {
            return Err(Error::shape(
                "add_row_bias",
                format!("bias {:?} for input {:?}", self.shape(bias), self.shape(x)),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for i in 0..r {
            for (o, bj) in out.row_mut(i).iter_mut().zip(&b) {
                *o += bj;
            }
        }
        let out = Tensor::new(out.shape().to_vec(), out.into_data())?;
        Ok(self.push(out, Op::AddRowBias { x, bias }, &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.map(x, |a| a * factor);
        self.push(t, Op::Scale { x, factor }, &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.map(x, gelu);
        self.push(t, Op::Gelu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::exp);
        self.push(t, Op::Exp(x), &[x])
    }

    /// Natural logarithm; inputs must be positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&a| !(a > 0.0)) {
            return Err(Error::contract("log of a nonpositive value"));
        }
        let t = self.map(x, f64::ln);
        Ok(self.push(t, Op::Log(x), &[x]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims(self.value(x), "softmax_rows")?;
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(v.row(i), &mut out[i * c..(i + 1) * c]);
        }
        let t = Tensor::matrix(r, c, out)?;
        Ok(self.push(t, Op::SoftmaxRows(x), &[x]))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = dims(self.value(x), "layer_norm_rows")?;
        if self.shape(gamma) != [1, c] || self.shape(beta) != [1, c] {
            return Err(Error::shape(
                "layer_norm_rows",
                format!(
                    "gamma {:?}, beta {:?} for input {:?}",
                    self.shape(gamma),
                    self.shape(beta),
                    self.shape(x)
                ),
            ));
        }
        let v = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = v.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::matrix(r, c, out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of nothing"));
        }
        let (r, _) = dims(self.value(parts[0]), "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = dims(self.value(p), "concat_cols")?;
            if pr != r {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {} vs {}", r, pr),
                ));
            }
            total += pc;
        }
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            let pc = v.cols();
            for i in 0..r {
                out[i * total + off..i * total + off + pc].copy_from_slice(v.row(i));
            }
            off += pc;
        }
        let t = Tensor::matrix(r, total, out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims(self.value(x), "slice_cols")?;
        if start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {}..{} of {}", start, start + len, c),
            ));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let t = Tensor::matrix(r, len, out)?;
        Ok(self.push(t, Op::SliceCols { x, start }, &[x]))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (r, c) = dims(self.value(x), "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape(
                "gather_rows",
                format!("row index {} out of {}", bad, r),
            ));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(v.row(i));
        }
        let t = Tensor::matrix(idx.len(), c, out)?;
        Ok(self.push(t, Op::GatherRows { x, idx }, &[x]))
    }

    /// `out[idx[e]] += x[e]` into an `n_out`-row matrix.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Arc<[usize]>, n_out: usize) -> Result<Var> {
        let (r, c) = dims(self.value(x), "scatter_add_rows")?;
        if idx.len() != r {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("{} indices for {} rows", idx.len(), r),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("target row {} out of {}", bad, n_out),
            ));
        }
        let v = self.value(x);
        let mut out = vec![0.0; n_out * c];
        for (e, &t) in idx.iter().enumerate() {
            for (o, a) in out[t * c..(t + 1) * c].iter_mut().zip(v.row(e)) {
                *o += a;
            }
        }
        let t = Tensor::matrix(n_out, c, out)?;
        Ok(self.push(t, Op::ScatterAddRows { x, idx }, &[x]))
    }

    fn check_column(&self, x: Var, w: Var, op: &'static str) -> Result<(usize, usize)> {
        let (r, c) = dims(self.value(x), op)?;
        if self.shape(w) != [r, 1] {
            return Err(Error::shape(
                op,
                format!("weights {:?} for input {:?}", self.shape(w), self.shape(x)),
            ));
        }
        Ok((r, c))
    }

    /// Multiplies row `i` of `x` by `w[i]` (`w` is `r x 1`).
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (r, _) = self.check_column(x, w, "scale_rows")?;
        let mut out = self.value(x).clone();
        let wv = self.value(w).data().to_vec();
        for (i, wi) in wv.iter().enumerate().take(r) {
            for o in out.row_mut(i) {
                *o *= wi;
            }
        }
        let out = Tensor::new(out.shape().to_vec(), out.into_data())?;
        Ok(self.push(out, Op::ScaleRows { x, w }, &[x, w]))
    }

    /// Divides row `i` of `x` by `d[i]` (`d` is `r x 1`).
    pub fn div_rows(&mut self, x: Var, d: Var) -> Result<Var> {
        let (r, _) = self.check_column(x, d, "div_rows")?;
        let mut out = self.value(x).clone();
        let dv = self.value(d).data().to_vec();
        for (i, di) in dv.iter().enumerate().take(r) {
            for o in out.row_mut(i) {
                *o /= di;
            }
        }
        let out = Tensor::new(out.shape().to_vec(), out.into_data())?;
        Ok(self.push(out, Op::DivRows { x, d }, &[x, d]))
    }

    /// Per-row dot product of two equally shaped matrices, as an `r x 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (r, _) = dims(self.value(a), "row_dot")?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = (0..r)
            .map(|i| va.row(i).iter().zip(vb.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        let t = Tensor::matrix(r, 1, out)?;
        Ok(self.push(t, Op::RowDot(a, b), &[a, b]))
    }

    /// Softmax of an `E x 1` column within groups: entries sharing `seg[e]`
    /// are normalised together.
    pub fn segment_softmax(&mut self, x: Var, seg: Arc<[usize]>) -> Result<Var> {
        let (r, c) = dims(self.value(x), "segment_softmax")?;
        if c != 1 || seg.len() != r {
            return Err(Error::shape(
                "segment_softmax",
                format!("input {:?} with {} segment ids", self.shape(x), seg.len()),
            ));
        }
        let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
        let v = self.value(x).data();
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (e, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(v[e]);
        }
        let mut out: Vec<f64> = seg.iter().enumerate().map(|(e, &s)| (v[e] - max[s]).exp()).collect();
        let mut sum = vec![0.0; n_seg];
        for (e, &s) in seg.iter().enumerate() {
            sum[s] += out[e];
        }
        for (e, &s) in seg.iter().enumerate() {
            out[e] /= sum[s];
        }
        let t = Tensor::matrix(r, 1, out)?;
        Ok(self.push(t, Op::SegmentSoftmax { x, seg }, &[x]))
    }

    /// Positive random features `exp(s x w - s^2 |x|^2 / 2 - c) / sqrt(m)` for
    /// each row `x`, with `w` a fixed `d x m` matrix and `c` the stabiliser.
    pub fn positive_features(
        &mut self,
        x: Var,
        omega: Arc<Tensor>,
        scale: f64,
        stabilizer: Stabilizer,
    ) -> Result<Var> {
        let (r, d) = dims(self.value(x), "positive_features")?;
        let (od, m) = dims(&omega, "positive_features")?;
        if od != d || m == 0 {
            return Err(Error::shape(
                "positive_features",
                format!("input {:?} with feature matrix {:?}", self.shape(x), omega.shape()),
            ));
        }
        let v = self.value(x);
        let mut proj = vec![0.0; r * m];
        gemm(
            MatView::new(v.data(), r, d, false),
            MatView::new(omega.data(), d, m, false),
            OutView::new(&mut proj, r, m, false),
            false,
        );
        for i in 0..r {
            let sq: f64 = v.row(i).iter().map(|a| a * a).sum::<f64>() * scale * scale * 0.5;
            for p in &mut proj[i * m..(i + 1) * m] {
                *p = *p * scale - sq;
            }
        }
        match stabilizer {
            Stabilizer::None => {}
            Stabilizer::RowMax => {
                for i in 0..r {
                    let row = &mut proj[i * m..(i + 1) * m];
                    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    row.iter_mut().for_each(|p| *p -= mx);
                }
            }
            Stabilizer::GlobalMax => {
                let mx = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if mx.is_finite() {
                    proj.iter_mut().for_each(|p| *p -= mx);
                }
            }
        }
        let norm = 1.0 / (m as f64).sqrt();
        proj.iter_mut().for_each(|p| *p = p.exp() * norm);
        let t = Tensor::matrix(r, m, proj)?;
        Ok(self.push(t, Op::PositiveFeatures { x, omega, scale }, &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(x), &[x])
    }

    /// Sum of equally shaped tensors, accumulated in argument order.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("add_n of nothing"))?;
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            self.same_shape(first, p, "add_n")?;
            for (a, b) in acc.data_mut().iter_mut().zip(self.value(p).data()) {
                *a += b;
            }
        }
        let acc = Tensor::new(acc.shape().to_vec(), acc.into_data())?;
        Ok(self.push(acc, Op::AddN(parts.to_vec()), parts))
    }

    /// Mean binary cross-entropy of logits against 0/1 labels, evaluated as
    /// `max(z,0) - z*y + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, z: Var, labels: Arc<[f64]>) -> Result<Var> {
        let v = self.value(z);
        if v.numel() != labels.len() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} logits, {} labels", v.numel(), labels.len()),
            ));
        }
        if labels.is_empty() {
            return Err(Error::contract("binary cross-entropy of an empty batch"));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::contract("labels must be 0 or 1"));
        }
        let n = labels.len() as f64;
        let loss = v
            .data()
            .iter()
            .zip(labels.iter())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { z, labels }, &[z]))
    }

    /// Reverse-mode sweep from a scalar `loss`. Every parameter leaf recorded on
    /// this tape gets an entry, zero if the loss does not depend on it. The tape
    /// is retired afterwards; a second call is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<GradientMap> {
        Ok(self.backward_with(loss, &[])?.0)
    }

    /// Like [`Graph::backward`], also returning the gradient of each `wrt`
    /// node (zeros when the loss does not reach it).
    pub fn backward_with(&mut self, loss: Var, wrt: &[Var]) -> Result<(GradientMap, Vec<Tensor>)> {
        if self.consumed {
            return Err(Error::contract(
                "backward already ran on this tape; record a new forward pass",
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = GradientMap::default();
        let mut wrt_grads: Vec<Tensor> = wrt.iter().map(|&v| Tensor::zeros(self.shape(v))).collect();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            for (k, w) in wrt.iter().enumerate() {
                if w.0 == i {
                    wrt_grads[k].data_mut().copy_from_slice(&g);
                }
            }
            if let Some(pid) = node.param {
                out.accumulate(pid, node.value.shape(), &g);
            }
            self.backprop_node(i, &g, &mut grads);
        }
        for node in &self.nodes {
            if let Some(pid) = node.param {
                out.ensure(pid, node.value.shape());
            }
        }
        self.consumed = true;
        for node in &mut self.nodes {
            node.op = Op::Leaf;
        }
        Ok((out, wrt_grads))
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        macro_rules! with_slot {
            ($v:expr, |$s:ident| $body:expr) => {
                if nodes[$v.0].needs_grad {
                    let n = nodes[$v.0].value.numel();
                    let $s: &mut [f64] = grads[$v.0].get_or_insert_with(|| vec![0.0; n]);
                    $body;
                }
            };
        }
        let val = |v: Var| &nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (val(*a), val(*b));
                let (ar, ac) = (va.rows(), va.cols());
                let (br, bc) = (vb.rows(), vb.cols());
                let (m, k) = if *ta { (ac, ar) } else { (ar, ac) };
                let n = if *tb { br } else { bc };
                let gv = MatView::new(g, m, n, false);
                // d op(a) = g * op(b)^T, written through op(a)'s layout.
                with_slot!(*a, |s| gemm(
                    gv,
                    MatView::new(vb.data(), k, n, *tb).t(),
                    OutView::new(s, m, k, *ta),
                    true
                ));
                // d op(b) = op(a)^T * g
                with_slot!(*b, |s| gemm(
                    MatView::new(va.data(), m, k, *ta).t(),
                    gv,
                    OutView::new(s, k, n, *tb),
                    true
                ));
            }
            Op::Add(a, b) => {
                with_slot!(*a, |s| add_into(s, g));
                with_slot!(*b, |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                with_slot!(*a, |s| add_into(s, g));
                with_slot!(*b, |s| s.iter_mut().zip(g).for_each(|(a, b)| *a -= b));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                with_slot!(*a, |s| for j in 0..g.len() {
                    s[j] += g[j] * vb[j];
                });
                with_slot!(*b, |s| for j in 0..g.len() {
                    s[j] += g[j] * va[j];
                });
            }
            Op::AddRowBias { x, bias } => {
                with_slot!(*x, |s| add_into(s, g));
                let c = val(*bias).numel();
                with_slot!(*bias, |s| for (j, gj) in g.iter().enumerate() {
                    s[j % c] += gj;
                });
            }
            Op::Scale { x, factor } => {
                with_slot!(*x, |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b * factor));
            }
            Op::Gelu(x) => {
                let vx = val(*x).data();
                with_slot!(*x, |s| for j in 0..g.len() {
                    s[j] += g[j] * gelu_grad(vx[j]);
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                with_slot!(*x, |s| for j in 0..g.len() {
                    s[j] += g[j] * y[j] * (1.0 - y[j]);
                });
            }
            Op::Exp(x) => {
                let y = node.value.data();
                with_slot!(*x, |s| for j in 0..g.len() {
                    s[j] += g[j] * y[j];
                });
            }
            Op::Log(x) => {
                let vx = val(*x).data();
                with_slot!(*x, |s| for j in 0..g.len() {
                    s[j] += g[j] / vx[j];
                });
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let (r, c) = (y.rows(), y.cols());
                with_slot!(*x, |s| for i in 0..r {
                    let yr = y.row(i);
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        s[i * c + j] += yr[j] * (gr[j] - dot);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = val(*gamma).numel();
                let r = rstd.len();
                let gam = val(*gamma).data();
                with_slot!(*gamma, |s| for (j, gj) in g.iter().enumerate() {
                    s[j % c] += gj * xhat[j];
                });
                with_slot!(*beta, |s| for (j, gj) in g.iter().enumerate() {
                    s[j % c] += gj;
                });
                with_slot!(*x, |s| for i in 0..r {
                    let gr = &g[i * c..(i + 1) * c];
                    let hr = &xhat[i * c..(i + 1) * c];
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..c {
                        let d = gr[j] * gam[j];
                        mean_d += d;
                        mean_dh += d * hr[j];
                    }
                    mean_d /= c as f64;
                    mean_dh /= c as f64;
                    for j in 0..c {
                        let d = gr[j] * gam[j];
                        s[i * c + j] += rstd[i] * (d - mean_d - hr[j] * mean_dh);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let r = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    with_slot!(p, |s| for i in 0..r {
                        add_into(
                            &mut s[i * pc..(i + 1) * pc],
                            &g[i * total + off..i * total + off + pc],
                        );
                    });
                    off += pc;
                }
            }
            Op::SliceCols { x, start } => {
                let c = val(*x).cols();
                let (r, len) = (node.value.rows(), node.value.cols());
                with_slot!(*x, |s| for i in 0..r {
                    add_into(
                        &mut s[i * c + start..i * c + start + len],
                        &g[i * len..(i + 1) * len],
                    );
                });
            }
            Op::GatherRows { x, idx } => {
                let c = node.value.cols();
                with_slot!(*x, |s| for (e, &src) in idx.iter().enumerate() {
                    add_into(&mut s[src * c..(src + 1) * c], &g[e * c..(e + 1) * c]);
                });
            }
            Op::ScatterAddRows { x, idx } => {
                let c = node.value.cols();
                with_slot!(*x, |s| for (e, &t) in idx.iter().enumerate() {
                    add_into(&mut s[e * c..(e + 1) * c], &g[t * c..(t + 1) * c]);
                });
            }
            Op::ScaleRows { x, w } => {
                let vx = val(*x);
                let wv = val(*w).data();
                let c = vx.cols();
                with_slot!(*x, |s| for (i, wi) in wv.iter().enumerate() {
                    for j in 0..c {
                        s[i * c + j] += g[i * c + j] * wi;
                    }
                });
                with_slot!(*w, |s| for i in 0..wv.len() {
                    s[i] += vx.row(i).iter().zip(&g[i * c..(i + 1) * c]).map(|(a, b)| a * b).sum::<f64>();
                });
            }
            Op::DivRows { x, d } => {
                let vx = val(*x);
                let dv = val(*d).data();
                let c = vx.cols();
                with_slot!(*x, |s| for (i, di) in dv.iter().enumerate() {
                    for j in 0..c {
                        s[i * c + j] += g[i * c + j] / di;
                    }
                });
                with_slot!(*d, |s| for (i, di) in dv.iter().enumerate() {
                    let dot: f64 = vx.row(i).iter().zip(&g[i * c..(i + 1) * c]).map(|(a, b)| a * b).sum();
                    s[i] -= dot / (di * di);
                });
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let c = va.cols();
                with_slot!(*a, |s| for (i, gi) in g.iter().enumerate() {
                    for j in 0..c {
                        s[i * c + j] += gi * vb.get(i, j);
                    }
                });
                with_slot!(*b, |s| for (i, gi) in g.iter().enumerate() {
                    for j in 0..c {
                        s[i * c + j] += gi * va.get(i, j);
                    }
                });
            }
            Op::SegmentSoftmax { x, seg } => {
                let y = node.value.data();
                let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for (e, &sg) in seg.iter().enumerate() {
                    dot[sg] += g[e] * y[e];
                }
                with_slot!(*x, |s| for (e, &sg) in seg.iter().enumerate() {
                    s[e] += y[e] * (g[e] - dot[sg]);
                });
            }
            Op::PositiveFeatures { x, omega, scale } => {
                let vx = val(*x);
                let f = &node.value;
                let (r, d) = (vx.rows(), vx.cols());
                let m = f.cols();
                let gf: Vec<f64> = g.iter().zip(f.data()).map(|(a, b)| a * b).collect();
                with_slot!(*x, |s| {
                    let mut tmp = vec![0.0; r * d];
                    gemm(
                        MatView::new(&gf, r, m, false),
                        MatView::new(omega.data(), m, d, true),
                        OutView::new(&mut tmp, r, d, false),
                        false,
                    );
                    for i in 0..r {
                        let rowsum: f64 = gf[i * m..(i + 1) * m].iter().sum();
                        for j in 0..d {
                            s[i * d + j] +=
                                scale * tmp[i * d + j] - scale * scale * vx.get(i, j) * rowsum;
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let g0 = g[0];
                with_slot!(*x, |s| s.iter_mut().for_each(|a| *a += g0));
            }
            Op::MeanAll(x) => {
                let n = val(*x).numel().max(1) as f64;
                let g0 = g[0] / n;
                with_slot!(*x, |s| s.iter_mut().for_each(|a| *a += g0));
            }
            Op::AddN(parts) => {
                for &p in parts {
                    with_slot!(p, |s| add_into(s, g));
                }
            }
            Op::BceWithLogits { z, labels } => {
                let vz = val(*z).data();
                let n = labels.len() as f64;
                let g0 = g[0];
                with_slot!(*z, |s| for (j, y) in labels.iter().enumerate() {
                    s[j] += g0 * (sigmoid(vz[j]) - y) / n;
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
