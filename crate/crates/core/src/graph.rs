//! A small reverse-mode automatic differentiation tape over [`Matrix`].
//!
//! Every forward computation (training or inference) is recorded on a
//! [`Graph`]. Ops panic on shape mismatches: callers validate user-facing
//! shapes before building the graph.

use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Attention-style mask for [`Graph::softmax_rows`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mask {
    /// Entry `(i, j)` is masked when `j > i`.
    pub causal: bool,
    /// Column `j` is masked when `key_valid[j]` is false.
    pub key_valid: Option<Vec<bool>>,
}

impl Mask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn causal() -> Self {
        Self { causal: true, key_valid: None }
    }

    pub fn keys(valid: Vec<bool>) -> Self {
        Self { causal: false, key_valid: Some(valid) }
    }

    #[inline]
    fn allows(&self, i: usize, j: usize) -> bool {
        if self.causal && j > i {
            return false;
        }
        self.key_valid.as_ref().is_none_or(|k| k[j])
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Variable,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    RmsNorm { x: Var, gain: Var, eps: f64 },
    Softmax { x: Var },
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    ScaleRows { x: Var, weights: Var },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    Kld { p: Var, q: Var, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m.data()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node { value, op: Op::Input, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf that is not backed by a [`ParamStore`] entry.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node { value, op: Op::Variable, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Parameter leaf. Repeated calls with the same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: store.get(id).clone(), op: Op::Param, requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        self.push(value, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 × cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (rows, cols) = self.value(a).shape();
        assert_eq!(self.value(b).shape(), (1, cols), "add_row broadcast shape");
        let mut value = self.value(a).clone();
        let row = self.value(b).data().to_vec();
        for r in 0..rows {
            for (v, b) in value.row_mut(r).iter_mut().zip(&row) {
                *v += b;
            }
        }
        self.push(value, Op::AddRow(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(value, Op::Gelu(a), &[a])
    }

    /// Root-mean-square normalisation of each row, scaled by the `1 × cols` gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        assert_eq!(self.value(gain).shape(), (1, cols), "rms_norm gain shape");
        let g = self.value(gain).data();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let inv = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() / cols as f64 + eps).sqrt();
            for (c, out) in value.row_mut(r).iter_mut().enumerate() {
                *out = row[c] * inv * g[c];
            }
        }
        self.push(value, Op::RmsNorm { x, gain, eps }, &[x, gain])
    }

    /// Row-wise softmax. Masked entries receive probability exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Mask) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if let Some(k) = &mask.key_valid {
            assert_eq!(k.len(), cols, "mask width");
        }
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            assert!((0..cols).any(|c| mask.allows(r, c)), "softmax row {r} fully masked");
            let max = (0..cols).filter(|&c| mask.allows(r, c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            let out = value.row_mut(r);
            if !max.is_finite() {
                // Non-finite scores propagate as NaN for the caller to detect.
                out.fill(f64::NAN);
                continue;
            }
            let mut total = 0.0;
            for c in 0..cols {
                if mask.allows(r, c) {
                    out[c] = (row[c] - max).exp();
                    total += out[c];
                }
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        self.push(value, Op::Softmax { x }, &[x])
    }

    /// Selects rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Matrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(value, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let mut value = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            value.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(value, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat_cols row count");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols(), cols, "concat_rows column count");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let value = Matrix::from_vec(rows, cols, data).expect("consistent concat");
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Mean over rows, giving `1 × cols`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let value = self.value(x).mean_rows();
        self.push(value, Op::MeanRows(x), &[x])
    }

    /// Scales row `i` of `x` by `weights[i]`; `weights` is a vector of
    /// length `rows(x)` in either orientation.
    pub fn scale_rows(&mut self, x: Var, weights: Var) -> Var {
        let xv = self.value(x);
        let w = self.value(weights).data();
        assert_eq!(w.len(), xv.rows(), "scale_rows weight count");
        let mut value = xv.clone();
        for (r, &wr) in w.iter().enumerate() {
            for v in value.row_mut(r) {
                *v *= wr;
            }
        }
        self.push(value, Op::ScaleRows { x, weights }, &[x, weights])
    }

    /// Summed token cross-entropy `Σ_r −log softmax(logits_r)[targets_r]`, as `1 × 1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per logit row");
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            loss += log_sum_exp(lv.row(r)) - lv.get(r, t);
        }
        let value = Matrix::from_vec(1, 1, vec![loss]).unwrap();
        self.push(value, Op::CrossEntropy { logits, targets: targets.to_vec() }, &[logits])
    }

    /// `KL(p ‖ q)` after ε-smoothing and renormalising both vectors, as `1 × 1`.
    pub fn kld(&mut self, p: Var, q: Var, eps: f64) -> Var {
        let ps = smooth(self.value(p).data(), eps).0;
        let qs = smooth(self.value(q).data(), eps).0;
        assert_eq!(ps.len(), qs.len(), "kld length");
        let loss: f64 = ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum();
        let value = Matrix::from_vec(1, 1, vec![loss]).unwrap();
        self.push(value, Op::Kld { p, q, eps }, &[p, q])
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]).unwrap());

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Input | Op::Variable | Op::Param) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Input | Op::Variable | Op::Param => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, dy.matmul_bt(bv));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, av.matmul_at(&dy));
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, dy.matmul(bv));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, dy.matmul_at(av));
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, dy.transpose()),
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, dy.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, dy);
                    }
                }
                Op::AddRow(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, dy.mean_rows().map(|v| v * dy.rows() as f64));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, dy);
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, dy.map(|v| v * s)),
                Op::Tanh(a) => {
                    let mut g = dy;
                    for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
                        *gv *= 1.0 - yv * yv;
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Gelu(a) => {
                    let mut g = dy;
                    for (gv, &x) in g.data_mut().iter_mut().zip(self.value(*a).data()) {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *gv *= d;
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::RmsNorm { x, gain, eps } => {
                    let xv = self.value(*x);
                    let g = self.value(*gain).data();
                    let (rows, cols) = xv.shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dg = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        let row = xv.row(r);
                        let dyr = dy.row(r);
                        let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64 + eps;
                        let inv = 1.0 / ms.sqrt();
                        let proj: f64 = (0..cols).map(|c| dyr[c] * g[c] * row[c]).sum();
                        let coef = inv * inv * inv / cols as f64 * proj;
                        for c in 0..cols {
                            dx.row_mut(r)[c] = g[c] * dyr[c] * inv - row[c] * coef;
                            dg.data_mut()[c] += dyr[c] * row[c] * inv;
                        }
                    }
                    if self.needs(*gain) {
                        accumulate(&mut grads, *gain, dg);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Softmax { x, .. } => {
                    let mut g = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dyr = dy.row(r);
                        let inner = dot(yr, dyr);
                        for (c, out) in g.row_mut(r).iter_mut().enumerate() {
                            *out = yr[c] * (dyr[c] - inner);
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut g = Matrix::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, d) in g.row_mut(id).iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                    accumulate(&mut grads, *table, g);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut g = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        g.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.value(*p).cols();
                        if self.needs(*p) {
                            let mut g = Matrix::zeros(dy.rows(), pc);
                            for r in 0..dy.rows() {
                                g.row_mut(r).copy_from_slice(&dy.row(r)[offset..offset + pc]);
                            }
                            accumulate(&mut grads, *p, g);
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (pr, pc) = self.value(*p).shape();
                        if self.needs(*p) {
                            let slice = dy.data()[offset * pc..(offset + pr) * pc].to_vec();
                            accumulate(&mut grads, *p, Matrix::from_vec(pr, pc, slice).unwrap());
                        }
                        offset += pr;
                    }
                }
                Op::MeanRows(x) => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut g = Matrix::zeros(rows, cols);
                    let scale = 1.0 / rows as f64;
                    for r in 0..rows {
                        for (o, d) in g.row_mut(r).iter_mut().zip(dy.data()) {
                            *o = d * scale;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::ScaleRows { x, weights } => {
                    let xv = self.value(*x);
                    let wv = self.value(*weights);
                    if self.needs(*weights) {
                        let dw: Vec<f64> = (0..xv.rows()).map(|r| dot(xv.row(r), dy.row(r))).collect();
                        accumulate(&mut grads, *weights, Matrix::from_vec(wv.rows(), wv.cols(), dw).unwrap());
                    }
                    if self.needs(*x) {
                        let mut g = dy;
                        for (r, &w) in wv.data().iter().enumerate() {
                            for v in g.row_mut(r) {
                                *v *= w;
                            }
                        }
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::CrossEntropy { logits, targets } => {
                    let lv = self.value(*logits);
                    let scale = dy.data()[0];
                    let mut g = Matrix::zeros(lv.rows(), lv.cols());
                    for (r, &t) in targets.iter().enumerate() {
                        let row = lv.row(r);
                        let lse = log_sum_exp(row);
                        for (c, out) in g.row_mut(r).iter_mut().enumerate() {
                            *out = scale * ((row[c] - lse).exp() - if c == t { 1.0 } else { 0.0 });
                        }
                    }
                    accumulate(&mut grads, *logits, g);
                }
                Op::Kld { p, q, eps } => {
                    let scale = dy.data()[0];
                    let pv = self.value(*p);
                    let qv = self.value(*q);
                    let (ps, p_total) = smooth(pv.data(), *eps);
                    let (qs, q_total) = smooth(qv.data(), *eps);
                    // dL/dp̃ and dL/dq̃, then through the renormalisation.
                    let gp: Vec<f64> = ps.iter().zip(&qs).map(|(a, b)| (a / b).ln() + 1.0).collect();
                    let gq: Vec<f64> = ps.iter().zip(&qs).map(|(a, b)| -a / b).collect();
                    if self.needs(*p) {
                        let inner = dot(&gp, &ps);
                        let d = gp.iter().map(|g| scale * (g - inner) / p_total).collect();
                        accumulate(&mut grads, *p, Matrix::from_vec(pv.rows(), pv.cols(), d).unwrap());
                    }
                    if self.needs(*q) {
                        let inner = dot(&gq, &qs);
                        let d = gq.iter().map(|g| scale * (g - inner) / q_total).collect();
                        accumulate(&mut grads, *q, Matrix::from_vec(qv.rows(), qv.cols(), d).unwrap());
                    }
                }
            }
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parameter leaves present in this graph.
    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(id, v)| (*id, *v))
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `(p + ε) / Σ(p + ε)` together with the normaliser.
fn smooth(p: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let total: f64 = p.iter().map(|v| v + eps).sum();
    (p.iter().map(|v| (v + eps) / total).collect(), total)
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Adds every parameter gradient into `buffers` (aligned with the store).
    pub fn accumulate_into(&self, graph: &Graph, buffers: &mut [Matrix]) {
        for (id, var) in graph.param_vars() {
            if let Some(g) = self.wrt(var) {
                buffers[id.index()].add_assign(g);
            }
        }
    }
}
