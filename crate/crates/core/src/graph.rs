//! Reverse-mode automatic differentiation over a fixed catalog of tensor
//! operations.
//!
//! A [`Graph`] is a tape: nodes are appended in evaluation order, so every
//! node's inputs precede it. The first `params.len()` node ids refer to the
//! borrowed parameter slice, which lets the same typed parameter handles
//! (plain [`NodeId`]s) address any graph built over the same parameter list
//! without copying weights.

use crate::error::{DcnError, Result};
use crate::tensor::{gemm_nt, gemm_tn, Tensor};

/// Floor on column norms in [`Graph::l2_normalize_cols`].
pub const L2_EPS: f64 = 1e-12;
/// Scores are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside [`Graph::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    ScaleBy(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    SoftmaxRows(NodeId, f64),
    Transpose(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    L2NormalizeCols(NodeId, Vec<f64>),
    MaxPool(NodeId, Vec<usize>),
    Bce(NodeId, Vec<f64>),
}

struct Node {
    op: Op,
    value: Tensor,
}

pub struct Graph<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph<'static> {
    pub fn new() -> Self {
        Graph {
            params: &[],
            nodes: Vec::new(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    /// A graph whose node ids `0..params.len()` are the given parameters.
    pub fn with_params(params: &'p [Tensor]) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn len(&self) -> usize {
        self.params.len() + self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let n = self.params.len();
        if id.0 < n {
            &self.params[id.0]
        } else {
            &self.nodes[id.0 - n].value
        }
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.params.len() + self.nodes.len() - 1)
    }

    fn op(&self, id: NodeId) -> Option<&Op> {
        let n = self.params.len();
        (id.0 >= n).then(|| &self.nodes[id.0 - n].op)
    }

    /// A leaf holding data that is not a parameter (inputs, masks, targets).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(DcnError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        Tensor::new(x.shape(), data).expect("shape preserved")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = ta.matmul(tb)?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    /// `a (m x n) + b (m x 1)` added to every column.
    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        let bshape = self.value(b).shape();
        if bshape != [m, 1] {
            return Err(DcnError::shape(
                "add_bias",
                format!("matrix [{m}, {n}] with bias {bshape:?}"),
            ));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let mut data = ta.data().to_vec();
        for i in 0..m {
            let bi = tb.data()[i];
            data[i * n..(i + 1) * n].iter_mut().for_each(|v| *v += bi);
        }
        let out = Tensor::new(&[m, n], data)?;
        Ok(self.push(Op::AddBias(a, b), out))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let out = self.map(a, |v| v * s);
        self.push(Op::Scale(a, s), out)
    }

    /// Multiplies `a` by the single element held in node `s`.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(DcnError::shape(
                "scale_by",
                format!("scale must hold one element, got {:?}", self.value(s).shape()),
            ));
        }
        let sv = self.scalar(s);
        let out = self.map(a, |v| v * sv);
        Ok(self.push(Op::ScaleBy(a, s), out))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.map(a, |v| v.max(0.0));
        self.push(Op::Relu(a), out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    /// Row-wise softmax of `a / scale`, max-subtracted per row.
    pub fn softmax_rows(&mut self, a: NodeId, scale: f64) -> Result<NodeId> {
        if !(scale > 0.0) {
            return Err(DcnError::Input(format!("softmax scale must be > 0, got {scale}")));
        }
        let (m, n) = self.value(a).dims2()?;
        let x = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let out = &mut data[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = ((v - mx) / scale).exp();
                z += *o;
            }
            out.iter_mut().for_each(|o| *o /= z);
        }
        let out = Tensor::new(&[m, n], data)?;
        Ok(self.push(Op::SoftmaxRows(a, scale), out))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).transpose()?;
        Ok(self.push(Op::Transpose(a), out))
    }

    /// Stacks matrices vertically; all must share the column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| DcnError::shape("concat_rows", "no inputs"))?;
        let n = self.value(*first).dims2()?.1;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            if pn != n {
                return Err(DcnError::shape(
                    "concat_rows",
                    format!("column counts {n} vs {pn}"),
                ));
            }
            data.extend_from_slice(self.value(p).data());
            m += pm;
        }
        let out = Tensor::new(&[m, n], data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    /// Joins matrices side by side; all must share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| DcnError::shape("concat_cols", "no inputs"))?;
        let m = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            if pm != m {
                return Err(DcnError::shape(
                    "concat_cols",
                    format!("row counts {m} vs {pm}"),
                ));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                data[i * n + off..i * n + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let out = Tensor::new(&[m, n], data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        if len == 0 || start + len > m {
            return Err(DcnError::shape(
                "slice_rows",
                format!("rows {start}..{} of [{m}, {n}]", start + len),
            ));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let out = Tensor::new(&[len, n], data)?;
        Ok(self.push(Op::SliceRows(a, start), out))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        if len == 0 || start + len > n {
            return Err(DcnError::shape(
                "slice_cols",
                format!("cols {start}..{} of [{m}, {n}]", start + len),
            ));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let out = Tensor::new(&[m, len], data)?;
        Ok(self.push(Op::SliceCols(a, start), out))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(a), out))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Op::Sum(a), Tensor::full(&[1], s))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        self.push(Op::Mean(a), Tensor::full(&[1], s))
    }

    /// Divides every column by `max(||col||_2, L2_EPS)`.
    pub fn l2_normalize_cols(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        let x = self.value(a).data();
        let mut norms = vec![0.0; n];
        for i in 0..m {
            for (j, nj) in norms.iter_mut().enumerate() {
                *nj += x[i * n + j] * x[i * n + j];
            }
        }
        norms.iter_mut().for_each(|v| *v = v.sqrt());
        let mut data = x.to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] /= norms[j].max(L2_EPS);
            }
        }
        let out = Tensor::new(&[m, n], data)?;
        Ok(self.push(Op::L2NormalizeCols(a, norms), out))
    }

    /// Non-overlapping max pooling of a `C x H x W` map with a square window.
    pub fn max_pool(&mut self, a: NodeId, window: usize) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        let [c, h, w] = shape[..] else {
            return Err(DcnError::shape(
                "max_pool",
                format!("expected C x H x W, got {shape:?}"),
            ));
        };
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(DcnError::shape(
                "max_pool",
                format!("window {window} does not tile {h} x {w}"),
            ));
        }
        let (oh, ow) = (h / window, w / window);
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0;
                    for dy in 0..window {
                        let base = (ch * h + oy * window + dy) * w + ox * window;
                        for (dx, &v) in x[base..base + window].iter().enumerate() {
                            if v > best {
                                best = v;
                                best_at = base + dx;
                            }
                        }
                    }
                    data.push(best);
                    argmax.push(best_at);
                }
            }
        }
        let out = Tensor::new(&[c, oh, ow], data)?;
        Ok(self.push(Op::MaxPool(a, argmax), out))
    }

    /// Mean binary cross-entropy of `scores` against `targets`, with scores
    /// clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce(&mut self, scores: NodeId, targets: &[f64]) -> Result<NodeId> {
        let s = self.value(scores);
        if s.len() != targets.len() {
            return Err(DcnError::shape(
                "bce",
                format!("{} scores vs {} targets", s.len(), targets.len()),
            ));
        }
        if let Some(t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(DcnError::Input(format!("target {t} outside [0, 1]")));
        }
        let n = targets.len() as f64;
        let loss = s
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let c = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * c.ln() + (1.0 - t) * (1.0 - c).ln())
            })
            .sum::<f64>()
            / n;
        Ok(self.push(Op::Bce(scores, targets.to_vec()), Tensor::full(&[1], loss)))
    }

    /// Gradients of the single-element node `loss` with respect to every
    /// node it depends on.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(DcnError::shape(
                "backward",
                format!("loss must be a scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(op) = self.op(NodeId(idx)) else {
                continue;
            };
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop(op, NodeId(idx), &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn backprop(
        &self,
        op: &Op,
        out: NodeId,
        dy: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let y = self.value(out);
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = ta.dims2()?;
                let n = tb.dims2()?.1;
                let mut da = vec![0.0; m * k];
                gemm_nt(dy.data(), tb.data(), &mut da, m, n, k);
                accumulate(grads, a, Tensor::new(&[m, k], da)?);
                let mut db = vec![0.0; k * n];
                gemm_tn(ta.data(), dy.data(), &mut db, k, m, n);
                accumulate(grads, b, Tensor::new(&[k, n], db)?);
            }
            Op::Add(a, b) => {
                accumulate(grads, a, dy.clone());
                accumulate(grads, b, dy.clone());
            }
            Op::Mul(a, b) => {
                accumulate(grads, a, zip(dy, self.value(b), |g, v| g * v));
                accumulate(grads, b, zip(dy, self.value(a), |g, v| g * v));
            }
            Op::AddBias(a, b) => {
                let (m, n) = dy.dims2()?;
                let db = (0..m).map(|i| dy.row(i).iter().sum()).collect();
                accumulate(grads, a, dy.clone());
                accumulate(grads, b, Tensor::new(&[m, 1], db)?);
                let _ = n;
            }
            Op::Scale(a, s) => accumulate(grads, a, map(dy, |g| g * s)),
            Op::ScaleBy(a, s) => {
                let sv = self.scalar(s);
                accumulate(grads, a, map(dy, |g| g * sv));
                let ds: f64 = dy
                    .data()
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(g, v)| g * v)
                    .sum();
                accumulate(grads, s, Tensor::full(self.value(s).shape(), ds));
            }
            Op::Relu(a) => accumulate(grads, a, zip(dy, self.value(a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::Sigmoid(a) => accumulate(grads, a, zip(dy, y, |g, s| g * s * (1.0 - s))),
            Op::Tanh(a) => accumulate(grads, a, zip(dy, y, |g, t| g * (1.0 - t * t))),
            Op::SoftmaxRows(a, scale) => {
                let (m, n) = y.dims2()?;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y.data()[i * n..(i + 1) * n];
                    let gr = &dy.data()[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - dot) / scale;
                    }
                }
                accumulate(grads, a, Tensor::new(&[m, n], dx)?);
            }
            Op::Transpose(a) => accumulate(grads, a, dy.transpose()?),
            Op::ConcatRows(ref parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let piece = Tensor::new(self.value(p).shape(), dy.data()[off..off + len].to_vec())?;
                    accumulate(grads, p, piece);
                    off += len;
                }
            }
            Op::ConcatCols(ref parts) => {
                let (m, n) = dy.dims2()?;
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).dims2()?.1;
                    let mut piece = Vec::with_capacity(m * w);
                    for i in 0..m {
                        piece.extend_from_slice(&dy.data()[i * n + off..i * n + off + w]);
                    }
                    accumulate(grads, p, Tensor::new(&[m, w], piece)?);
                    off += w;
                }
            }
            Op::SliceRows(a, start) => {
                let (m, n) = self.value(a).dims2()?;
                let mut dx = vec![0.0; m * n];
                dx[start * n..start * n + dy.len()].copy_from_slice(dy.data());
                accumulate(grads, a, Tensor::new(&[m, n], dx)?);
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.value(a).dims2()?;
                let w = dy.dims2()?.1;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + w].copy_from_slice(&dy.data()[i * w..(i + 1) * w]);
                }
                accumulate(grads, a, Tensor::new(&[m, n], dx)?);
            }
            Op::Reshape(a) => {
                accumulate(grads, a, dy.clone().reshape(self.value(a).shape())?);
            }
            Op::Sum(a) => {
                accumulate(grads, a, Tensor::full(self.value(a).shape(), dy.data()[0]));
            }
            Op::Mean(a) => {
                let x = self.value(a);
                accumulate(grads, a, Tensor::full(x.shape(), dy.data()[0] / x.len() as f64));
            }
            Op::L2NormalizeCols(a, ref norms) => {
                let (m, n) = y.dims2()?;
                let mut dots = vec![0.0; n];
                for i in 0..m {
                    for (j, d) in dots.iter_mut().enumerate() {
                        *d += y.data()[i * n + j] * dy.data()[i * n + j];
                    }
                }
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let k = i * n + j;
                        dx[k] = if norms[j] > L2_EPS {
                            (dy.data()[k] - y.data()[k] * dots[j]) / norms[j]
                        } else {
                            dy.data()[k] / L2_EPS
                        };
                    }
                }
                accumulate(grads, a, Tensor::new(&[m, n], dx)?);
            }
            Op::MaxPool(a, ref argmax) => {
                let mut dx = Tensor::zeros(self.value(a).shape());
                for (o, &src) in argmax.iter().enumerate() {
                    dx.data_mut()[src] += dy.data()[o];
                }
                accumulate(grads, a, dx);
            }
            Op::Bce(s, ref targets) => {
                let n = targets.len() as f64;
                let g0 = dy.data()[0];
                let ds = self
                    .value(s)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&p, &t)| {
                        if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                            0.0
                        } else {
                            -g0 * (t / p - (1.0 - t) / (1.0 - p)) / n
                        }
                    })
                    .collect();
                accumulate(grads, s, Tensor::new(self.value(s).shape(), ds)?);
            }
        }
        Ok(())
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("shape preserved")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape preserved")
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(g) => g
            .data_mut()
            .iter_mut()
            .zip(delta.data())
            .for_each(|(a, b)| *a += b),
        slot => *slot = Some(delta),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `id` does not influence the loss.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// One gradient per parameter, zero-filled for parameters the loss does
    /// not touch.
    pub fn param_grads(mut self, params: &[Tensor]) -> Vec<Tensor> {
        params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect()
    }
}
