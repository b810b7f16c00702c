//! Reverse-mode tape. A [`Graph`] is built fresh for every forward pass; calling
//! [`Graph::backward`] walks it once in reverse and returns all gradients.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::kernels;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Padding policy for sequence convolutions. Both keep the output length equal to the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Centered window; requires an odd kernel.
    Same,
    /// Output at `t` sees inputs `t − k + 1 ..= t` only.
    Causal,
}

impl Padding {
    pub fn left(self, kernel: usize) -> usize {
        match self {
            Padding::Same => (kernel - 1) / 2,
            Padding::Causal => kernel - 1,
        }
    }
}

enum Op<T: Scalar> {
    Leaf,
    Conv1d { x: Var, w: Var, b: Var, pad: usize },
    Glu { x: Var },
    Add { a: Var, b: Var },
    Concat { parts: Vec<Var> },
    BroadcastCols { x: Var },
    Embedding { table: Var, ids: Vec<usize> },
    MatMul { a: Var, b: Var },
    Transpose { x: Var },
    Scale { x: Var, factor: T },
    SoftmaxRows { x: Var },
    AddRowBias { x: Var, b: Var },
    SliceCols { x: Var, start: usize },
    L1 { pred: Var, target: Arc<Tensor<T>> },
    Dot { x: Var, w: Arc<Tensor<T>> },
    Sum { x: Var },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv1d { .. } => "conv1d",
            Op::Glu { .. } => "glu",
            Op::Add { .. } => "add",
            Op::Concat { .. } => "concat",
            Op::BroadcastCols { .. } => "broadcast_cols",
            Op::Embedding { .. } => "embedding",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Scale { .. } => "scale",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::AddRowBias { .. } => "add_row_bias",
            Op::SliceCols { .. } => "slice_cols",
            Op::L1 { .. } => "l1_loss",
            Op::Dot { .. } => "dot",
            Op::Sum { .. } => "sum",
        }
    }
}

struct Node<T: Scalar> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, op_name: &'static str) -> Result<Var> {
        value.check_finite(op_name)?;
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => self.inputs_of(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_of(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Glu { x }
            | Op::BroadcastCols { x }
            | Op::Transpose { x }
            | Op::Scale { x, .. }
            | Op::SoftmaxRows { x }
            | Op::SliceCols { x, .. }
            | Op::Dot { x, .. }
            | Op::Sum { x } => vec![*x],
            Op::Add { a, b } | Op::MatMul { a, b } => vec![*a, *b],
            Op::AddRowBias { x, b } => vec![*x, *b],
            Op::Concat { parts } => parts.clone(),
            Op::Embedding { table, .. } => vec![*table],
            Op::L1 { pred, .. } => vec![*pred],
        }
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Arc::new(t), false)
    }

    /// A free input whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Arc::new(t), true)
    }

    /// A named trainable parameter. Repeated calls with the same name return the same node,
    /// so gradients from every use accumulate in one place.
    pub fn param(&mut self, name: &str, t: &Arc<Tensor<T>>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(Arc::clone(t), true);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Makes later [`Graph::param`] calls for `name` resolve to `v`.
    pub fn bind_param(&mut self, name: &str, v: Var) {
        self.params.insert(name.to_string(), v);
    }

    fn leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Sequence convolution over `x[C_in × L]` with `w[C_out × C_in × K]` and `b[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, padding: Padding) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 3 || bs.len() != 1 {
            return Err(Error::shape("conv1d", "x[C,L], w[O,C,K], b[O]", (xs, ws, bs)));
        }
        let (cin, len) = (xs[0], xs[1]);
        let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
        if wcin != cin {
            return Err(Error::shape("conv1d", [cout, cin, k], ws));
        }
        if bs[0] != cout {
            return Err(Error::shape("conv1d bias", [cout], bs));
        }
        if padding == Padding::Same && k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "same-padded convolution needs an odd kernel, got {k}"
            )));
        }
        let pad = padding.left(k);
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            cin,
            len,
            self.value(w).data(),
            cout,
            k,
            self.value(b).data(),
            pad,
        );
        self.push(Tensor::new(&[cout, len], out)?, Op::Conv1d { x, w, b, pad }, "conv1d")
    }

    /// Gated linear unit over channels: `a ⊗ σ(b)` where `x = [a; b]`.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] % 2 != 0 {
            return Err(Error::shape("glu", "[2C, L]", s));
        }
        let half = s[0] / 2 * s[1];
        let d = self.value(x).data();
        let out = d[..half]
            .iter()
            .zip(&d[half..])
            .map(|(&a, &g)| a * kernels::sigmoid(g))
            .collect();
        self.push(Tensor::new(&[s[0] / 2, s[1]], out)?, Op::Glu { x }, "glu")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(&shape, out)?, Op::Add { a, b }, "add")
    }

    /// Concatenates `[C_i × L]` blocks along channels.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        };
        let len = self.shape(first)[1];
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != len {
                return Err(Error::shape("concat", format!("[_, {len}]"), s));
            }
            rows += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        self.push(
            Tensor::new(&[rows, len], out)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            "concat",
        )
    }

    /// Repeats a `[C]` vector into `[C × len]`.
    pub fn broadcast_cols(&mut self, x: Var, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 {
            return Err(Error::shape("broadcast_cols", "[C]", s));
        }
        let c = s[0];
        let v = self.value(x).data();
        let out = (0..c * len).map(|i| v[i / len]).collect();
        self.push(Tensor::new(&[c, len], out)?, Op::BroadcastCols { x }, "broadcast_cols")
    }

    /// Looks up rows of `table[V × D]`, producing channels-first `[D × L]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::shape("embedding", "[V, D]", s));
        }
        let (vocab, dim) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::OutOfRange {
                what: "embedding id",
                index: bad,
                limit: vocab,
            });
        }
        let len = ids.len();
        let tv = self.value(table);
        let mut out = vec![T::zero(); dim * len];
        for (t, &id) in ids.iter().enumerate() {
            for d in 0..dim {
                out[d * len + t] = tv.at(id, d);
            }
        }
        self.push(
            Tensor::new(&[dim, len], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            "embedding",
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, p, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, p, n);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b }, "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose", "[R, C]", s));
        }
        let (r, c) = (s[0], s[1]);
        let out = kernels::transpose(self.value(x).data(), r, c);
        self.push(Tensor::new(&[c, r], out)?, Op::Transpose { x }, "transpose")
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let t = self.value(x).map(|v| v * factor);
        self.push(t, Op::Scale { x, factor }, "scale")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("softmax_rows", "[R, C]", s));
        }
        let out = kernels::softmax_rows(self.value(x).data(), s[1]);
        self.push(Tensor::new(&s, out)?, Op::SoftmaxRows { x }, "softmax_rows")
    }

    /// `x[R × C] + b[C]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::shape("add_row_bias", [sx[sx.len() - 1]], sb));
        }
        let bv = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(sx[1]) {
            for (y, &bb) in row.iter_mut().zip(bv) {
                *y = *y + bb;
            }
        }
        self.push(Tensor::new(&sx, out)?, Op::AddRowBias { x, b }, "add_row_bias")
    }

    /// Columns `start .. start + len` of a `[C × L]` block.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || start + len > s[1] || len == 0 {
            return Err(Error::shape("slice_cols", format!("[_, >= {}]", start + len), s));
        }
        let (c, l) = (s[0], s[1]);
        let v = self.value(x).data();
        let mut out = Vec::with_capacity(c * len);
        for r in 0..c {
            out.extend_from_slice(&v[r * l + start..r * l + start + len]);
        }
        self.push(Tensor::new(&[c, len], out)?, Op::SliceCols { x, start }, "slice_cols")
    }

    /// Mean absolute error against a fixed target; returns a scalar.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape("l1_loss", target.shape(), self.shape(pred)));
        }
        let n = T::of(target.len() as f64);
        let s: T = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &q)| (p - q).abs())
            .sum();
        self.push(
            Tensor::new(&[1], vec![s / n])?,
            Op::L1 {
                pred,
                target: Arc::new(target.clone()),
            },
            "l1_loss",
        )
    }

    /// `Σ x ⊙ w` for a fixed weight tensor; returns a scalar.
    pub fn dot(&mut self, x: Var, w: &Tensor<T>) -> Result<Var> {
        if self.value(x).len() != w.len() {
            return Err(Error::shape("dot", w.shape(), self.shape(x)));
        }
        let s: T = self
            .value(x)
            .data()
            .iter()
            .zip(w.data())
            .map(|(&a, &b)| a * b)
            .sum();
        self.push(
            Tensor::new(&[1], vec![s])?,
            Op::Dot {
                x,
                w: Arc::new(w.clone()),
            },
            "dot",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::new(&[1], vec![s])?, Op::Sum { x }, "sum")
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", [1], self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&[1], T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let contributions = self.vjp(&node.op, &node.value, &dy)?;
            grads[idx] = Some(dy);
            for (var, g) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                g.check_finite(&format!("backward of {}", node.op.name()))?;
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let params = self
            .params
            .iter()
            .map(|(name, v)| {
                let g = grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(*v)));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn vjp(&self, op: &Op<T>, out: &Tensor<T>, dy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let g = dy.data();
        Ok(match op {
            Op::Leaf => vec![],
            Op::Conv1d { x, w, b, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (cin, len) = (xv.shape()[0], xv.shape()[1]);
                let (cout, k) = (wv.shape()[0], wv.shape()[2]);
                let (dx, dw, db) =
                    kernels::conv1d_backward(xv.data(), cin, len, wv.data(), cout, k, *pad, g);
                vec![
                    (*x, Tensor::new(xv.shape(), dx)?),
                    (*w, Tensor::new(wv.shape(), dw)?),
                    (*b, Tensor::new(&[cout], db)?),
                ]
            }
            Op::Glu { x } => {
                let xv = self.value(*x);
                let half = xv.len() / 2;
                let d = xv.data();
                let mut dx = vec![T::zero(); xv.len()];
                for i in 0..half {
                    let (a, s) = (d[i], kernels::sigmoid(d[half + i]));
                    dx[i] = g[i] * s;
                    dx[half + i] = g[i] * a * s * (T::one() - s);
                }
                vec![(*x, Tensor::new(xv.shape(), dx)?)]
            }
            Op::Add { a, b } => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::Concat { parts } => {
                let mut off = 0;
                let mut v = Vec::with_capacity(parts.len());
                for p in parts {
                    let s = self.shape(*p);
                    let n = s[0] * s[1];
                    v.push((*p, Tensor::new(s, g[off..off + n].to_vec())?));
                    off += n;
                }
                v
            }
            Op::BroadcastCols { x } => {
                let len = out.shape()[1];
                let dx = g.chunks(len).map(|r| r.iter().copied().sum()).collect();
                vec![(*x, Tensor::new(self.shape(*x), dx)?)]
            }
            Op::Embedding { table, ids } => {
                let ts = self.shape(*table);
                let (dim, len) = (ts[1], ids.len());
                let mut dt = Tensor::zeros(ts);
                for (t, &id) in ids.iter().enumerate() {
                    let row = dt.row_mut(id);
                    for d in 0..dim {
                        row[d] = row[d] + g[d * len + t];
                    }
                }
                vec![(*table, dt)]
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, p, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let bt = kernels::transpose(bv.data(), p, n);
                let at = kernels::transpose(av.data(), m, p);
                let da = kernels::matmul(g, &bt, m, n, p);
                let db = kernels::matmul(&at, g, p, m, n);
                vec![
                    (*a, Tensor::new(&[m, p], da)?),
                    (*b, Tensor::new(&[p, n], db)?),
                ]
            }
            Op::Transpose { x } => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                vec![(*x, Tensor::new(&[c, r], kernels::transpose(g, r, c))?)]
            }
            Op::Scale { x, factor } => vec![(*x, dy.map(|v| v * *factor))],
            Op::SoftmaxRows { x } => {
                let cols = out.shape()[1];
                let mut dx = vec![T::zero(); out.len()];
                for ((yr, gr), dr) in out
                    .data()
                    .chunks(cols)
                    .zip(g.chunks(cols))
                    .zip(dx.chunks_mut(cols))
                {
                    let inner: T = yr.iter().zip(gr).map(|(&y, &gg)| y * gg).sum();
                    for ((d, &y), &gg) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = y * (gg - inner);
                    }
                }
                vec![(*x, Tensor::new(out.shape(), dx)?)]
            }
            Op::AddRowBias { x, b } => {
                let cols = out.shape()[1];
                let mut db = vec![T::zero(); cols];
                for r in g.chunks(cols) {
                    for (d, &gg) in db.iter_mut().zip(r) {
                        *d = *d + gg;
                    }
                }
                vec![(*x, dy.clone()), (*b, Tensor::new(&[cols], db)?)]
            }
            Op::SliceCols { x, start } => {
                let xs = self.shape(*x);
                let (c, l) = (xs[0], xs[1]);
                let len = out.shape()[1];
                let mut dx = Tensor::zeros(xs);
                for r in 0..c {
                    dx.data_mut()[r * l + start..r * l + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![(*x, dx)]
            }
            Op::L1 { pred, target } => {
                let n = T::of(target.len() as f64);
                let scale = g[0] / n;
                let pv = self.value(*pred);
                let dx = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &q)| {
                        let d = p - q;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![(*pred, Tensor::new(pv.shape(), dx)?)]
            }
            Op::Dot { x, w } => {
                let xs = self.shape(*x);
                vec![(*x, Tensor::new(xs, w.data().iter().map(|&v| v * g[0]).collect())?)]
            }
            Op::Sum { x } => vec![(*x, Tensor::full(self.shape(*x), g[0]))],
        })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Scalar = f32> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not affect it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}
