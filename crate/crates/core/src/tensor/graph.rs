use std::collections::HashMap;

use thiserror::Error;

use super::{gemm, Gradients, ParamId, ParamStore, Scalar};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AutodiffError {
    #[error("backward needs a scalar loss, got shape [{0}, {1}]")]
    NotScalar(usize, usize),
    #[error("loss does not depend on any parameter")]
    Detached,
}

#[derive(Debug)]
struct LstmCache<T> {
    /// Gate activations (i, f, g, o) per step, `[L, 4H]`.
    gates: Vec<T>,
    /// Cell state per step, `[L, H]`.
    cells: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Rows(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Embedding(Var, Vec<usize>),
    Conv1d { x: Var, w: Var, b: Var, kernel: usize, dilation: usize, cols: Vec<T> },
    MaxPool(Var, Vec<usize>),
    MeanTime(Var),
    LayerNorm { x: Var, inv_std: Vec<T> },
    Softmax(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    Lstm { x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool, cache: LstmCache<T> },
    Sum(Vec<Var>),
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Mse(Var, Var),
    Bce { logits: Var, labels: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A gradient tape. Values are computed eagerly as operations are recorded;
/// [`Graph::backward`] walks the tape in reverse.
///
/// Every value is a row-major matrix; vectors are single rows. A graph is
/// meant to be owned by one worker.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph { params, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { rows, cols, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    /// Value of a `[1,1]` node.
    pub fn scalar(&self, v: Var) -> T {
        assert_eq!(self.shape(v), (1, 1), "not a scalar");
        self.value(v)[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let (rows, cols) = self.params.get(id).matrix_dims();
        self.nodes.push(Node { rows, cols, value: Vec::new(), op: Op::Param(id), requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Var {
        assert_eq!(value.len(), rows * cols, "constant of shape [{rows}, {cols}] with {} values", value.len());
        self.push(rows, cols, value, Op::Constant, &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul shape mismatch: [{m}, {k}] x [{k2}, {n}]");
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        self.push(m, n, out, Op::MatMul(a, b), &[a, b])
    }

    fn check_same(&self, a: Var, b: Var, op: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{op} shape mismatch: {:?} vs {:?}", self.shape(a), self.shape(b));
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "add");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "mul");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, out, Op::Mul(a, b), &[a, b])
    }

    /// `a[m,n] + row[1,n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row shape mismatch: [{m}, {n}] + {:?}", self.shape(row));
        let r = self.value(row);
        let out = self.value(a).chunks(n).flat_map(|x| x.iter().zip(r).map(|(&x, &y)| x + y)).collect();
        self.push(m, n, out, Op::AddRow(a, row), &[a, row])
    }

    /// `a[m,n] * row[1,n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "mul_row shape mismatch: [{m}, {n}] * {:?}", self.shape(row));
        let r = self.value(row);
        let out = self.value(a).chunks(n).flat_map(|x| x.iter().zip(r).map(|(&x, &y)| x * y)).collect();
        self.push(m, n, out, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::of_f64(factor);
        let out = self.value(a).iter().map(|&x| x * f).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, out, Op::Scale(a, f), &[a])
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        assert!(parts.iter().all(|&p| self.shape(p).0 == rows), "concat_cols row mismatch");
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.shape(parts[0]).1;
        assert!(parts.iter().all(|&p| self.shape(p).1 == cols), "concat_rows column mismatch");
        let rows = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(rows, cols, out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Rows `start..start+len`.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(x);
        assert!(len > 0 && start + len <= m, "row slice {start}..{} out of {m}", start + len);
        let out = self.value(x)[start * n..(start + len) * n].to_vec();
        self.push(len, n, out, Op::Rows(x, start), &[x])
    }

    pub fn row(&mut self, x: Var, i: usize) -> Var {
        self.rows(x, i, 1)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, out, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, T::tanh, Op::Tanh(a))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = self.shape(table);
        assert!(!ids.is_empty(), "embedding lookup of an empty sequence");
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            assert!(i < v, "embedding id {i} out of range {v}");
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        self.push(ids.len(), d, out, Op::Embedding(table, ids.to_vec()), &[table])
    }

    /// Same-padded, stride-1 dilated convolution over time.
    ///
    /// `x` is `[L, C_in]`, `w` is `[kernel * C_in, C_out]`, `b` is
    /// `[1, C_out]`. Output position `t` reads `x[t + (j - ceil((kernel-1)/2)) *
    /// dilation]` for `j in 0..kernel`; out-of-range positions are zero.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize, dilation: usize) -> Var {
        assert!(kernel >= 1 && dilation >= 1, "conv1d needs kernel >= 1 and dilation >= 1");
        let (len, cin) = self.shape(x);
        let (kc, cout) = self.shape(w);
        assert_eq!(kc, kernel * cin, "conv1d weight {:?} does not fit kernel {kernel} x {cin} channels", self.shape(w));
        assert_eq!(self.shape(b), (1, cout), "conv1d bias shape {:?}", self.shape(b));
        let cols = im2col(self.value(x), len, cin, kernel, dilation);
        let mut out = vec![T::zero(); len * cout];
        gemm(len, kc, cout, &cols, false, self.value(w), false, &mut out, false);
        let bias = self.value(b);
        for row in out.chunks_mut(cout) {
            row.iter_mut().zip(bias).for_each(|(o, &bb)| *o += bb);
        }
        self.push(len, cout, out, Op::Conv1d { x, w, b, kernel, dilation, cols }, &[x, w, b])
    }

    /// Max over non-overlapping windows of `width` rows; a trailing partial
    /// window is kept.
    pub fn max_pool1d(&mut self, x: Var, width: usize) -> Var {
        assert!(width >= 1, "pool width must be positive");
        let (len, c) = self.shape(x);
        let out_len = len.div_ceil(width);
        let xs = self.value(x);
        let mut out = Vec::with_capacity(out_len * c);
        let mut idx = Vec::with_capacity(out_len * c);
        for o in 0..out_len {
            let end = ((o + 1) * width).min(len);
            for ch in 0..c {
                let mut best = o * width * c + ch;
                for t in o * width + 1..end {
                    if xs[t * c + ch] > xs[best] {
                        best = t * c + ch;
                    }
                }
                out.push(xs[best]);
                idx.push(best);
            }
        }
        self.push(out_len, c, out, Op::MaxPool(x, idx), &[x])
    }

    /// Max over all rows, `[L, C] -> [1, C]`.
    pub fn max_pool_time(&mut self, x: Var) -> Var {
        let len = self.shape(x).0;
        self.max_pool1d(x, len)
    }

    /// Mean over all rows, `[L, C] -> [1, C]`.
    pub fn mean_pool_time(&mut self, x: Var) -> Var {
        let (len, c) = self.shape(x);
        let inv = T::of_f64(1.0 / len as f64);
        let mut out = vec![T::zero(); c];
        for row in self.value(x).chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o = *o * inv);
        self.push(1, c, out, Op::MeanTime(x), &[x])
    }

    /// Normalizes each row to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let eps = T::of_f64(LAYER_NORM_EPS);
        let nf = T::of_f64(n as f64);
        let mut out = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        for row in self.value(x).chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let inv = T::one() / (var + eps).sqrt();
            out.extend(row.iter().map(|&v| (v - mean) * inv));
            inv_std.push(inv);
        }
        self.push(m, n, out, Op::LayerNorm { x, inv_std }, &[x])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = self.value(a).to_vec();
        out.chunks_mut(n).for_each(softmax_in_place);
        self.push(m, n, out, Op::Softmax(a), &[a])
    }

    /// Multi-head scaled dot-product attention over `[L, d]` inputs.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (lq, d) = self.shape(q);
        let (lk, dk) = self.shape(k);
        assert_eq!(d, dk, "attention query/key width mismatch");
        assert_eq!(self.shape(v), (lk, d), "attention value shape mismatch");
        assert!(heads >= 1 && d % heads == 0, "{heads} heads do not divide width {d}");
        let dh = d / heads;
        let scale = T::of_f64(1.0 / (dh as f64).sqrt());
        let mut out = vec![T::zero(); lq * d];
        let mut probs = vec![T::zero(); heads * lq * lk];
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        for h in 0..heads {
            let qh = head_slice(qv, lq, d, h, dh);
            let kh = head_slice(kv, lk, d, h, dh);
            let vh = head_slice(vv, lk, d, h, dh);
            let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
            gemm(lq, dh, lk, &qh, false, &kh, true, p, false);
            p.iter_mut().for_each(|x| *x = *x * scale);
            p.chunks_mut(lk).for_each(softmax_in_place);
            let mut oh = vec![T::zero(); lq * dh];
            gemm(lq, lk, dh, p, false, &vh, false, &mut oh, false);
            for t in 0..lq {
                out[t * d + h * dh..t * d + (h + 1) * dh].copy_from_slice(&oh[t * dh..(t + 1) * dh]);
            }
        }
        self.push(lq, d, out, Op::Attention { q, k, v, heads, probs }, &[q, k, v])
    }

    /// One LSTM layer over `x[L, In]` with gate order (input, forget, cell,
    /// output). `w_ih` is `[In, 4H]`, `w_hh` is `[H, 4H]`, `b` is `[1, 4H]`.
    /// Returns the hidden state of every step, `[L, H]`, in input order.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool) -> Var {
        let (len, input) = self.shape(x);
        let (wi, h4) = self.shape(w_ih);
        assert_eq!(wi, input, "lstm input width mismatch");
        assert!(h4 % 4 == 0, "lstm gate width must be a multiple of 4");
        let hid = h4 / 4;
        assert_eq!(self.shape(w_hh), (hid, h4), "lstm recurrent weight shape");
        assert_eq!(self.shape(b), (1, h4), "lstm bias shape");
        let mut pre = vec![T::zero(); len * h4];
        gemm(len, input, h4, self.value(x), false, self.value(w_ih), false, &mut pre, false);
        let bias = self.value(b);
        for row in pre.chunks_mut(h4) {
            row.iter_mut().zip(bias).for_each(|(o, &bb)| *o += bb);
        }
        let whh = self.value(w_hh);
        let mut gates = vec![T::zero(); len * h4];
        let mut cells = vec![T::zero(); len * hid];
        let mut hs = vec![T::zero(); len * hid];
        let mut h_prev = vec![T::zero(); hid];
        let mut c_prev = vec![T::zero(); hid];
        for step in 0..len {
            let t = if reverse { len - 1 - step } else { step };
            let z = &mut pre[t * h4..(t + 1) * h4];
            gemm(1, hid, h4, &h_prev, false, whh, false, z, true);
            let gt = &mut gates[t * h4..(t + 1) * h4];
            for j in 0..hid {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[hid + j]);
                let g = z[2 * hid + j].tanh();
                let o = sigmoid(z[3 * hid + j]);
                let c = f * c_prev[j] + i * g;
                gt[j] = i;
                gt[hid + j] = f;
                gt[2 * hid + j] = g;
                gt[3 * hid + j] = o;
                cells[t * hid + j] = c;
                hs[t * hid + j] = o * c.tanh();
            }
            h_prev.copy_from_slice(&hs[t * hid..(t + 1) * hid]);
            c_prev.copy_from_slice(&cells[t * hid..(t + 1) * hid]);
        }
        let cache = LstmCache { gates, cells };
        self.push(len, hid, hs, Op::Lstm { x, w_ih, w_hh, b, reverse, cache }, &[x, w_ih, w_hh, b])
    }

    /// Sum of `[1,1]` values.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum of nothing");
        assert!(parts.iter().all(|&p| self.shape(p) == (1, 1)), "sum expects scalars");
        let total = parts.iter().map(|&p| self.value(p)[0]).sum();
        self.push(1, 1, vec![total], Op::Sum(parts.to_vec()), parts)
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (m, c) = self.shape(logits);
        assert_eq!(targets.len(), m, "one target per logit row expected");
        for &t in targets {
            assert!(t < c, "class {t} out of range for {c} classes");
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = T::zero();
        for (row, &t) in probs.chunks_mut(c).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[t];
            softmax_in_place(row);
        }
        let loss = loss / T::of_f64(m as f64);
        self.push(1, 1, vec![loss], Op::SoftmaxXent { logits, targets: targets.to_vec(), probs }, &[logits])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "mse");
        let n = T::of_f64(self.value(a).len() as f64);
        let s = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / n;
        self.push(1, 1, vec![s], Op::Mse(a, b), &[a, b])
    }

    /// Mean binary cross-entropy of single-column logits against 0/1 labels.
    pub fn binary_cross_entropy(&mut self, logits: Var, labels: &[f64]) -> Var {
        let (m, c) = self.shape(logits);
        assert_eq!(c, 1, "binary cross-entropy expects one logit per row");
        assert_eq!(labels.len(), m, "one label per logit row expected");
        let labels: Vec<T> = labels.iter().map(|&y| T::of_f64(y)).collect();
        let loss = self
            .value(logits)
            .iter()
            .zip(&labels)
            .map(|(&x, &y)| x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln())
            .sum::<T>()
            / T::of_f64(m as f64);
        self.push(1, 1, vec![loss], Op::Bce { logits, labels }, &[logits])
    }

    /// Reverse pass from a scalar `loss`. Parameters that do not influence the
    /// loss get no buffer, which reads as a zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(AutodiffError::NotScalar(r, c));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(AutodiffError::Detached);
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new(self.params.len());
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>], out: &mut Gradients<T>) {
        let nodes = &self.nodes;
        // Gradient buffer of an input, or None when it needs no gradient.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    let n = nodes[v.0].rows * nodes[v.0].cols;
                    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                let buf = out.buffer_mut(*id, g.len());
                buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(da) = acc!(*a) {
                    gemm(m, n, k, g, false, bv, true, da, true);
                }
                if let Some(db) = acc!(*b) {
                    gemm(k, m, n, av, true, g, false, db, true);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = acc!(v) {
                        d.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::AddRow(a, row) => {
                let n = node.cols;
                if let Some(da) = acc!(*a) {
                    da.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(dr) = acc!(*row) {
                    for gr in g.chunks(n) {
                        dr.iter_mut().zip(gr).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let n = node.cols;
                let (av, rv) = (self.value(*a), self.value(*row));
                if let Some(da) = acc!(*a) {
                    for (dchunk, gchunk) in da.chunks_mut(n).zip(g.chunks(n)) {
                        for j in 0..n {
                            dchunk[j] += gchunk[j] * rv[j];
                        }
                    }
                }
                if let Some(dr) = acc!(*row) {
                    for (achunk, gchunk) in av.chunks(n).zip(g.chunks(n)) {
                        for j in 0..n {
                            dr[j] += gchunk[j] * achunk[j];
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(da) = acc!(*a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if let Some(db) = acc!(*b) {
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(da) = acc!(*a) {
                    da.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *f);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    if let Some(dp) = acc!(p) {
                        for r in 0..node.rows {
                            for j in 0..c {
                                dp[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(dp) = acc!(p) {
                        dp.iter_mut().zip(&g[offset..offset + n]).for_each(|(x, &y)| *x += y);
                    }
                    offset += n;
                }
            }
            Op::Rows(x, start) => {
                let n = node.cols;
                if let Some(dx) = acc!(*x) {
                    dx[start * n..start * n + g.len()].iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                if let Some(da) = acc!(*a) {
                    for i in 0..g.len() {
                        if av[i] > T::zero() {
                            da[i] += g[i];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                if let Some(da) = acc!(*a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * y[i] * (T::one() - y[i]);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                if let Some(da) = acc!(*a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * (T::one() - y[i] * y[i]);
                    }
                }
            }
            Op::Embedding(table, ids) => {
                let d = node.cols;
                if let Some(dt) = acc!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        dt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::Conv1d { x, w, b, kernel, dilation, cols } => {
                let (len, cin) = self.shape(*x);
                let cout = node.cols;
                let kc = kernel * cin;
                if let Some(dw) = acc!(*w) {
                    gemm(kc, len, cout, cols, true, g, false, dw, true);
                }
                if let Some(db) = acc!(*b) {
                    for gr in g.chunks(cout) {
                        db.iter_mut().zip(gr).for_each(|(a, &bb)| *a += bb);
                    }
                }
                let wv = self.value(*w);
                if let Some(dx) = acc!(*x) {
                    let mut dcols = vec![T::zero(); len * kc];
                    gemm(len, cout, kc, g, false, wv, true, &mut dcols, false);
                    col2im_add(&dcols, dx, len, cin, *kernel, *dilation);
                }
            }
            Op::MaxPool(x, idx) => {
                if let Some(dx) = acc!(*x) {
                    for (&i, &gv) in idx.iter().zip(g) {
                        dx[i] += gv;
                    }
                }
            }
            Op::MeanTime(x) => {
                let (len, c) = self.shape(*x);
                let inv = T::of_f64(1.0 / len as f64);
                if let Some(dx) = acc!(*x) {
                    for row in dx.chunks_mut(c) {
                        row.iter_mut().zip(g).for_each(|(a, &b)| *a += b * inv);
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let n = node.cols;
                let nf = T::of_f64(n as f64);
                let y = &node.value;
                if let Some(dx) = acc!(*x) {
                    for r in 0..node.rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let yr = &y[r * n..(r + 1) * n];
                        let sum_g = gr.iter().copied().sum::<T>();
                        let sum_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                        let inv = inv_std[r];
                        for j in 0..n {
                            dx[r * n + j] += inv / nf * (nf * gr[j] - sum_g - yr[j] * sum_gy);
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let n = node.cols;
                let y = &node.value;
                if let Some(da) = acc!(*a) {
                    for r in 0..node.rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let yr = &y[r * n..(r + 1) * n];
                        let dot = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                        for j in 0..n {
                            da[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                self.attention_backward(node, g, *q, *k, *v, *heads, probs, grads);
            }
            Op::Lstm { x, w_ih, w_hh, b, reverse, cache } => {
                self.lstm_backward(node, g, [*x, *w_ih, *w_hh, *b], *reverse, cache, grads);
            }
            Op::Sum(parts) => {
                for &p in parts {
                    if let Some(dp) = acc!(p) {
                        dp[0] += g[0];
                    }
                }
            }
            Op::SoftmaxXent { logits, targets, probs } => {
                let c = self.shape(*logits).1;
                let scale = g[0] / T::of_f64(targets.len() as f64);
                if let Some(dl) = acc!(*logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            dl[r * c + j] += (probs[r * c + j] - onehot) * scale;
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = T::of_f64(2.0) * g[0] / T::of_f64(av.len() as f64);
                if let Some(da) = acc!(*a) {
                    for i in 0..av.len() {
                        da[i] += (av[i] - bv[i]) * scale;
                    }
                }
                if let Some(db) = acc!(*b) {
                    for i in 0..av.len() {
                        db[i] += (bv[i] - av[i]) * scale;
                    }
                }
            }
            Op::Bce { logits, labels } => {
                let xv = self.value(*logits);
                let scale = g[0] / T::of_f64(labels.len() as f64);
                if let Some(dl) = acc!(*logits) {
                    for i in 0..labels.len() {
                        dl[i] += (sigmoid(xv[i]) - labels[i]) * scale;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        node: &Node<T>,
        g: &[T],
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (lq, d) = (node.rows, node.cols);
        let lk = self.shape(k).0;
        let dh = d / heads;
        let scale = T::of_f64(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![T::zero(); lq * d];
        let mut dk = vec![T::zero(); lk * d];
        let mut dv = vec![T::zero(); lk * d];
        for h in 0..heads {
            let qh = head_slice(qv, lq, d, h, dh);
            let kh = head_slice(kv, lk, d, h, dh);
            let vh = head_slice(vv, lk, d, h, dh);
            let gh = head_slice(g, lq, d, h, dh);
            let p = &probs[h * lq * lk..(h + 1) * lq * lk];
            // dV = P^T dO
            let mut dvh = vec![T::zero(); lk * dh];
            gemm(lk, lq, dh, p, true, &gh, false, &mut dvh, false);
            // dP = dO V^T, then through the row softmax.
            let mut ds = vec![T::zero(); lq * lk];
            gemm(lq, dh, lk, &gh, false, &vh, true, &mut ds, false);
            for r in 0..lq {
                let pr = &p[r * lk..(r + 1) * lk];
                let dr = &mut ds[r * lk..(r + 1) * lk];
                let dot = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum::<T>();
                for j in 0..lk {
                    dr[j] = pr[j] * (dr[j] - dot) * scale;
                }
            }
            let mut dqh = vec![T::zero(); lq * dh];
            gemm(lq, lk, dh, &ds, false, &kh, false, &mut dqh, false);
            let mut dkh = vec![T::zero(); lk * dh];
            gemm(lk, lq, dh, &ds, true, &qh, false, &mut dkh, false);
            scatter_head(&mut dq, &dqh, lq, d, h, dh);
            scatter_head(&mut dk, &dkh, lk, d, h, dh);
            scatter_head(&mut dv, &dvh, lk, d, h, dh);
        }
        for (var, delta) in [(q, dq), (k, dk), (v, dv)] {
            if self.nodes[var.0].requires_grad {
                let n = delta.len();
                let buf = grads[var.0].get_or_insert_with(|| vec![T::zero(); n]);
                buf.iter_mut().zip(&delta).for_each(|(a, &b)| *a += b);
            }
        }
    }

    fn lstm_backward(
        &self,
        node: &Node<T>,
        g: &[T],
        [x, w_ih, w_hh, b]: [Var; 4],
        reverse: bool,
        cache: &LstmCache<T>,
        grads: &mut [Option<Vec<T>>],
    ) {
        let (len, hid) = (node.rows, node.cols);
        let h4 = 4 * hid;
        let input = self.shape(x).1;
        let hs = &node.value;
        let whh = self.value(w_hh);
        let mut dpre = vec![T::zero(); len * h4];
        let mut dwhh = vec![T::zero(); hid * h4];
        let mut dh_next = vec![T::zero(); hid];
        let mut dc_next = vec![T::zero(); hid];
        let zeros = vec![T::zero(); hid];
        let one = T::one();
        for step in (0..len).rev() {
            let t = if reverse { len - 1 - step } else { step };
            let prev = if step == 0 { None } else { Some(if reverse { t + 1 } else { t - 1 }) };
            let c_prev = prev.map_or(&zeros[..], |p| &cache.cells[p * hid..(p + 1) * hid]);
            let h_prev = prev.map_or(&zeros[..], |p| &hs[p * hid..(p + 1) * hid]);
            let gt = &cache.gates[t * h4..(t + 1) * h4];
            let dz = &mut dpre[t * h4..(t + 1) * h4];
            for j in 0..hid {
                let (i, f, gg, o) = (gt[j], gt[hid + j], gt[2 * hid + j], gt[3 * hid + j]);
                let tc = cache.cells[t * hid + j].tanh();
                let dh = g[t * hid + j] + dh_next[j];
                let dout = dh * tc;
                let dc = dh * o * (one - tc * tc) + dc_next[j];
                dz[j] = dc * gg * i * (one - i);
                dz[hid + j] = dc * c_prev[j] * f * (one - f);
                dz[2 * hid + j] = dc * i * (one - gg * gg);
                dz[3 * hid + j] = dout * o * (one - o);
                dc_next[j] = dc * f;
            }
            gemm(1, h4, hid, dz, false, whh, true, &mut dh_next, false);
            gemm(hid, 1, h4, h_prev, true, dz, false, &mut dwhh, true);
        }
        if self.nodes[w_hh.0].requires_grad {
            let buf = grads[w_hh.0].get_or_insert_with(|| vec![T::zero(); hid * h4]);
            buf.iter_mut().zip(&dwhh).for_each(|(a, &v)| *a += v);
        }
        if self.nodes[w_ih.0].requires_grad {
            let buf = grads[w_ih.0].get_or_insert_with(|| vec![T::zero(); input * h4]);
            gemm(input, len, h4, self.value(x), true, &dpre, false, buf, true);
        }
        if self.nodes[b.0].requires_grad {
            let buf = grads[b.0].get_or_insert_with(|| vec![T::zero(); h4]);
            for row in dpre.chunks(h4) {
                buf.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
        }
        if self.nodes[x.0].requires_grad {
            let wih = self.value(w_ih);
            let buf = grads[x.0].get_or_insert_with(|| vec![T::zero(); len * input]);
            gemm(len, h4, input, &dpre, false, wih, true, buf, true);
        }
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x = *x / total);
}

fn head_slice<T: Scalar>(x: &[T], rows: usize, d: usize, h: usize, dh: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * dh);
    for r in 0..rows {
        out.extend_from_slice(&x[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

fn scatter_head<T: Scalar>(dst: &mut [T], src: &[T], rows: usize, d: usize, h: usize, dh: usize) {
    for r in 0..rows {
        dst[r * d + h * dh..r * d + (h + 1) * dh].copy_from_slice(&src[r * dh..(r + 1) * dh]);
    }
}

fn tap_offset(j: usize, kernel: usize, dilation: usize) -> isize {
    (j as isize - (kernel - 1).div_ceil(2) as isize) * dilation as isize
}

fn im2col<T: Scalar>(x: &[T], len: usize, cin: usize, kernel: usize, dilation: usize) -> Vec<T> {
    let kc = kernel * cin;
    let mut cols = vec![T::zero(); len * kc];
    for t in 0..len {
        for j in 0..kernel {
            let src = t as isize + tap_offset(j, kernel, dilation);
            if src >= 0 && (src as usize) < len {
                let s = src as usize;
                cols[t * kc + j * cin..t * kc + (j + 1) * cin].copy_from_slice(&x[s * cin..(s + 1) * cin]);
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(dcols: &[T], dx: &mut [T], len: usize, cin: usize, kernel: usize, dilation: usize) {
    let kc = kernel * cin;
    for t in 0..len {
        for j in 0..kernel {
            let src = t as isize + tap_offset(j, kernel, dilation);
            if src >= 0 && (src as usize) < len {
                let s = src as usize;
                for c in 0..cin {
                    dx[s * cin + c] += dcols[t * kc + j * cin + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(tensors: Vec<(&str, Vec<usize>, Vec<f64>)>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (n, shape, d) in tensors {
            s.add(n, Tensor::new(shape, d));
        }
        s
    }

    #[test]
    fn identity_matmul() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let eye = g.constant(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a = g.constant(3, 2, vec![1., 2., 3., 4., 5., 6.]);
        let y = g.matmul(eye, a);
        assert_eq!(g.value(y), g.value(a));
    }

    #[test]
    fn max_pool_pairs() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let x = g.constant(4, 1, vec![1., 3., 2., 0.]);
        let y = g.max_pool1d(x, 2);
        assert_eq!(g.value(y), &[3., 2.]);
        let z = g.constant(3, 1, vec![1., 3., 5.]);
        let p = g.max_pool1d(z, 2);
        assert_eq!(g.value(p), &[3., 5.]);
    }

    #[test]
    fn dilated_conv_matches_direct_sum() {
        let len = 12;
        let (cin, cout, kernel, dil) = (2, 3, 3, 4);
        let xs: Vec<f64> = (0..len * cin).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let ws: Vec<f64> = (0..kernel * cin * cout).map(|i| ((i * 5 % 13) as f64 - 6.0) / 7.0).collect();
        let bs = vec![0.1, -0.2, 0.3];
        let s = store_with(vec![("w", vec![kernel * cin, cout], ws.clone()), ("b", vec![cout], bs.clone())]);
        let mut g = Graph::new(&s);
        let x = g.constant(len, cin, xs.clone());
        let w = g.param(ParamId(0));
        let b = g.param(ParamId(1));
        let y = g.conv1d(x, w, b, kernel, dil);
        // Direct sum over the receptive positions {t-4, t, t+4}.
        for t in 0..len {
            for o in 0..cout {
                let mut acc = bs[o];
                for (j, off) in [-4isize, 0, 4].into_iter().enumerate() {
                    let src = t as isize + off;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    for c in 0..cin {
                        acc += xs[src as usize * cin + c] * ws[(j * cin + c) * cout + o];
                    }
                }
                assert!((g.value(y)[t * cout + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = ParamStore::<f32>::new();
        let mut g = Graph::new(&s);
        let x = g.constant(2, 4, vec![1.0, 2.0, 3.0, 40.0, -5.0, 0.0, 0.5, 0.25]);
        let y = g.softmax(x);
        for row in g.value(y).chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_moments() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let x = g.constant(2, 5, vec![1.0, 2.0, 3.0, 4.0, 10.0, -3.0, 0.5, 0.7, 8.0, 2.0]);
        let y = g.layer_norm(x);
        for row in g.value(y).chunks(5) {
            let mean: f64 = row.iter().sum::<f64>() / 5.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() <= 1e-5);
            assert!((var - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn loss_values() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let x = g.constant(1, 3, vec![0.3, -1.0, 2.0]);
        let m = g.mse(x, x);
        assert_eq!(g.scalar(m), 0.0);
        let c = 7;
        let u = g.constant(1, c, vec![0.5; c]);
        let xe = g.softmax_cross_entropy(u, &[3]);
        assert!((g.scalar(xe) - (c as f64).ln()).abs() < 1e-12);
        let sure = g.constant(1, 2, vec![60.0, -60.0]);
        let xe2 = g.softmax_cross_entropy(sure, &[0]);
        assert!(g.scalar(xe2) < 1e-6);
        // Direct-formula oracle for a random case.
        let logits = [0.2, -1.3, 0.7, 2.1];
        let l = g.constant(1, 4, logits.to_vec());
        let xe3 = g.softmax_cross_entropy(l, &[2]);
        let z: f64 = logits.iter().map(|v: &f64| v.exp()).sum();
        assert!((g.scalar(xe3) - (z.ln() - 0.7)).abs() < 1e-12);
        let bl = g.constant(2, 1, vec![0.4, -2.0]);
        let bce = g.binary_cross_entropy(bl, &[1.0, 0.0]);
        let direct = (-(1.0 / (1.0 + (-0.4f64).exp())).ln() - (1.0 - 1.0 / (1.0 + 2.0f64.exp())).ln()) / 2.0;
        assert!((g.scalar(bce) - direct).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn class_out_of_range() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let x = g.constant(1, 3, vec![0.0; 3]);
        g.softmax_cross_entropy(x, &[3]);
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch")]
    fn shape_mismatch_names_shapes() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let a = g.constant(2, 3, vec![0.0; 6]);
        let b = g.constant(2, 3, vec![0.0; 6]);
        g.matmul(a, b);
    }

    #[test]
    fn scalar_product_gradient() {
        let s = store_with(vec![("x", vec![1], vec![3.0]), ("y", vec![1], vec![-2.0]), ("z", vec![1], vec![5.0])]);
        let mut g = Graph::new(&s);
        let x = g.param(ParamId(0));
        let y = g.param(ParamId(1));
        let p = g.mul(x, y);
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap(), &[-2.0]);
        assert_eq!(grads.get(ParamId(1)).unwrap(), &[3.0]);
        assert!(grads.get(ParamId(2)).is_none());
        assert_eq!(grads.dense(ParamId(2), 1), vec![0.0]);
    }

    #[test]
    fn mse_gradient_closed_form() {
        // d/dW mse(W x, t) = 2 (W x - t) x^T / n with W as [out, in] and
        // the graph computing x^T W^T, i.e. a [1,in] x [in,out] product.
        let w = vec![0.5, -1.0, 0.25, 2.0, 0.0, -0.75];
        let s = store_with(vec![("wt", vec![3, 2], w.clone())]);
        let x = [1.5, -0.5, 2.0];
        let t = [0.3, -1.2];
        let mut g = Graph::new(&s);
        let xv = g.constant(1, 3, x.to_vec());
        let wt = g.param(ParamId(0));
        let y = g.matmul(xv, wt);
        let tv = g.constant(1, 2, t.to_vec());
        let loss = g.mse(y, tv);
        let grads = g.backward(loss).unwrap();
        let yv = g.value(y).to_vec();
        let got = grads.get(ParamId(0)).unwrap();
        for i in 0..3 {
            for o in 0..2 {
                let expect = 2.0 * (yv[o] - t[o]) * x[i] / 2.0;
                assert!((got[i * 2 + o] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_errors() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let c = g.constant(1, 1, vec![1.0]);
        assert_eq!(g.backward(c).unwrap_err(), AutodiffError::Detached);
        let v = g.constant(1, 2, vec![1.0, 2.0]);
        assert_eq!(g.backward(v).unwrap_err(), AutodiffError::NotScalar(1, 2));
    }
}
