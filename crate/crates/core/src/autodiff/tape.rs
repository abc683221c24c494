use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul, matmul_nt, matmul_tn, Element, Tensor};
use super::{AutodiffError, PrimitiveKind};
use crate::exec::Execution;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    SparseMatMul(Var, SparseRows),
    SegmentSoftmax(Var, Arc<[usize]>),
    MeanPool(Var, Arc<[usize]>),
    Dropout(Var, Vec<T>),
    Mse(Var, Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
}

impl<T> Op<T> {
    fn kind(&self) -> Option<PrimitiveKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul(..) => PrimitiveKind::MatMul,
            Op::Add(..) => PrimitiveKind::Add,
            Op::Mul(..) => PrimitiveKind::ElementwiseMul,
            Op::Relu(_) => PrimitiveKind::Relu,
            Op::LeakyRelu(..) => PrimitiveKind::LeakyRelu,
            Op::Sigmoid(_) => PrimitiveKind::Sigmoid,
            Op::Tanh(_) => PrimitiveKind::Tanh,
            Op::Gather(..) => PrimitiveKind::Gather,
            Op::ScatterAdd(..) => PrimitiveKind::ScatterAddRows,
            Op::SparseMatMul(..) => PrimitiveKind::SparseMatMul,
            Op::SegmentSoftmax(..) => PrimitiveKind::SegmentSoftmax,
            Op::MeanPool(..) => PrimitiveKind::MeanPoolRows,
            Op::Dropout(..) => PrimitiveKind::Dropout,
            Op::Mse(..) => PrimitiveKind::Mse,
            Op::Reshape(_) => PrimitiveKind::Reshape,
            Op::ConcatCols(_) => PrimitiveKind::ConcatCols,
        })
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitives in execution order so gradients can be propagated in
/// exact reverse order.
#[derive(Debug)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    exec: Execution,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

/// How a right-hand operand broadcasts against the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Column,
    Scalar,
}

fn broadcast_kind(lhs: (usize, usize), rhs: (usize, usize), allow_column: bool) -> Option<Broadcast> {
    if lhs == rhs {
        Some(Broadcast::Same)
    } else if rhs == (1, 1) {
        Some(Broadcast::Scalar)
    } else if rhs == (1, lhs.1) {
        Some(Broadcast::Row)
    } else if allow_column && rhs == (lhs.0, 1) {
        Some(Broadcast::Column)
    } else {
        None
    }
}

/// `f(a, b)` elementwise with `b` broadcast to `a`'s shape.
fn broadcast_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, bc: Broadcast, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let (rows, cols) = a.shape();
    let mut out = Vec::with_capacity(a.len());
    if cols > 0 {
        match bc {
            Broadcast::Same => out.extend(a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y))),
            Broadcast::Scalar => {
                let y = b.data()[0];
                out.extend(a.data().iter().map(|&x| f(x, y)));
            }
            Broadcast::Row => {
                for r in a.data().chunks(cols) {
                    out.extend(r.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
                }
            }
            Broadcast::Column => {
                for (r, &y) in a.data().chunks(cols).zip(b.data()) {
                    out.extend(r.iter().map(|&x| f(x, y)));
                }
            }
        }
    }
    Tensor::from_vec(rows, cols, out)
}

fn reduce_to<T: Element>(g: &Tensor<T>, b: Broadcast, shape: (usize, usize)) -> Tensor<T> {
    let cols = g.cols();
    let mut acc = vec![0.0f64; shape.0 * shape.1];
    if cols > 0 {
        match b {
            Broadcast::Same => return g.clone(),
            Broadcast::Scalar => acc[0] = g.data().iter().map(|v| v.to_f64()).sum(),
            Broadcast::Row => {
                for r in g.data().chunks(cols) {
                    for (a, v) in acc.iter_mut().zip(r) {
                        *a += v.to_f64();
                    }
                }
            }
            Broadcast::Column => {
                for (a, r) in acc.iter_mut().zip(g.data().chunks(cols)) {
                    *a = r.iter().map(|v| v.to_f64()).sum();
                }
            }
        }
    }
    Tensor::from_vec(shape.0, shape.1, acc.into_iter().map(T::from_f64).collect())
}

fn check_offsets(offsets: &[usize], rows: usize) -> Result<(), AutodiffError> {
    let ok = offsets.len() >= 2
        && offsets[0] == 0
        && *offsets.last().unwrap() == rows
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(AutodiffError::InvalidSegment(format!(
            "offsets must rise from 0 to {rows}, got {} entries",
            offsets.len()
        )))
    }
}

fn gather_rows<T: Element>(x: &Tensor<T>, index: &[usize]) -> Tensor<T> {
    let cols = x.cols();
    let mut out = Vec::with_capacity(index.len() * cols);
    for &i in index {
        out.extend_from_slice(x.row(i));
    }
    Tensor::from_vec(index.len(), cols, out)
}

/// A fixed sparse operator given as weighted row moves:
/// `out[dst[e]] += coef[e] * x[src[e]]`.
#[derive(Clone, Debug)]
pub struct SparseRows {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub coef: Arc<[f64]>,
    pub n_out: usize,
}

fn sparse_apply<T: Element>(x: &Tensor<T>, from: &[usize], to: &[usize], coef: &[f64], n_rows: usize) -> Tensor<T> {
    let cols = x.cols();
    let mut out = Tensor::zeros(n_rows, cols);
    let od = out.data_mut();
    for ((&f, &t), &c) in from.iter().zip(to).zip(coef) {
        let c = T::from_f64(c);
        let src = x.row(f);
        for (o, &v) in od[t * cols..(t + 1) * cols].iter_mut().zip(src) {
            *o += c * v;
        }
    }
    out
}

fn scatter_rows<T: Element>(x: &Tensor<T>, index: &[usize], n_rows: usize) -> Tensor<T> {
    let cols = x.cols();
    let mut out = Tensor::zeros(n_rows, cols);
    let od = out.data_mut();
    for (src, &dst) in index.iter().enumerate() {
        let from = x.row(src);
        let to = &mut od[dst * cols..(dst + 1) * cols];
        for (o, v) in to.iter_mut().zip(from) {
            *o += *v;
        }
    }
    out
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            exec: Execution::default(),
        }
    }

    /// Tape whose matrix products run with the given execution mode.
    pub fn with_execution(exec: Execution) -> Self {
        Tape {
            nodes: Vec::new(),
            exec,
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Primitive that produced `v`, or `None` for leaves.
    pub fn kind(&self, v: Var) -> Option<PrimitiveKind> {
        self.nodes[v.0].op.kind()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn mismatch(kind: PrimitiveKind, a: (usize, usize), b: (usize, usize)) -> AutodiffError {
        AutodiffError::ShapeMismatch { kind, lhs: a, rhs: b }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Self::mismatch(PrimitiveKind::MatMul, sa, sb));
        }
        let out = matmul(self.value(a), self.value(b), self.exec);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a + b`, where `b` may be a `[1 x cols]` row (bias) or a 1x1 scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bc = broadcast_kind(sa, sb, false).ok_or_else(|| Self::mismatch(PrimitiveKind::Add, sa, sb))?;
        let out = broadcast_map(self.value(a), self.value(b), bc, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product; `b` may also be a `[rows x 1]` column, a
    /// `[1 x cols]` row or a scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bc = broadcast_kind(sa, sb, true).ok_or_else(|| Self::mismatch(PrimitiveKind::ElementwiseMul, sa, sb))?;
        let out = broadcast_map(self.value(a), self.value(b), bc, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let v = self.value(x);
        let out = Tensor::from_vec(v.rows(), v.cols(), v.data().iter().map(|&e| f(e)).collect());
        self.push(out, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        self.unary(
            x,
            Op::LeakyRelu(x, slope),
            move |v| if v > T::zero() { v } else { v * s },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    /// Row selection: output row `r` is input row `index[r]`.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let rows = self.shape(x).0;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: rows });
        }
        let out = gather_rows(self.value(x), &index);
        Ok(self.push(out, Op::Gather(x, index), &[x]))
    }

    /// Applies a fixed sparse operator to the rows of `x` (no gradient
    /// flows to the coefficients).
    pub fn sparse_matmul(&mut self, x: Var, op: &SparseRows) -> Result<Var, AutodiffError> {
        let (rows, cols) = self.shape(x);
        if op.src.len() != op.dst.len() || op.src.len() != op.coef.len() {
            return Err(Self::mismatch(
                PrimitiveKind::SparseMatMul,
                (op.src.len(), op.dst.len()),
                (op.coef.len(), cols),
            ));
        }
        if let Some(&bad) = op.src.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: rows });
        }
        if let Some(&bad) = op.dst.iter().find(|&&i| i >= op.n_out) {
            return Err(AutodiffError::IndexOutOfRange {
                index: bad,
                len: op.n_out,
            });
        }
        let out = sparse_apply(self.value(x), &op.src, &op.dst, &op.coef, op.n_out);
        Ok(self.push(out, Op::SparseMatMul(x, op.clone()), &[x]))
    }

    /// Adds input row `r` into output row `index[r]`; output has `n_rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, index: Arc<[usize]>, n_rows: usize) -> Result<Var, AutodiffError> {
        let rows = self.shape(x).0;
        if index.len() != rows {
            return Err(Self::mismatch(
                PrimitiveKind::ScatterAddRows,
                self.shape(x),
                (index.len(), 1),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n_rows) {
            return Err(AutodiffError::IndexOutOfRange {
                index: bad,
                len: n_rows,
            });
        }
        let out = scatter_rows(self.value(x), &index, n_rows);
        Ok(self.push(out, Op::ScatterAdd(x, index), &[x]))
    }

    /// Column-wise softmax within each contiguous row segment
    /// `offsets[s]..offsets[s + 1]`.
    pub fn segment_softmax(&mut self, x: Var, offsets: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let (rows, cols) = self.shape(x);
        check_offsets(&offsets, rows)?;
        let v = self.value(x);
        let mut out = Tensor::zeros(rows, cols);
        for w in offsets.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if lo == hi {
                continue;
            }
            for c in 0..cols {
                let mut m = f64::NEG_INFINITY;
                for r in lo..hi {
                    m = m.max(v.get(r, c).to_f64());
                }
                let mut z = 0.0f64;
                for r in lo..hi {
                    z += (v.get(r, c).to_f64() - m).exp();
                }
                for r in lo..hi {
                    out.set(r, c, T::from_f64((v.get(r, c).to_f64() - m).exp() / z));
                }
            }
        }
        Ok(self.push(out, Op::SegmentSoftmax(x, offsets), &[x]))
    }

    /// Mean of each contiguous row segment; one output row per segment.
    pub fn mean_pool_rows(&mut self, x: Var, offsets: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let (rows, cols) = self.shape(x);
        check_offsets(&offsets, rows)?;
        if offsets.windows(2).any(|w| w[0] == w[1]) {
            return Err(AutodiffError::InvalidSegment("empty pooling segment".into()));
        }
        let v = self.value(x);
        let n_seg = offsets.len() - 1;
        let mut out = Tensor::zeros(n_seg, cols);
        let mut acc = vec![0.0f64; cols];
        for (s, w) in offsets.windows(2).enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for r in w[0]..w[1] {
                for (a, e) in acc.iter_mut().zip(v.row(r)) {
                    *a += e.to_f64();
                }
            }
            let n = (w[1] - w[0]) as f64;
            for (c, a) in acc.iter().enumerate() {
                out.set(s, c, T::from_f64(a / n));
            }
        }
        Ok(self.push(out, Op::MeanPool(x, offsets), &[x]))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1 / (1 - p)`. The mask depends only on `seed`.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidAttribute(format!(
                "dropout rate {p} not in [0, 1)"
            )));
        }
        let n = self.value(x).len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let v = self.value(x);
        let out = Tensor::from_vec(
            v.rows(),
            v.cols(),
            v.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect(),
        );
        Ok(self.push(out, Op::Dropout(x, mask), &[x]))
    }

    /// `(1 / rows) * sum((pred - target)^2)`: squared error summed over
    /// columns, averaged over rows. Returns a 1x1 tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, AutodiffError> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st || sp.0 == 0 {
            return Err(Self::mismatch(PrimitiveKind::Mse, sp, st));
        }
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| {
                let d = p.to_f64() - t.to_f64();
                d * d
            })
            .sum();
        let out = Tensor::scalar(T::from_f64(s / sp.0 as f64));
        Ok(self.push(out, Op::Mse(pred, target), &[pred, target]))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        if s.0 * s.1 != rows * cols {
            return Err(Self::mismatch(PrimitiveKind::Reshape, s, (rows, cols)));
        }
        let out = Tensor::from_vec(rows, cols, self.value(x).data().to_vec());
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::InvalidAttribute("concat of zero tensors".into()));
        };
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Self::mismatch(
                    PrimitiveKind::ConcatCols,
                    self.shape(first),
                    self.shape(p),
                ));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            grads,
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let acc = |v: Var, t: Tensor<T>, grads: &mut [Option<Tensor<T>>]| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let elementwise = |x: Var, f: &dyn Fn(T, T, T) -> T| {
            let xv = &self.nodes[x.0].value;
            let yv = &node.value;
            Tensor::from_vec(
                xv.rows(),
                xv.cols(),
                (0..xv.len())
                    .map(|i| f(g.data()[i], xv.data()[i], yv.data()[i]))
                    .collect(),
            )
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let t = matmul_nt(g, self.value(*b), self.exec);
                    acc(*a, t, grads);
                }
                if wants(*b) {
                    let t = matmul_tn(self.value(*a), g, self.exec);
                    acc(*b, t, grads);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(*a, g.clone(), grads);
                }
                if wants(*b) {
                    let bs = self.shape(*b);
                    let bc = broadcast_kind(g.shape(), bs, false).unwrap();
                    acc(*b, reduce_to(g, bc, bs), grads);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let bs = bv.shape();
                let bc = broadcast_kind(av.shape(), bs, true).unwrap();
                if wants(*a) {
                    acc(*a, broadcast_map(g, bv, bc, |x, y| x * y), grads);
                }
                if wants(*b) {
                    let full = Tensor::from_vec(
                        av.rows(),
                        av.cols(),
                        g.data().iter().zip(av.data()).map(|(x, y)| *x * *y).collect(),
                    );
                    acc(*b, reduce_to(&full, bc, bs), grads);
                }
            }
            Op::Relu(x) => {
                let t = elementwise(*x, &|g, x, _| if x > T::zero() { g } else { T::zero() });
                acc(*x, t, grads);
            }
            Op::LeakyRelu(x, slope) => {
                let s = T::from_f64(*slope);
                let t = elementwise(*x, &|g, x, _| if x > T::zero() { g } else { g * s });
                acc(*x, t, grads);
            }
            Op::Sigmoid(x) => {
                let t = elementwise(*x, &|g, _, y| g * y * (T::one() - y));
                acc(*x, t, grads);
            }
            Op::Tanh(x) => {
                let t = elementwise(*x, &|g, _, y| g * (T::one() - y * y));
                acc(*x, t, grads);
            }
            Op::Gather(x, index) => {
                let t = scatter_rows(g, index, self.shape(*x).0);
                acc(*x, t, grads);
            }
            Op::ScatterAdd(x, index) => {
                let t = gather_rows(g, index);
                acc(*x, t, grads);
            }
            Op::SparseMatMul(x, op) => {
                let t = sparse_apply(g, &op.dst, &op.src, &op.coef, self.shape(*x).0);
                acc(*x, t, grads);
            }
            Op::SegmentSoftmax(x, offsets) => {
                let y = &node.value;
                let cols = y.cols();
                let mut t = Tensor::zeros(y.rows(), cols);
                for w in offsets.windows(2) {
                    for c in 0..cols {
                        let mut dot = 0.0f64;
                        for r in w[0]..w[1] {
                            dot += g.get(r, c).to_f64() * y.get(r, c).to_f64();
                        }
                        for r in w[0]..w[1] {
                            let yv = y.get(r, c).to_f64();
                            t.set(r, c, T::from_f64(yv * (g.get(r, c).to_f64() - dot)));
                        }
                    }
                }
                acc(*x, t, grads);
            }
            Op::MeanPool(x, offsets) => {
                let (rows, cols) = self.shape(*x);
                let mut t = Tensor::zeros(rows, cols);
                for (s, w) in offsets.windows(2).enumerate() {
                    let inv = T::from_f64(1.0 / (w[1] - w[0]) as f64);
                    for r in w[0]..w[1] {
                        for c in 0..cols {
                            t.set(r, c, g.get(s, c) * inv);
                        }
                    }
                }
                acc(*x, t, grads);
            }
            Op::Dropout(x, mask) => {
                let t = Tensor::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(mask).map(|(a, m)| *a * *m).collect(),
                );
                acc(*x, t, grads);
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let scale = 2.0 * g.item().to_f64() / pv.rows() as f64;
                let d: Vec<T> = pv
                    .data()
                    .iter()
                    .zip(tv.data())
                    .map(|(a, b)| T::from_f64(scale * (a.to_f64() - b.to_f64())))
                    .collect();
                if wants(*t) {
                    let neg = Tensor::from_vec(pv.rows(), pv.cols(), d.iter().map(|v| -*v).collect());
                    acc(*t, neg, grads);
                }
                if wants(*p) {
                    acc(*p, Tensor::from_vec(pv.rows(), pv.cols(), d), grads);
                }
            }
            Op::Reshape(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, Tensor::from_vec(r, c, g.data().to_vec()), grads);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    if wants(p) {
                        let mut data = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        acc(p, Tensor::from_vec(rows, pc, data), grads);
                    }
                    offset += pc;
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Element = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving `None` behind.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}
