//! The gradient tape. Every op appends a node holding its forward value and
//! whatever it needs for the backward pass; `backward` walks the nodes in
//! exact reverse order of recording.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{matmul_into, matmul_nt_into, matmul_tn_into};
use super::{mismatch, NumericsError, Scalar, Tensor, GELU_COEFF, LAYERNORM_EPS};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A user-defined differentiable op. `backward` returns one gradient per
/// input (or `None` for inputs it does not differentiate).
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Softmax(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
        total: T,
    },
    Mse(Var, Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one backward pass, indexed by [`Var`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

// 0.5·x·(1 + tanh u) is evaluated as x·σ(2u), which needs one exp.
fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let c = T::of(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::of(GELU_COEFF);
    let u = c * (x + a * x * x * x);
    let s = T::one() / (T::one() + (-(u + u)).exp());
    let du = c * (T::one() + T::of(3.0) * a * x * x);
    (s, du)
}

fn gelu<T: Scalar>(x: T) -> T {
    x * gelu_parts(x).0
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (s, du) = gelu_parts(x);
    s + x * s * (T::one() - s) * (du + du)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Graph<T> {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copies `v` as a constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            k,
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.last_dim();
        if tb.numel() != c || tb.shape().len() != 1 {
            return Err(mismatch("add_bias", tx.shape(), tb.shape()));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o = *o + b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = *v * c;
        }
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(mismatch("transpose", t.shape(), &[]));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data_mut()[j * r + i] = t.data()[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let first = self.value(*inputs.first().ok_or_else(|| mismatch("concat", &[], &[]))?);
        let base = first.shape().to_vec();
        if axis >= base.len() {
            return Err(mismatch("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, NumericsError> {
        let t = self.value(x);
        let s = t.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(mismatch("slice", s, &[axis, start, len]));
        }
        let (outer, size, inner) = axis_split(s, axis);
        let mut shape = s.to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * size * inner + start * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::Slice {
                input: x,
                axis,
                start,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().fold(T::zero(), |a, &b| a + b) / T::of(t.numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Rows of `table` (V×L) selected by `ids`, giving (ids.len()×L).
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(mismatch("embedding", t.shape(), &[]));
        }
        let (v, l) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * l);
        for &id in ids {
            if id >= v {
                return Err(NumericsError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    size: v,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), l], data)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.last_dim();
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::from_fn(t.shape(), |i| gelu(t.data()[i]));
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumericsError> {
        let t = self.value(x);
        let c = t.last_dim();
        for p in [gamma, beta] {
            if self.value(p).numel() != c {
                return Err(mismatch("layernorm", t.shape(), self.shape(p)));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = t.rows();
        let mut xhat = vec![T::zero(); t.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = Tensor::zeros(t.shape());
        let n = T::of(c as f64);
        for r in 0..rows {
            let row = t.row(r);
            let mu = row.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)) / n;
            let rs = T::one() / (var + T::of(LAYERNORM_EPS)).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mu) * rs;
                xhat[r * c + j] = h;
                out.data_mut()[r * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Weighted mean cross-entropy of row-wise softmax(logits) against
    /// `targets`. With all weights zero the loss is 0 and so is its gradient.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[T],
    ) -> Result<Var, NumericsError> {
        let t = self.value(logits);
        let (rows, c) = (t.rows(), t.last_dim());
        if targets.len() != rows || weights.len() != rows {
            return Err(mismatch("cross_entropy", t.shape(), &[targets.len()]));
        }
        let mut probs = t.data().to_vec();
        let mut loss = T::zero();
        let mut total = T::zero();
        for r in 0..rows {
            let row = &mut probs[r * c..(r + 1) * c];
            softmax_in_place(row);
            if targets[r] >= c {
                return Err(NumericsError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: targets[r],
                    size: c,
                });
            }
            let w = weights[r];
            if w != T::zero() {
                // log-sum-exp form keeps tiny probabilities finite
                let lr = t.row(r);
                let max = lr.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let lse = lr.iter().fold(T::zero(), |a, &b| a + (b - max).exp()).ln() + max;
                loss = loss + w * (lse - lr[targets[r]]);
                total = total + w;
            }
        }
        let value = if total > T::zero() {
            loss / total
        } else {
            T::zero()
        };
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
                total,
            },
            rg,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let d = self.zip_same("mse", a, b, |x, y| (x - y) * (x - y))?;
        let n = T::of(d.numel() as f64);
        let v = d.data().iter().fold(T::zero(), |acc, &x| acc + x) / n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b), rg))
    }

    /// Inverted dropout with a caller-supplied keep mask (entries 0 or 1).
    pub fn dropout(&mut self, x: Var, keep: &[bool], p: T) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if keep.len() != t.numel() {
            return Err(mismatch("dropout", t.shape(), &[keep.len()]));
        }
        let s = T::one() / (T::one() - p);
        let mask: Vec<T> = keep
            .iter()
            .map(|&k| if k { s } else { T::zero() })
            .collect();
        let out = Tensor::from_fn(t.shape(), |i| t.data()[i] * mask[i]);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::NotScalar("backward"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        // constants never report gradients
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(&[m, k]);
                    matmul_nt_into(gd, tb.data(), ga.data_mut(), m, n, k);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(&[k, n]);
                    matmul_tn_into(ta.data(), gd, gb.data_mut(), k, m, n);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*bias) {
                    let c = g.last_dim();
                    let mut gb = Tensor::zeros(&[c]);
                    for row in gd.chunks(c) {
                        for (o, &v) in gb.data_mut().iter_mut().zip(row) {
                            *o = *o + v;
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let ga = Tensor::from_fn(ta.shape(), |i| gd[i] * tb.data()[i]);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = Tensor::from_fn(tb.shape(), |i| gd[i] * ta.data()[i]);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(x, c) => {
                let gx = Tensor::from_fn(g.shape(), |i| gd[i] * *c);
                self.accumulate(grads, *x, gx);
            }
            Op::Transpose(x) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let mut gx = Tensor::zeros(&[c, r]);
                for i in 0..r {
                    for j in 0..c {
                        gx.data_mut()[j * r + i] = gd[i * c + j];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshaped(self.shape(*x)).expect("same numel");
                self.accumulate(grads, *x, gx);
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_split(g.shape(), *axis);
                let total = g.shape()[*axis];
                let mut offset = 0;
                for &v in inputs {
                    let s = self.shape(v).to_vec();
                    let len = s[*axis];
                    if self.rg(v) {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            data.extend_from_slice(&gd[base..base + len * inner]);
                        }
                        self.accumulate(grads, v, Tensor::new(s, data).expect("shape"));
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let s = self.shape(*input).to_vec();
                let (outer, size, inner) = axis_split(&s, *axis);
                let len = g.shape()[*axis];
                let mut gx = Tensor::zeros(&s);
                for o in 0..outer {
                    let dst = o * size * inner + start * inner;
                    let src = o * len * inner;
                    gx.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&gd[src..src + len * inner]);
                }
                self.accumulate(grads, *input, gx);
            }
            Op::Sum(x) => {
                let gx = Tensor::filled(self.shape(*x), gd[0]);
                self.accumulate(grads, *x, gx);
            }
            Op::Mean(x) => {
                let n = T::of(self.value(*x).numel() as f64);
                let gx = Tensor::filled(self.shape(*x), gd[0] / n);
                self.accumulate(grads, *x, gx);
            }
            Op::Embedding { table, ids } => {
                let s = self.shape(*table).to_vec();
                let l = s[1];
                let mut gt = Tensor::zeros(&s);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt.data_mut()[id * l..(id + 1) * l];
                    for (o, &v) in dst.iter_mut().zip(&gd[r * l..(r + 1) * l]) {
                        *o = *o + v;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.last_dim();
                let mut gx = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gd[r * c..(r + 1) * c];
                    let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                    for j in 0..c {
                        gx.data_mut()[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                let gx = Tensor::from_fn(tx.shape(), |i| gd[i] * gelu_grad(tx.data()[i]));
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = g.last_dim();
                let rows = g.rows();
                let gam = self.value(*gamma).data();
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut gg = Tensor::zeros(self.shape(*gamma));
                    let mut gb = Tensor::zeros(self.shape(*beta));
                    for r in 0..rows {
                        for j in 0..c {
                            let v = gd[r * c + j];
                            gg.data_mut()[j] = gg.data()[j] + v * xhat[r * c + j];
                            gb.data_mut()[j] = gb.data()[j] + v;
                        }
                    }
                    self.accumulate(grads, *gamma, gg);
                    self.accumulate(grads, *beta, gb);
                }
                if self.rg(*x) {
                    let n = T::of(c as f64);
                    let mut gx = Tensor::zeros(g.shape());
                    for r in 0..rows {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            let gh = gd[r * c + j] * gam[j];
                            m1 = m1 + gh;
                            m2 = m2 + gh * xhat[r * c + j];
                        }
                        m1 = m1 / n;
                        m2 = m2 / n;
                        for j in 0..c {
                            let gh = gd[r * c + j] * gam[j];
                            gx.data_mut()[r * c + j] = rstd[r] * (gh - m1 - xhat[r * c + j] * m2);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
                total,
            } => {
                let s = self.shape(*logits).to_vec();
                let mut gl = Tensor::zeros(&s);
                if *total > T::zero() {
                    let c = *s.last().unwrap();
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        let scale = gd[0] * w / *total;
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            gl.data_mut()[r * c + j] = scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = T::of(ta.numel() as f64);
                let two = T::of(2.0);
                let ga = Tensor::from_fn(ta.shape(), |i| {
                    gd[0] * two * (ta.data()[i] - tb.data()[i]) / n
                });
                if self.rg(*b) {
                    let gb = Tensor::from_fn(tb.shape(), |i| -ga.data()[i]);
                    self.accumulate(grads, *b, gb);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Dropout { x, mask } => {
                let gx = Tensor::from_fn(g.shape(), |i| gd[i] * mask[i]);
                self.accumulate(grads, *x, gx);
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&ins, &node.value, g);
                for (&v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        debug_assert_eq!(gi.shape(), self.shape(v), "{}", op.name());
                        self.accumulate(grads, v, gi);
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}
