//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order; [`Graph::backward`] walks it in reverse.
//! Parameter leaves borrow their values from a [`ParamSet`] instead of copying.

use super::kernels::{self, ConvSpec, Segment};
use super::param::{ParamId, ParamSet};
use super::real::{gemm, Layout, Real};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Attention { qkv: Var, heads: usize, segs: Vec<Segment>, probs: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<T> },
    BceWithLogits { logits: Var, targets: Vec<T>, weight: T },
    Conv2d { x: Var, w: Var, b: Var, spec: ConvSpec, in_shape: [usize; 4], cols: Vec<T> },
    Upsample2(Var),
    Sum(Var),
    SumSquares(Var),
    SumAbs(Var),
    Reshape(Var),
    StraightThrough { encoder_side: Var },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
    /// Per-row negative log-likelihoods for cross-entropy nodes.
    row_nll: Vec<T>,
}

/// Gradients from one backward pass.
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    nodes: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to any node that required one (e.g. a [`Graph::leaf`]).
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }
}

pub struct Graph<'p, T: Real> {
    params: Option<&'p ParamSet<T>>,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Graph { params: None, nodes: Vec::new() }
    }

    pub fn with_params(params: &'p ParamSet<T>) -> Self {
        Graph { params: Some(params), nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad, row_nll: Vec::new() });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("param graph").value(*id),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable free leaf (gradient readable through [`Gradients::wrt`]).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(self.params.is_some(), "graph has no parameter set");
        self.nodes.push(Node { value: Value::Param(id), op: Op::Leaf, needs_grad: true, row_nll: Vec::new() });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let k = av.cols();
        let m = av.rows();
        assert_eq!(bv.shape().len(), 2, "matmul rhs must be 2-D");
        assert_eq!(bv.shape()[0], k, "matmul inner dimension");
        let n = bv.shape()[1];
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = Tensor::zeros(&shape);
        gemm(m, k, n, T::one(), av.data(), Layout::row_major(k), bv.data(), Layout::row_major(n), T::zero(), out.data_mut(), Layout::row_major(n));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b }, ng)
    }

    /// `x · w + b` with `w: [in × out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let i = xv.cols();
        let n = xv.rows();
        assert_eq!(wv.shape()[0], i, "linear input width");
        let o = wv.shape()[1];
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = o;
        let mut out = Tensor::zeros(&shape);
        let bias = b.map(|b| self.value(b).data());
        kernels::linear(xv.data(), n, wv.data(), i, o, bias, out.data_mut());
        let ng = self.ng(x) || self.ng(w) || b.map(|b| self.ng(b)).unwrap_or(false);
        self.push(out, Op::Linear { x, w, b }, ng)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise operands differ in size");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::gelu);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let d = xv.cols();
        let mut out = Tensor::zeros(xv.shape());
        let (mean, rstd) = kernels::layer_norm(xv.data(), d, self.value(gain).data(), self.value(bias).data(), out.data_mut());
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, mean, rstd }, ng)
    }

    /// Row gather: `out[i] = table[ids[i]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let d = tv.cols();
        let rows = tv.rows();
        let mut out = Tensor::zeros(&[ids.len(), d]);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < rows, "embedding id {id} out of range {rows}");
            out.row_mut(i).copy_from_slice(tv.row(id));
        }
        let ng = self.ng(table);
        self.push(out, Op::Embedding { table, ids: ids.to_vec() }, ng)
    }

    /// Causal self-attention over packed `[N × 3d]` q|k|v rows split into segments.
    pub fn causal_attention(&mut self, qkv: Var, heads: usize, segs: &[Segment]) -> Var {
        let qv = self.value(qkv);
        let d = qv.cols() / 3;
        assert_eq!(d % heads, 0, "heads must divide width");
        let n = qv.rows();
        let mut out = Tensor::zeros(&[n, d]);
        let probs = kernels::causal_attention(qv.data(), d, heads, segs, out.data_mut());
        let ng = self.ng(qkv);
        self.push(out, Op::Attention { qkv, heads, segs: segs.to_vec(), probs }, ng)
    }

    /// `Σ_i w_i · (−log softmax(logits_i)[target_i])`, skipping rows with `w_i == 0`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Var {
        let lv = self.value(logits);
        let v = lv.cols();
        assert_eq!(lv.rows(), targets.len());
        assert_eq!(targets.len(), weights.len());
        let mut total = T::zero();
        let mut row_nll = vec![T::zero(); targets.len()];
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w == T::zero() {
                continue;
            }
            assert!(t < v, "target {t} out of range {v}");
            let row = lv.row(i);
            let nll = kernels::log_sum_exp(row) - row[t];
            row_nll[i] = nll;
            total += w * nll;
        }
        let ng = self.ng(logits);
        let var = self.push(
            Tensor::scalar(total),
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec() },
            ng,
        );
        self.nodes[var.0].row_nll = row_nll;
        var
    }

    /// Per-row NLL computed by a cross-entropy node (zero on skipped rows).
    pub fn row_nll(&self, ce: Var) -> &[T] {
        &self.nodes[ce.0].row_nll
    }

    /// `weight · Σ BCE(logit, target)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], weight: T) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len());
        let mut total = T::zero();
        for (&x, &y) in lv.data().iter().zip(targets) {
            total += x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln();
        }
        let ng = self.ng(logits);
        self.push(Tensor::scalar(total * weight), Op::BceWithLogits { logits, targets: targets.to_vec(), weight }, ng)
    }

    /// NHWC convolution; `w: [k·k·c_in × c_out]`, `b: [c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        assert_eq!(s.len(), 4, "conv2d expects NHWC input");
        let in_shape = [s[0], s[1], s[2], s[3]];
        let wv = self.value(w);
        let width = spec.kernel * spec.kernel * in_shape[3];
        assert_eq!(wv.shape()[0], width, "conv2d weight rows");
        let c_out = wv.shape()[1];
        let (cols, ho, wo) = kernels::im2col(xv.data(), in_shape[0], in_shape[1], in_shape[2], in_shape[3], spec);
        let rows = in_shape[0] * ho * wo;
        let mut out = Tensor::zeros(&[in_shape[0], ho, wo, c_out]);
        kernels::linear(&cols, rows, wv.data(), width, c_out, Some(self.value(b).data()), out.data_mut());
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(out, Op::Conv2d { x, w, b, spec, in_shape, cols }, ng)
    }

    /// Nearest-neighbour 2× upsampling of an NHWC tensor.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let mut out = Tensor::zeros(&[b, 2 * h, 2 * w, c]);
        let od = out.data_mut();
        let xd = xv.data();
        for bi in 0..b {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let src = ((bi * h + y / 2) * w + xx / 2) * c;
                    let dst = ((bi * 2 * h + y) * 2 * w + xx) * c;
                    od[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::Upsample2(x), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_squares();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumSquares(a), ng)
    }

    pub fn sum_abs(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x.abs()).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAbs(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshape(shape).expect("reshape preserves size");
        let ng = self.ng(a);
        self.push(t, Op::Reshape(a), ng)
    }

    /// Forward value of `quantized`, gradient routed unchanged to `encoder_side`.
    pub fn straight_through(&mut self, encoder_side: Var, quantized: &Tensor<T>) -> Var {
        assert_eq!(self.value(encoder_side).shape(), quantized.shape());
        let ng = self.ng(encoder_side);
        self.push(quantized.clone(), Op::StraightThrough { encoder_side }, ng)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let n_params = self.params.map(|p| p.len()).unwrap_or(0);
        let mut pgrads: Vec<Option<Tensor<T>>> = (0..n_params).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Value::Param(id), Some(g)) = (&node.value, &grads[i]) {
                match &mut pgrads[id.0] {
                    Some(acc) => acc.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        Gradients { params: pgrads, nodes: grads }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.value(v).shape().to_vec();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape)))
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.shape()[1]);
                if let Some(da) = self.slot(grads, *a) {
                    gemm(m, n, k, T::one(), gd, Layout::row_major(n), bv.data(), Layout::transposed(n), T::one(), da.data_mut(), Layout::row_major(k));
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm(k, m, n, T::one(), av.data(), Layout::transposed(k), gd, Layout::row_major(n), T::one(), db.data_mut(), Layout::row_major(n));
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, ii, o) = (xv.rows(), xv.cols(), wv.shape()[1]);
                if let Some(dx) = self.slot(grads, *x) {
                    gemm(n, o, ii, T::one(), gd, Layout::row_major(o), wv.data(), Layout::transposed(o), T::one(), dx.data_mut(), Layout::row_major(ii));
                }
                if let Some(dw) = self.slot(grads, *w) {
                    gemm(ii, n, o, T::one(), xv.data(), Layout::transposed(ii), gd, Layout::row_major(o), T::one(), dw.data_mut(), Layout::row_major(o));
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        let dbd = db.data_mut();
                        for r in 0..n {
                            for (acc, &v) in dbd.iter_mut().zip(&gd[r * o..(r + 1) * o]) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.slot(grads, *v) {
                        d.add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.add_assign(g);
                }
                if let Some(d) = self.slot(grads, *b) {
                    for (acc, &v) in d.data_mut().iter_mut().zip(gd) {
                        *acc -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for ((acc, &gv), &y) in d.data_mut().iter_mut().zip(gd).zip(bv) {
                        *acc += gv * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((acc, &gv), &x) in d.data_mut().iter_mut().zip(gd).zip(av) {
                        *acc += gv * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(d) = self.slot(grads, *a) {
                    for (acc, &gv) in d.data_mut().iter_mut().zip(gd) {
                        *acc += gv * *s;
                    }
                }
            }
            Op::Gelu(a) => {
                let xv = self.value(*a).data();
                if let Some(d) = self.slot(grads, *a) {
                    for ((acc, &gv), &x) in d.data_mut().iter_mut().zip(gd).zip(xv) {
                        *acc += gv * kernels::gelu_grad(x);
                    }
                }
            }
            Op::Tanh(a) => {
                let yv = self.value(Var(i)).data();
                if let Some(d) = self.slot(grads, *a) {
                    for ((acc, &gv), &y) in d.data_mut().iter_mut().zip(gd).zip(yv) {
                        *acc += gv * (T::one() - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let yv = self.value(Var(i)).data();
                if let Some(d) = self.slot(grads, *a) {
                    for ((acc, &gv), &y) in d.data_mut().iter_mut().zip(gd).zip(yv) {
                        *acc += gv * y * (T::one() - y);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, mean, rstd } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let n = xv.rows();
                let gainv = self.value(*gain).data();
                let inv_d = T::one() / T::f(d as f64);
                let mut xhat = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                let need_x = self.ng(*x);
                let need_g = self.ng(*gain);
                let need_b = self.ng(*bias);
                let mut dgain = vec![T::zero(); d];
                let mut dbias = vec![T::zero(); d];
                let mut dx_all = if need_x { vec![T::zero(); n * d] } else { Vec::new() };
                for r in 0..n {
                    let row = xv.row(r);
                    let grow = &gd[r * d..(r + 1) * d];
                    for j in 0..d {
                        xhat[j] = (row[j] - mean[r]) * rstd[r];
                        dxhat[j] = grow[j] * gainv[j];
                        dgain[j] += grow[j] * xhat[j];
                        dbias[j] += grow[j];
                    }
                    if need_x {
                        let m1 = dxhat.iter().copied().sum::<T>() * inv_d;
                        let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                        for j in 0..d {
                            dx_all[r * d + j] = rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
                        }
                    }
                }
                if need_x {
                    let dx = self.slot(grads, *x).unwrap();
                    for (acc, v) in dx.data_mut().iter_mut().zip(dx_all) {
                        *acc += v;
                    }
                }
                if need_g {
                    let dg = self.slot(grads, *gain).unwrap();
                    for (acc, v) in dg.data_mut().iter_mut().zip(dgain) {
                        *acc += v;
                    }
                }
                if need_b {
                    let db = self.slot(grads, *bias).unwrap();
                    for (acc, v) in db.data_mut().iter_mut().zip(dbias) {
                        *acc += v;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(dt) = self.slot(grads, *table) {
                    let d = dt.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &gd[r * d..(r + 1) * d];
                        for (acc, &v) in dt.row_mut(id).iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Attention { qkv, heads, segs, probs } => {
                let qv = self.value(*qkv);
                let d = qv.cols() / 3;
                let dh = d / heads;
                let scale = T::one() / T::f(dh as f64).sqrt();
                let qd = qv.data();
                if let Some(dq) = self.slot(grads, *qkv) {
                    let dqd = dq.data_mut();
                    let mut p_off = 0;
                    for seg in segs {
                        let t = seg.len;
                        let mut dp = vec![T::zero(); t * t];
                        for h in 0..*heads {
                            let p = &probs[p_off..p_off + t * t];
                            let base = seg.start * 3 * d + h * dh;
                            let q_l = Layout { offset: base, rs: 3 * d, cs: 1 };
                            let k_l = Layout { offset: base + d, rs: 3 * d, cs: 1 };
                            let v_l = Layout { offset: base + 2 * d, rs: 3 * d, cs: 1 };
                            let vt_l = Layout { offset: base + 2 * d, rs: 1, cs: 3 * d };
                            let do_l = Layout { offset: seg.start * d + h * dh, rs: d, cs: 1 };
                            // dV += Pᵀ dO
                            gemm(t, t, dh, T::one(), p, Layout::transposed(t), gd, do_l, T::one(), dqd, v_l);
                            // dP = dO Vᵀ
                            gemm(t, dh, t, T::one(), gd, do_l, qd, vt_l, T::zero(), &mut dp, Layout::row_major(t));
                            // dS = P ⊙ (dP − rowdot(dP, P)) · scale
                            for r in 0..t {
                                let pr = &p[r * t..r * t + r + 1];
                                let dpr = &mut dp[r * t..(r + 1) * t];
                                let dot: T = pr.iter().zip(dpr.iter()).map(|(&a, &b)| a * b).sum();
                                for c in 0..=r {
                                    dpr[c] = pr[c] * (dpr[c] - dot) * scale;
                                }
                                for v in dpr[r + 1..].iter_mut() {
                                    *v = T::zero();
                                }
                            }
                            // dQ += dS K ; dK += dSᵀ Q
                            gemm(t, t, dh, T::one(), &dp, Layout::row_major(t), qd, k_l, T::one(), dqd, q_l);
                            gemm(t, t, dh, T::one(), &dp, Layout::transposed(t), qd, q_l, T::one(), dqd, k_l);
                            p_off += t * t;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, weights } => {
                let lv = self.value(*logits);
                let v = lv.cols();
                let up = gd[0];
                if let Some(dl) = self.slot(grads, *logits) {
                    let mut probs = vec![T::zero(); v];
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        probs.copy_from_slice(lv.row(r));
                        kernels::softmax_in_place(&mut probs);
                        probs[t] -= T::one();
                        let s = up * w;
                        for (acc, &p) in dl.row_mut(r).iter_mut().zip(&probs) {
                            *acc += s * p;
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, targets, weight } => {
                let lv = self.value(*logits).data();
                let s = gd[0] * *weight;
                if let Some(dl) = self.slot(grads, *logits) {
                    for ((acc, &x), &y) in dl.data_mut().iter_mut().zip(lv).zip(targets) {
                        *acc += s * (kernels::sigmoid(x) - y);
                    }
                }
            }
            Op::Conv2d { x, w, b, spec, in_shape, cols } => {
                let wv = self.value(*w);
                let width = wv.shape()[0];
                let c_out = wv.shape()[1];
                let rows = cols.len() / width;
                if let Some(dw) = self.slot(grads, *w) {
                    gemm(width, rows, c_out, T::one(), cols, Layout::transposed(width), gd, Layout::row_major(c_out), T::one(), dw.data_mut(), Layout::row_major(c_out));
                }
                if let Some(db) = self.slot(grads, *b) {
                    let dbd = db.data_mut();
                    for r in 0..rows {
                        for (acc, &v) in dbd.iter_mut().zip(&gd[r * c_out..(r + 1) * c_out]) {
                            *acc += v;
                        }
                    }
                }
                if self.ng(*x) {
                    let mut dcols = vec![T::zero(); rows * width];
                    gemm(rows, c_out, width, T::one(), gd, Layout::row_major(c_out), wv.data(), Layout::transposed(c_out), T::zero(), &mut dcols, Layout::row_major(width));
                    let dx = self.slot(grads, *x).unwrap();
                    let [bn, h, wd, c] = *in_shape;
                    kernels::col2im(&dcols, bn, h, wd, c, *spec, dx.data_mut());
                }
            }
            Op::Upsample2(x) => {
                let s = self.value(*x).shape().to_vec();
                let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
                if let Some(dx) = self.slot(grads, *x) {
                    let dxd = dx.data_mut();
                    for bi in 0..b {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                let dst = ((bi * h + y / 2) * w + xx / 2) * c;
                                let src = ((bi * 2 * h + y) * 2 * w + xx) * c;
                                for j in 0..c {
                                    dxd[dst + j] += gd[src + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    for acc in d.data_mut() {
                        *acc += gd[0];
                    }
                }
            }
            Op::SumSquares(a) => {
                let av = self.value(*a).data();
                let two = T::f(2.0) * gd[0];
                if let Some(d) = self.slot(grads, *a) {
                    for (acc, &x) in d.data_mut().iter_mut().zip(av) {
                        *acc += two * x;
                    }
                }
            }
            Op::SumAbs(a) => {
                let av = self.value(*a).data();
                if let Some(d) = self.slot(grads, *a) {
                    for (acc, &x) in d.data_mut().iter_mut().zip(av) {
                        let s = if x > T::zero() {
                            T::one()
                        } else if x < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *acc += gd[0] * s;
                    }
                }
            }
            Op::Reshape(a) | Op::StraightThrough { encoder_side: a } => {
                if let Some(d) = self.slot(grads, *a) {
                    for (acc, &v) in d.data_mut().iter_mut().zip(gd) {
                        *acc += v;
                    }
                }
            }
        }
    }
}
