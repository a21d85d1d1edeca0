//! Reverse-mode tape.
//!
//! Every op appends a node holding its output value plus whatever it needs
//! for the adjoint. Nodes only reference earlier nodes, so a single reverse
//! sweep over the node list is a valid topological order.

use crate::conv::{self, ConvGeom};
use crate::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var> },
    LeakyRelu { x: Var, slope: T },
    Relu { x: Var },
    Tanh { x: Var },
    Upsample2x { x: Var },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    Modulate { x: Var, scale: Var, shift: Var },
    MeanSpatial { x: Var },
    Reshape { x: Var },
    L2NormalizeRows { x: Var, norms: Vec<T> },
    RowDot { a: Var, b: Var },
    GatherRows { x: Var, idx: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    SliceRows { x: Var, start: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    Square { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Softplus { x: Var },
    SoftmaxXent { logits: Var, probs: Vec<T>, labels: Vec<usize> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Relu { .. } => "relu",
            Op::Tanh { .. } => "tanh",
            Op::Upsample2x { .. } => "upsample2x",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::Modulate { .. } => "modulate",
            Op::MeanSpatial { .. } => "mean_spatial",
            Op::Reshape { .. } => "reshape",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
            Op::RowDot { .. } => "row_dot",
            Op::GatherRows { .. } => "gather_rows",
            Op::ConcatRows { .. } => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Square { .. } => "square",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Softplus { .. } => "softplus",
            Op::SoftmaxXent { .. } => "softmax_xent",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.slots.get_mut(v.0).and_then(|s| s.take())
    }
}

fn accumulate<T: Scalar>(slots: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut slots[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x.re() >= 0.0 {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    if x.re() > 0.0 {
        x + (T::one() + (-x).exp()).ln()
    } else {
        (T::one() + x.exp()).ln()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copy of `v`'s value as a new constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad);
        if let Some(b) = b {
            assert_eq!(self.shape(b), &[geom.c_out], "conv2d bias shape");
        }
        let out = conv::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        let value = Tensor::new(vec![geom.batch, geom.c_out, geom.h_out, geom.w_out], out);
        self.push(value, Op::Conv2d { x, w, b, geom }, rg)
    }

    /// `y = x · wᵀ + b` for `x: [B, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 2, "linear input must be [B, in], got {xs:?}");
        assert_eq!(ws.len(), 2, "linear weight must be [out, in], got {ws:?}");
        assert_eq!(xs[1], ws[1], "linear: input {xs:?} vs weight {ws:?}");
        let (bsz, n_in, n_out) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); bsz * n_out];
        T::gemm(bsz, n_in, n_out, self.value(x).data(), (n_in as isize, 1), self.value(w).data(), (1, n_in as isize), &mut out, false);
        if let Some(b) = b {
            assert_eq!(self.shape(b), &[n_out], "linear bias shape");
            let bv = self.value(b).data();
            for row in out.chunks_mut(n_out) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        self.push(Tensor::new(vec![bsz, n_out], out), Op::Linear { x, w, b }, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        let value = self.value(x).map(|v| if v.re() > 0.0 { v } else { v * s });
        let rg = self.rg(&[x]);
        self.push(value, Op::LeakyRelu { x, slope: s }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v.re() > 0.0 { v } else { T::zero() });
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu { x }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        let rg = self.rg(&[x]);
        self.push(value, Op::Tanh { x }, rg)
    }

    /// Nearest-neighbour 2× upsampling of an NCHW tensor.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "upsample2x expects NCHW");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * 4 * h * w];
        for p in 0..n * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![n, c, 2 * h, 2 * w], out), Op::Upsample2x { x }, rg)
    }

    /// Per-sample, per-channel normalization over the spatial plane (no affine).
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "instance_norm expects NCHW");
        let plane = s[2] * s[3];
        let inv_n = T::from_f64(1.0 / plane as f64);
        let eps = T::from_f64(eps);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(s[0] * s[1]);
        for (chunk, dst) in src.chunks(plane).zip(out.chunks_mut(plane)) {
            let mut mean = T::zero();
            for &v in chunk {
                mean += v;
            }
            mean *= inv_n;
            let mut var = T::zero();
            for &v in chunk {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let is = T::one() / (var + eps).sqrt();
            for (d, &v) in dst.iter_mut().zip(chunk) {
                *d = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(s, out), Op::InstanceNorm { x, inv_std }, rg)
    }

    /// `y[b,c,:,:] = x[b,c,:,:] · (1 + scale[b,c]) + shift[b,c]`.
    pub fn modulate(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "modulate expects NCHW");
        assert_eq!(self.shape(scale), &[s[0], s[1]], "modulate scale shape");
        assert_eq!(self.shape(shift), &[s[0], s[1]], "modulate shift shape");
        let plane = s[2] * s[3];
        let sc = self.value(scale).data();
        let sh = self.value(shift).data();
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for (i, (chunk, dst)) in src.chunks(plane).zip(out.chunks_mut(plane)).enumerate() {
            let m = T::one() + sc[i];
            for (d, &v) in dst.iter_mut().zip(chunk) {
                *d = v * m + sh[i];
            }
        }
        let rg = self.rg(&[x, scale, shift]);
        self.push(Tensor::new(s, out), Op::Modulate { x, scale, shift }, rg)
    }

    /// Mean over H and W: `[N, C, H, W] → [N, C]`.
    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "mean_spatial expects NCHW");
        let plane = s[2] * s[3];
        let inv = T::from_f64(1.0 / plane as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| {
                let mut acc = T::zero();
                for &v in c {
                    acc += v;
                }
                acc * inv
            })
            .collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![s[0], s[1]], out), Op::MeanSpatial { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let value = self.value(x).clone().reshaped(shape);
        let rg = self.rg(&[x]);
        self.push(value, Op::Reshape { x }, rg)
    }

    /// Flatten everything after the leading axis.
    pub fn flatten(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let shape = vec![t.rows(), t.row_len()];
        self.reshape(x, shape)
    }

    /// Scale every row of a `[B, D]` tensor to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape().len(), 2, "l2_normalize_rows expects [B, D]");
        let d = t.row_len();
        let tiny = T::from_f64(1e-12);
        let mut out = vec![T::zero(); t.numel()];
        let mut norms = Vec::with_capacity(t.rows());
        for (row, dst) in t.data().chunks(d).zip(out.chunks_mut(d)) {
            let mut ss = T::zero();
            for &v in row {
                ss += v * v;
            }
            let mut n = ss.sqrt();
            if n.re() < tiny.re() {
                n = tiny;
            }
            for (o, &v) in dst.iter_mut().zip(row) {
                *o = v / n;
            }
            norms.push(n);
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out), Op::L2NormalizeRows { x, norms }, rg)
    }

    /// Row-wise inner product: `[B, D] × [B, D] → [B]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "row_dot shape mismatch");
        let ta = self.value(a);
        let tb = self.value(b);
        let d = ta.row_len();
        let out: Vec<T> = ta
            .data()
            .chunks(d)
            .zip(tb.data().chunks(d))
            .map(|(ra, rb)| {
                let mut acc = T::zero();
                for (&x, &y) in ra.iter().zip(rb) {
                    acc += x * y;
                }
                acc
            })
            .collect();
        let rows = ta.rows();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![rows], out), Op::RowDot { a, b }, rg)
    }

    /// Select leading-axis rows by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let t = self.value(x);
        let n = t.row_len();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            assert!(i < t.rows(), "gather_rows index {i} out of range {}", t.rows());
            out.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = idx.len();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out), Op::GatherRows { x, idx: idx.to_vec() }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(&t.shape()[1..], &tail[..], "concat_rows: trailing shapes differ");
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = self.rg(parts);
        self.push(Tensor::new(shape, out), Op::ConcatRows { parts: parts.to_vec() }, rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        assert!(start + len <= t.rows(), "slice_rows out of range");
        let n = t.row_len();
        let out = t.data()[start * n..(start + len) * n].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out), Op::SliceRows { x, start }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let ta = self.value(a);
        let tb = self.value(b);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add { a, b }, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub { a, b }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let v = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(v, Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let v = self.value(x).map(|v| v + c);
        let rg = self.rg(&[x]);
        self.push(v, Op::AddScalar { x }, rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|v| v * v);
        let rg = self.rg(&[x]);
        self.push(v, Op::Square { x }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.value(x).data() {
            acc += v;
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(acc), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut acc = T::zero();
        for &v in t.data() {
            acc += v;
        }
        let m = acc * T::from_f64(1.0 / t.numel() as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(m), Op::Mean { x }, rg)
    }

    /// `ln(1 + eˣ)`, evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).map(softplus);
        let rg = self.rg(&[x]);
        self.push(v, Op::Softplus { x }, rg)
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let t = self.value(logits);
        assert_eq!(t.shape().len(), 2, "softmax_cross_entropy expects [B, C]");
        assert_eq!(t.rows(), labels.len(), "one label per row");
        let c = t.row_len();
        let mut probs = vec![T::zero(); t.numel()];
        let mut total = T::zero();
        for (r, (row, p)) in t.data().chunks(c).zip(probs.chunks_mut(c)).enumerate() {
            assert!(labels[r] < c, "label {} out of range {c}", labels[r]);
            let mut max = row[0];
            for &v in row {
                if v.re() > max.re() {
                    max = v;
                }
            }
            let mut z = T::zero();
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi = (v - max).exp();
                z += *pi;
            }
            for pi in p.iter_mut() {
                *pi = *pi / z;
            }
            total += z.ln() + max - row[labels[r]];
        }
        let loss = total * T::from_f64(1.0 / labels.len() as f64);
        let rg = self.rg(&[logits]);
        self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, probs, labels: labels.to_vec() }, rg)
    }

    /// Backpropagate from a scalar root seeded with 1.
    pub fn backward(&self, root: Var) -> Grads<T> {
        assert_eq!(self.value(root).numel(), 1, "backward root must be scalar; use backward_seeded");
        self.backward_seeded(&[(root, Tensor::new(self.shape(root).to_vec(), vec![T::one()]))])
    }

    /// Backpropagate from arbitrary output cotangents.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor<T>)]) -> Grads<T> {
        let mut slots: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(self.shape(*v), g.shape(), "seed shape mismatch");
            if self.nodes[v.0].requires_grad {
                accumulate(&mut slots, *v, g.clone());
            }
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = slots[i].take() else { continue };
            let (earlier, rest) = slots.split_at_mut(i);
            self.backprop_node(node, &dy, earlier);
            rest[0] = Some(dy);
        }
        Grads { slots }
    }

    fn backprop_node(&self, node: &Node<T>, dy: &Tensor<T>, slots: &mut [Option<Tensor<T>>]) {
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                if want(*w) {
                    let dw = conv::conv2d_grad_weight(val(*x).data(), dy.data(), geom);
                    accumulate(slots, *w, Tensor::new(val(*w).shape().to_vec(), dw));
                }
                if let Some(b) = b.filter(|b| want(*b)) {
                    let plane = geom.plane();
                    let mut db = vec![T::zero(); geom.c_out];
                    for (i, r) in dy.data().chunks(plane).enumerate() {
                        let mut acc = T::zero();
                        for &v in r {
                            acc += v;
                        }
                        db[i % geom.c_out] += acc;
                    }
                    accumulate(slots, b, Tensor::new(vec![geom.c_out], db));
                }
                if want(*x) {
                    let dx = conv::conv2d_grad_input(val(*w).data(), dy.data(), geom);
                    accumulate(slots, *x, Tensor::new(val(*x).shape().to_vec(), dx));
                }
            }
            Op::Linear { x, w, b } => {
                let (bsz, n_in) = (val(*x).shape()[0], val(*x).shape()[1]);
                let n_out = val(*w).shape()[0];
                if want(*x) {
                    let mut dx = vec![T::zero(); bsz * n_in];
                    T::gemm(bsz, n_out, n_in, dy.data(), (n_out as isize, 1), val(*w).data(), (n_in as isize, 1), &mut dx, false);
                    accumulate(slots, *x, Tensor::new(vec![bsz, n_in], dx));
                }
                if want(*w) {
                    let mut dw = vec![T::zero(); n_out * n_in];
                    T::gemm(n_out, bsz, n_in, dy.data(), (1, n_out as isize), val(*x).data(), (n_in as isize, 1), &mut dw, false);
                    accumulate(slots, *w, Tensor::new(vec![n_out, n_in], dw));
                }
                if let Some(b) = b.filter(|b| want(*b)) {
                    let mut db = vec![T::zero(); n_out];
                    for row in dy.data().chunks(n_out) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    accumulate(slots, b, Tensor::new(vec![n_out], db));
                }
            }
            Op::LeakyRelu { x, slope } => {
                if want(*x) {
                    let xv = val(*x).data();
                    let dx: Vec<T> = dy.data().iter().zip(xv).map(|(&g, &v)| if v.re() > 0.0 { g } else { g * *slope }).collect();
                    accumulate(slots, *x, Tensor::new(dy.shape().to_vec(), dx));
                }
            }
            Op::Relu { x } => {
                if want(*x) {
                    let xv = val(*x).data();
                    let dx: Vec<T> = dy.data().iter().zip(xv).map(|(&g, &v)| if v.re() > 0.0 { g } else { T::zero() }).collect();
                    accumulate(slots, *x, Tensor::new(dy.shape().to_vec(), dx));
                }
            }
            Op::Tanh { x } => {
                if want(*x) {
                    let dx: Vec<T> = dy.data().iter().zip(node.value.data()).map(|(&g, &y)| g * (T::one() - y * y)).collect();
                    accumulate(slots, *x, Tensor::new(dy.shape().to_vec(), dx));
                }
            }
            Op::Upsample2x { x } => {
                if want(*x) {
                    let s = val(*x).shape().to_vec();
                    let (h, w) = (s[2], s[3]);
                    let mut dx = vec![T::zero(); val(*x).numel()];
                    for (p, dst) in dx.chunks_mut(h * w).enumerate() {
                        let src = &dy.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                            }
                        }
                    }
                    accumulate(slots, *x, Tensor::new(s, dx));
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                if want(*x) {
                    let s = val(*x).shape();
                    let plane = s[2] * s[3];
                    let inv_n = T::from_f64(1.0 / plane as f64);
                    let mut dx = vec![T::zero(); dy.numel()];
                    for (i, ((g, y), d)) in dy.data().chunks(plane).zip(node.value.data().chunks(plane)).zip(dx.chunks_mut(plane)).enumerate() {
                        let mut mg = T::zero();
                        let mut mgy = T::zero();
                        for (&gi, &yi) in g.iter().zip(y) {
                            mg += gi;
                            mgy += gi * yi;
                        }
                        mg *= inv_n;
                        mgy *= inv_n;
                        for ((di, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                            *di = inv_std[i] * (gi - mg - yi * mgy);
                        }
                    }
                    accumulate(slots, *x, Tensor::new(s.to_vec(), dx));
                }
            }
            Op::Modulate { x, scale, shift } => {
                let s = val(*x).shape().to_vec();
                let plane = s[2] * s[3];
                if want(*x) {
                    let sc = val(*scale).data();
                    let mut dx = vec![T::zero(); dy.numel()];
                    for (i, (d, g)) in dx.chunks_mut(plane).zip(dy.data().chunks(plane)).enumerate() {
                        let m = T::one() + sc[i];
                        for (di, &gi) in d.iter_mut().zip(g) {
                            *di = gi * m;
                        }
                    }
                    accumulate(slots, *x, Tensor::new(s.clone(), dx));
                }
                if want(*scale) {
                    let xv = val(*x).data();
                    let ds: Vec<T> = dy
                        .data()
                        .chunks(plane)
                        .zip(xv.chunks(plane))
                        .map(|(g, xx)| {
                            let mut acc = T::zero();
                            for (&gi, &xi) in g.iter().zip(xx) {
                                acc += gi * xi;
                            }
                            acc
                        })
                        .collect();
                    accumulate(slots, *scale, Tensor::new(vec![s[0], s[1]], ds));
                }
                if want(*shift) {
                    let dt: Vec<T> = dy
                        .data()
                        .chunks(plane)
                        .map(|g| {
                            let mut acc = T::zero();
                            for &gi in g {
                                acc += gi;
                            }
                            acc
                        })
                        .collect();
                    accumulate(slots, *shift, Tensor::new(vec![s[0], s[1]], dt));
                }
            }
            Op::MeanSpatial { x } => {
                if want(*x) {
                    let s = val(*x).shape().to_vec();
                    let plane = s[2] * s[3];
                    let inv = T::from_f64(1.0 / plane as f64);
                    let mut dx = Vec::with_capacity(val(*x).numel());
                    for &g in dy.data() {
                        dx.extend(std::iter::repeat(g * inv).take(plane));
                    }
                    accumulate(slots, *x, Tensor::new(s, dx));
                }
            }
            Op::Reshape { x } => {
                if want(*x) {
                    accumulate(slots, *x, dy.clone().reshaped(val(*x).shape().to_vec()));
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                if want(*x) {
                    let d = dy.row_len();
                    let mut dx = vec![T::zero(); dy.numel()];
                    for (i, ((g, y), o)) in dy.data().chunks(d).zip(node.value.data().chunks(d)).zip(dx.chunks_mut(d)).enumerate() {
                        let mut dot = T::zero();
                        for (&gi, &yi) in g.iter().zip(y) {
                            dot += gi * yi;
                        }
                        for ((oi, &gi), &yi) in o.iter_mut().zip(g).zip(y) {
                            *oi = (gi - yi * dot) / norms[i];
                        }
                    }
                    accumulate(slots, *x, Tensor::new(dy.shape().to_vec(), dx));
                }
            }
            Op::RowDot { a, b } => {
                let d = val(*a).row_len();
                let shape = val(*a).shape().to_vec();
                for (target, other) in [(*a, *b), (*b, *a)] {
                    if want(target) {
                        let ov = val(other).data();
                        let mut dt = vec![T::zero(); ov.len()];
                        for (r, (dst, src)) in dt.chunks_mut(d).zip(ov.chunks(d)).enumerate() {
                            let g = dy.data()[r];
                            for (o, &s) in dst.iter_mut().zip(src) {
                                *o = g * s;
                            }
                        }
                        accumulate(slots, target, Tensor::new(shape.clone(), dt));
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if want(*x) {
                    let n = val(*x).row_len();
                    let mut dx = vec![T::zero(); val(*x).numel()];
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, &g) in dx[i * n..(i + 1) * n].iter_mut().zip(&dy.data()[r * n..(r + 1) * n]) {
                            *d += g;
                        }
                    }
                    accumulate(slots, *x, Tensor::new(val(*x).shape().to_vec(), dx));
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).numel();
                    if want(p) {
                        let part = dy.data()[offset..offset + len].to_vec();
                        accumulate(slots, p, Tensor::new(val(p).shape().to_vec(), part));
                    }
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                if want(*x) {
                    let n = val(*x).row_len();
                    let mut dx = Tensor::zeros(val(*x).shape().to_vec());
                    dx.data_mut()[start * n..start * n + dy.numel()].copy_from_slice(dy.data());
                    accumulate(slots, *x, dx);
                }
            }
            Op::Add { a, b } => {
                if want(*a) {
                    accumulate(slots, *a, dy.clone());
                }
                if want(*b) {
                    accumulate(slots, *b, dy.clone());
                }
            }
            Op::Sub { a, b } => {
                if want(*a) {
                    accumulate(slots, *a, dy.clone());
                }
                if want(*b) {
                    accumulate(slots, *b, dy.map(|g| -g));
                }
            }
            Op::Mul { a, b } => {
                for (target, other) in [(*a, *b), (*b, *a)] {
                    if want(target) {
                        let ov = val(other).data();
                        let d: Vec<T> = dy.data().iter().zip(ov).map(|(&g, &o)| g * o).collect();
                        accumulate(slots, target, Tensor::new(dy.shape().to_vec(), d));
                    }
                }
            }
            Op::Scale { x, c } => {
                if want(*x) {
                    accumulate(slots, *x, dy.map(|g| g * *c));
                }
            }
            Op::AddScalar { x } => {
                if want(*x) {
                    accumulate(slots, *x, dy.clone());
                }
            }
            Op::Square { x } => {
                if want(*x) {
                    let two = T::from_f64(2.0);
                    let d: Vec<T> = dy.data().iter().zip(val(*x).data()).map(|(&g, &v)| two * g * v).collect();
                    accumulate(slots, *x, Tensor::new(dy.shape().to_vec(), d));
                }
            }
            Op::Sum { x } => {
                if want(*x) {
                    accumulate(slots, *x, Tensor::full(val(*x).shape().to_vec(), dy.item()));
                }
            }
            Op::Mean { x } => {
                if want(*x) {
                    let n = val(*x).numel();
                    let g = dy.item() * T::from_f64(1.0 / n as f64);
                    accumulate(slots, *x, Tensor::full(val(*x).shape().to_vec(), g));
                }
            }
            Op::Softplus { x } => {
                if want(*x) {
                    let d: Vec<T> = dy.data().iter().zip(val(*x).data()).map(|(&g, &v)| g * sigmoid(v)).collect();
                    accumulate(slots, *x, Tensor::new(dy.shape().to_vec(), d));
                }
            }
            Op::SoftmaxXent { logits, probs, labels } => {
                if want(*logits) {
                    let c = val(*logits).row_len();
                    let g = dy.item() * T::from_f64(1.0 / labels.len() as f64);
                    let mut d = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        d[r * c + l] -= T::one();
                    }
                    for v in d.iter_mut() {
                        *v *= g;
                    }
                    accumulate(slots, *logits, Tensor::new(val(*logits).shape().to_vec(), d));
                }
            }
        }
    }
}
