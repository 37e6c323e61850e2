use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, AxisMap, ConvGeom, PoolGeom};
use super::{expect_rank, Real, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Operation identifier of a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    MaxPool2d,
    Gap,
    Dense,
    Relu,
    Sigmoid,
    Softmax,
    Upsample,
    Sum,
    Add,
    Scale,
    Reshape,
    ScalarFn,
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Gap { x: Var, plane: usize },
    Dense { x: Var, w: Var, b: Var, n: usize, d: usize, m: usize },
    Relu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var, len: usize },
    Upsample { x: Var, ys: AxisMap, xs: AxisMap, in_h: usize, in_w: usize },
    Sum { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, k: T },
    Reshape { x: Var },
    // Scalar function of one input whose local gradient was computed during
    // the forward pass (used for the losses).
    ScalarFn { x: Var, local_grad: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::Gap { .. } => OpKind::Gap,
            Op::Dense { .. } => OpKind::Dense,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Sum { .. } => OpKind::Sum,
            Op::Add { .. } => OpKind::Add,
            Op::Scale { .. } => OpKind::Scale,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::ScalarFn { .. } => OpKind::ScalarFn,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::Dense { x, w, b, .. } => vec![*x, *w, *b],
            Op::Add { a, b } => vec![*a, *b],
            Op::MaxPool2d { x, .. }
            | Op::Gap { x, .. }
            | Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::Softmax { x, .. }
            | Op::Upsample { x, .. }
            | Op::Sum { x }
            | Op::Scale { x, .. }
            | Op::Reshape { x }
            | Op::ScalarFn { x, .. } => vec![*x],
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Append-only record of operations. Node order is a topological order, so
/// [`Graph::backward`] is a single reverse sweep.
pub struct Graph<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf, keeping the tensor's `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push(Op::Leaf, tensor)
    }

    /// Records a leaf that receives gradients.
    pub fn variable(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(true);
        self.push(Op::Leaf, tensor)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.push(Op::Leaf, tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.node(v).value.grad()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.node(v).op.kind()
    }

    /// Ids of the inputs the node was computed from.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.node(v).op.inputs()
    }

    pub fn contains(&self, v: Var) -> bool {
        v.graph == self.id && v.index < self.nodes.len()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn node(&self, v: Var) -> &Node<T> {
        assert!(self.contains(v), "variable {v:?} does not belong to this graph");
        &self.nodes[v.index]
    }

    fn check(&self, v: Var) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::Graph(format!("variable {} is not recorded on this graph", v.index)))
        }
    }

    fn push(&mut self, op: Op<T>, mut value: Tensor<T>) -> Var {
        if !matches!(op, Op::Leaf) {
            let needs = op.inputs().iter().any(|&i| self.nodes[i.index].value.requires_grad());
            value.set_requires_grad(needs);
        }
        self.nodes.push(Node { op, value });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)?;
        if self.shape(b) != [geom.k] {
            return Err(Error::Shape {
                op: "conv2d bias",
                lhs: self.shape(w).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let value = Tensor::new(geom.output_shape(), out)?;
        Ok(self.push(Op::Conv2d { x, w, b, geom }, value))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        self.check(x)?;
        let g = PoolGeom::new(self.shape(x), k, stride)?;
        let (out, argmax) = kernels::maxpool_forward(self.value(x).data(), &g);
        let value = Tensor::new(vec![g.n, g.c, g.oh, g.ow], out)?;
        Ok(self.push(Op::MaxPool2d { x, argmax }, value))
    }

    pub fn gap(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        expect_rank("gap", &s, 4)?;
        let plane = s[2] * s[3];
        let out = kernels::gap_forward(self.value(x).data(), plane);
        let value = Tensor::new(vec![s[0], s[1]], out)?;
        Ok(self.push(Op::Gap { x, plane }, value))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::Shape {
                op: "dense",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let (n, d, m) = (xs[0], xs[1], ws[1]);
        let out = kernels::dense_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            d,
            m,
        );
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(Op::Dense { x, w, b, n, d, m }, value))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::Relu { x }, value))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let out = t.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::Sigmoid { x }, value))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let len = *t.shape().last().unwrap();
        let out = kernels::softmax_rows(t.data(), len);
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::Softmax { x, len }, value))
    }

    /// Half-pixel bilinear resize of an `[N, C, h, w]` tensor to `[N, C, H, W]`.
    pub fn upsample(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        expect_rank("upsample", &s, 4)?;
        if height == 0 || width == 0 {
            return Err(Error::invalid("upsample: target size must be positive"));
        }
        if height < s[2] || width < s[3] {
            return Err(Error::invalid(format!(
                "upsample: target {height}x{width} smaller than input {}x{}",
                s[2], s[3]
            )));
        }
        let ys = AxisMap::new(s[2], height);
        let xs = AxisMap::new(s[3], width);
        let (ip, op) = (s[2] * s[3], height * width);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); s[0] * s[1] * op];
        for (plane, dst) in src.chunks_exact(ip).zip(out.chunks_exact_mut(op)) {
            kernels::resample_plane(plane, s[3], &ys, &xs, dst);
        }
        let value = Tensor::new(vec![s[0], s[1], height, width], out)?;
        Ok(self.push(
            Op::Upsample {
                x,
                ys,
                xs,
                in_h: s[2],
                in_w: s[3],
            },
            value,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s: T = self.value(x).data().iter().copied().sum();
        Ok(self.push(Op::Sum { x }, Tensor::scalar(s)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v * k).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::Scale { x, k }, value))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape { x }, value))
    }

    /// Records a scalar-valued function of `x` whose derivative with respect
    /// to every element of `x` is supplied by the caller.
    pub fn scalar_fn(&mut self, x: Var, value: T, local_grad: Vec<T>) -> Result<Var> {
        self.check(x)?;
        if local_grad.len() != self.value(x).numel() {
            return Err(Error::Shape {
                op: "scalar_fn",
                lhs: self.shape(x).to_vec(),
                rhs: vec![local_grad.len()],
            });
        }
        Ok(self.push(Op::ScalarFn { x, local_grad }, Tensor::scalar(value)))
    }

    /// Accumulates `d(root)/d(t)` into the gradient buffer of every recorded
    /// tensor that requires gradients. Repeated calls accumulate.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.check(root)?;
        if self.value(root).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward root must be a scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut pending: Vec<Option<Vec<T>>> = (0..=root.index).map(|_| None).collect();
        pending[root.index] = Some(vec![T::one()]);
        for i in (0..=root.index).rev() {
            let Some(g) = pending[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            for (input, contrib) in self.input_grads(i, &g) {
                match &mut pending[input] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.index].value.requires_grad()
    }

    /// Vector-Jacobian products of node `i` for every input that needs them.
    fn input_grads(&self, i: usize, g: &[T]) -> Vec<(usize, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    geom,
                    self.wants(*x),
                    self.wants(*w),
                    self.wants(*b),
                );
                out.extend(dx.map(|d| (x.index, d)));
                out.extend(dw.map(|d| (w.index, d)));
                out.extend(db.map(|d| (b.index, d)));
            }
            Op::MaxPool2d { x, argmax } => {
                if self.wants(*x) {
                    out.push((x.index, kernels::maxpool_backward(g, argmax, self.value(*x).numel())));
                }
            }
            Op::Gap { x, plane } => {
                if self.wants(*x) {
                    out.push((x.index, kernels::gap_backward(g, *plane)));
                }
            }
            Op::Dense { x, w, b, n, d, m } => {
                let (n, d, m) = (*n, *d, *m);
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * d];
                    T::gemm(false, true, n, d, m, g, self.value(*w).data(), T::zero(), &mut dx);
                    out.push((x.index, dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); d * m];
                    T::gemm(true, false, d, m, n, self.value(*x).data(), g, T::zero(), &mut dw);
                    out.push((w.index, dw));
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); m];
                    for row in g.chunks_exact(m) {
                        db.iter_mut().zip(row).for_each(|(a, &r)| *a += r);
                    }
                    out.push((b.index, db));
                }
            }
            Op::Relu { x } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let dx = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| if yv > T::zero() { gv } else { T::zero() })
                        .collect();
                    out.push((x.index, dx));
                }
            }
            Op::Sigmoid { x } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let dx = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                        .collect();
                    out.push((x.index, dx));
                }
            }
            Op::Softmax { x, len } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let mut dx = Vec::with_capacity(y.len());
                    for (yr, gr) in y.chunks_exact(*len).zip(g.chunks_exact(*len)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                    }
                    out.push((x.index, dx));
                }
            }
            Op::Upsample { x, ys, xs, in_h, in_w } => {
                if self.wants(*x) {
                    let (ip, op) = (in_h * in_w, ys.lo.len() * xs.lo.len());
                    let mut dx = vec![T::zero(); self.value(*x).numel()];
                    for (gp, dp) in g.chunks_exact(op).zip(dx.chunks_exact_mut(ip)) {
                        kernels::resample_plane_backward(gp, *in_w, ys, xs, dp);
                    }
                    out.push((x.index, dx));
                }
            }
            Op::Sum { x } => {
                if self.wants(*x) {
                    out.push((x.index, vec![g[0]; self.value(*x).numel()]));
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    out.push((a.index, g.to_vec()));
                }
                if self.wants(*b) {
                    out.push((b.index, g.to_vec()));
                }
            }
            Op::Scale { x, k } => {
                if self.wants(*x) {
                    out.push((x.index, g.iter().map(|&v| v * *k).collect()));
                }
            }
            Op::Reshape { x } => {
                if self.wants(*x) {
                    out.push((x.index, g.to_vec()));
                }
            }
            Op::ScalarFn { x, local_grad } => {
                if self.wants(*x) {
                    out.push((x.index, local_grad.iter().map(|&d| d * g[0]).collect()));
                }
            }
        }
        out
    }
}
