use alloc::vec;
use alloc::vec::Vec;

use super::conv::{self, ConvGeom};
use super::ops;
use super::{Scalar, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Upsample2 {
        x: Var,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    GlobalAvgPool {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    MaxPool3d {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool3d {
        x: Var,
        k: usize,
        s: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    MulConst {
        a: Var,
        c: Vec<T>,
    },
    Scale {
        a: Var,
        s: T,
    },
    AddScalar {
        a: Var,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    BceWithLogits {
        x: Var,
        target: Vec<T>,
    },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

/// Operation tape. Nodes are appended in evaluation order.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf; [`Graph::backward`] reports its gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].needs_grad)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Nodes are visited once each in descending id order; a tensor used by
    /// several consumers receives the sum of their contributions.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b, geom } => {
                if self.needs_grad(*x) {
                    let dx = self.buf(grads, *x);
                    conv::backward_input(geom, g, self.data(*w), dx);
                }
                let xd = self.data(*x);
                let need_w = self.needs_grad(*w);
                let need_b = b.is_some_and(|b| self.needs_grad(b));
                if need_w || need_b {
                    // Two separate buffers may be requested; fetch them one at a time.
                    let mut dw_tmp = need_w.then(|| vec![T::zero(); self.value(*w).numel()]);
                    let mut db_tmp = b.filter(|_| need_b).map(|b| vec![T::zero(); self.value(b).numel()]);
                    conv::backward_params(geom, g, xd, dw_tmp.as_deref_mut(), db_tmp.as_deref_mut());
                    if let Some(dw) = dw_tmp {
                        add_into(self.buf(grads, *w), &dw);
                    }
                    if let (Some(db), Some(bv)) = (db_tmp, b) {
                        add_into(self.buf(grads, *bv), &db);
                    }
                }
            }
            Op::Upsample2 { x } => {
                let shape = self.shape(*x).to_vec();
                ops::upsample2_backward(&shape, g, self.buf(grads, *x));
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let shape = self.shape(*x).to_vec();
                let gam = self.data(*gamma).to_vec();
                let (dx, dgamma, dbeta) = ops::instance_norm_backward(&shape, g, xhat, inv_std, &gam);
                if self.needs_grad(*x) {
                    add_into(self.buf(grads, *x), &dx);
                }
                if self.needs_grad(*gamma) {
                    add_into(self.buf(grads, *gamma), &dgamma);
                }
                if self.needs_grad(*beta) {
                    add_into(self.buf(grads, *beta), &dbeta);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xd = self.data(*x);
                let dx = self.buf_other(grads, *x, xd.len());
                for ((d, &xv), &gv) in dx.iter_mut().zip(xd).zip(g) {
                    *d += if xv >= T::zero() { gv } else { gv * *slope };
                }
            }
            Op::Sigmoid { x } => {
                let y = out.data();
                let dx = self.buf(grads, *x);
                for ((d, &yv), &gv) in dx.iter_mut().zip(y).zip(g) {
                    *d += gv * yv * (T::one() - yv);
                }
            }
            Op::Softmax { x, axis } => {
                let dx = ops::softmax_backward(out.shape(), *axis, out.data(), g);
                add_into(self.buf(grads, *x), &dx);
            }
            Op::LogSoftmax { x, axis } => {
                let dx = ops::log_softmax_backward(out.shape(), *axis, out.data(), g);
                add_into(self.buf(grads, *x), &dx);
            }
            Op::Dense { x, w, b } => {
                let xs = self.shape(*x);
                let (n, i) = (xs[0], xs[1]);
                let o = self.shape(*w)[0];
                let xd = self.data(*x).to_vec();
                let wd = self.data(*w).to_vec();
                if self.needs_grad(*x) {
                    let dx = self.buf(grads, *x);
                    for r in 0..n {
                        for k in 0..o {
                            let gv = g[r * o + k];
                            for j in 0..i {
                                dx[r * i + j] += gv * wd[k * i + j];
                            }
                        }
                    }
                }
                if self.needs_grad(*w) {
                    let dw = self.buf(grads, *w);
                    for r in 0..n {
                        for k in 0..o {
                            let gv = g[r * o + k];
                            for j in 0..i {
                                dw[k * i + j] += gv * xd[r * i + j];
                            }
                        }
                    }
                }
                if let Some(b) = b.filter(|&b| self.needs_grad(b)) {
                    let db = self.buf(grads, b);
                    for r in 0..n {
                        for k in 0..o {
                            db[k] += g[r * o + k];
                        }
                    }
                }
            }
            Op::GlobalAvgPool { x } => {
                let shape = self.shape(*x);
                let nc = shape[0] * shape[1];
                let m = self.value(*x).numel() / nc;
                let inv = T::one() / T::of(m as f64);
                let dx = self.buf_other(grads, *x, nc * m);
                for s in 0..nc {
                    let gv = g[s] * inv;
                    dx[s * m..(s + 1) * m].iter_mut().for_each(|d| *d += gv);
                }
            }
            Op::Dropout { x, mask } => {
                let dx = self.buf(grads, *x);
                for ((d, &m), &gv) in dx.iter_mut().zip(mask).zip(g) {
                    *d += gv * m;
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, _, inner) = super::axis_split(out.shape(), *axis);
                let total = out.shape()[*axis];
                let mut start = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if self.needs_grad(x) {
                        let dx = self.buf(grads, x);
                        for o in 0..outer {
                            let src = &g[(o * total + start) * inner..(o * total + start + len) * inner];
                            add_into(&mut dx[o * len * inner..(o + 1) * len * inner], src);
                        }
                    }
                    start += len;
                }
            }
            Op::MaxPool3d { x, argmax } => {
                let dx = self.buf(grads, *x);
                for (&a, &gv) in argmax.iter().zip(g) {
                    dx[a] += gv;
                }
            }
            Op::AvgPool3d { x, k, s } => {
                let shape = self.shape(*x).to_vec();
                ops::avg_pool_backward(&shape, out.shape(), *k, *s, g, self.buf(grads, *x));
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.needs_grad(v) {
                        add_into(self.buf(grads, v), g);
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.needs_grad(*a) {
                    add_into(self.buf(grads, *a), g);
                }
                if self.needs_grad(*b) {
                    for (d, &gv) in self.buf(grads, *b).iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (self.data(*a).to_vec(), self.data(*b).to_vec());
                if self.needs_grad(*a) {
                    for ((d, &bv), &gv) in self.buf(grads, *a).iter_mut().zip(&bd).zip(g) {
                        *d += gv * bv;
                    }
                }
                if self.needs_grad(*b) {
                    for ((d, &av), &gv) in self.buf(grads, *b).iter_mut().zip(&ad).zip(g) {
                        *d += gv * av;
                    }
                }
            }
            Op::Div { a, b } => {
                let (ad, bd) = (self.data(*a).to_vec(), self.data(*b).to_vec());
                if self.needs_grad(*a) {
                    for ((d, &bv), &gv) in self.buf(grads, *a).iter_mut().zip(&bd).zip(g) {
                        *d += gv / bv;
                    }
                }
                if self.needs_grad(*b) {
                    for (((d, &av), &bv), &gv) in self.buf(grads, *b).iter_mut().zip(&ad).zip(&bd).zip(g) {
                        *d -= gv * av / (bv * bv);
                    }
                }
            }
            Op::MulConst { a, c } => {
                for ((d, &cv), &gv) in self.buf(grads, *a).iter_mut().zip(c).zip(g) {
                    *d += gv * cv;
                }
            }
            Op::Scale { a, s } => {
                for (d, &gv) in self.buf(grads, *a).iter_mut().zip(g) {
                    *d += gv * *s;
                }
            }
            Op::AddScalar { a } => add_into(self.buf(grads, *a), g),
            Op::Sum { a } => {
                let gv = g[0];
                self.buf(grads, *a).iter_mut().for_each(|d| *d += gv);
            }
            Op::Mean { a } => {
                let n = self.value(*a).numel();
                let gv = g[0] / T::of(n as f64);
                self.buf(grads, *a).iter_mut().for_each(|d| *d += gv);
            }
            Op::Narrow { x, axis, start } => {
                let (outer, total, inner) = super::axis_split(self.shape(*x), *axis);
                let len = out.shape()[*axis];
                let dx = self.buf(grads, *x);
                for o in 0..outer {
                    let dst = &mut dx[(o * total + start) * inner..(o * total + start + len) * inner];
                    add_into(dst, &g[o * len * inner..(o + 1) * len * inner]);
                }
            }
            Op::Reshape { x } => add_into(self.buf(grads, *x), g),
            Op::BceWithLogits { x, target } => {
                let xd = self.data(*x);
                let inv = T::one() / T::of(xd.len() as f64);
                let gv = g[0] * inv;
                let dx = self.buf_other(grads, *x, xd.len());
                for ((d, &xv), &t) in dx.iter_mut().zip(xd).zip(target) {
                    *d += gv * (ops::sigmoid(xv) - t);
                }
            }
        }
    }

    /// Gradient buffer of `v`, zero-initialized on first use.
    fn buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut [T] {
        let n = self.value(v).numel();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    fn buf_other<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var, n: usize) -> &'g mut [T] {
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when no gradient
    /// reached it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
