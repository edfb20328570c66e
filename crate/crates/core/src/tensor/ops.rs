//! Operator constructors on [`Graph`] and their backward helpers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::conv::{self, ConvGeom};
use super::graph::{Graph, Op, Var};
use super::{axis_split, shape_err, Scalar, Tensor, TensorError};
use crate::rng;
use rand::Rng as _;

/// Instance-norm variance epsilon.
pub const NORM_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn spatial5(shape: &[usize], op: &'static str) -> Result<[usize; 5], TensorError> {
    match *shape {
        [n, c, d, h, w] => Ok([n, c, d, h, w]),
        _ => Err(shape_err(op, format!("expected [N,C,D,H,W], got {shape:?}"))),
    }
}

fn same_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<(), TensorError> {
    if a != b {
        return Err(shape_err(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    /// 3D cross-correlation of `x: [N,C,D,H,W]` with `w: [F,C,kd,kh,kw]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let [n, c, d, h, wd] = spatial5(self.shape(x), "conv3d")?;
        let [f, cw, kd, kh, kw] = spatial5(self.shape(w), "conv3d weight")?;
        if cw != c {
            return Err(shape_err(
                "conv3d",
                format!("input has {c} channels, weight expects {cw}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [f] {
                return Err(shape_err(
                    "conv3d",
                    format!("bias shape {:?}, want [{f}]", self.shape(b)),
                ));
            }
        }
        let out_of = |i, k| ConvGeom::out_len(i, k, stride, pad);
        let (Some(od), Some(oh), Some(ow)) = (out_of(d, kd), out_of(h, kh), out_of(wd, kw)) else {
            return Err(shape_err(
                "conv3d",
                format!(
                    "kernel {:?} does not fit input {:?} with padding {pad}, stride {stride}",
                    [kd, kh, kw],
                    [d, h, wd]
                ),
            ));
        };
        let geom = ConvGeom {
            n,
            c,
            f,
            input: [d, h, wd],
            kernel: [kd, kh, kw],
            output: [od, oh, ow],
            stride,
            pad,
        };
        let mut out = Tensor::zeros(&[n, f, od, oh, ow]);
        conv::forward(
            &geom,
            self.data(x),
            self.data(w),
            b.map(|b| self.data(b)),
            out.data_mut(),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let ng = self.any_grad(&inputs);
        Ok(self.push(out, Op::Conv3d { x, w, b, geom }, ng))
    }

    /// Nearest-neighbor 2x upsampling of the three spatial axes.
    pub fn upsample2(&mut self, x: Var) -> Result<Var, TensorError> {
        let [n, c, d, h, w] = spatial5(self.shape(x), "upsample2")?;
        let xd = self.data(x);
        let (d2, h2, w2) = (2 * d, 2 * h, 2 * w);
        let mut out = Vec::with_capacity(n * c * d2 * h2 * w2);
        for s in 0..n * c {
            let src = &xd[s * d * h * w..(s + 1) * d * h * w];
            for z in 0..d2 {
                for y in 0..h2 {
                    let row = &src[((z / 2) * h + y / 2) * w..((z / 2) * h + y / 2 + 1) * w];
                    for &v in row {
                        out.push(v);
                        out.push(v);
                    }
                }
            }
        }
        let ng = self.needs_grad(x);
        Ok(self.push(Tensor::new(vec![n, c, d2, h2, w2], out)?, Op::Upsample2 { x }, ng))
    }

    /// Per-(sample, channel) normalization over D·H·W, then `gamma·x̂ + beta`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let [n, c, d, h, w] = spatial5(self.shape(x), "instance_norm")?;
        same_shape(self.shape(gamma), &[c], "instance_norm gamma")?;
        same_shape(self.shape(beta), &[c], "instance_norm beta")?;
        let m = d * h * w;
        let xd = self.data(x);
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); n * c];
        let mut out = vec![T::zero(); xd.len()];
        for s in 0..n * c {
            let sl = &xd[s * m..(s + 1) * m];
            let mean = sl.iter().map(|v| v.as_f64()).sum::<f64>() / m as f64;
            let var = sl
                .iter()
                .map(|v| {
                    let dv = v.as_f64() - mean;
                    dv * dv
                })
                .sum::<f64>()
                / m as f64;
            let inv = 1.0 / num_traits::Float::sqrt(var + NORM_EPS);
            inv_std[s] = T::of(inv);
            let constant = sl.iter().all(|&v| v == sl[0]);
            let (meant, invt) = (T::of(mean), T::of(inv));
            let ch = s % c;
            for i in 0..m {
                let xh = if constant { T::zero() } else { (sl[i] - meant) * invt };
                xhat[s * m + i] = xh;
                out[s * m + i] = gd[ch] * xh + bd[ch];
            }
        }
        let ng = self.any_grad(&[x, gamma, beta]);
        let out = Tensor::new(vec![n, c, d, h, w], out)?;
        Ok(self.push(
            out,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// `max(x, 0) + slope·min(x, 0)`; the derivative at 0 is taken as 1.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let out: Vec<T> = self
            .data(x)
            .iter()
            .map(|&v| if v >= T::zero() { v } else { v * s })
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs_grad(x);
        self.push(Tensor { shape, data: out }, Op::LeakyRelu { x, slope: s }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out: Vec<T> = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs_grad(x);
        self.push(Tensor { shape, data: out }, Op::Sigmoid { x }, ng)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let out = self.softmax_impl(x, axis, false)?;
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::Softmax { x, axis }, ng))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let out = self.softmax_impl(x, axis, true)?;
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::LogSoftmax { x, axis }, ng))
    }

    fn softmax_impl(&self, x: Var, axis: usize, log: bool) -> Result<Tensor<T>, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xd = self.data(x);
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let mx = (0..len).map(|k| xd[at(k)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for k in 0..len {
                    z += (xd[at(k)] - mx).exp();
                }
                let lz = z.ln();
                for k in 0..len {
                    let l = xd[at(k)] - mx - lz;
                    out[at(k)] = if log { l } else { (xd[at(k)] - mx).exp() / z };
                }
            }
        }
        Ok(Tensor { shape, data: out })
    }

    /// `x: [N,I]`, `w: [O,I]`, `b: [O]` to `[N,O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (n, i) = match *self.shape(x) {
            [n, i] => (n, i),
            ref s => return Err(shape_err("dense", format!("input must be [N,I], got {s:?}"))),
        };
        let o = match *self.shape(w) {
            [o, wi] if wi == i => o,
            ref s => return Err(shape_err("dense", format!("weight {s:?} vs input features {i}"))),
        };
        if let Some(b) = b {
            same_shape(self.shape(b), &[o], "dense bias")?;
        }
        let (xd, wd) = (self.data(x), self.data(w));
        let mut out = vec![T::zero(); n * o];
        for r in 0..n {
            for k in 0..o {
                let mut acc = b.map_or(T::zero(), |b| self.data(b)[k]);
                for j in 0..i {
                    acc += xd[r * i + j] * wd[k * i + j];
                }
                out[r * o + k] = acc;
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let ng = self.any_grad(&inputs);
        Ok(self.push(
            Tensor {
                shape: vec![n, o],
                data: out,
            },
            Op::Dense { x, w, b },
            ng,
        ))
    }

    /// Mean over all axes after the first two: `[N,C,...]` to `[N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return Err(shape_err(
                "global_avg_pool",
                format!("need spatial axes, got {shape:?}"),
            ));
        }
        let nc = shape[0] * shape[1];
        let m = self.value(x).numel() / nc;
        let xd = self.data(x);
        let out: Vec<T> = (0..nc)
            .map(|s| {
                let sum: f64 = xd[s * m..(s + 1) * m].iter().map(|v| v.as_f64()).sum();
                T::of(sum / m as f64)
            })
            .collect();
        let ng = self.needs_grad(x);
        Ok(self.push(
            Tensor {
                shape: vec![shape[0], shape[1]],
                data: out,
            },
            Op::GlobalAvgPool { x },
            ng,
        ))
    }

    /// Inverted dropout. The keep mask is drawn from a stream keyed by
    /// `key` (e.g. global seed, layer id, step), so it does not depend on
    /// evaluation order. Identity when `train` is false or `rate` is 0.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, key: &[u64]) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidRate(rate));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let mut r = rng::stream(key);
        let scale = T::of(1.0 / (1.0 - rate));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if r.random::<f64>() < rate { T::zero() } else { scale })
            .collect();
        let out: Vec<T> = self.data(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs_grad(x);
        Ok(self.push(Tensor { shape, data: out }, Op::Dropout { x, mask }, ng))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self
            .shape(*xs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(a, (p, q))| a == axis || p == q);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} vs {first:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                out.extend_from_slice(&self.data(x)[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let ng = self.any_grad(xs);
        Ok(self.push(Tensor { shape, data: out }, Op::Concat { xs: xs.to_vec(), axis }, ng))
    }

    fn pool_geom(&self, x: Var, k: usize, s: usize, op: &'static str) -> Result<([usize; 5], [usize; 3]), TensorError> {
        let dims = spatial5(self.shape(x), op)?;
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = ConvGeom::out_len(dims[2 + a], k, s, 0)
                .ok_or_else(|| shape_err(op, format!("window {k} larger than input {:?}", &dims[2..])))?;
        }
        Ok((dims, out))
    }

    /// Max pooling without padding; ties go to the first voxel in raster order.
    pub fn max_pool3d(&mut self, x: Var, k: usize, s: usize) -> Result<Var, TensorError> {
        let ([n, c, d, h, w], [od, oh, ow]) = self.pool_geom(x, k, s, "max_pool3d")?;
        let xd = self.data(x);
        let mut out = Vec::with_capacity(n * c * od * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for sl in 0..n * c {
            let base = sl * d * h * w;
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = base + ((z * s) * h + y * s) * w + xx * s;
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let i = base + ((z * s + kz) * h + y * s + ky) * w + xx * s + kx;
                                    if xd[i] > xd[best] {
                                        best = i;
                                    }
                                }
                            }
                        }
                        out.push(xd[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let ng = self.needs_grad(x);
        Ok(self.push(
            Tensor::new(vec![n, c, od, oh, ow], out)?,
            Op::MaxPool3d { x, argmax },
            ng,
        ))
    }

    pub fn avg_pool3d(&mut self, x: Var, k: usize, s: usize) -> Result<Var, TensorError> {
        let ([n, c, d, h, w], [od, oh, ow]) = self.pool_geom(x, k, s, "avg_pool3d")?;
        let xd = self.data(x);
        let inv = T::one() / T::of((k * k * k) as f64);
        let mut out = Vec::with_capacity(n * c * od * oh * ow);
        for sl in 0..n * c {
            let base = sl * d * h * w;
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = T::zero();
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    acc += xd[base + ((z * s + kz) * h + y * s + ky) * w + xx * s + kx];
                                }
                            }
                        }
                        out.push(acc * inv);
                    }
                }
            }
        }
        let ng = self.needs_grad(x);
        Ok(self.push(Tensor::new(vec![n, c, od, oh, ow], out)?, Op::AvgPool3d { x, k, s }, ng))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, bool), TensorError> {
        same_shape(self.shape(a), self.shape(b), op)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok((
            Tensor {
                shape: self.shape(a).to_vec(),
                data,
            },
            self.any_grad(&[a, b]),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (t, ng) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (t, ng) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (t, ng) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul { a, b }, ng))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (t, ng) = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div { a, b }, ng))
    }

    /// Elementwise product with a constant array of the same length.
    pub fn mul_const(&mut self, a: Var, c: Vec<T>) -> Result<Var, TensorError> {
        if c.len() != self.value(a).numel() {
            return Err(shape_err(
                "mul_const",
                format!("{} constants for {:?}", c.len(), self.shape(a)),
            ));
        }
        let data = self.data(a).iter().zip(&c).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs_grad(a);
        Ok(self.push(Tensor { shape, data }, Op::MulConst { a, c }, ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let data = self.data(a).iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs_grad(a);
        self.push(Tensor { shape, data }, Op::Scale { a, s }, ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let data = self.data(a).iter().map(|&x| x + s).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs_grad(a);
        self.push(Tensor { shape, data }, Op::AddScalar { a }, ng)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.data(a).iter().map(|v| v.as_f64()).sum();
        let ng = self.needs_grad(a);
        self.push(Tensor::scalar(T::of(s)), Op::Sum { a }, ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.data(a).iter().map(|v| v.as_f64()).sum();
        let ng = self.needs_grad(a);
        self.push(Tensor::scalar(T::of(s / n)), Op::Mean { a }, ng)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, total, inner) = axis_split(&shape, axis);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * total + start) * inner..(o * total + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let ng = self.needs_grad(x);
        Ok(self.push(
            Tensor {
                shape: oshape,
                data: out,
            },
            Op::Narrow { x, axis, start },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = Tensor::new(shape.to_vec(), self.data(x).to_vec())?;
        let ng = self.needs_grad(x);
        Ok(self.push(t, Op::Reshape { x }, ng))
    }

    /// Mean binary cross-entropy of logits `x` against 0/1 `target`, in the
    /// overflow-free form `max(x,0) − x·t + ln(1 + e^{−|x|})`.
    pub fn bce_with_logits(&mut self, x: Var, target: &[T]) -> Result<Var, TensorError> {
        if target.len() != self.value(x).numel() {
            return Err(shape_err(
                "bce_with_logits",
                format!("{} targets for {:?}", target.len(), self.shape(x)),
            ));
        }
        let xd = self.data(x);
        let mut s = 0.0f64;
        for (&v, &t) in xd.iter().zip(target) {
            let v = v.as_f64();
            s += v.max(0.0) - v * t.as_f64()
                + num_traits::Float::ln_1p(num_traits::Float::exp(-num_traits::Float::abs(v)));
        }
        let loss = T::of(s / xd.len() as f64);
        let ng = self.needs_grad(x);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                x,
                target: target.to_vec(),
            },
            ng,
        ))
    }
}

pub(crate) fn upsample2_backward<T: Scalar>(shape: &[usize], g: &[T], dx: &mut [T]) {
    let (nc, d, h, w) = (shape[0] * shape[1], shape[2], shape[3], shape[4]);
    let (h2, w2) = (2 * h, 2 * w);
    for s in 0..nc {
        let gs = &g[s * 8 * d * h * w..(s + 1) * 8 * d * h * w];
        let dxs = &mut dx[s * d * h * w..(s + 1) * d * h * w];
        for z in 0..2 * d {
            for y in 0..h2 {
                let row = &gs[(z * h2 + y) * w2..(z * h2 + y + 1) * w2];
                let dst = &mut dxs[((z / 2) * h + y / 2) * w..((z / 2) * h + y / 2 + 1) * w];
                for (i, d) in dst.iter_mut().enumerate() {
                    *d += row[2 * i] + row[2 * i + 1];
                }
            }
        }
    }
}

pub(crate) fn instance_norm_backward<T: Scalar>(
    shape: &[usize],
    g: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c) = (shape[0], shape[1]);
    let m = shape[2] * shape[3] * shape[4];
    let mf = m as f64;
    let mut dx = vec![T::zero(); g.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n * c {
        let ch = s % c;
        let gs = &g[s * m..(s + 1) * m];
        let xs = &xhat[s * m..(s + 1) * m];
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for (&gv, &xv) in gs.iter().zip(xs) {
            sum_g += gv.as_f64();
            sum_gx += gv.as_f64() * xv.as_f64();
        }
        dbeta[ch] += T::of(sum_g);
        dgamma[ch] += T::of(sum_gx);
        // dxhat = g·γ, so Σdxhat = γ·Σg and Σdxhat·x̂ = γ·Σg·x̂.
        let gam = gamma[ch].as_f64();
        let k = gam * inv_std[s].as_f64() / mf;
        let (a, b) = (sum_g, sum_gx);
        for i in 0..m {
            let v = k * (mf * gs[i].as_f64() - a - xs[i].as_f64() * b);
            dx[s * m + i] = T::of(v);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn softmax_backward<T: Scalar>(shape: &[usize], axis: usize, y: &[T], g: &[T]) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
            for k in 0..len {
                dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
            }
        }
    }
    dx
}

pub(crate) fn log_softmax_backward<T: Scalar>(shape: &[usize], axis: usize, ly: &[T], g: &[T]) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![T::zero(); ly.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let gsum: T = (0..len).map(|k| g[at(k)]).sum();
            for k in 0..len {
                dx[at(k)] = g[at(k)] - ly[at(k)].exp() * gsum;
            }
        }
    }
    dx
}

pub(crate) fn avg_pool_backward<T: Scalar>(
    in_shape: &[usize],
    out_shape: &[usize],
    k: usize,
    s: usize,
    g: &[T],
    dx: &mut [T],
) {
    let (nc, d, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3], in_shape[4]);
    let (od, oh, ow) = (out_shape[2], out_shape[3], out_shape[4]);
    let inv = T::one() / T::of((k * k * k) as f64);
    for sl in 0..nc {
        let base = sl * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let gv = g[((sl * od + z) * oh + y) * ow + xx] * inv;
                    for kz in 0..k {
                        for ky in 0..k {
                            for kx in 0..k {
                                dx[base + ((z * s + kz) * h + y * s + ky) * w + xx * s + kx] += gv;
                            }
                        }
                    }
                }
            }
        }
    }
}
