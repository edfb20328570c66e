use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{ParamId, ParamSpec};
use super::{NnError, ParamStore};
use crate::tensor::conv::ConvGeom;
use crate::tensor::{shape_err, Gradients, Graph, Scalar, TensorError, Var};

/// Points in the forward pass a backend may record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    /// Output of encoder stage (or dense block) `i`.
    Stage(usize),
    /// Output of the decoder at resolution level `i` (0 is full resolution).
    Decoder(usize),
    /// Deep-supervision head at level `i`.
    Head(usize),
}

/// Operations the architectures are written against.
pub trait Backend {
    type V: Copy;

    fn param(&mut self, id: ParamId) -> Self::V;
    fn dims(&self, v: Self::V) -> Vec<usize>;
    fn conv3d(
        &mut self,
        x: Self::V,
        w: Self::V,
        b: Option<Self::V>,
        stride: usize,
        pad: usize,
    ) -> Result<Self::V, NnError>;
    fn instance_norm(&mut self, x: Self::V, gamma: Self::V, beta: Self::V) -> Result<Self::V, NnError>;
    fn leaky_relu(&mut self, x: Self::V, slope: f64) -> Self::V;
    fn upsample2(&mut self, x: Self::V) -> Result<Self::V, NnError>;
    fn add(&mut self, a: Self::V, b: Self::V) -> Result<Self::V, NnError>;
    fn concat_channels(&mut self, xs: &[Self::V]) -> Result<Self::V, NnError>;
    fn max_pool(&mut self, x: Self::V, k: usize, s: usize) -> Result<Self::V, NnError>;
    fn avg_pool(&mut self, x: Self::V, k: usize, s: usize) -> Result<Self::V, NnError>;
    fn global_avg_pool(&mut self, x: Self::V) -> Result<Self::V, NnError>;
    fn dense(&mut self, x: Self::V, w: Self::V, b: Self::V) -> Result<Self::V, NnError>;
    /// `layer` distinguishes dropout sites within one forward pass.
    fn dropout(&mut self, x: Self::V, rate: f64, layer: u64) -> Result<Self::V, NnError>;

    fn relu(&mut self, x: Self::V) -> Self::V {
        self.leaky_relu(x, 0.0)
    }

    fn mark(&mut self, _tag: Tag, _v: Self::V) {}
}

/// Runs a model on a [`Graph`] with weights from a [`ParamStore`].
pub struct GraphBackend<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    train: bool,
    dropout_key: [u64; 2],
    pub marks: Vec<(Tag, Vec<usize>)>,
}

impl<'a, T: Scalar> GraphBackend<'a, T> {
    /// `train` enables dropout; masks are keyed by `dropout_key`
    /// (typically seed and step) and the site index.
    pub fn new(graph: &'a mut Graph<T>, store: &'a ParamStore<T>, train: bool, dropout_key: [u64; 2]) -> Self {
        Self {
            graph,
            store,
            bound: vec![None; store.tensors.len()],
            train,
            dropout_key,
            marks: Vec::new(),
        }
    }

    /// Gradients of every parameter in store order; parameters that were
    /// never used get zeros.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<Vec<T>> {
        self.bound
            .iter()
            .zip(&self.store.tensors)
            .map(|(b, t)| {
                b.and_then(|v| grads.get(v))
                    .map_or_else(|| vec![T::zero(); t.numel()], |g| g.to_vec())
            })
            .collect()
    }

    /// Uses `v` for parameter `id` instead of a fresh leaf from the store.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound[id.0] = Some(v);
    }

    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }
}

impl<T: Scalar> Backend for GraphBackend<'_, T> {
    type V = Var;

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.graph.param(self.store.tensors[id.0].clone());
        self.bound[id.0] = Some(v);
        v
    }

    fn dims(&self, v: Var) -> Vec<usize> {
        self.graph.shape(v).to_vec()
    }

    fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, NnError> {
        Ok(self.graph.conv3d(x, w, b, stride, pad)?)
    }

    fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NnError> {
        Ok(self.graph.instance_norm(x, gamma, beta)?)
    }

    fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.graph.leaky_relu(x, slope)
    }

    fn upsample2(&mut self, x: Var) -> Result<Var, NnError> {
        Ok(self.graph.upsample2(x)?)
    }

    fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        Ok(self.graph.add(a, b)?)
    }

    fn concat_channels(&mut self, xs: &[Var]) -> Result<Var, NnError> {
        Ok(self.graph.concat(xs, 1)?)
    }

    fn max_pool(&mut self, x: Var, k: usize, s: usize) -> Result<Var, NnError> {
        Ok(self.graph.max_pool3d(x, k, s)?)
    }

    fn avg_pool(&mut self, x: Var, k: usize, s: usize) -> Result<Var, NnError> {
        Ok(self.graph.avg_pool3d(x, k, s)?)
    }

    fn global_avg_pool(&mut self, x: Var) -> Result<Var, NnError> {
        Ok(self.graph.global_avg_pool(x)?)
    }

    fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        Ok(self.graph.dense(x, w, Some(b))?)
    }

    fn dropout(&mut self, x: Var, rate: f64, layer: u64) -> Result<Var, NnError> {
        let [a, b] = self.dropout_key;
        Ok(self.graph.dropout(x, rate, self.train, &[a, b, layer])?)
    }

    fn mark(&mut self, tag: Tag, v: Var) {
        let d = self.dims(v);
        self.marks.push((tag, d));
    }
}

/// Propagates shapes only. Checks the same shape rules as the graph ops.
#[derive(Debug)]
pub struct ShapeTracer<'a> {
    params: &'a [ParamSpec],
    shapes: Vec<Vec<usize>>,
    pub marks: Vec<(Tag, Vec<usize>)>,
}

impl<'a> ShapeTracer<'a> {
    pub fn new(params: &'a [ParamSpec]) -> Self {
        Self {
            params,
            shapes: Vec::new(),
            marks: Vec::new(),
        }
    }

    pub fn input(&mut self, shape: &[usize]) -> usize {
        self.push(shape.to_vec())
    }

    fn push(&mut self, s: Vec<usize>) -> usize {
        self.shapes.push(s);
        self.shapes.len() - 1
    }

    fn five(&self, v: usize, op: &'static str) -> Result<[usize; 5], NnError> {
        match self.shapes[v][..] {
            [n, c, d, h, w] => Ok([n, c, d, h, w]),
            ref s => Err(shape_err(op, format!("expected [N,C,D,H,W], got {s:?}")).into()),
        }
    }

    fn pooled(&mut self, x: usize, k: usize, s: usize, op: &'static str) -> Result<usize, NnError> {
        let [n, c, d, h, w] = self.five(x, op)?;
        let mut out = vec![n, c];
        for i in [d, h, w] {
            out.push(
                ConvGeom::out_len(i, k, s, 0).ok_or_else(|| shape_err(op, format!("window {k} larger than input")))?,
            );
        }
        Ok(self.push(out))
    }

    /// Marks recorded during the trace, with the tag's spatial dims.
    pub fn spatial_marks(&self, pick: impl Fn(Tag) -> Option<usize>) -> Vec<(usize, [usize; 3])> {
        self.marks
            .iter()
            .filter_map(|(t, s)| pick(*t).map(|i| (i, [s[2], s[3], s[4]])))
            .collect()
    }

    pub fn channels_at(&self, tag: Tag) -> Option<usize> {
        self.marks.iter().find(|(t, _)| *t == tag).map(|(_, s)| s[1])
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NnError {
    NnError::Tensor(TensorError::ShapeMismatch {
        op,
        detail: format!("{a:?} vs {b:?}"),
    })
}

impl Backend for ShapeTracer<'_> {
    type V = usize;

    fn param(&mut self, id: ParamId) -> usize {
        let s = self.params[id.0].shape.clone();
        self.push(s)
    }

    fn dims(&self, v: usize) -> Vec<usize> {
        self.shapes[v].clone()
    }

    fn conv3d(&mut self, x: usize, w: usize, b: Option<usize>, stride: usize, pad: usize) -> Result<usize, NnError> {
        let [n, c, d, h, wd] = self.five(x, "conv3d")?;
        let [f, cw, kd, kh, kw] = self.five(w, "conv3d weight")?;
        if cw != c {
            return Err(mismatch("conv3d", &[c], &[cw]));
        }
        if let Some(b) = b {
            if self.shapes[b] != [f] {
                return Err(mismatch("conv3d", &self.shapes[b].clone(), &[f]));
            }
        }
        let mut out = vec![n, f];
        for (i, k) in [(d, kd), (h, kh), (wd, kw)] {
            out.push(
                ConvGeom::out_len(i, k, stride, pad)
                    .ok_or_else(|| shape_err("conv3d", format!("kernel {k} does not fit input {i}")))?,
            );
        }
        Ok(self.push(out))
    }

    fn instance_norm(&mut self, x: usize, gamma: usize, beta: usize) -> Result<usize, NnError> {
        let [_, c, ..] = self.five(x, "instance_norm")?;
        for p in [gamma, beta] {
            if self.shapes[p] != [c] {
                return Err(mismatch("instance_norm", &self.shapes[p].clone(), &[c]));
            }
        }
        Ok(self.push(self.shapes[x].clone()))
    }

    fn leaky_relu(&mut self, x: usize, _slope: f64) -> usize {
        self.push(self.shapes[x].clone())
    }

    fn upsample2(&mut self, x: usize) -> Result<usize, NnError> {
        let [n, c, d, h, w] = self.five(x, "upsample2")?;
        Ok(self.push(vec![n, c, 2 * d, 2 * h, 2 * w]))
    }

    fn add(&mut self, a: usize, b: usize) -> Result<usize, NnError> {
        if self.shapes[a] != self.shapes[b] {
            return Err(mismatch("add", &self.shapes[a].clone(), &self.shapes[b].clone()));
        }
        Ok(self.push(self.shapes[a].clone()))
    }

    fn concat_channels(&mut self, xs: &[usize]) -> Result<usize, NnError> {
        let mut out = self.five(xs[0], "concat")?.to_vec();
        for &x in &xs[1..] {
            let s = self.five(x, "concat")?;
            if s[0] != out[0] || s[2..] != out[2..] {
                return Err(mismatch("concat", &s, &out));
            }
            out[1] += s[1];
        }
        Ok(self.push(out))
    }

    fn max_pool(&mut self, x: usize, k: usize, s: usize) -> Result<usize, NnError> {
        self.pooled(x, k, s, "max_pool3d")
    }

    fn avg_pool(&mut self, x: usize, k: usize, s: usize) -> Result<usize, NnError> {
        self.pooled(x, k, s, "avg_pool3d")
    }

    fn global_avg_pool(&mut self, x: usize) -> Result<usize, NnError> {
        let [n, c, ..] = self.five(x, "global_avg_pool")?;
        Ok(self.push(vec![n, c]))
    }

    fn dense(&mut self, x: usize, w: usize, b: usize) -> Result<usize, NnError> {
        let (n, i) = match self.shapes[x][..] {
            [n, i] => (n, i),
            ref s => return Err(shape_err("dense", format!("input must be [N,I], got {s:?}")).into()),
        };
        let o = match self.shapes[w][..] {
            [o, wi] if wi == i => o,
            ref s => return Err(mismatch("dense", s, &[i])),
        };
        if self.shapes[b] != [o] {
            return Err(mismatch("dense", &self.shapes[b].clone(), &[o]));
        }
        Ok(self.push(vec![n, o]))
    }

    fn dropout(&mut self, x: usize, rate: f64, _layer: u64) -> Result<usize, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidRate(rate).into());
        }
        Ok(x)
    }

    fn mark(&mut self, tag: Tag, v: usize) {
        let d = self.shapes[v].clone();
        self.marks.push((tag, d));
    }
}
