//! Wengert-list reverse-mode differentiation.
//!
//! Each primitive appends a node holding its forward value and, when any input
//! requires a gradient, the saved state its vector-Jacobian product needs.
//! [`Tape::backward`] walks the list once in reverse.

use std::collections::BTreeMap;

use super::kernels::{
    col2im_add, gelu_grad, gelu_scalar, im2col, matmul_at_into, matmul_bt_into, matmul_into, transpose2,
};
use super::params::{Gradients, ParamStore};
use super::{split_axis, Tensor};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scalar::{lit, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Conv1d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, cols: Vec<S> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Exp(Var),
    Log(Var),
    XLogX(Var),
    Transpose(Var),
    Reshape(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S> },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<S>, inv_std: Vec<S> },
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Dropout { x: Var, mask: Vec<S> },
    Gather { table: Var, indices: Vec<usize> },
    Cosine { a: Var, b: Var, axis: usize, eps: S },
    Sum { x: Var, axis: Option<usize> },
    Mean { x: Var, axis: Option<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    StraightThrough(Var),
    /// Scalar output whose gradient with respect to `x` was computed in the forward pass.
    ScalarWithGrad { x: Var, grad: Vec<S> },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Parameter handles produced by [`Tape::bind`].
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid("bind", format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Gradient buffers produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct TapeGrads<S> {
    grads: Vec<Option<Vec<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> TapeGrads<S> {
    pub fn get(&self, v: Var) -> Option<Tensor<S>> {
        self.grads[v.0].as_ref().map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("grad shape"))
    }

    /// Gradients for every trainable bound parameter; parameters the loss never
    /// reached get zeros.
    pub fn collect(&self, bound: &Bound, params: &ParamStore<S>, trainable: impl Fn(&str) -> bool) -> Gradients<S> {
        let mut out = Gradients::default();
        for (name, &v) in bound.iter() {
            if !trainable(name) {
                continue;
            }
            let g = match &self.grads[v.0] {
                Some(g) => Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("grad shape"),
                None => Tensor::zeros(params.get(name).map(|t| t.shape().to_vec()).unwrap_or_default()),
            };
            out.insert(name.clone(), g);
        }
        out
    }
}

#[derive(Debug)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    consumed: bool,
    check_finite: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, &[a, b]));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(op, &[a, b])),
        })
        .collect()
}

/// Flat input index for every flat output index under broadcasting.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let n: usize = out.iter().product();
    if out == inp {
        return (0..n).collect();
    }
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        strides[d] = if inp[d] == 1 { 0 } else { s };
        s *= inp[d];
    }
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += strides[d];
            if idx[d] < out[d] {
                break;
            }
            flat -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

fn remove_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false, check_finite: cfg!(debug_assertions) }
    }

    /// Enables or disables NaN/Inf detection on every recorded value.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.check_finite && value.has_non_finite() {
            return Err(Error::Numeric(format!("{name} produced a non-finite value")));
        }
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Places every parameter on the tape; names for which `trainable` is false
    /// become constants.
    pub fn bind(&mut self, params: &ParamStore<S>, trainable: impl Fn(&str) -> bool) -> Bound {
        let mut vars = BTreeMap::new();
        for (name, t) in params.iter() {
            let v = if trainable(name) { self.param(t.clone()) } else { self.constant(t.clone()) };
            vars.insert(name.clone(), v);
        }
        Bound { vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &[sa, sb]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg, "matmul")
    }

    /// 1-D convolution: `x [cin, t]`, `w [cout, cin, k]`, optional `b [cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::invalid("conv1d", "stride must be at least 1"));
        }
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[0] {
            return Err(Error::shape("conv1d", &[&sx, &sw]));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::shape("conv1d", &[&sx, &sw, self.shape(b)]));
            }
        }
        let (cin, t_in, cout, k) = (sx[0], sx[1], sw[0], sw[2]);
        if t_in + 2 * pad < k {
            return Err(Error::invalid("conv1d", format!("input length {t_in} shorter than kernel {k}")));
        }
        let t_out = (t_in + 2 * pad - k) / stride + 1;
        let cols = im2col(self.value(x).data(), cin, t_in, k, stride, pad, t_out);
        let mut out = vec![S::zero(); cout * t_out];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for o in 0..cout {
                out[o * t_out..(o + 1) * t_out].fill(bd[o]);
            }
        }
        matmul_into(self.value(w).data(), &cols, &mut out, cout, cin * k, t_out);
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.rg(&ins);
        self.push(Tensor::new([cout, t_out], out)?, Op::Conv1d { x, w, b, stride, pad, cols }, rg, "conv1d")
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(S, S) -> S) -> Result<(Tensor<S>, bool)> {
        let out_shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let ma = broadcast_map(&out_shape, self.shape(a));
        let mb = broadcast_map(&out_shape, self.shape(b));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect();
        Ok((Tensor::new(out_shape, data)?, self.rg(&[a, b])))
    }

    /// Elementwise sum with same-rank broadcasting over size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, c), rg, "scale")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.exp());
        let rg = self.rg(&[x]);
        self.push(t, Op::Exp(x), rg, "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.ln());
        let rg = self.rg(&[x]);
        self.push(t, Op::Log(x), rg, "log")
    }

    /// `x ln x` with the convention `0 ln 0 = 0`.
    pub fn xlogx(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < S::zero()) {
            return Err(Error::invalid("xlogx", "negative input"));
        }
        let t = self.value(x).map(|v| if v == S::zero() { S::zero() } else { v * v.ln() });
        let rg = self.rg(&[x]);
        self.push(t, Op::XLogX(x), rg, "xlogx")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", &[&s]));
        }
        let data = transpose2(self.value(x).data(), s[0], s[1]);
        let rg = self.rg(&[x]);
        self.push(Tensor::new([s[1], s[0]], data)?, Op::Transpose(x), rg, "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Reshape(x), rg, "reshape")
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::shape("layer_norm", &[&s]))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", &[&s, self.shape(gamma), self.shape(beta)]));
        }
        let rows = self.value(x).numel() / d.max(1);
        let xd = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![S::zero(); xd.len()];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); xd.len()];
        let dn = S::from_usize_lossy(d);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + bt[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(Tensor::new(s, out)?, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg, "layer_norm")
    }

    /// Group normalization of `x [c, t]`: statistics over each group of
    /// `c / groups` channels and all time steps, per-channel affine.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || groups == 0 || s[0] % groups != 0 {
            return Err(Error::shape("group_norm", &[&s]));
        }
        let (c, t) = (s[0], s[1]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("group_norm", &[&s, self.shape(gamma), self.shape(beta)]));
        }
        let per = c / groups;
        let n = S::from_usize_lossy(per * t);
        let xd = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![S::zero(); xd.len()];
        let mut inv_std = vec![S::zero(); groups];
        let mut out = vec![S::zero(); xd.len()];
        for gi in 0..groups {
            let block = &xd[gi * per * t..(gi + 1) * per * t];
            let mean = block.iter().copied().sum::<S>() / n;
            let var = block.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std[gi] = is;
            for ch in gi * per..(gi + 1) * per {
                for j in 0..t {
                    let h = (xd[ch * t + j] - mean) * is;
                    xhat[ch * t + j] = h;
                    out[ch * t + j] = h * g[ch] + bt[ch];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(Tensor::new(s, out)?, Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std }, rg, "group_norm")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(gelu_scalar);
        let rg = self.rg(&[x]);
        self.push(t, Op::Gelu(x), rg, "gelu")
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::invalid(op, format!("axis {axis} out of range for shape {:?}", self.shape(x))));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let t = softmax_along(self.value(x), axis, false);
        let rg = self.rg(&[x]);
        self.push(t, Op::Softmax { x, axis }, rg, "softmax")
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let t = softmax_along(self.value(x), axis, true);
        let rg = self.rg(&[x]);
        self.push(t, Op::LogSoftmax { x, axis }, rg, "log_softmax")
    }

    /// Inverted dropout. Identity when `train` is false or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, rng: &mut CounterRng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("p = {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep: S = lit(1.0 / (1.0 - p));
        let mask: Vec<S> =
            (0..self.value(x).numel()).map(|_| if rng.uniform() >= p { keep } else { S::zero() }).collect();
        let xd = self.value(x).data();
        let data = xd.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Dropout { x, mask }, rg, "dropout")
    }

    /// Row gather (embedding lookup) from a rank-2 table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("gather_rows", &[&s]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::invalid("gather_rows", format!("index {bad} out of range for {} rows", s[0])));
        }
        let d = s[1];
        let td = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        self.push(
            Tensor::new([indices.len(), d], data)?,
            Op::Gather { table, indices: indices.to_vec() },
            rg,
            "gather_rows",
        )
    }

    /// Cosine similarity along `axis`; norms below `eps` are clamped to `eps`.
    pub fn cosine_similarity(&mut self, a: Var, b: Var, axis: usize, eps: S) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("cosine_similarity", &[self.shape(a), self.shape(b)]));
        }
        self.check_axis("cosine_similarity", a, axis)?;
        let s = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&s, axis);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let (mut dot, mut na, mut nb) = (S::zero(), S::zero(), S::zero());
                for l in 0..len {
                    let idx = (o * len + l) * inner + i;
                    dot += da[idx] * db[idx];
                    na += da[idx] * da[idx];
                    nb += db[idx] * db[idx];
                }
                out[o * inner + i] = dot / (na.sqrt().max(eps) * nb.sqrt().max(eps));
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(remove_axis(&s, axis), out)?, Op::Cosine { a, b, axis, eps }, rg, "cosine_similarity")
    }

    fn reduce(&self, x: Var, axis: Option<usize>, mean: bool) -> Result<Tensor<S>> {
        let xv = self.value(x);
        match axis {
            None => {
                let mut s = xv.data().iter().copied().sum::<S>();
                if mean {
                    s /= S::from_usize_lossy(xv.numel().max(1));
                }
                Ok(Tensor::scalar(s))
            }
            Some(axis) => {
                self.check_axis("sum", x, axis)?;
                let (outer, len, inner) = split_axis(xv.shape(), axis);
                let mut out = vec![S::zero(); outer * inner];
                let d = xv.data();
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += d[base + i];
                        }
                    }
                }
                if mean {
                    let n = S::from_usize_lossy(len.max(1));
                    out.iter_mut().for_each(|v| *v /= n);
                }
                Tensor::new(remove_axis(xv.shape(), axis), out)
            }
        }
    }

    /// Sum over one axis, or over everything to a scalar when `axis` is `None`.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.reduce(x, axis, false)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Sum { x, axis }, rg, "sum")
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.reduce(x, axis, true)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Mean { x, axis }, rg, "mean")
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        self.check_axis("concat", *first, axis)?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(Error::shape("concat", &inputs.iter().map(|&v| self.shape(v)).collect::<Vec<_>>()));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let rg = self.rg(inputs);
        self.push(Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, rg, "concat")
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let s = self.shape(x).to_vec();
        if start > end || end > s[axis] {
            return Err(Error::invalid("slice", format!("range {start}..{end} out of bounds for {:?} axis {axis}", s)));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let w = end - start;
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = w;
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }, rg, "slice")
    }

    /// Forward: one-hot of the row-wise argmax over the last axis.
    /// Backward: identity (straight-through estimator).
    pub fn straight_through_onehot(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = vec![S::zero(); xv.numel()];
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out[r * c + best] = S::one();
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::StraightThrough(x), rg, "straight_through_onehot")
    }

    /// Records a scalar computed outside the tape together with its gradient
    /// with respect to `x`.
    pub fn scalar_with_grad(&mut self, x: Var, value: S, grad: Vec<S>) -> Result<Var> {
        if grad.len() != self.value(x).numel() {
            return Err(Error::shape("scalar_with_grad", &[self.shape(x), &[grad.len()]]));
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(value), Op::ScalarWithGrad { x, grad }, rg, "scalar_with_grad")
    }

    /// Populates gradients of the scalar `loss` with respect to every node that
    /// requires one. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<TapeGrads<S>> {
        if self.consumed {
            return Err(Error::Backward("tape already consumed".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Backward(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<S>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![S::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(TapeGrads { grads, shapes })
    }

    fn backprop_node(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(ga) = acc(nodes, grads, *a) {
                    matmul_bt_into(g, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    matmul_at_into(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::Conv1d { x, w, b, stride, pad, cols } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (cin, t_in, cout, k) = (sx[0], sx[1], sw[0], sw[2]);
                let t_out = out_shape[1];
                if let Some(gw) = acc(nodes, grads, *w) {
                    matmul_bt_into(g, cols, gw, cout, t_out, cin * k);
                }
                if let Some(b) = b {
                    if let Some(gb) = acc(nodes, grads, *b) {
                        for o in 0..cout {
                            gb[o] += g[o * t_out..(o + 1) * t_out].iter().copied().sum::<S>();
                        }
                    }
                }
                if nodes[x.0].requires_grad {
                    let mut dcols = vec![S::zero(); cin * k * t_out];
                    matmul_at_into(self.value(*w).data(), g, &mut dcols, cout, cin * k, t_out);
                    let gx = acc(nodes, grads, *x).expect("requires grad");
                    col2im_add(&dcols, gx, cin, t_in, k, *stride, *pad, t_out);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let ma = broadcast_map(out_shape, self.shape(*a));
                let mb = broadcast_map(out_shape, self.shape(*b));
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let kind = match &node.op {
                    Op::Add(..) => 0,
                    Op::Sub(..) => 1,
                    _ => 2,
                };
                if let Some(ga) = acc(nodes, grads, *a) {
                    for (o, &j) in ma.iter().enumerate() {
                        ga[j] += if kind == 2 { g[o] * db[mb[o]] } else { g[o] };
                    }
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    for (o, &j) in mb.iter().enumerate() {
                        gb[j] += match kind {
                            0 => g[o],
                            1 => -g[o],
                            _ => g[o] * da[ma[o]],
                        };
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b * *c);
                }
            }
            Op::Exp(x) => {
                let y = node.value.data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * y[j];
                    }
                }
            }
            Op::Log(x) => {
                let xd = self.value(*x).data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] / xd[j];
                    }
                }
            }
            Op::XLogX(x) => {
                let xd = self.value(*x).data();
                let floor = S::min_positive_value();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * (xd[j].max(floor).ln() + S::one());
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (out_shape[0], out_shape[1]);
                let t = transpose2(g, r, c);
                if let Some(gx) = acc(nodes, grads, *x) {
                    gx.iter_mut().zip(&t).for_each(|(a, &b)| *a += b);
                }
            }
            Op::Reshape(x) | Op::StraightThrough(x) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = *out_shape.last().unwrap();
                let rows = g.len() / d.max(1);
                let gam = self.value(*gamma).data();
                if let Some(gg) = acc(nodes, grads, *gamma) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = acc(nodes, grads, *beta) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if let Some(gx) = acc(nodes, grads, *x) {
                    let dn = S::from_usize_lossy(d);
                    for r in 0..rows {
                        let (mut s1, mut s2) = (S::zero(), S::zero());
                        for j in 0..d {
                            let dh = g[r * d + j] * gam[j];
                            s1 += dh;
                            s2 += dh * xhat[r * d + j];
                        }
                        for j in 0..d {
                            let dh = g[r * d + j] * gam[j];
                            gx[r * d + j] += inv_std[r] / dn * (dn * dh - s1 - xhat[r * d + j] * s2);
                        }
                    }
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std } => {
                let (c, t) = (out_shape[0], out_shape[1]);
                let per = c / groups;
                let gam = self.value(*gamma).data();
                if let Some(gg) = acc(nodes, grads, *gamma) {
                    for ch in 0..c {
                        for j in 0..t {
                            gg[ch] += g[ch * t + j] * xhat[ch * t + j];
                        }
                    }
                }
                if let Some(gb) = acc(nodes, grads, *beta) {
                    for ch in 0..c {
                        gb[ch] += g[ch * t..(ch + 1) * t].iter().copied().sum::<S>();
                    }
                }
                if let Some(gx) = acc(nodes, grads, *x) {
                    let n = S::from_usize_lossy(per * t);
                    for gi in 0..*groups {
                        let (mut s1, mut s2) = (S::zero(), S::zero());
                        for ch in gi * per..(gi + 1) * per {
                            for j in 0..t {
                                let dh = g[ch * t + j] * gam[ch];
                                s1 += dh;
                                s2 += dh * xhat[ch * t + j];
                            }
                        }
                        for ch in gi * per..(gi + 1) * per {
                            for j in 0..t {
                                let dh = g[ch * t + j] * gam[ch];
                                gx[ch * t + j] += inv_std[gi] / n * (n * dh - s1 - xhat[ch * t + j] * s2);
                            }
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * gelu_grad(xd[j]);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(out_shape, *axis);
                if let Some(gx) = acc(nodes, grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut dot = S::zero();
                            for l in 0..len {
                                let idx = (o * len + l) * inner + i;
                                dot += g[idx] * y[idx];
                            }
                            for l in 0..len {
                                let idx = (o * len + l) * inner + i;
                                gx[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
            }
            Op::LogSoftmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(out_shape, *axis);
                if let Some(gx) = acc(nodes, grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut sg = S::zero();
                            for l in 0..len {
                                sg += g[(o * len + l) * inner + i];
                            }
                            for l in 0..len {
                                let idx = (o * len + l) * inner + i;
                                gx[idx] += g[idx] - y[idx].exp() * sg;
                            }
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * mask[j];
                    }
                }
            }
            Op::Gather { table, indices } => {
                let d = out_shape[1];
                if let Some(gt) = acc(nodes, grads, *table) {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            gt[i * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::Cosine { a, b, axis, eps } => {
                let s = self.shape(*a);
                let (outer, len, inner) = split_axis(s, *axis);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let y = node.value.data();
                let (ra, rb) = (nodes[a.0].requires_grad, nodes[b.0].requires_grad);
                let mut ga_buf = if ra { vec![S::zero(); da.len()] } else { Vec::new() };
                let mut gb_buf = if rb { vec![S::zero(); db.len()] } else { Vec::new() };
                for o in 0..outer {
                    for i in 0..inner {
                        let (mut na, mut nb) = (S::zero(), S::zero());
                        for l in 0..len {
                            let idx = (o * len + l) * inner + i;
                            na += da[idx] * da[idx];
                            nb += db[idx] * db[idx];
                        }
                        let (na, nb) = (na.sqrt(), nb.sqrt());
                        let (ea, eb) = (na.max(*eps), nb.max(*eps));
                        let cos = y[o * inner + i];
                        let go = g[o * inner + i];
                        for l in 0..len {
                            let idx = (o * len + l) * inner + i;
                            if ra {
                                let mut d = db[idx] / (ea * eb);
                                if na > *eps {
                                    d -= cos * da[idx] / (na * na);
                                }
                                ga_buf[idx] += go * d;
                            }
                            if rb {
                                let mut d = da[idx] / (ea * eb);
                                if nb > *eps {
                                    d -= cos * db[idx] / (nb * nb);
                                }
                                gb_buf[idx] += go * d;
                            }
                        }
                    }
                }
                if let Some(ga) = acc(nodes, grads, *a) {
                    ga.iter_mut().zip(&ga_buf).for_each(|(p, &q)| *p += q);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    gb.iter_mut().zip(&gb_buf).for_each(|(p, &q)| *p += q);
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let is_mean = matches!(node.op, Op::Mean { .. });
                let xs = self.shape(*x).to_vec();
                if let Some(gx) = acc(nodes, grads, *x) {
                    match axis {
                        None => {
                            let mut v = g[0];
                            if is_mean {
                                v /= S::from_usize_lossy(gx.len().max(1));
                            }
                            gx.iter_mut().for_each(|a| *a += v);
                        }
                        Some(axis) => {
                            let (outer, len, inner) = split_axis(&xs, *axis);
                            let scale =
                                if is_mean { S::one() / S::from_usize_lossy(len.max(1)) } else { S::one() };
                            for o in 0..outer {
                                for l in 0..len {
                                    for i in 0..inner {
                                        gx[(o * len + l) * inner + i] += g[o * inner + i] * scale;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if let Some(gv) = acc(nodes, grads, v) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut gv[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(p, &q)| *p += q);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x).to_vec();
                let (outer, len, inner) = split_axis(&xs, *axis);
                let w = out_shape[*axis];
                if let Some(gx) = acc(nodes, grads, *x) {
                    for o in 0..outer {
                        let dst = &mut gx[(o * len + start) * inner..(o * len + start + w) * inner];
                        let src = &g[o * w * inner..(o + 1) * w * inner];
                        dst.iter_mut().zip(src).for_each(|(p, &q)| *p += q);
                    }
                }
            }
            Op::ScalarWithGrad { x, grad } => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    gx.iter_mut().zip(grad).for_each(|(p, &q)| *p += q * g[0]);
                }
            }
        }
        Ok(())
    }
}

fn acc<'a, S: Scalar>(nodes: &[Node<S>], grads: &'a mut [Option<Vec<S>>], v: Var) -> Option<&'a mut Vec<S>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); len]))
}

fn softmax_along<S: Scalar>(x: &Tensor<S>, axis: usize, log: bool) -> Tensor<S> {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let d = x.data();
    let mut out = vec![S::zero(); d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let m = (0..len).map(|l| d[idx(l)]).fold(S::neg_infinity(), S::max);
            let z: S = (0..len).map(|l| (d[idx(l)] - m).exp()).sum();
            let lz = z.ln();
            for l in 0..len {
                out[idx(l)] = if log { d[idx(l)] - m - lz } else { (d[idx(l)] - m).exp() / z };
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}
