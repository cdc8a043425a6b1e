//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Every operation appends a node to a [`Tape`]. Nodes are stored in
//! creation order, which is already a topological order, so
//! [`Tape::backward`] is a single reverse sweep. A tape is consumed by
//! `backward`; a fresh one is built for every forward pass.

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{conv_pair, mm_nn, mm_nt, mm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Tanh(Var),
    Gather {
        src: Var,
        idx: Vec<usize>,
    },
    Segment {
        src: Var,
        dst: Vec<usize>,
        weight: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Dropout {
        src: Var,
        mask: Vec<f64>,
    },
    Conv {
        s: Var,
        r: Var,
        kernels: Var,
        channels: usize,
        width: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    SqDist {
        src: Var,
        anchor: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Elementwise activation selectable from configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "identity" | "none" => Ok(Self::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Identity => "identity",
        })
    }
}

/// Recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient tensors of every named parameter, in registration order.
    /// Parameters the loss does not depend on get an all-zero gradient.
    pub fn into_named(mut self) -> IndexMap<String, Tensor> {
        let mut out = IndexMap::with_capacity(self.params.len());
        for (name, v) in std::mem::take(&mut self.params) {
            let shape = self.shapes[v.0].clone();
            let n = shape.iter().product();
            let data = self.grads[v.0].take().unwrap_or_else(|| vec![0.0; n]);
            out.insert(name, Tensor::new(shape, data).expect("gradient shape"));
        }
        out
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Registers a constant (no gradient is reported for it by name).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a named trainable leaf whose gradient is reported by
    /// [`Gradients::into_named`].
    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.params.push((name.to_string(), v));
        v
    }

    fn mat_dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.mat_dims(a);
        let (n2, p) = self.mat_dims(b);
        if n != n2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return shape_err("matmul", self.shape(a), self.shape(b));
        }
        let mut out = vec![0.0; m * p];
        mm_nn(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            n,
            p,
        );
        Ok(self.push(Tensor::new(vec![m, p], out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.mat_dims(a);
        let (p, n2) = self.mat_dims(b);
        if n != n2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return shape_err("matmul_nt", self.shape(a), self.shape(b));
        }
        let mut out = vec![0.0; m * p];
        mm_nt(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            n,
            p,
        );
        Ok(self.push(Tensor::new(vec![m, p], out)?, Op::MatMulNt(a, b)))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, self.shape(a), self.shape(b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Adds a `1×n` (or length-`n`) row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(bias).len() != cols {
            return shape_err("add_row", self.shape(a), self.shape(bias));
        }
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(a).clone();
        for row in t.data_mut().chunks_mut(cols.max(1)) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(t, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|x| *x *= c);
        self.push(t, Op::Scale(a, c))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|x| *x = f(*x));
        t
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Relu => self.relu(a),
            Activation::Tanh => self.tanh(a),
            Activation::Identity => a,
        }
    }

    /// Row lookup: `out[i] = src[idx[i]]`. The backward pass scatter-adds
    /// into the touched rows only.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(src);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    size: rows,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![idx.len(), cols], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                src,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Weighted segment sum: `out[dst[e]] += weight[e] * src[e]` over the rows
    /// `e` of `src`, producing `rows × cols`.
    pub fn segment_sum(
        &mut self,
        src: Var,
        dst: &[usize],
        weight: &[f64],
        rows: usize,
    ) -> Result<Var> {
        let t = self.value(src);
        let cols = t.cols();
        if dst.len() != t.rows() || weight.len() != t.rows() {
            return shape_err("segment_sum", t.shape(), &[dst.len(), weight.len()]);
        }
        let mut out = vec![0.0; rows * cols];
        for (e, (&o, &w)) in dst.iter().zip(weight).enumerate() {
            if o >= rows {
                return Err(Error::Index {
                    what: "segment_sum",
                    index: o,
                    size: rows,
                });
            }
            let srow = t.row(e);
            for (x, &y) in out[o * cols..(o + 1) * cols].iter_mut().zip(srow) {
                *x += w * y;
            }
        }
        let out = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(
            out,
            Op::Segment {
                src,
                dst: dst.to_vec(),
                weight: weight.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_rows of nothing".into()));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return shape_err("concat_rows", self.shape(first), t.shape());
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Inverted dropout. Identity (no node) when `train` is false or `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mut t = self.value(a).clone();
        t.data_mut()
            .iter_mut()
            .zip(&mask)
            .for_each(|(x, m)| *x *= m);
        Ok(self.push(t, Op::Dropout { src: a, mask }))
    }

    /// Batched same-padded convolution of stacked pairs.
    ///
    /// `s` and `r` are `B×d`; `kernels` is `C×2×M` with `M` odd. Row `b` of the
    /// result is the `C×d` feature map of `[s_b; r_b]` flattened row-major.
    pub fn conv_pairs(&mut self, s: Var, r: Var, kernels: Var) -> Result<Var> {
        let kshape = self.shape(kernels).to_vec();
        if kshape.len() != 3 || kshape[1] != 2 {
            return shape_err("conv_pairs kernels (expected C×2×M)", &kshape, &[0, 2, 0]);
        }
        let (channels, width) = (kshape[0], kshape[2]);
        if width % 2 == 0 {
            return Err(Error::Config(format!("kernel width {width} must be odd")));
        }
        if self.shape(s) != self.shape(r) || self.shape(s).len() != 2 {
            return shape_err("conv_pairs", self.shape(s), self.shape(r));
        }
        let (b, d) = self.mat_dims(s);
        let mut out = vec![0.0; b * channels * d];
        {
            let (sv, rv, kv) = (self.value(s), self.value(r), self.value(kernels).data());
            for i in 0..b {
                conv_pair(
                    sv.row(i),
                    rv.row(i),
                    kv,
                    channels,
                    width,
                    &mut out[i * channels * d..(i + 1) * channels * d],
                );
            }
        }
        let t = Tensor::new(vec![b, channels * d], out)?;
        Ok(self.push(
            t,
            Op::Conv {
                s,
                r,
                kernels,
                channels,
                width,
            },
        ))
    }

    /// Mean softmax cross-entropy of `logits[B×V]` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, v) = self.mat_dims(logits);
        if targets.len() != b || b == 0 {
            return shape_err("cross_entropy", self.shape(logits), &[targets.len()]);
        }
        let lt = self.value(logits);
        let mut probs = vec![0.0; b * v];
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(Error::Index {
                    what: "cross_entropy target",
                    index: t,
                    size: v,
                });
            }
            let row = lt.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &x) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            for p in &mut probs[i * v..(i + 1) * v] {
                *p /= z;
            }
            loss += max + z.ln() - row[t];
        }
        let out = Tensor::scalar(loss / b as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `Σ (a − anchor)²` against a constant anchor.
    pub fn sq_dist(&mut self, a: Var, anchor: &Tensor) -> Result<Var> {
        if self.shape(a) != anchor.shape() {
            return shape_err("sq_dist", self.shape(a), anchor.shape());
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(anchor.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::SqDist {
                src: a,
                anchor: anchor.data().to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            params: self.params,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, n) = self.mat_dims(*a);
                let p = val(*b).cols();
                mm_nt(g, val(*b).data(), acc(grads, *a, m * n), m, p, n);
                mm_tn(val(*a).data(), g, acc(grads, *b, n * p), m, n, p);
            }
            Op::MatMulNt(a, b) => {
                let (m, n) = self.mat_dims(*a);
                let p = val(*b).rows();
                mm_nn(g, val(*b).data(), acc(grads, *a, m * n), m, p, n);
                mm_tn(g, val(*a).data(), acc(grads, *b, p * n), m, p, n);
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                add_into(acc(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                acc(grads, *b, g.len())
                    .iter_mut()
                    .zip(g)
                    .for_each(|(x, y)| *x -= y);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let ga = acc(grads, *a, g.len());
                for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                    *x += gi * bi;
                }
                let gb = acc(grads, *b, g.len());
                for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                    *x += gi * ai;
                }
            }
            Op::AddRow(a, bias) => {
                add_into(acc(grads, *a, g.len()), g);
                let cols = val(*bias).len();
                let gb = acc(grads, *bias, cols);
                for row in g.chunks(cols.max(1)) {
                    add_into(gb, row);
                }
            }
            Op::Scale(a, c) => {
                acc(grads, *a, g.len())
                    .iter_mut()
                    .zip(g)
                    .for_each(|(x, y)| *x += c * y);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let ga = acc(grads, *a, g.len());
                for ((x, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *x += gi * yi * (1.0 - yi);
                }
            }
            Op::Relu(a) => {
                let inp = val(*a).data();
                let ga = acc(grads, *a, g.len());
                for ((x, gi), xi) in ga.iter_mut().zip(g).zip(inp) {
                    if *xi > 0.0 {
                        *x += gi;
                    }
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let ga = acc(grads, *a, g.len());
                for ((x, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *x += gi * (1.0 - yi * yi);
                }
            }
            Op::Gather { src, idx } => {
                let cols = node.value.cols();
                let ga = acc(grads, *src, val(*src).len());
                for (i, &r) in idx.iter().enumerate() {
                    add_into(
                        &mut ga[r * cols..(r + 1) * cols],
                        &g[i * cols..(i + 1) * cols],
                    );
                }
            }
            Op::Segment { src, dst, weight } => {
                let cols = node.value.cols();
                let ga = acc(grads, *src, val(*src).len());
                for (e, (&o, &w)) in dst.iter().zip(weight).enumerate() {
                    let grow = &g[o * cols..(o + 1) * cols];
                    for (x, y) in ga[e * cols..(e + 1) * cols].iter_mut().zip(grow) {
                        *x += w * y;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).len();
                    add_into(acc(grads, *p, len), &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::Reshape(a) => add_into(acc(grads, *a, g.len()), g),
            Op::Dropout { src, mask } => {
                let ga = acc(grads, *src, g.len());
                for ((x, gi), m) in ga.iter_mut().zip(g).zip(mask) {
                    *x += gi * m;
                }
            }
            Op::Conv {
                s,
                r,
                kernels,
                channels,
                width,
            } => self.conv_backward(*s, *r, *kernels, *channels, *width, g, grads),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let b = targets.len();
                let v = probs.len() / b;
                let scale = g[0] / b as f64;
                let gl = acc(grads, *logits, probs.len());
                for (i, &t) in targets.iter().enumerate() {
                    for j in 0..v {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        gl[i * v + j] += scale * (probs[i * v + j] - onehot);
                    }
                }
            }
            Op::Sum(a) => {
                let len = val(*a).len();
                acc(grads, *a, len).iter_mut().for_each(|x| *x += g[0]);
            }
            Op::SqDist { src, anchor } => {
                let sv = val(*src).data();
                let ga = acc(grads, *src, sv.len());
                for ((x, a), c) in ga.iter_mut().zip(sv).zip(anchor) {
                    *x += 2.0 * g[0] * (a - c);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        s: Var,
        r: Var,
        kernels: Var,
        channels: usize,
        width: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (b, d) = self.mat_dims(s);
        let pad = (width - 1) / 2;
        let sv = self.value(s).data();
        let rv = self.value(r).data();
        let kv = self.value(kernels).data();
        let mut gs = vec![0.0; b * d];
        let mut gr = vec![0.0; b * d];
        let mut gk = vec![0.0; kv.len()];
        for i in 0..b {
            let (srow, rrow) = (&sv[i * d..(i + 1) * d], &rv[i * d..(i + 1) * d]);
            for c in 0..channels {
                let w = &kv[c * 2 * width..(c + 1) * 2 * width];
                let gw = &mut gk[c * 2 * width..(c + 1) * 2 * width];
                let grow = &g[(i * channels + c) * d..(i * channels + c + 1) * d];
                for (j, &go) in grow.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    for m in 0..width {
                        let Some(idx) = (j + m).checked_sub(pad) else {
                            continue;
                        };
                        if idx >= d {
                            continue;
                        }
                        gs[i * d + idx] += go * w[m];
                        gr[i * d + idx] += go * w[width + m];
                        gw[m] += go * srow[idx];
                        gw[width + m] += go * rrow[idx];
                    }
                }
            }
        }
        add_into(acc(grads, s, b * d), &gs);
        add_into(acc(grads, r, b * d), &gr);
        add_into(acc(grads, kernels, kv.len()), &gk);
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a matrix, max-subtracted.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let cols = t.cols();
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            z += *x;
        }
        row.iter_mut().for_each(|x| *x /= z);
    }
    out
}

/// Convolves a single stacked pair `[s; r]` (`2×d`) with `C×2×M` kernels,
/// returning the `C×d` feature map.
pub fn conv_stack(tape: &mut Tape, pair: Var, kernels: Var) -> Result<Var> {
    let shape = tape.shape(pair).to_vec();
    if shape.len() != 2 || shape[0] != 2 {
        return shape_err("conv_stack pair (expected 2×d)", &shape, &[2, 0]);
    }
    let d = shape[1];
    let s = tape.gather_rows(pair, &[0])?;
    let r = tape.gather_rows(pair, &[1])?;
    let flat = tape.conv_pairs(s, r, kernels)?;
    let c = tape.shape(kernels)[0];
    tape.reshape(flat, &[c, d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2));
        let m = tape.constant(rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(rows(&[&[1.0, 2.0]]));
        let b = tape.constant(rows(&[&[3.0], &[4.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_bt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a0 = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let b0 = Tensor::uniform(&[4, 2], 1.0, &mut rng);
        let mut tape = Tape::new();
        let a = tape.param("a", a0.clone());
        let b = tape.constant(b0.clone());
        let c = tape.matmul(a, b).unwrap();
        let l = tape.sum(c);
        let g = tape.backward(l).unwrap();
        let ga = g.get(a).unwrap();
        for i in 0..3 {
            for k in 0..4 {
                let expect: f64 = (0..2).map(|j| b0.get(k, j)).sum();
                assert!((ga[i * 4 + k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_simple_cases() {
        let x0 = rows(&[&[1.0, -2.0, 3.0], &[0.5, 0.0, -1.5]]);
        let mut tape = Tape::new();
        let x = tape.param("x", x0.clone());
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert!(g.get(x).unwrap().iter().all(|&v| v == 1.0));

        let mut tape = Tape::new();
        let x = tape.param("x", x0.clone());
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        for (gv, xv) in g.get(x).unwrap().iter().zip(x0.data()) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros(&[1, 4]));
        let ce = tape.cross_entropy(l, &[2]).unwrap();
        assert!((tape.value(ce).data()[0] - 4f64.ln()).abs() < 1e-12);

        let mut logits = Tensor::zeros(&[1, 4]);
        logits.set(0, 1, 1000.0);
        let l = tape.constant(logits);
        let ce = tape.cross_entropy(l, &[1]).unwrap();
        assert!(tape.value(ce).data()[0].abs() < 1e-12);

        let l = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(matches!(
            tape.cross_entropy(l, &[4]),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn conv_selector_kernel_returns_subject_row() {
        let mut tape = Tape::new();
        let pair = tape.constant(rows(&[&[1.0, 2.0, 3.0], &[7.0, 8.0, 9.0]]));
        let k = tape.constant(Tensor::new(vec![1, 2, 1], vec![1.0, 0.0]).unwrap());
        let out = conv_stack(&mut tape, pair, k).unwrap();
        assert_eq!(tape.shape(out), &[1, 3]);
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_zero_input_gives_zero_and_even_width_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let pair = tape.constant(Tensor::zeros(&[2, 5]));
        let k = tape.constant(Tensor::uniform(&[3, 2, 3], 1.0, &mut rng));
        let out = conv_stack(&mut tape, pair, k).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

        let even = tape.constant(Tensor::zeros(&[3, 2, 2]));
        assert!(matches!(
            conv_stack(&mut tape, pair, even),
            Err(Error::Config(_))
        ));
        let tall = tape.constant(Tensor::zeros(&[3, 3, 3]));
        assert!(matches!(
            conv_stack(&mut tape, pair, tall),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[4, 4], 2.0));
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.7, false, &mut rng).unwrap(), x);
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 4.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Tensor::uniform(&[6, 9], 50.0, &mut rng);
        let s = softmax_rows(&t);
        for i in 0..6 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::scalar(3.0));
        let y = tape.add(x, x).unwrap();
        let z = tape.mul(y, x).unwrap(); // 2x^2
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap(), &[12.0]);
    }
}
