//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node holding its forward value and enough
//! bookkeeping to run its pullback. Nodes are appended in evaluation order, so
//! the tape is always topologically sorted and [`Tape::backward`] is a single
//! reverse sweep.

use std::sync::Arc;

use super::{NumericsError, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    GatherElems(Var, Vec<(usize, usize)>),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Log(Var),
    Softmax(Var),
    SoftmaxBanded(Var, usize),
    BandRenorm(Var, usize),
    Sum(Var),
    Mean(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<S>,
        inv_std: Vec<S>,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Arc<Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Single-owner record of a computation.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// Columns `lo..=j` allowed in row `j` of a banded causal mask; `window == 0` is unbounded.
pub fn band_start(row: usize, window: usize) -> usize {
    if window == 0 {
        0
    } else {
        (row + 1).saturating_sub(window)
    }
}

fn gelu_parts<S: Real>(x: S) -> (S, S) {
    // tanh approximation; returns (value, derivative)
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let k = S::of(0.044715);
    let half = S::of(0.5);
    let one = S::one();
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let value = half * x * (one + t);
    let dinner = c * (one + S::of(3.0) * k * x * x);
    let deriv = half * (one + t) + half * x * (one - t * t) * dinner;
    (value, deriv)
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input tensor. Gradients are only accumulated for leaves
    /// created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a shared tensor without copying it.
    pub fn leaf_shared(&mut self, value: Arc<Tensor<S>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize), NumericsError> {
        let t = &self.nodes[v.0].value;
        t.dims2()
            .ok_or_else(|| mismatch(op, t.shape(), &[0, 0]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![S::zero(); m * n];
        S::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            S::zero(),
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(name, self.shape(a), self.shape(b)));
        }
        let out: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`d` vector to every row of an `[n, d]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (n, d) = self.dims2(x, "add_bias")?;
        if self.shape(bias) != [d] {
            return Err(mismatch("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let out: Vec<S> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % d])
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(vec![n, d], out)?, Op::AddBias(x, bias), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let t = self.value(a);
        let out: Vec<S> = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(shape, out).expect("same size"), op, rg)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |x| S::one() / (S::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, |x| gelu_parts(x).0, Op::Gelu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, |x| x.ln(), Op::Log(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty("concat_cols"))?;
        let (n, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != n {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![n, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty("concat_rows"))?;
        let (_, d) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != d {
                return Err(mismatch("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * d);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, d], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let (n, d) = self.dims2(a, "slice_cols")?;
        if start > end || end > d {
            return Err(mismatch("slice_cols", self.shape(a), &[start, end]));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(n * w);
        for i in 0..n {
            out.extend_from_slice(&src[i * d + start..i * d + end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, w], out)?, Op::SliceCols(a, start), rg))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let (n, d) = self.dims2(a, "slice_rows")?;
        if start > end || end > n {
            return Err(mismatch("slice_rows", self.shape(a), &[start, end]));
        }
        let out = self.value(a).data()[start * d..end * d].to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![end - start, d], out)?,
            Op::SliceRows(a, start),
            rg,
        ))
    }

    /// Selects rows of `table` by index; this is the embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (n, d) = self.dims2(table, "gather_rows")?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(NumericsError::IndexOutOfRange { index: id, len: n });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::GatherRows(table, ids.to_vec()),
            rg,
        ))
    }

    /// Picks individual `(row, col)` entries of a 2-D tensor into a vector.
    pub fn gather_elems(
        &mut self,
        a: Var,
        index: &[(usize, usize)],
    ) -> Result<Var, NumericsError> {
        let (n, d) = self.dims2(a, "gather_elems")?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(index.len());
        for &(r, c) in index {
            if r >= n || c >= d {
                return Err(NumericsError::IndexOutOfRange {
                    index: r * d + c,
                    len: n * d,
                });
            }
            out.push(src[r * d + c]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::vector(out),
            Op::GatherElems(a, index.to_vec()),
            rg,
        ))
    }

    /// Softmax over the last dimension, with max-subtraction.
    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let d = *t.shape().last().unwrap_or(&1);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d.max(1)) {
            softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(shape, out).expect("same size"), Op::Softmax(a), rg)
    }

    /// Row-wise softmax of a square score matrix where row `j` only covers
    /// columns `band_start(j, window)..=j`; all other entries are exactly zero.
    pub fn softmax_banded(&mut self, a: Var, window: usize) -> Result<Var, NumericsError> {
        let (n, m) = self.dims2(a, "softmax_banded")?;
        if n != m {
            return Err(mismatch("softmax_banded", self.shape(a), &[n, n]));
        }
        let src = self.value(a).data();
        let mut out = vec![S::zero(); n * n];
        for j in 0..n {
            let lo = band_start(j, window);
            let row = &mut out[j * n + lo..=j * n + j];
            row.copy_from_slice(&src[j * n + lo..=j * n + j]);
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![n, n], out)?,
            Op::SoftmaxBanded(a, window),
            rg,
        ))
    }

    /// Restricts each row of a lower-triangular row-stochastic matrix to its
    /// band and renormalizes the surviving entries.
    pub fn band_renormalize(&mut self, a: Var, window: usize) -> Result<Var, NumericsError> {
        let (n, m) = self.dims2(a, "band_renormalize")?;
        if n != m {
            return Err(mismatch("band_renormalize", self.shape(a), &[n, n]));
        }
        let src = self.value(a).data();
        let mut out = vec![S::zero(); n * n];
        for j in 0..n {
            let lo = band_start(j, window);
            renormalize_into(&src[j * n + lo..=j * n + j], &mut out[j * n + lo..=j * n + j]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![n, n], out)?,
            Op::BandRenorm(a, window),
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: S = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = S::of(t.len().max(1) as f64);
        let s: S = t.data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s / n), Op::Mean(a), rg)
    }

    /// Per-row normalization to zero mean / unit variance followed by an affine map.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let (n, d) = self.dims2(x, "layer_norm")?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let dn = S::of(d as f64);
        let mut normed = vec![S::zero(); n * d];
        let mut inv_std = vec![S::zero(); n];
        let mut out = vec![S::zero(); n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mu = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / dn;
            let is = S::one() / (var + S::of(eps)).sqrt();
            inv_std[i] = is;
            for k in 0..d {
                let xh = (row[k] - mu) * is;
                normed[i * d + k] = xh;
                out[i * d + k] = xh * g[k] + b[k];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    /// Gradient of the last `backward` call with respect to `v`. Leaves that
    /// require grad but did not influence the loss report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let shape = node.value.shape().to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Some(Tensor::new(shape, g.clone()).expect("grad shape")),
            None => Some(Tensor::zeros(&shape)),
        }
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.nodes.is_empty() {
            return Err(NumericsError::EmptyTape);
        }
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.pullback(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn pullback(&self, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let nodes = &self.nodes;
        let acc = |v: Var, grads: &mut [Option<Vec<S>>]| -> Option<usize> {
            if nodes[v.0].requires_grad {
                if grads[v.0].is_none() {
                    grads[v.0] = Some(vec![S::zero(); nodes[v.0].value.len()]);
                }
                Some(v.0)
            } else {
                None
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].value.dims2().expect("2d");
                let n = nodes[b.0].value.dims2().expect("2d").1;
                if let Some(i) = acc(*a, grads) {
                    // dA += dC · Bᵀ
                    let bv = nodes[b.0].value.data();
                    let ga = grads[i].as_mut().expect("grad");
                    S::gemm(m, n, k, g, n as isize, 1, bv, 1, n as isize, S::one(), ga);
                }
                if let Some(i) = acc(*b, grads) {
                    // dB += Aᵀ · dC
                    let av = nodes[a.0].value.data();
                    let gb = grads[i].as_mut().expect("grad");
                    S::gemm(k, m, n, av, 1, k as isize, g, n as isize, 1, S::one(), gb);
                }
            }
            Op::Transpose(a) => {
                if let Some(i) = acc(*a, grads) {
                    let (r, c) = nodes[a.0].value.dims2().expect("2d");
                    let ga = grads[i].as_mut().expect("grad");
                    for x in 0..r {
                        for y in 0..c {
                            ga[x * c + y] += g[y * r + x];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(i) = acc(*v, grads) {
                        for (d, &s) in grads[i].as_mut().expect("grad").iter_mut().zip(g) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(i) = acc(*a, grads) {
                    for (d, &s) in grads[i].as_mut().expect("grad").iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if let Some(i) = acc(*b, grads) {
                    for (d, &s) in grads[i].as_mut().expect("grad").iter_mut().zip(g) {
                        *d -= s;
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(i) = acc(*a, grads) {
                    let bv = nodes[b.0].value.data();
                    let ga = grads[i].as_mut().expect("grad");
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                }
                if let Some(i) = acc(*b, grads) {
                    let av = nodes[a.0].value.data();
                    let gb = grads[i].as_mut().expect("grad");
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(i) = acc(*x, grads) {
                    for (d, &s) in grads[i].as_mut().expect("grad").iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if let Some(i) = acc(*bias, grads) {
                    let gb = grads[i].as_mut().expect("grad");
                    let d = gb.len();
                    for (k, &s) in g.iter().enumerate() {
                        gb[k % d] += s;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(i) = acc(*a, grads) {
                    for (d, &s) in grads[i].as_mut().expect("grad").iter_mut().zip(g) {
                        *d += s * *c;
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(i) = acc(*a, grads) {
                    for (d, &s) in grads[i].as_mut().expect("grad").iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.dims2().expect("2d").1;
                let mut offset = 0;
                for p in parts {
                    let (n, w) = nodes[p.0].value.dims2().expect("2d");
                    if let Some(i) = acc(*p, grads) {
                        let gp = grads[i].as_mut().expect("grad");
                        for r in 0..n {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(i) = acc(*p, grads) {
                        for (d, &s) in grads[i]
                            .as_mut()
                            .expect("grad")
                            .iter_mut()
                            .zip(&g[offset..offset + len])
                        {
                            *d += s;
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(i) = acc(*a, grads) {
                    let d = nodes[a.0].value.dims2().expect("2d").1;
                    let (n, w) = node.value.dims2().expect("2d");
                    let ga = grads[i].as_mut().expect("grad");
                    for r in 0..n {
                        for c in 0..w {
                            ga[r * d + start + c] += g[r * w + c];
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if let Some(i) = acc(*a, grads) {
                    let d = nodes[a.0].value.dims2().expect("2d").1;
                    let ga = grads[i].as_mut().expect("grad");
                    for (k, &s) in g.iter().enumerate() {
                        ga[start * d + k] += s;
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                if let Some(i) = acc(*table, grads) {
                    let d = nodes[table.0].value.dims2().expect("2d").1;
                    let gt = grads[i].as_mut().expect("grad");
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            gt[id * d + c] += g[r * d + c];
                        }
                    }
                }
            }
            Op::GatherElems(a, index) => {
                if let Some(i) = acc(*a, grads) {
                    let d = nodes[a.0].value.dims2().expect("2d").1;
                    let ga = grads[i].as_mut().expect("grad");
                    for (k, &(r, c)) in index.iter().enumerate() {
                        ga[r * d + c] += g[k];
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(i) = acc(*a, grads) {
                    let ga = grads[i].as_mut().expect("grad");
                    for k in 0..g.len() {
                        ga[k] += g[k] * out[k] * (S::one() - out[k]);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(i) = acc(*a, grads) {
                    let ga = grads[i].as_mut().expect("grad");
                    for k in 0..g.len() {
                        ga[k] += g[k] * (S::one() - out[k] * out[k]);
                    }
                }
            }
            Op::Gelu(a) => {
                if let Some(i) = acc(*a, grads) {
                    let av = nodes[a.0].value.data();
                    let ga = grads[i].as_mut().expect("grad");
                    for k in 0..g.len() {
                        ga[k] += g[k] * gelu_parts(av[k]).1;
                    }
                }
            }
            Op::Log(a) => {
                if let Some(i) = acc(*a, grads) {
                    let av = nodes[a.0].value.data();
                    let ga = grads[i].as_mut().expect("grad");
                    for k in 0..g.len() {
                        ga[k] += g[k] / av[k];
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(i) = acc(*a, grads) {
                    let d = *node.value.shape().last().unwrap_or(&1);
                    let ga = grads[i].as_mut().expect("grad");
                    for r in 0..g.len() / d.max(1) {
                        let y = &out[r * d..(r + 1) * d];
                        let gy = &g[r * d..(r + 1) * d];
                        let dot: S = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                        for c in 0..d {
                            ga[r * d + c] += y[c] * (gy[c] - dot);
                        }
                    }
                }
            }
            Op::SoftmaxBanded(a, window) => {
                if let Some(i) = acc(*a, grads) {
                    let n = node.value.dims2().expect("2d").0;
                    let ga = grads[i].as_mut().expect("grad");
                    for j in 0..n {
                        let lo = band_start(j, *window);
                        let dot: S = (lo..=j).map(|k| out[j * n + k] * g[j * n + k]).sum();
                        for k in lo..=j {
                            ga[j * n + k] += out[j * n + k] * (g[j * n + k] - dot);
                        }
                    }
                }
            }
            Op::BandRenorm(a, window) => {
                if let Some(i) = acc(*a, grads) {
                    let n = node.value.dims2().expect("2d").0;
                    let src = nodes[a.0].value.data();
                    let ga = grads[i].as_mut().expect("grad");
                    for j in 0..n {
                        let lo = band_start(j, *window);
                        let s: S = src[j * n + lo..=j * n + j].iter().copied().sum();
                        if s == S::zero() {
                            continue;
                        }
                        let dot: S = (lo..=j).map(|k| out[j * n + k] * g[j * n + k]).sum();
                        for k in lo..=j {
                            ga[j * n + k] += (g[j * n + k] - dot) / s;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(i) = acc(*a, grads) {
                    for d in grads[i].as_mut().expect("grad").iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(i) = acc(*a, grads) {
                    let ga = grads[i].as_mut().expect("grad");
                    let n = S::of(ga.len().max(1) as f64);
                    for d in ga.iter_mut() {
                        *d += g[0] / n;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let (n, d) = node.value.dims2().expect("2d");
                if let Some(i) = acc(*gain, grads) {
                    let gg = grads[i].as_mut().expect("grad");
                    for r in 0..n {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * normed[r * d + c];
                        }
                    }
                }
                if let Some(i) = acc(*bias, grads) {
                    let gb = grads[i].as_mut().expect("grad");
                    for r in 0..n {
                        for c in 0..d {
                            gb[c] += g[r * d + c];
                        }
                    }
                }
                if let Some(i) = acc(*x, grads) {
                    let gain_v = nodes[gain.0].value.data();
                    let gx = grads[i].as_mut().expect("grad");
                    let dn = S::of(d as f64);
                    for r in 0..n {
                        let gh: Vec<S> = (0..d).map(|c| g[r * d + c] * gain_v[c]).collect();
                        let mean_gh = gh.iter().copied().sum::<S>() / dn;
                        let mean_ghx = (0..d)
                            .map(|c| gh[c] * normed[r * d + c])
                            .sum::<S>()
                            / dn;
                        for c in 0..d {
                            gx[r * d + c] += inv_std[r]
                                * (gh[c] - mean_gh - normed[r * d + c] * mean_ghx);
                        }
                    }
                }
            }
        }
    }
}

/// `out = band / Σ band`, or uniform weights when the band holds no mass.
pub fn renormalize_into<S: Real>(band: &[S], out: &mut [S]) {
    let total: S = band.iter().copied().sum();
    if total > S::zero() {
        for (o, &x) in out.iter_mut().zip(band) {
            *o = x / total;
        }
    } else {
        out.fill(S::one() / S::of(band.len() as f64));
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place<S: Real>(row: &mut [S]) {
    if row.is_empty() {
        return;
    }
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
