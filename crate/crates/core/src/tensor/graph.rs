//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{col2im, conv_out, im2col, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics and hyperparameters handed to [`Graph::batchnorm`].
#[derive(Debug)]
pub struct BnState<'a, T> {
    pub running_mean: &'a mut [T],
    pub running_var: &'a mut [T],
    pub momentum: T,
    pub eps: T,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Relu(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, n: usize, o: usize, cols: Option<Vec<T>> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Linear { x: Var, w: Var, b: Option<Var> },
    GlobalAvgPool(Var),
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<T: Real> Graph<T> {
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

    /// Whether gradients will flow to this node.
    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Registers an input or parameter. The leaf takes `requires_grad` from
    /// the argument, not from the tensor.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let mut value = t;
        value.grad = None;
        value.requires_grad = requires_grad;
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data: Vec<T> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        finite("add", &data)?;
        let out = Tensor::new(va.shape(), data)?;
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(out, Op::Add(a, b), tracked))
    }

    /// Elementwise product of two same-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data: Vec<T> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        finite("mul", &data)?;
        let out = Tensor::new(va.shape(), data)?;
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(out, Op::Mul(a, b), tracked))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        finite("sum", &[s])?;
        let tracked = self.is_tracked(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), tracked))
    }

    /// Sign of every ReLU input, in recording order. Finite-difference
    /// checks use it to discard probes that cross a kink.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(a) = n.op {
                out.extend(self.nodes[a.0].value.data().iter().map(|&x| x > T::zero()));
            }
        }
        out
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        let data: Vec<T> = va.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        finite("relu", &data)?;
        let out = Tensor::new(va.shape(), data)?;
        let tracked = self.is_tracked(a);
        Ok(self.push(out, Op::Relu(a), tracked))
    }

    /// 2-D convolution, `x: N×C×H×W`, `w: O×C×kh×kw`, `b: O`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::dim("conv2d", format!("input {xs:?}, filter {ws:?}")));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, ci, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c != ci {
            return Err(Error::dim("conv2d", format!("input has {c} channels, filter expects {ci}")));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be >= 1"));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::dim("conv2d", format!("bias shape {:?}, expected [{o}]", self.shape(b))));
            }
        }
        let (Some(oh), Some(ow)) = (conv_out(h, kh, stride, pad), conv_out(wd, kw, stride, pad)) else {
            return Err(Error::dim("conv2d", format!("kernel {kh}x{kw} does not fit {h}x{wd} with pad {pad}")));
        };
        finite("conv2d", self.nodes[x.0].value.data())?;

        let geom = ConvGeom { c, h, w: wd, kh, kw, stride, pad, oh, ow };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let keep_cols = self.is_tracked(w);
        let xv = self.nodes[x.0].value.data();
        let wv = self.nodes[w.0].value.data();
        // The whole batch is unrolled side by side into one `rows × n·cols`
        // matrix so a single product covers every sample.
        let wide = n * cols;
        let mut col = vec![T::zero(); rows * wide];
        for s in 0..n {
            im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], &geom, &mut col[s * cols..], wide);
        }
        let mut prod = vec![T::zero(); o * wide];
        T::gemm(o, rows, wide, wv, false, &col, false, &mut prod, false);
        let bias = b.map(|b| self.nodes[b.0].value.data());
        let mut out = vec![T::zero(); n * o * cols];
        for s in 0..n {
            for oc in 0..o {
                let dst = &mut out[(s * o + oc) * cols..(s * o + oc + 1) * cols];
                dst.copy_from_slice(&prod[oc * wide + s * cols..oc * wide + (s + 1) * cols]);
                if let Some(bv) = bias {
                    dst.iter_mut().for_each(|v| *v += bv[oc]);
                }
            }
        }
        finite("conv2d", &out)?;
        let value = Tensor::new(&[n, o, oh, ow], out)?;
        let tracked = self.is_tracked(x) || self.is_tracked(w) || b.is_some_and(|b| self.is_tracked(b));
        let cols = keep_cols.then_some(col);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, n, o, cols }, tracked))
    }

    /// Per-channel batch normalization of an `N×C×H×W` tensor.
    ///
    /// In [`BnMode::Train`] the batch statistics (biased variance) are used and
    /// the running statistics are blended towards them with `state.momentum`.
    /// In [`BnMode::Eval`] the running statistics are used unchanged.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, state: BnState<'_, T>, mode: BnMode) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::dim("batchnorm", format!("expected NCHW, got {xs:?}")));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || state.running_mean.len() != c || state.running_var.len() != c {
            return Err(Error::dim("batchnorm", format!("per-channel parameters must have {c} entries")));
        }
        let m = n * hw;
        if mode == BnMode::Train && m < 2 {
            return Err(Error::dim("batchnorm", "train mode needs at least 2 values per channel"));
        }
        let xv = self.nodes[x.0].value.data();
        let gv = self.nodes[gamma.0].value.data();
        let bv = self.nodes[beta.0].value.data();
        let mut inv_std = vec![T::zero(); c];
        let mut mean = vec![T::zero(); c];
        let inv_m = T::one() / T::lit(m as f64);
        for ch in 0..c {
            let (mu, var) = match mode {
                BnMode::Train => {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += xv[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
                    }
                    let mu = s * inv_m;
                    let mut v = T::zero();
                    for b in 0..n {
                        for &xi in &xv[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                            v += (xi - mu) * (xi - mu);
                        }
                    }
                    let var = v * inv_m;
                    let keep = T::one() - state.momentum;
                    state.running_mean[ch] = keep * state.running_mean[ch] + state.momentum * mu;
                    state.running_var[ch] = keep * state.running_var[ch] + state.momentum * var;
                    (mu, var)
                }
                BnMode::Eval => (state.running_mean[ch], state.running_var[ch]),
            };
            mean[ch] = mu;
            inv_std[ch] = T::one() / (var + state.eps).sqrt();
        }
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for i in range {
                    let h = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = h * gv[ch] + bv[ch];
                }
            }
        }
        finite("batchnorm", &out)?;
        let value = Tensor::new(&xs, out)?;
        let tracked = self.is_tracked(x) || self.is_tracked(gamma) || self.is_tracked(beta);
        let train = mode == BnMode::Train;
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, tracked))
    }

    /// Affine map `x·w + b` with `x: N×F`, `w: F×M`, `b: M`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::dim("linear", format!("input {xs:?}, weight {ws:?}")));
        }
        let (n, f, m) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::dim("linear", format!("bias shape {:?}, expected [{m}]", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); n * m];
        T::gemm(n, f, m, self.nodes[x.0].value.data(), false, self.nodes[w.0].value.data(), false, &mut out, false);
        if let Some(b) = b {
            let bv = self.nodes[b.0].value.data();
            for row in out.chunks_mut(m) {
                row.iter_mut().zip(bv).for_each(|(v, &bb)| *v += bb);
            }
        }
        finite("linear", &out)?;
        let value = Tensor::new(&[n, m], out)?;
        let tracked = self.is_tracked(x) || self.is_tracked(w) || b.is_some_and(|b| self.is_tracked(b));
        Ok(self.push(value, Op::Linear { x, w, b }, tracked))
    }

    /// Mean over the spatial dimensions: `N×C×H×W -> N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[2] == 0 || xs[3] == 0 {
            return Err(Error::dim("global_avg_pool", format!("expected NCHW with H,W >= 1, got {xs:?}")));
        }
        let hw = xs[2] * xs[3];
        let inv = T::one() / T::lit(hw as f64);
        let out: Vec<T> = self.nodes[x.0].value.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        finite("global_avg_pool", &out)?;
        let value = Tensor::new(&[xs[0], xs[1]], out)?;
        let tracked = self.is_tracked(x);
        Ok(self.push(value, Op::GlobalAvgPool(x), tracked))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, max-subtracted.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() || ls[0] == 0 {
            return Err(Error::dim("softmax_cross_entropy", format!("logits {ls:?} with {} labels", labels.len())));
        }
        let classes = ls[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let lv = self.nodes[logits.0].value.data();
        let mut probs = vec![T::zero(); lv.len()];
        let mut total = T::zero();
        for (r, (row, &label)) in lv.chunks(classes).zip(labels).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let p = &mut probs[r * classes..(r + 1) * classes];
            let mut z = T::zero();
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi = (v - max).exp();
                z += *pi;
            }
            p.iter_mut().for_each(|pi| *pi = *pi / z);
            total += z.ln() - (row[label] - max);
        }
        let loss = total / T::lit(labels.len() as f64);
        finite("softmax_cross_entropy", &[loss])?;
        let tracked = self.is_tracked(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, labels: labels.to_vec(), probs }, tracked))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns the gradient of every tracked leaf (intermediate gradients are
    /// released as soon as they have been propagated). Calling this twice
    /// and accumulating both results into the same tensors doubles them.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let shape = self.shape(loss);
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NotScalar { shape: shape.to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].tracked {
            return Ok(Grads { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Op::Leaf, Some(g)) = (&node.op, g) {
                finite("backward", g)?;
            }
        }
        Ok(Grads { grads })
    }

    fn accum(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].tracked {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
        f(buf);
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accum(grads, v, |d| d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accum(grads, *a, |d| {
                    for ((d, &gi), &bi) in d.iter_mut().zip(g).zip(vb) {
                        *d += gi * bi;
                    }
                });
                self.accum(grads, *b, |d| {
                    for ((d, &gi), &ai) in d.iter_mut().zip(g).zip(va) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Sum(a) => {
                let gi = g[0];
                self.accum(grads, *a, |d| d.iter_mut().for_each(|d| *d += gi));
            }
            Op::Relu(a) => {
                let xa = self.value(*a).data();
                self.accum(grads, *a, |d| {
                    for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(xa) {
                        if xi > T::zero() {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, geom, n, o, cols } => self.conv_backward(*x, *w, *b, geom, *n, *o, cols.as_deref(), g, grads),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let xs = self.shape(*x);
                let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                self.accum(grads, *gamma, |d| d.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s));
                self.accum(grads, *beta, |d| d.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s));
                let gv = self.value(*gamma).data();
                let m = T::lit((n * hw) as f64);
                self.accum(grads, *x, |d| {
                    for b in 0..n {
                        for ch in 0..c {
                            let scale = gv[ch] * inv_std[ch];
                            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                                d[i] += if *train {
                                    scale * (g[i] - (sum_g[ch] + xhat[i] * sum_gx[ch]) / m)
                                } else {
                                    scale * g[i]
                                };
                            }
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, f) = (xs[0], xs[1]);
                let m = self.shape(*w)[1];
                if let Some(b) = b {
                    self.accum(grads, *b, |d| {
                        for row in g.chunks(m) {
                            d.iter_mut().zip(row).for_each(|(d, &gi)| *d += gi);
                        }
                    });
                }
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                self.accum(grads, *w, |d| T::gemm(f, n, m, xv, true, g, false, d, true));
                self.accum(grads, *x, |d| T::gemm(n, m, f, g, false, wv, true, d, true));
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let hw = xs[2] * xs[3];
                let inv = T::one() / T::lit(hw as f64);
                self.accum(grads, *x, |d| {
                    for (plane, &gi) in d.chunks_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|v| *v += gi * inv);
                    }
                });
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] / T::lit(labels.len() as f64);
                self.accum(grads, *logits, |d| {
                    for (r, &label) in labels.iter().enumerate() {
                        for k in 0..classes {
                            let onehot = if k == label { T::one() } else { T::zero() };
                            d[r * classes + k] += (probs[r * classes + k] - onehot) * scale;
                        }
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &ConvGeom,
        n: usize,
        o: usize,
        cols: Option<&[T]>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (rows, pcols) = (geom.col_rows(), geom.col_cols());
        let sample = geom.c * geom.h * geom.w;
        if let Some(b) = b {
            self.accum(grads, b, |d| {
                for s in 0..n {
                    for (oc, db) in d.iter_mut().enumerate() {
                        let start = (s * o + oc) * pcols;
                        *db += g[start..start + pcols].iter().copied().sum::<T>();
                    }
                }
            });
        }
        if !self.is_tracked(w) && !self.is_tracked(x) {
            return;
        }
        // gradient regrouped to `o × n·cols`, matching the forward layout
        let wide = n * pcols;
        let mut gt = vec![T::zero(); o * wide];
        for s in 0..n {
            for oc in 0..o {
                gt[oc * wide + s * pcols..oc * wide + (s + 1) * pcols].copy_from_slice(&g[(s * o + oc) * pcols..(s * o + oc + 1) * pcols]);
            }
        }
        if let Some(col) = cols {
            self.accum(grads, w, |d| T::gemm(o, wide, rows, &gt, false, col, true, d, true));
        }
        let wv = self.value(w).data();
        self.accum(grads, x, |d| {
            let mut dcol = vec![T::zero(); rows * wide];
            T::gemm(rows, o, wide, wv, true, &gt, false, &mut dcol, false);
            for s in 0..n {
                col2im(&dcol[s * pcols..], geom, &mut d[s * sample..(s + 1) * sample], wide);
            }
        });
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    /// `None` when no gradient reached `v` (untracked or unreachable).
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, with zeros standing in for an unreached leaf.
    pub fn get_or_zeros(&self, graph: &Graph<T>, v: Var) -> Vec<T> {
        self.get(v).map_or_else(|| vec![T::zero(); graph.value(v).numel()], <[T]>::to_vec)
    }

    /// Adds the gradient of `v` (if any) into `target.grad`.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor<T>) {
        match self.get(v) {
            Some(g) => target.accumulate_grad(g),
            None => {
                if target.grad.is_none() {
                    target.grad = Some(vec![T::zero(); target.numel()]);
                }
            }
        }
    }
}
