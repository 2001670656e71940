use super::{accumulate, split_axis, Activation, Mode, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{strides, Tensor};

/// Numerical floor added to the batch variance.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;
/// Probabilities entering a log are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Running statistics of one batch-norm site.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub initialized: bool,
}

impl<T: Scalar> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels], initialized: false }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// The first update copies the batch statistics; later updates blend with
    /// momentum [`BN_MOMENTUM`].
    fn update(&mut self, mean: &[T], var: &[T]) {
        if !self.initialized {
            self.mean.copy_from_slice(mean);
            self.var.copy_from_slice(var);
            self.initialized = true;
            return;
        }
        let m = T::from_f64_lossy(BN_MOMENTUM);
        let one_m = T::one() - m;
        for c in 0..self.mean.len() {
            self.mean[c] = m * self.mean[c] + one_m * mean[c];
            self.var[c] = m * self.var[c] + one_m * var[c];
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, p);
        self.push("matmul", Tensor::from_raw(vec![m, p], out), Op::MatMul { a, b }, &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected a matrix, got {s:?}")));
        }
        let out = self.value(x).permute(&[1, 0])?;
        self.push("transpose", out, Op::Transpose { x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape { x }, &[x])
    }

    /// Adds a per-channel bias along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = *self.shape(x).last().unwrap();
        if self.value(bias).len() != c {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} does not match channel axis of {:?}", self.shape(bias), self.shape(x)),
            ));
        }
        let b = self.value(bias).data();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, &v)| v + b[i % c]).collect();
        let out = Tensor::from_raw(xv.shape().to_vec(), data);
        self.push("add_bias", out, Op::AddBias { x, bias }, &[x, bias])
    }

    /// Per-channel 1D cross-correlation along `axis` with zero "same" padding.
    /// The channel axis is the last axis; `kernels` is `[C, k]` with odd `k`.
    pub fn depthwise_conv1d(&mut self, x: Var, kernels: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernels).to_vec();
        if ks.len() != 2 {
            return Err(Error::shape("depthwise_conv1d", format!("kernels must be [C, k], got {ks:?}")));
        }
        let (c, k) = (ks[0], ks[1]);
        if k % 2 == 0 {
            return Err(Error::shape("depthwise_conv1d", format!("kernel length {k} must be odd")));
        }
        if xs.len() < 2 || axis + 1 >= xs.len() {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!("axis {axis} must precede the channel axis of {xs:?}"),
            ));
        }
        if *xs.last().unwrap() != c {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!("input has {} channels, kernel bank has {c}", xs.last().unwrap()),
            ));
        }
        let out = conv_forward(self.value(x).data(), self.value(kernels).data(), &xs, axis, c, k);
        self.push("depthwise_conv1d", Tensor::from_raw(xs, out), Op::DepthwiseConv { x, kernels, axis }, &[x, kernels])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = self.value(x).map(|v| apply_activation(kind, v));
        self.push("activation", out, Op::Activation { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let out = softmax_raw(self.value(x).data(), &shape, axis);
        self.push("softmax", Tensor::from_raw(shape, out), Op::Softmax { x, axis }, &[x])
    }

    /// Batch normalization over every axis except `axis`, followed by the
    /// affine map `gamma * xhat + beta`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        axis: usize,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        mode: Mode,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("batch_norm", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, c, inner) = split_axis(&shape, axis);
        if self.value(gamma).len() != c || self.value(beta).len() != c || stats.channels() != c {
            return Err(Error::shape("batch_norm", format!("parameters must have length {c}")));
        }
        let xd = self.value(x).data();
        let count = T::from_usize_lossy(outer * inner);
        let eps = T::from_f64_lossy(BN_EPSILON);
        let channel_of = |i: usize| (i / inner) % c;

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                for (i, &v) in xd.iter().enumerate() {
                    mean[channel_of(i)] = mean[channel_of(i)] + v;
                }
                mean.iter_mut().for_each(|m| *m = *m / count);
                let mut var = vec![T::zero(); c];
                for (i, &v) in xd.iter().enumerate() {
                    let d = v - mean[channel_of(i)];
                    var[channel_of(i)] = var[channel_of(i)] + d * d;
                }
                var.iter_mut().for_each(|s| *s = *s / count);
                (mean, var)
            }
            Mode::Eval => {
                if !stats.initialized {
                    return Err(Error::UninitializedStats);
                }
                (stats.mean.clone(), stats.var.clone())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xd.len());
        let mut out = Vec::with_capacity(xd.len());
        for (i, &v) in xd.iter().enumerate() {
            let ch = channel_of(i);
            let h = (v - mean[ch]) * inv_std[ch];
            xhat.push(h);
            out.push(g[ch] * h + b[ch]);
        }
        if mode == Mode::Train {
            stats.update(&mean, &var);
        }
        let op = Op::BatchNorm { x, gamma, beta, axis, xhat, inv_std, train: mode == Mode::Train };
        self.push("batch_norm", Tensor::from_raw(shape, out), op, &[x, gamma, beta])
    }

    /// Non-overlapping (for `stride == kernel`) max pooling over `axes`.
    /// Output length per pooled axis is `(L - kernel) / stride + 1`. Ties go to
    /// the lowest input index.
    pub fn max_pool(&mut self, x: Var, axes: &[usize], kernel: usize, stride: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (out_shape, argmax) = max_pool_indices(self.value(x).data(), &shape, axes, kernel, stride)?;
        let xd = self.value(x).data();
        let out = argmax.iter().map(|&i| xd[i]).collect();
        self.push("max_pool", Tensor::from_raw(out_shape, out), Op::MaxPool { x, argmax }, &[x])
    }

    /// Scales every node row by its attention value:
    /// `out[g, j, p, c] = alpha[g, p, j] * nodes[j, c]`.
    pub fn attend(&mut self, alpha: Var, nodes: Var) -> Result<Var> {
        let sa = self.shape(alpha).to_vec();
        let sn = self.shape(nodes).to_vec();
        if sa.len() != 3 || sn.len() != 2 || sa[2] != sn[0] {
            return Err(Error::shape("attend", format!("alpha {sa:?} incompatible with nodes {sn:?}")));
        }
        let (g, p, n, c) = (sa[0], sa[1], sa[2], sn[1]);
        let a = self.value(alpha).data();
        let y = self.value(nodes).data();
        let mut out = Vec::with_capacity(g * n * p * c);
        for gi in 0..g {
            for j in 0..n {
                for pi in 0..p {
                    let w = a[(gi * p + pi) * n + j];
                    out.extend(y[j * c..(j + 1) * c].iter().map(|&v| w * v));
                }
            }
        }
        self.push("attend", Tensor::from_raw(vec![g, n, p, c], out), Op::Attend { alpha, nodes }, &[alpha, nodes])
    }

    /// Mean over `axes`, which are removed from the output shape.
    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axes.is_empty() || axes.iter().any(|&a| a >= shape.len()) {
            return Err(Error::shape("mean_axes", format!("axes {axes:?} invalid for {shape:?}")));
        }
        let keep: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
        let mut out_shape: Vec<usize> = keep.iter().map(|&a| shape[a]).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out_strides = strides(&out_shape);
        let n: usize = shape.iter().product();
        let count: usize = axes.iter().map(|&a| shape[a]).product::<usize>();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            let o: usize =
                if keep.is_empty() { 0 } else { keep.iter().zip(&out_strides).map(|(&a, &s)| idx[a] * s).sum() };
            map.push(o);
            increment(&mut idx, &shape);
        }
        // Each group is summed in sorted order so the result is bitwise
        // invariant to any permutation along the reduced axes.
        let mut groups: Vec<Vec<T>> = vec![Vec::with_capacity(count); out_shape.iter().product()];
        for (&v, &o) in self.value(x).data().iter().zip(&map) {
            groups[o].push(v);
        }
        let cnt = T::from_usize_lossy(count);
        let out: Vec<T> = groups
            .into_iter()
            .map(|mut g| {
                g.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
                g.into_iter().fold(T::zero(), |acc, v| acc + v) / cnt
            })
            .collect();
        self.push("mean_axes", Tensor::from_raw(out_shape, out), Op::Mean { x, map, count }, &[x])
    }

    /// `sum(x * weights)` with constant weights; projects any tensor to a scalar.
    pub fn dot_const(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape(
                "dot_const",
                format!("{} weights for tensor of shape {:?}", weights.len(), self.shape(x)),
            ));
        }
        let s: T = self.value(x).data().iter().zip(weights).map(|(&a, &b)| a * b).sum();
        self.push("dot_const", Tensor::scalar(s), Op::DotConst { x, weights: weights.to_vec() }, &[x])
    }

    /// Mean over the batch of `-ln p[target]`, `p = softmax(logits)`, with `p`
    /// clamped away from 0 and 1. `logits` is `[B, K]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::shape("cross_entropy", format!("logits {shape:?} vs {} targets", targets.len())));
        }
        let k = shape[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::InvalidArgument(format!("target class {t} out of range for {k} classes")));
        }
        let probs = softmax_raw(self.value(logits).data(), &shape, 1);
        let (lo, hi) = clamp_bounds::<T>();
        let total: T = targets.iter().enumerate().map(|(b, &t)| -probs[b * k + t].max(lo).min(hi).ln()).sum();
        let loss = total / T::from_usize_lossy(targets.len());
        let op = Op::CrossEntropy { logits, probs, targets: targets.to_vec() };
        self.push("cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `{0,1}` targets,
    /// averaged over every (sample, label) entry.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let n = self.value(logits).len();
        if targets.len() != n {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!("logits {:?} vs {} targets", self.shape(logits), targets.len()),
            ));
        }
        if targets.iter().any(|&t| t != T::zero() && t != T::one()) {
            return Err(Error::InvalidArgument("multi-label targets must be 0 or 1".into()));
        }
        let probs: Vec<T> = self.value(logits).data().iter().map(|&v| sigmoid(v)).collect();
        let (lo, hi) = clamp_bounds::<T>();
        let total: T = probs
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.max(lo).min(hi);
                -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
            })
            .sum();
        let loss = total / T::from_usize_lossy(n);
        let op = Op::BinaryCrossEntropy { logits, probs, targets: targets.to_vec() };
        self.push("binary_cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    /// Vector-Jacobian product of one recorded op.
    pub(super) fn propagate(&self, op: &Op<T>, value: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, p) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        for j in 0..p {
                            let gij = g[i * p + j];
                            for kk in 0..k {
                                da[i * k + kk] = da[i * k + kk] + gij * bd[kk * p + j];
                            }
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![T::zero(); k * p];
                    for i in 0..m {
                        for kk in 0..k {
                            let aik = ad[i * k + kk];
                            for j in 0..p {
                                db[kk * p + j] = db[kk * p + j] + aik * g[i * p + j];
                            }
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Transpose { x } => {
                let s = value.shape();
                let gt = Tensor::from_raw(s.to_vec(), g.to_vec()).permute(&[1, 0]).expect("rank 2");
                accumulate(grads, *x, gt.into_data());
            }
            Op::Reshape { x } => accumulate(grads, *x, g.to_vec()),
            Op::AddBias { x, bias } => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
                if self.needs(*bias) {
                    let c = self.value(*bias).len();
                    let mut db = vec![T::zero(); c];
                    for (i, &v) in g.iter().enumerate() {
                        db[i % c] = db[i % c] + v;
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::DepthwiseConv { x, kernels, axis } => {
                let xs = self.shape(*x);
                let ks = self.shape(*kernels);
                let (c, k) = (ks[0], ks[1]);
                let (outer, len, inner) = split_axis(xs, *axis);
                let r = (k / 2) as isize;
                let xd = self.value(*x).data();
                let kd = self.value(*kernels).data();
                let mut dx = vec![T::zero(); xd.len()];
                let mut dk = vec![T::zero(); kd.len()];
                for o in 0..outer {
                    for i in 0..len {
                        for q in 0..inner {
                            let ch = q % c;
                            let gv = g[(o * len + i) * inner + q];
                            for kk in 0..k {
                                let src = i as isize + kk as isize - r;
                                if src < 0 || src >= len as isize {
                                    continue;
                                }
                                let si = (o * len + src as usize) * inner + q;
                                dx[si] = dx[si] + kd[ch * k + kk] * gv;
                                dk[ch * k + kk] = dk[ch * k + kk] + xd[si] * gv;
                            }
                        }
                    }
                }
                if self.needs(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.needs(*kernels) {
                    accumulate(grads, *kernels, dk);
                }
            }
            Op::Activation { x, kind } => {
                let xd = self.value(*x).data();
                let y = value.data();
                let dx = g
                    .iter()
                    .zip(xd.iter().zip(y))
                    .map(|(&gv, (&xv, &yv))| {
                        gv * match kind {
                            Activation::Relu => {
                                if xv > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Activation::Sigmoid => yv * (T::one() - yv),
                            Activation::Tanh => T::one() - yv * yv,
                        }
                    })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(value.shape(), *axis);
                let y = value.data();
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for q in 0..inner {
                        let at = |i: usize| (o * len + i) * inner + q;
                        let dot: T = (0..len).map(|i| g[at(i)] * y[at(i)]).sum();
                        for i in 0..len {
                            dx[at(i)] = y[at(i)] * (g[at(i)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::BatchNorm { x, gamma, beta, axis, xhat, inv_std, train } => {
                let (outer, c, inner) = split_axis(value.shape(), *axis);
                let channel_of = |i: usize| (i / inner) % c;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (i, &gv) in g.iter().enumerate() {
                    let ch = channel_of(i);
                    dgamma[ch] = dgamma[ch] + gv * xhat[i];
                    dbeta[ch] = dbeta[ch] + gv;
                }
                if self.needs(*x) {
                    let dx: Vec<T> = if *train {
                        let m = T::from_usize_lossy(outer * inner);
                        // dxhat = g * gamma; sums of dxhat and dxhat * xhat per channel
                        // are gamma * dbeta and gamma * dgamma.
                        g.iter()
                            .enumerate()
                            .map(|(i, &gv)| {
                                let ch = channel_of(i);
                                let dh = gv * gam[ch];
                                inv_std[ch] / m * (m * dh - gam[ch] * dbeta[ch] - xhat[i] * gam[ch] * dgamma[ch])
                            })
                            .collect()
                    } else {
                        g.iter().enumerate().map(|(i, &gv)| gv * gam[channel_of(i)] * inv_std[channel_of(i)]).collect()
                    };
                    accumulate(grads, *x, dx);
                }
                if self.needs(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.needs(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] = dx[src] + gv;
                }
                accumulate(grads, *x, dx);
            }
            Op::Attend { alpha, nodes } => {
                let sa = self.shape(*alpha);
                let (gn, p, n) = (sa[0], sa[1], sa[2]);
                let c = self.shape(*nodes)[1];
                let a = self.value(*alpha).data();
                let y = self.value(*nodes).data();
                let mut da = vec![T::zero(); a.len()];
                let mut dy = vec![T::zero(); y.len()];
                for gi in 0..gn {
                    for j in 0..n {
                        for pi in 0..p {
                            let base = ((gi * n + j) * p + pi) * c;
                            let ai = (gi * p + pi) * n + j;
                            let mut acc = T::zero();
                            for ch in 0..c {
                                acc = acc + g[base + ch] * y[j * c + ch];
                                dy[j * c + ch] = dy[j * c + ch] + g[base + ch] * a[ai];
                            }
                            da[ai] = acc;
                        }
                    }
                }
                if self.needs(*alpha) {
                    accumulate(grads, *alpha, da);
                }
                if self.needs(*nodes) {
                    accumulate(grads, *nodes, dy);
                }
            }
            Op::Mean { x, map, count } => {
                let cnt = T::from_usize_lossy(*count);
                let dx = map.iter().map(|&o| g[o] / cnt).collect();
                accumulate(grads, *x, dx);
            }
            Op::DotConst { x, weights } => {
                let dx = weights.iter().map(|&w| w * g[0]).collect();
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropy { logits, probs, targets } => {
                // Logit gradient p - onehot; the clamp only bounds the reported value.
                let k = self.shape(*logits)[1];
                let scale = g[0] / T::from_usize_lossy(targets.len());
                let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (b, &t) in targets.iter().enumerate() {
                    dx[b * k + t] = dx[b * k + t] - scale;
                }
                accumulate(grads, *logits, dx);
            }
            Op::BinaryCrossEntropy { logits, probs, targets } => {
                let scale = g[0] / T::from_usize_lossy(targets.len());
                let dx = probs.iter().zip(targets).map(|(&p, &y)| (p - y) * scale).collect();
                accumulate(grads, *logits, dx);
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn apply_activation<T: Scalar>(kind: Activation, v: T) -> T {
    match kind {
        Activation::Relu => v.max(T::zero()),
        Activation::Sigmoid => sigmoid(v),
        Activation::Tanh => v.tanh(),
    }
}

fn clamp_bounds<T: Scalar>() -> (T, T) {
    let lo = T::from_f64_lossy(PROB_CLAMP);
    (lo, T::one() - lo)
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * p];
    for i in 0..m {
        for kk in 0..k {
            let aik = a[i * k + kk];
            let row = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in out[i * p..(i + 1) * p].iter_mut().zip(row) {
                *o = *o + aik * bv;
            }
        }
    }
    out
}

pub(crate) fn softmax_raw<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for q in 0..inner {
            let at = |i: usize| (o * len + i) * inner + q;
            let max = (0..len).map(|i| x[at(i)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for i in 0..len {
                let e = (x[at(i)] - max).exp();
                out[at(i)] = e;
                sum = sum + e;
            }
            for i in 0..len {
                out[at(i)] = out[at(i)] / sum;
            }
        }
    }
    out
}

fn conv_forward<T: Scalar>(x: &[T], kern: &[T], shape: &[usize], axis: usize, c: usize, k: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let r = (k / 2) as isize;
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..len {
            for q in 0..inner {
                let ch = q % c;
                let mut acc = T::zero();
                for kk in 0..k {
                    let src = i as isize + kk as isize - r;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    acc = acc + kern[ch * k + kk] * x[(o * len + src as usize) * inner + q];
                }
                out[(o * len + i) * inner + q] = acc;
            }
        }
    }
    out
}

fn max_pool_indices<T: Scalar>(
    x: &[T],
    shape: &[usize],
    axes: &[usize],
    kernel: usize,
    stride: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::shape("max_pool", "kernel and stride must be positive"));
    }
    let mut axes = axes.to_vec();
    axes.sort_unstable();
    axes.dedup();
    if axes.is_empty() || axes.iter().any(|&a| a >= shape.len()) {
        return Err(Error::shape("max_pool", format!("axes {axes:?} invalid for {shape:?}")));
    }
    let mut out_shape = shape.to_vec();
    for &a in &axes {
        if shape[a] < kernel {
            return Err(Error::shape(
                "max_pool",
                format!("axis {a} has length {} which is shorter than the kernel {kernel}", shape[a]),
            ));
        }
        out_shape[a] = (shape[a] - kernel) / stride + 1;
    }
    let in_strides = strides(shape);
    // Window offsets in ascending flat order, so a strict comparison keeps the lowest index on ties.
    let mut window = vec![0usize];
    for &a in &axes {
        let step = in_strides[a];
        window = window.iter().flat_map(|&w| (0..kernel).map(move |d| w + d * step)).collect();
    }
    window.sort_unstable();
    let n: usize = out_shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    let mut argmax = Vec::with_capacity(n);
    for _ in 0..n {
        let base: usize = idx
            .iter()
            .enumerate()
            .map(|(a, &i)| if axes.contains(&a) { i * stride * in_strides[a] } else { i * in_strides[a] })
            .sum();
        let mut best = base + window[0];
        for &w in &window[1..] {
            if x[base + w] > x[best] {
                best = base + w;
            }
        }
        argmax.push(best);
        increment(&mut idx, &out_shape);
    }
    Ok((out_shape, argmax))
}

/// Row-major odometer step.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for ax in (0..shape.len()).rev() {
        idx[ax] += 1;
        if idx[ax] < shape[ax] {
            return;
        }
        idx[ax] = 0;
    }
}
