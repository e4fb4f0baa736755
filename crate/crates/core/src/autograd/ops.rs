//! Forward definitions and their adjoints.

use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{col2im, gemm, im2col, split_axis, ConvGeom};
use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::nn::spline::BSplineBasis;
use crate::rng::Rng;
use crate::tensor::{c, Scalar, Tensor};

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const LN_EPS: f64 = 1e-5;
const BCE_CLAMP: f64 = 1e-7;

impl<T: Scalar> Graph<T> {
    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n, false, false);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Batched product `a[n×m×k] · b[n×k×p]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim("bmm", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
                false,
                false,
            );
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&[bs, m, n], out)?, Op::BatchMatMul(a, b), rg))
    }

    /// Affine map `x[N×in] · w[out×in]ᵀ + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::dim("linear", sx, sw));
        }
        let (n, k, m) = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::dim("linear bias", self.shape(b), &[m]));
            }
        }
        let mut out = vec![T::zero(); n * m];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv);
            }
        }
        gemm(self.value(x).data(), self.value(w).data(), &mut out, n, k, m, false, true);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Linear { x, w, b }, rg))
    }

    /// 2-D cross-correlation with zero padding. `x[B×C×H×W]`, `w[O×C×kh×kw]`, `b[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let geom = conv_geom(&sx, &sw, stride, pad)?;
        let (batch, o) = (sx[0], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::dim("conv2d bias", self.shape(b), &[o]));
            }
        }
        let p = geom.positions();
        let plen = geom.patch_len();
        let img = geom.channels * geom.height * geom.width;
        let mut out = vec![T::zero(); batch * o * p];
        let mut cols = vec![T::zero(); plen * p];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for bi in 0..batch {
            im2col(&xv[bi * img..(bi + 1) * img], &geom, &mut cols);
            let dst = &mut out[bi * o * p..(bi + 1) * o * p];
            if let Some(b) = b {
                for (ch, row) in dst.chunks_mut(p).enumerate() {
                    row.fill(self.value(b).data()[ch]);
                }
            }
            gemm(wv, &cols, dst, o, plen, p, false, false);
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        let t = Tensor::new(&[batch, o, geom.out_h, geom.out_w], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// 2×2 max pooling with stride 2 over `x[B×C×H×W]`; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::dim("max_pool2", &s, &[2, 2]));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for pl in 0..planes {
            let base = pl * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let at = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[at] > xv[best] {
                            best = at;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.any_grad(&[x]);
        let t = Tensor::new(&[s[0], s[1], oh, ow], out)?;
        Ok(self.push(t, Op::MaxPool2 { x, argmax }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).map(f);
        let rg = self.any_grad(&[x]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), name, f)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(x).permute(axes)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Permute(x, axes.to_vec()), rg))
    }

    fn check_axis(&self, x: Var, axis: usize) -> Result<()> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(Error::Axis { axis, rank });
        }
        Ok(())
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let s = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&s, axis);
        let xv = self.value(x).data();
        let inv = T::one() / c::<T>(n as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &xv[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d = *d + v;
                }
            }
        }
        for v in &mut out {
            *v = *v * inv;
        }
        let mut shape = s.clone();
        shape.remove(axis);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Mean { x, axis }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let s = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&s, axis);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..n {
                    mx = mx.max(xv[at(j)]);
                }
                let mut sum = T::zero();
                for j in 0..n {
                    let e = (xv[at(j)] - mx).exp();
                    out[at(j)] = e;
                    sum = sum + e;
                }
                for j in 0..n {
                    out[at(j)] = out[at(j)] / sum;
                }
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&s, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Normalizes each vector along the last axis to zero mean and unit
    /// variance, then applies `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or(Error::Axis { axis: 0, rank: 0 })?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim("layer_norm", &s, self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.len() / d;
        let df = c::<T>(d as f64);
        let eps = c::<T>(LN_EPS);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / df;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / df;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let op = Op::LayerNorm { x, gamma, beta, xhat, rstd };
        Ok(self.push(Tensor::new(&s, out)?, op, rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::config("concat of zero tensors"))?;
        self.check_axis(first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let same = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(inputs);
        let op = Op::Concat { inputs: inputs.to_vec(), axis };
        Ok(self.push(Tensor::new(&shape, out)?, op, rg))
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales the
    /// survivors by `1/(1-p)`. Identity when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config("dropout probability must be in [0, 1)"));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = c::<T>(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
            .collect();
        let out = self.value(x).zip_with(
            &Tensor::new(self.shape(x), mask.clone())?,
            "dropout",
            |a, m| a * m,
        )?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Expands `x[B×n]` into B-spline basis values `[B×n×len(basis)]`.
    pub fn bspline(&mut self, x: Var, basis: &BSplineBasis) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("bspline", &s, &[0, 0]));
        }
        let nb = basis.len();
        let xv = self.value(x).data();
        let mut values = vec![T::zero(); xv.len() * nb];
        let mut derivs = vec![T::zero(); xv.len() * nb];
        let mut vb = vec![0.0; nb];
        let mut db = vec![0.0; nb];
        for (i, &v) in xv.iter().enumerate() {
            basis.eval(v.to_f64(), &mut vb, &mut db);
            for j in 0..nb {
                values[i * nb + j] = c(vb[j]);
                derivs[i * nb + j] = c(db[j]);
            }
        }
        let rg = self.any_grad(&[x]);
        let t = Tensor::new(&[s[0], s[1], nb], values)?;
        Ok(self.push(t, Op::BSpline { x, derivs }, rg))
    }

    /// Class-weighted binary cross-entropy of probabilities `p` (any shape
    /// with `targets.len()` elements), averaged over samples. Probabilities
    /// are clamped to `[1e-7, 1-1e-7]` before the logarithm; the backward
    /// pass treats the clamp as the identity.
    pub fn weighted_bce(&mut self, p: Var, targets: &[T], weights: &[T]) -> Result<Var> {
        let pv = self.value(p).data();
        if pv.len() != targets.len() || pv.len() != weights.len() || pv.is_empty() {
            return Err(Error::dim("weighted_bce", self.shape(p), &[targets.len()]));
        }
        let (lo, hi) = (c::<T>(BCE_CLAMP), c::<T>(1.0 - BCE_CLAMP));
        let mut total = T::zero();
        for ((&pi, &y), &w) in pv.iter().zip(targets).zip(weights) {
            let pc = pi.max(lo).min(hi);
            total = total + w * (y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
        }
        let loss = -total / c::<T>(pv.len() as f64);
        let rg = self.any_grad(&[p]);
        let op = Op::WeightedBce {
            p,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Sum of all elements.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub(crate) fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(gd, self.value(*b).data(), &mut da, m, n, k, false, true);
                    self.accumulate(grads, *a, Tensor::new(sa, da).unwrap());
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(self.value(*a).data(), gd, &mut db, k, m, n, true, false);
                    self.accumulate(grads, *b, Tensor::new(sb, db).unwrap());
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); bs * m * k];
                    for i in 0..bs {
                        gemm(
                            &gd[i * m * n..(i + 1) * m * n],
                            &bv[i * k * n..(i + 1) * k * n],
                            &mut da[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                            false,
                            true,
                        );
                    }
                    self.accumulate(grads, *a, Tensor::new(sa, da).unwrap());
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); bs * k * n];
                    for i in 0..bs {
                        gemm(
                            &av[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            &mut db[i * k * n..(i + 1) * k * n],
                            k,
                            m,
                            n,
                            true,
                            false,
                        );
                    }
                    self.accumulate(grads, *b, Tensor::new(sb, db).unwrap());
                }
            }
            Op::Linear { x, w, b } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (n, k, m) = (sx[0], sx[1], sw[0]);
                if self.requires_grad(*x) {
                    let mut dx = vec![T::zero(); n * k];
                    gemm(gd, self.value(*w).data(), &mut dx, n, m, k, false, false);
                    self.accumulate(grads, *x, Tensor::new(sx, dx).unwrap());
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![T::zero(); m * k];
                    gemm(gd, self.value(*x).data(), &mut dw, m, n, k, true, false);
                    self.accumulate(grads, *w, Tensor::new(sw, dw).unwrap());
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let mut db = vec![T::zero(); m];
                        for row in gd.chunks(m) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d = *d + v;
                            }
                        }
                        self.accumulate(grads, *b, Tensor::new(&[m], db).unwrap());
                    }
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (sx, sw) = (self.shape(*x).to_vec(), self.shape(*w).to_vec());
                let geom = conv_geom(&sx, &sw, *stride, *pad).unwrap();
                let (batch, o) = (sx[0], sw[0]);
                let p = geom.positions();
                let plen = geom.patch_len();
                let img = geom.channels * geom.height * geom.width;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let need_x = self.requires_grad(*x);
                let need_w = self.requires_grad(*w);
                let mut dx = vec![T::zero(); if need_x { xv.len() } else { 0 }];
                let mut dw = vec![T::zero(); if need_w { wv.len() } else { 0 }];
                let mut cols = vec![T::zero(); plen * p];
                for bi in 0..batch {
                    let gslice = &gd[bi * o * p..(bi + 1) * o * p];
                    if need_w {
                        im2col(&xv[bi * img..(bi + 1) * img], &geom, &mut cols);
                        gemm(gslice, &cols, &mut dw, o, p, plen, false, true);
                    }
                    if need_x {
                        cols.fill(T::zero());
                        gemm(wv, gslice, &mut cols, plen, o, p, true, false);
                        col2im(&cols, &geom, &mut dx[bi * img..(bi + 1) * img]);
                    }
                }
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(&sx, dx).unwrap());
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(&sw, dw).unwrap());
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let mut db = vec![T::zero(); o];
                        for bi in 0..batch {
                            for (ch, d) in db.iter_mut().enumerate() {
                                let start = (bi * o + ch) * p;
                                *d = gd[start..start + p].iter().fold(*d, |a, &v| a + v);
                            }
                        }
                        self.accumulate(grads, *b, Tensor::new(&[o], db).unwrap());
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.shape(*x));
                let d = dx.data_mut();
                for (&at, &v) in argmax.iter().zip(gd) {
                    d[at] = d[at] + v;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Relu(x) => {
                let dx = self.value(*x).zip_with(g, "relu", |v, gv| if v > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, *x, dx.unwrap());
            }
            Op::Sigmoid(x) => {
                let dx = node.value.zip_with(g, "sigmoid", |y, gv| gv * y * (T::one() - y));
                self.accumulate(grads, *x, dx.unwrap());
            }
            Op::Silu(x) => {
                let dx = self.value(*x).zip_with(g, "silu", |v, gv| {
                    let s = sigmoid(v);
                    gv * s * (T::one() + v * (T::one() - s))
                });
                self.accumulate(grads, *x, dx.unwrap());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let da = self.value(*b).zip_with(g, "mul", |y, gv| y * gv).unwrap();
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let db = self.value(*a).zip_with(g, "mul", |y, gv| y * gv).unwrap();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, g.reshape(self.shape(*x)).unwrap());
            }
            Op::Permute(x, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                self.accumulate(grads, *x, g.permute(&inv).unwrap());
            }
            Op::Mean { x, axis } => {
                let s = self.shape(*x);
                let (outer, n, inner) = split_axis(s, *axis);
                let inv = T::one() / c::<T>(n as f64);
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for k in 0..inner {
                            dx[(o * n + j) * inner + k] = gd[o * inner + k] * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(s, dx).unwrap());
            }
            Op::Softmax { x, axis } => {
                let s = self.shape(*x);
                let (outer, n, inner) = split_axis(s, *axis);
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot = (0..n).fold(T::zero(), |a, j| a + gd[at(j)] * y[at(j)]);
                        for j in 0..n {
                            dx[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(s, dx).unwrap());
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let s = self.shape(*x);
                let d = *s.last().unwrap();
                let gv = self.value(*gamma).data();
                let df = c::<T>(d as f64);
                if self.requires_grad(*x) {
                    let mut dx = vec![T::zero(); xhat.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let (mut s1, mut s2) = (T::zero(), T::zero());
                        for j in 0..d {
                            let dh = gd[r * d + j] * gv[j];
                            s1 = s1 + dh;
                            s2 = s2 + dh * xhat[r * d + j];
                        }
                        for j in 0..d {
                            let dh = gd[r * d + j] * gv[j];
                            dx[r * d + j] = rs / df * (df * dh - s1 - xhat[r * d + j] * s2);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(s, dx).unwrap());
                }
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                for r in 0..rstd.len() {
                    for j in 0..d {
                        dg[j] = dg[j] + gd[r * d + j] * xhat[r * d + j];
                        db[j] = db[j] + gd[r * d + j];
                    }
                }
                self.accumulate(grads, *gamma, Tensor::new(&[d], dg).unwrap());
                self.accumulate(grads, *beta, Tensor::new(&[d], db).unwrap());
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    if self.requires_grad(v) {
                        let mut dv = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            dv.extend_from_slice(&gd[start..start + n * inner]);
                        }
                        self.accumulate(grads, v, Tensor::new(self.shape(v), dv).unwrap());
                    }
                    offset += n;
                }
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<T> = gd.iter().zip(mask).map(|(&a, &m)| a * m).collect();
                self.accumulate(grads, *x, Tensor::new(self.shape(*x), dx).unwrap());
            }
            Op::BSpline { x, derivs } => {
                let s = self.shape(*x);
                let nb = node.value.shape()[2];
                let dx: Vec<T> = (0..s[0] * s[1])
                    .map(|i| {
                        (0..nb).fold(T::zero(), |a, j| a + gd[i * nb + j] * derivs[i * nb + j])
                    })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(s, dx).unwrap());
            }
            Op::WeightedBce { p, targets, weights } => {
                let pv = self.value(*p).data();
                let (lo, hi) = (c::<T>(BCE_CLAMP), c::<T>(1.0 - BCE_CLAMP));
                let scale = gd[0] / c::<T>(pv.len() as f64);
                let dp: Vec<T> = pv
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&pi, &y), &w)| {
                        let pc = pi.max(lo).min(hi);
                        -scale * w * (y / pc - (T::one() - y) / (T::one() - pc))
                    })
                    .collect();
                self.accumulate(grads, *p, Tensor::new(self.shape(*p), dp).unwrap());
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), gd[0]));
            }
        }
    }
}

pub(crate) fn conv_geom(sx: &[usize], sw: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || stride == 0 {
        return Err(Error::dim("conv2d", sx, sw));
    }
    let (h, w, kh, kw) = (sx[2], sx[3], sw[2], sw[3]);
    if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(Error::dim("conv2d", sx, sw));
    }
    Ok(ConvGeom {
        channels: sx[1],
        height: h,
        width: w,
        kh,
        kw,
        stride,
        pad,
        out_h: (h + 2 * pad - kh) / stride + 1,
        out_w: (w + 2 * pad - kw) / stride + 1,
    })
}

/// Output extent of a convolution along one axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}
