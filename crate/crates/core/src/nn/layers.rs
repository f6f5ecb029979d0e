//! Neural network layers with explicit forward and backward passes.
//!
//! Conventions shared by every layer here:
//! * activations are channels-last: [B][spatial...][C];
//! * convolution weights put the output channel innermost, so the hot loop
//!   runs contiguously over both the weight row and the output row;
//! * `forward(x, train)` caches what backward needs only when `train` is
//!   true; `backward` consumes that cache, accumulates into parameter
//!   gradients, and returns the gradient with respect to the input;
//! * reductions use fixed summation orders, so results are independent of
//!   the rayon thread count.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{Param, Tensor};

/// Kaiming-uniform weight init: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

/// Bias init: U(-b, b) with b = 1 / sqrt(fan_in).
pub fn bias_uniform(n: usize, fan_in: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = Tensor::zeros(&[n]);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

// ---------------------------------------------------------------------------
// 2-D convolution, NHWC, weight [kh][kw][ci][co], zero padding, no bias
// (batch norm always follows it in this architecture).

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kh: usize,
    pub kw: usize,
    pub ci: usize,
    pub co: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    cache_x: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        name: &str,
        (kh, kw): (usize, usize),
        ci: usize,
        co: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha20Rng,
    ) -> Conv2d {
        let weight = Param::new(name, kaiming_uniform(&[kh, kw, ci, co], kh * kw * ci, rng));
        Conv2d { kh, kw, ci, co, stride, pad, weight, cache_x: None }
    }

    pub fn param_count(&self) -> usize {
        self.weight.value.numel()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [b, h, w, ci] = *x.shape() else { panic!("Conv2d wants a 4-D input") };
        assert_eq!(ci, self.ci, "Conv2d channel mismatch");
        let oh = conv_out_len(h, self.kh, self.stride, self.pad);
        let ow = conv_out_len(w, self.kw, self.stride, self.pad);
        let mut out = Tensor::zeros(&[b, oh, ow, self.co]);
        let (xs, os) = (h * w * ci, oh * ow * self.co);
        let wgt = self.weight.value.data();
        out.data_mut()
            .par_chunks_mut(os)
            .zip(x.data().par_chunks(xs))
            .for_each(|(o, xv)| {
                self.fwd_sample(xv, h, w, wgt, o, oh, ow);
            });
        if train {
            self.cache_x = Some(x.clone());
        }
        out
    }

    fn fwd_sample(
        &self,
        x: &[f64],
        h: usize,
        w: usize,
        wgt: &[f64],
        out: &mut [f64],
        oh: usize,
        ow: usize,
    ) {
        let (ci, co) = (self.ci, self.co);
        for oy in 0..oh {
            for ox in 0..ow {
                let orow = &mut out[(oy * ow + ox) * co..(oy * ow + ox + 1) * co];
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xrow = &x[(iy as usize * w + ix as usize) * ci..][..ci];
                        let wslab = &wgt[(ky * self.kw + kx) * ci * co..][..ci * co];
                        for (c, &xv) in xrow.iter().enumerate() {
                            let wrow = &wslab[c * co..(c + 1) * co];
                            for (o, &wv) in orow.iter_mut().zip(wrow) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let x = self.cache_x.take().expect("Conv2d backward without cached forward");
        let [b, h, w, ci] = *x.shape() else { unreachable!() };
        let [gb, oh, ow, co] = *gout.shape() else { panic!("Conv2d wants a 4-D gradient") };
        assert_eq!((gb, co), (b, self.co));
        let (xs, os) = (h * w * ci, oh * ow * co);

        // input gradient: per-sample disjoint slices
        let mut dx = Tensor::zeros(x.shape());
        let wgt = self.weight.value.data();
        dx.data_mut()
            .par_chunks_mut(xs)
            .zip(gout.data().par_chunks(os))
            .for_each(|(dxs, gs)| {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let grow = &gs[(oy * ow + ox) * co..(oy * ow + ox + 1) * co];
                        for ky in 0..self.kh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kw {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let drow =
                                    &mut dxs[(iy as usize * w + ix as usize) * ci..][..ci];
                                let wslab = &wgt[(ky * self.kw + kx) * ci * co..][..ci * co];
                                for (c, d) in drow.iter_mut().enumerate() {
                                    let wrow = &wslab[c * co..(c + 1) * co];
                                    let mut acc = 0.0;
                                    for (g, wv) in grow.iter().zip(wrow) {
                                        acc += g * wv;
                                    }
                                    *d += acc;
                                }
                            }
                        }
                    }
                }
            });

        // weight gradient: serial over the batch for a fixed summation order
        let dw = self.weight.grad.data_mut();
        for s in 0..b {
            let xv = &x.data()[s * xs..(s + 1) * xs];
            let gs = &gout.data()[s * os..(s + 1) * os];
            for oy in 0..oh {
                for ox in 0..ow {
                    let grow = &gs[(oy * ow + ox) * co..(oy * ow + ox + 1) * co];
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xrow = &xv[(iy as usize * w + ix as usize) * ci..][..ci];
                            let wslab = &mut dw[(ky * self.kw + kx) * ci * co..][..ci * co];
                            for (c, &xc) in xrow.iter().enumerate() {
                                let drow = &mut wslab[c * co..(c + 1) * co];
                                for (d, &g) in drow.iter_mut().zip(grow) {
                                    *d += xc * g;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// 3-D convolution, NDHWC, weight [kd][kh][kw][ci][co], zero padding, no bias.

#[derive(Debug, Clone)]
pub struct Conv3d {
    pub k: usize,
    pub ci: usize,
    pub co: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    cache_x: Option<Tensor>,
}

impl Conv3d {
    pub fn new(
        name: &str,
        k: usize,
        ci: usize,
        co: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha20Rng,
    ) -> Conv3d {
        let weight = Param::new(name, kaiming_uniform(&[k, k, k, ci, co], k * k * k * ci, rng));
        Conv3d { k, ci, co, stride, pad, weight, cache_x: None }
    }

    pub fn param_count(&self) -> usize {
        self.weight.value.numel()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
    }

    pub fn out_dim(&self, d: usize) -> usize {
        conv_out_len(d, self.k, self.stride, self.pad)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [b, d, h, w, ci] = *x.shape() else { panic!("Conv3d wants a 5-D input") };
        assert_eq!(ci, self.ci, "Conv3d channel mismatch");
        let (od, oh, ow) = (self.out_dim(d), self.out_dim(h), self.out_dim(w));
        let mut out = Tensor::zeros(&[b, od, oh, ow, self.co]);
        let (xs, os) = (d * h * w * ci, od * oh * ow * self.co);
        let wgt = self.weight.value.data();
        out.data_mut()
            .par_chunks_mut(os)
            .zip(x.data().par_chunks(xs))
            .for_each(|(o, xv)| {
                self.fwd_sample(xv, d, h, w, wgt, o, od, oh, ow);
            });
        if train {
            self.cache_x = Some(x.clone());
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn fwd_sample(
        &self,
        x: &[f64],
        d: usize,
        h: usize,
        w: usize,
        wgt: &[f64],
        out: &mut [f64],
        od: usize,
        oh: usize,
        ow: usize,
    ) {
        let (k, ci, co, s, p) = (self.k, self.ci, self.co, self.stride, self.pad);
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let orow =
                        &mut out[((oz * oh + oy) * ow + ox) * co..((oz * oh + oy) * ow + ox + 1) * co];
                    for kz in 0..k {
                        let iz = (oz * s + kz) as isize - p as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xrow = &x[((iz as usize * h + iy as usize) * w
                                    + ix as usize)
                                    * ci..][..ci];
                                let wslab =
                                    &wgt[((kz * k + ky) * k + kx) * ci * co..][..ci * co];
                                for (c, &xv) in xrow.iter().enumerate() {
                                    let wrow = &wslab[c * co..(c + 1) * co];
                                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                                        *o += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let x = self.cache_x.take().expect("Conv3d backward without cached forward");
        let [b, d, h, w, ci] = *x.shape() else { unreachable!() };
        let [gb, od, oh, ow, co] = *gout.shape() else { panic!("Conv3d wants a 5-D gradient") };
        assert_eq!((gb, co), (b, self.co));
        let (k, s, p) = (self.k, self.stride, self.pad);
        let (xs, os) = (d * h * w * ci, od * oh * ow * co);

        let mut dx = Tensor::zeros(x.shape());
        let wgt = self.weight.value.data();
        dx.data_mut()
            .par_chunks_mut(xs)
            .zip(gout.data().par_chunks(os))
            .for_each(|(dxs, gs)| {
                for oz in 0..od {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let grow = &gs[((oz * oh + oy) * ow + ox) * co
                                ..((oz * oh + oy) * ow + ox + 1) * co];
                            for kz in 0..k {
                                let iz = (oz * s + kz) as isize - p as isize;
                                if iz < 0 || iz >= d as isize {
                                    continue;
                                }
                                for ky in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * s + kx) as isize - p as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let drow = &mut dxs[((iz as usize * h + iy as usize)
                                            * w
                                            + ix as usize)
                                            * ci..][..ci];
                                        let wslab = &wgt
                                            [((kz * k + ky) * k + kx) * ci * co..][..ci * co];
                                        for (c, dv) in drow.iter_mut().enumerate() {
                                            let wrow = &wslab[c * co..(c + 1) * co];
                                            let mut acc = 0.0;
                                            for (g, wv) in grow.iter().zip(wrow) {
                                                acc += g * wv;
                                            }
                                            *dv += acc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });

        let dw = self.weight.grad.data_mut();
        for smp in 0..b {
            let xv = &x.data()[smp * xs..(smp + 1) * xs];
            let gs = &gout.data()[smp * os..(smp + 1) * os];
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let grow = &gs
                            [((oz * oh + oy) * ow + ox) * co..((oz * oh + oy) * ow + ox + 1) * co];
                        for kz in 0..k {
                            let iz = (oz * s + kz) as isize - p as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for ky in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xrow = &xv[((iz as usize * h + iy as usize) * w
                                        + ix as usize)
                                        * ci..][..ci];
                                    let wslab = &mut dw
                                        [((kz * k + ky) * k + kx) * ci * co..][..ci * co];
                                    for (c, &xc) in xrow.iter().enumerate() {
                                        let drow = &mut wslab[c * co..(c + 1) * co];
                                        for (dv, &g) in drow.iter_mut().zip(grow) {
                                            *dv += xc * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Batch normalization over the last (channel) dimension of any rank.

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    rows: usize,
}

impl BatchNorm {
    pub fn new(name: &str, c: usize) -> BatchNorm {
        let mut gamma = Tensor::zeros(&[c]);
        gamma.fill(1.0);
        BatchNorm {
            name: name.to_string(),
            gamma: Param::new(format!("{name}.gamma"), gamma),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[c])),
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    /// Yields the non-parameter buffers (running statistics) for
    /// checkpointing, keyed by dotted names.
    pub fn visit_stats(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        let mean_key = format!("{}.running_mean", self.name);
        f(&mean_key, &mut self.running_mean);
        let var_key = format!("{}.running_var", self.name);
        f(&var_key, &mut self.running_var);
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.numel()
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let c = self.channels();
        assert_eq!(*x.shape().last().unwrap(), c, "BatchNorm channel mismatch");
        let rows = x.numel() / c;
        let g = self.gamma.value.data();
        let bta = self.beta.value.data();
        let mut out = Tensor::zeros(x.shape());

        if !train {
            // deterministic affine map from the running statistics
            let scale: Vec<f64> = (0..c)
                .map(|j| g[j] / (self.running_var[j] + self.eps).sqrt())
                .collect();
            let shift: Vec<f64> =
                (0..c).map(|j| bta[j] - self.running_mean[j] * scale[j]).collect();
            for (orow, xrow) in out.data_mut().chunks_mut(c).zip(x.data().chunks(c)) {
                for j in 0..c {
                    orow[j] = xrow[j] * scale[j] + shift[j];
                }
            }
            self.cache = None;
            return out;
        }

        assert!(rows > 1, "batch norm in train mode needs more than one row per channel");
        let mut mean = vec![0.0; c];
        for xrow in x.data().chunks(c) {
            for j in 0..c {
                mean[j] += xrow[j];
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; c];
        for xrow in x.data().chunks(c) {
            for j in 0..c {
                let d = xrow[j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= rows as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut xhat = vec![0.0; x.numel()];
        for ((orow, hrow), xrow) in out
            .data_mut()
            .chunks_mut(c)
            .zip(xhat.chunks_mut(c))
            .zip(x.data().chunks(c))
        {
            for j in 0..c {
                let h = (xrow[j] - mean[j]) * inv_std[j];
                hrow[j] = h;
                orow[j] = h * g[j] + bta[j];
            }
        }

        let unbias = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
        for j in 0..c {
            self.running_mean[j] = (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
            self.running_var[j] =
                (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
        }
        self.cache = Some(BnCache { xhat, inv_std, rows });
        out
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let BnCache { xhat, inv_std, rows } =
            self.cache.take().expect("BatchNorm backward without a train-mode forward");
        let c = self.channels();
        let n = rows as f64;
        let g = self.gamma.value.data();

        let mut s1 = vec![0.0; c]; // sum of dxhat
        let mut s2 = vec![0.0; c]; // sum of dxhat * xhat
        let dbeta = self.beta.grad.data_mut();
        let dgamma = self.gamma.grad.data_mut();
        for (grow, hrow) in gout.data().chunks(c).zip(xhat.chunks(c)) {
            for j in 0..c {
                let dxh = grow[j] * g[j];
                s1[j] += dxh;
                s2[j] += dxh * hrow[j];
                dbeta[j] += grow[j];
                dgamma[j] += grow[j] * hrow[j];
            }
        }

        let mut dx = Tensor::zeros(gout.shape());
        for (drow, (grow, hrow)) in dx
            .data_mut()
            .chunks_mut(c)
            .zip(gout.data().chunks(c).zip(xhat.chunks(c)))
        {
            for j in 0..c {
                let dxh = grow[j] * g[j];
                drow[j] = inv_std[j] * (dxh - s1[j] / n - hrow[j] * s2[j] / n);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations.

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Relu {
        Relu::default()
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut out = x.clone();
        let mut mask = if train { Vec::with_capacity(x.numel()) } else { Vec::new() };
        for v in out.data_mut() {
            let pos = *v > 0.0;
            if !pos {
                *v = 0.0;
            }
            if train {
                mask.push(pos);
            }
        }
        if train {
            self.mask = Some(mask);
        }
        out
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let mask = self.mask.take().expect("Relu backward without cached forward");
        let mut dx = gout.clone();
        for (d, keep) in dx.data_mut().iter_mut().zip(mask) {
            if !keep {
                *d = 0.0;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    y: Option<Vec<f64>>,
}

impl Sigmoid {
    pub fn new() -> Sigmoid {
        Sigmoid::default()
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut out = x.clone();
        for v in out.data_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        if train {
            self.y = Some(out.data().to_vec());
        }
        out
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let y = self.y.take().expect("Sigmoid backward without cached forward");
        let mut dx = gout.clone();
        for (d, yv) in dx.data_mut().iter_mut().zip(y) {
            *d *= yv * (1.0 - yv);
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Spatial resampling for NHWC tensors.

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub factor: usize,
    cache: Option<(Vec<u32>, Vec<usize>)>, // per-output argmax (in-sample flat), input shape
}

impl MaxPool2d {
    pub fn new(factor: usize) -> MaxPool2d {
        MaxPool2d { factor, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [b, h, w, c] = *x.shape() else { panic!("MaxPool2d wants a 4-D input") };
        let f = self.factor;
        assert!(h % f == 0 && w % f == 0, "MaxPool2d needs dims divisible by {f}");
        let (oh, ow) = (h / f, w / f);
        let mut out = Tensor::zeros(&[b, oh, ow, c]);
        let mut arg = vec![0u32; b * oh * ow * c];
        let xs = h * w * c;
        for s in 0..b {
            let xv = &x.data()[s * xs..(s + 1) * xs];
            let ov = &mut out.data_mut()[s * oh * ow * c..(s + 1) * oh * ow * c];
            let av = &mut arg[s * oh * ow * c..(s + 1) * oh * ow * c];
            for oy in 0..oh {
                for ox in 0..ow {
                    for j in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = 0u32;
                        for ky in 0..f {
                            for kx in 0..f {
                                let idx = ((oy * f + ky) * w + ox * f + kx) * c + j;
                                if xv[idx] > best {
                                    best = xv[idx];
                                    best_i = idx as u32;
                                }
                            }
                        }
                        ov[(oy * ow + ox) * c + j] = best;
                        av[(oy * ow + ox) * c + j] = best_i;
                    }
                }
            }
        }
        if train {
            self.cache = Some((arg, x.shape().to_vec()));
        }
        out
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let (arg, in_shape) = self.cache.take().expect("MaxPool2d backward without cache");
        let mut dx = Tensor::zeros(&in_shape);
        let xs = in_shape[1] * in_shape[2] * in_shape[3];
        let os = gout.stride0();
        for s in 0..in_shape[0] {
            let gs = &gout.data()[s * os..(s + 1) * os];
            let av = &arg[s * os..(s + 1) * os];
            let dxs = &mut dx.data_mut()[s * xs..(s + 1) * xs];
            for (g, &a) in gs.iter().zip(av) {
                dxs[a as usize] += g;
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct AvgPool2d {
    pub factor: usize,
    in_shape: Option<Vec<usize>>,
}

impl AvgPool2d {
    pub fn new(factor: usize) -> AvgPool2d {
        AvgPool2d { factor, in_shape: None }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [b, h, w, c] = *x.shape() else { panic!("AvgPool2d wants a 4-D input") };
        let f = self.factor;
        assert!(h % f == 0 && w % f == 0, "AvgPool2d needs dims divisible by {f}");
        let (oh, ow) = (h / f, w / f);
        let inv = 1.0 / (f * f) as f64;
        let mut out = Tensor::zeros(&[b, oh, ow, c]);
        for s in 0..b {
            let xv = &x.data()[s * h * w * c..(s + 1) * h * w * c];
            let ov = &mut out.data_mut()[s * oh * ow * c..(s + 1) * oh * ow * c];
            for oy in 0..oh {
                for ox in 0..ow {
                    for j in 0..c {
                        let mut acc = 0.0;
                        for ky in 0..f {
                            for kx in 0..f {
                                acc += xv[((oy * f + ky) * w + ox * f + kx) * c + j];
                            }
                        }
                        ov[(oy * ow + ox) * c + j] = acc * inv;
                    }
                }
            }
        }
        if train {
            self.in_shape = Some(x.shape().to_vec());
        }
        out
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let in_shape = self.in_shape.take().expect("AvgPool2d backward without cache");
        let [b, h, w, c] = in_shape[..] else { unreachable!() };
        let f = self.factor;
        let (oh, ow) = (h / f, w / f);
        let inv = 1.0 / (f * f) as f64;
        let mut dx = Tensor::zeros(&in_shape);
        for s in 0..b {
            let gs = &gout.data()[s * oh * ow * c..(s + 1) * oh * ow * c];
            let dxs = &mut dx.data_mut()[s * h * w * c..(s + 1) * h * w * c];
            for oy in 0..oh {
                for ox in 0..ow {
                    for j in 0..c {
                        let g = gs[(oy * ow + ox) * c + j] * inv;
                        for ky in 0..f {
                            for kx in 0..f {
                                dxs[((oy * f + ky) * w + ox * f + kx) * c + j] += g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Bilinear,
}

/// Doubles H and W. Bilinear uses half-pixel-center sampling (out coordinate
/// (o + 0.5)/2 - 0.5), clamped at the borders.
#[derive(Debug, Clone)]
pub struct Upsample2d {
    pub mode: UpsampleMode,
    in_shape: Option<Vec<usize>>,
}

/// Source taps for one doubled axis: output index o reads inputs (i0, i1)
/// with weights (w0, w1).
fn bilinear_taps(len: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * len)
        .map(|o| {
            let pos = (o as f64 + 0.5) / 2.0 - 0.5;
            let i0 = pos.floor().max(0.0) as usize;
            let i1 = (i0 + 1).min(len - 1);
            let w1 = (pos - pos.floor()).clamp(0.0, 1.0);
            if pos < 0.0 {
                (0, 0, 1.0, 0.0)
            } else {
                (i0, i1, 1.0 - w1, w1)
            }
        })
        .collect()
}

impl Upsample2d {
    pub fn new(mode: UpsampleMode) -> Upsample2d {
        Upsample2d { mode, in_shape: None }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [b, h, w, c] = *x.shape() else { panic!("Upsample2d wants a 4-D input") };
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(&[b, oh, ow, c]);
        match self.mode {
            UpsampleMode::Nearest => {
                for s in 0..b {
                    let xv = &x.data()[s * h * w * c..(s + 1) * h * w * c];
                    let ov = &mut out.data_mut()[s * oh * ow * c..(s + 1) * oh * ow * c];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let src = &xv[((oy / 2) * w + ox / 2) * c..][..c];
                            ov[(oy * ow + ox) * c..(oy * ow + ox + 1) * c].copy_from_slice(src);
                        }
                    }
                }
            }
            UpsampleMode::Bilinear => {
                let ty = bilinear_taps(h);
                let tx = bilinear_taps(w);
                for s in 0..b {
                    let xv = &x.data()[s * h * w * c..(s + 1) * h * w * c];
                    let ov = &mut out.data_mut()[s * oh * ow * c..(s + 1) * oh * ow * c];
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let orow = &mut ov[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                            for j in 0..c {
                                orow[j] = wy0 * wx0 * xv[(y0 * w + x0) * c + j]
                                    + wy0 * wx1 * xv[(y0 * w + x1) * c + j]
                                    + wy1 * wx0 * xv[(y1 * w + x0) * c + j]
                                    + wy1 * wx1 * xv[(y1 * w + x1) * c + j];
                            }
                        }
                    }
                }
            }
        }
        if train {
            self.in_shape = Some(x.shape().to_vec());
        }
        out
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let in_shape = self.in_shape.take().expect("Upsample2d backward without cache");
        let [b, h, w, c] = in_shape[..] else { unreachable!() };
        let (oh, ow) = (2 * h, 2 * w);
        let mut dx = Tensor::zeros(&in_shape);
        match self.mode {
            UpsampleMode::Nearest => {
                for s in 0..b {
                    let gs = &gout.data()[s * oh * ow * c..(s + 1) * oh * ow * c];
                    let dxs = &mut dx.data_mut()[s * h * w * c..(s + 1) * h * w * c];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let grow = &gs[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                            let drow = &mut dxs[((oy / 2) * w + ox / 2) * c..][..c];
                            for (d, &g) in drow.iter_mut().zip(grow) {
                                *d += g;
                            }
                        }
                    }
                }
            }
            UpsampleMode::Bilinear => {
                let ty = bilinear_taps(h);
                let tx = bilinear_taps(w);
                for s in 0..b {
                    let gs = &gout.data()[s * oh * ow * c..(s + 1) * oh * ow * c];
                    let dxs = &mut dx.data_mut()[s * h * w * c..(s + 1) * h * w * c];
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let grow = &gs[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                            for (j, &g) in grow.iter().enumerate() {
                                dxs[(y0 * w + x0) * c + j] += wy0 * wx0 * g;
                                dxs[(y0 * w + x1) * c + j] += wy0 * wx1 * g;
                                dxs[(y1 * w + x0) * c + j] += wy1 * wx0 * g;
                                dxs[(y1 * w + x1) * c + j] += wy1 * wx1 * g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Mean over D, H, W of an NDHWC tensor: [B, D, H, W, C] -> [B, C].
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool3d {
    in_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool3d {
    pub fn new() -> GlobalAvgPool3d {
        GlobalAvgPool3d::default()
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [b, d, h, w, c] = *x.shape() else { panic!("GlobalAvgPool3d wants a 5-D input") };
        let voxels = d * h * w;
        let inv = 1.0 / voxels as f64;
        let mut out = Tensor::zeros(&[b, c]);
        for s in 0..b {
            let xv = &x.data()[s * voxels * c..(s + 1) * voxels * c];
            let ov = &mut out.data_mut()[s * c..(s + 1) * c];
            for row in xv.chunks(c) {
                for j in 0..c {
                    ov[j] += row[j];
                }
            }
            for v in ov.iter_mut() {
                *v *= inv;
            }
        }
        if train {
            self.in_shape = Some(x.shape().to_vec());
        }
        out
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let in_shape = self.in_shape.take().expect("GlobalAvgPool3d backward without cache");
        let [b, d, h, w, c] = in_shape[..] else { unreachable!() };
        let inv = 1.0 / (d * h * w) as f64;
        let mut dx = Tensor::zeros(&in_shape);
        for s in 0..b {
            let grow = &gout.data()[s * c..(s + 1) * c];
            let dxs = &mut dx.data_mut()[s * d * h * w * c..(s + 1) * d * h * w * c];
            for drow in dxs.chunks_mut(c) {
                for j in 0..c {
                    drow[j] = grow[j] * inv;
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Fully connected layer: x [B, in] -> y [B, out], weight [in][out].

#[derive(Debug, Clone)]
pub struct Linear {
    pub inf: usize,
    pub outf: usize,
    pub weight: Param,
    pub bias: Param,
    cache_x: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, inf: usize, outf: usize, rng: &mut ChaCha20Rng) -> Linear {
        let weight = Param::new(format!("{name}.w"), kaiming_uniform(&[inf, outf], inf, rng));
        let bias = Param::new(format!("{name}.b"), bias_uniform(outf, inf, rng));
        Linear { inf, outf, weight, bias, cache_x: None }
    }

    pub fn param_count(&self) -> usize {
        self.inf * self.outf + self.outf
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [b, inf] = *x.shape() else { panic!("Linear wants a 2-D input") };
        assert_eq!(inf, self.inf, "Linear input width mismatch");
        let mut out = Tensor::zeros(&[b, self.outf]);
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        for (orow, xrow) in out.data_mut().chunks_mut(self.outf).zip(x.data().chunks(inf)) {
            orow.copy_from_slice(bias);
            for (i, &xv) in xrow.iter().enumerate() {
                let wrow = &w[i * self.outf..(i + 1) * self.outf];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        if train {
            self.cache_x = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let x = self.cache_x.take().expect("Linear backward without cached forward");
        let [b, _] = *x.shape() else { unreachable!() };
        let w = self.weight.value.data();
        let dw = self.weight.grad.data_mut();
        let db = self.bias.grad.data_mut();
        let mut dx = Tensor::zeros(x.shape());
        for s in 0..b {
            let grow = &gout.data()[s * self.outf..(s + 1) * self.outf];
            let xrow = &x.data()[s * self.inf..(s + 1) * self.inf];
            let drow = &mut dx.data_mut()[s * self.inf..(s + 1) * self.inf];
            for (j, &g) in grow.iter().enumerate() {
                db[j] += g;
            }
            for i in 0..self.inf {
                let wrow = &w[i * self.outf..(i + 1) * self.outf];
                let dwrow = &mut dw[i * self.outf..(i + 1) * self.outf];
                let xv = xrow[i];
                let mut acc = 0.0;
                for ((g, wv), dwv) in grow.iter().zip(wrow).zip(dwrow) {
                    acc += g * wv;
                    *dwv += xv * g;
                }
                drow[i] = acc;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// Independent nested-loop convolution oracle (2-D, NHWC).
    fn naive_conv2d(
        x: &Tensor,
        w: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Tensor {
        let [b, h, ww, ci] = *x.shape() else { unreachable!() };
        let [kh, kw, wci, co] = *w.shape() else { unreachable!() };
        assert_eq!(ci, wci);
        let oh = conv_out_len(h, kh, stride, pad);
        let ow = conv_out_len(ww, kw, stride, pad);
        let mut out = Tensor::zeros(&[b, oh, ow, co]);
        for s in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for o in 0..co {
                        let mut acc = 0.0;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= ww as isize {
                                    continue;
                                }
                                for c in 0..ci {
                                    acc += x.data()
                                        [((s * h + iy as usize) * ww + ix as usize) * ci + c]
                                        * w.data()[((ky * kw + kx) * ci + c) * co + o];
                                }
                            }
                        }
                        out.data_mut()[((s * oh + oy) * ow + ox) * co + o] = acc;
                    }
                }
            }
        }
        out
    }

    fn naive_conv3d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [b, d, h, ww, ci] = *x.shape() else { unreachable!() };
        let [k, _, _, wci, co] = *w.shape() else { unreachable!() };
        assert_eq!(ci, wci);
        let od = conv_out_len(d, k, stride, pad);
        let oh = conv_out_len(h, k, stride, pad);
        let ow = conv_out_len(ww, k, stride, pad);
        let mut out = Tensor::zeros(&[b, od, oh, ow, co]);
        for s in 0..b {
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for o in 0..co {
                            let mut acc = 0.0;
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iz = (oz * stride + kz) as isize - pad as isize;
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if iz < 0
                                            || iy < 0
                                            || ix < 0
                                            || iz >= d as isize
                                            || iy >= h as isize
                                            || ix >= ww as isize
                                        {
                                            continue;
                                        }
                                        for c in 0..ci {
                                            acc += x.data()[(((s * d + iz as usize) * h
                                                + iy as usize)
                                                * ww
                                                + ix as usize)
                                                * ci
                                                + c]
                                                * w.data()
                                                    [(((kz * k + ky) * k + kx) * ci + c) * co + o];
                                        }
                                    }
                                }
                            }
                            out.data_mut()[(((s * od + oz) * oh + oy) * ow + ox) * co + o] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        let mut r = rng(11);
        for &(stride, pad) in &[(1usize, 1usize), (2, 1), (1, 0), (2, 3)] {
            let mut conv = Conv2d::new("c", (3, 3), 5, 7, stride, pad, &mut r);
            let x = random_tensor(&[2, 6, 8, 5], -1.0, 1.0, &mut r);
            let got = conv.forward(&x, false);
            let want = naive_conv2d(&x, &conv.weight.value, stride, pad);
            assert_eq!(got.shape(), want.shape());
            assert_close(got.data(), want.data(), 1e-10, "conv2d fwd");
        }
        // 7x7 stem-style kernel
        let mut conv = Conv2d::new("c", (7, 7), 3, 4, 2, 3, &mut r);
        let x = random_tensor(&[1, 10, 10, 3], -1.0, 1.0, &mut r);
        let got = conv.forward(&x, false);
        let want = naive_conv2d(&x, &conv.weight.value, 2, 3);
        assert_close(got.data(), want.data(), 1e-10, "conv2d 7x7 fwd");
    }

    #[test]
    fn conv3d_matches_naive_oracle() {
        let mut r = rng(13);
        for &(k, stride, pad) in &[(3usize, 1usize, 1usize), (3, 2, 1), (1, 2, 0), (7, 2, 3)] {
            let mut conv = Conv3d::new("c", k, 2, 3, stride, pad, &mut r);
            let x = random_tensor(&[2, 8, 8, 8, 2], -1.0, 1.0, &mut r);
            let got = conv.forward(&x, false);
            let want = naive_conv3d(&x, &conv.weight.value, stride, pad);
            assert_eq!(got.shape(), want.shape());
            assert_close(got.data(), want.data(), 1e-10, "conv3d fwd");
        }
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut r = rng(17);
        let conv = Conv2d::new("c", (3, 3), 3, 4, 2, 1, &mut r);
        let x = random_tensor(&[2, 5, 6, 3], -1.0, 1.0, &mut r);
        let probe = random_probe(2 * 3 * 3 * 4, &mut r);

        let mut live = conv.clone();
        let y = live.forward(&x, true);
        assert_eq!(y.numel(), probe.len());
        let dx = live.backward(&Tensor::from_vec(y.shape(), probe.clone()).unwrap());

        let mut xm = x.clone();
        let fd_x = finite_difference(&mut xm, |t| {
            dot(conv.clone().forward(t, false).data(), &probe)
        });
        assert_close(dx.data(), &fd_x, FD_TOL, "conv2d dx");

        let mut wm = conv.weight.value.clone();
        let fd_w = finite_difference(&mut wm, |t| {
            let mut c = conv.clone();
            c.weight.value = t.clone();
            dot(c.forward(&x, false).data(), &probe)
        });
        assert_close(live.weight.grad.data(), &fd_w, FD_TOL, "conv2d dw");
    }

    #[test]
    fn conv3d_gradients_match_finite_differences() {
        let mut r = rng(19);
        let conv = Conv3d::new("c", 3, 2, 3, 2, 1, &mut r);
        let x = random_tensor(&[2, 4, 4, 4, 2], -1.0, 1.0, &mut r);
        let probe = random_probe(2 * 2 * 2 * 2 * 3, &mut r);

        let mut live = conv.clone();
        let y = live.forward(&x, true);
        assert_eq!(y.numel(), probe.len());
        let dx = live.backward(&Tensor::from_vec(y.shape(), probe.clone()).unwrap());

        let mut xm = x.clone();
        let fd_x = finite_difference(&mut xm, |t| {
            dot(conv.clone().forward(t, false).data(), &probe)
        });
        assert_close(dx.data(), &fd_x, FD_TOL, "conv3d dx");

        let mut wm = conv.weight.value.clone();
        let fd_w = finite_difference(&mut wm, |t| {
            let mut c = conv.clone();
            c.weight.value = t.clone();
            dot(c.forward(&x, false).data(), &probe)
        });
        assert_close(live.weight.grad.data(), &fd_w, FD_TOL, "conv3d dw");
    }

    #[test]
    fn batchnorm_train_normalizes_and_matches_finite_differences() {
        let mut r = rng(23);
        let bn = BatchNorm::new("bn", 4);
        let x = random_tensor(&[6, 4], -2.0, 2.0, &mut r);

        let mut live = bn.clone();
        let y = live.forward(&x, true);
        // per-channel mean ~0 and variance ~1 before gamma/beta (gamma=1, beta=0 at init)
        for j in 0..4 {
            let col: Vec<f64> = (0..6).map(|s| y.data()[s * 4 + j]).collect();
            let m = col.iter().sum::<f64>() / 6.0;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 6.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4); // eps makes it slightly below 1
        }

        let probe = random_probe(24, &mut r);
        let dx = live.backward(&Tensor::from_vec(&[6, 4], probe.clone()).unwrap());
        let mut xm = x.clone();
        let fd_x = finite_difference(&mut xm, |t| {
            dot(bn.clone().forward(t, true).data(), &probe)
        });
        assert_close(dx.data(), &fd_x, FD_TOL, "bn dx");

        for (pick, what) in [(0usize, "bn dgamma"), (1usize, "bn dbeta")] {
            let template = bn.clone();
            let mut pm = if pick == 0 {
                template.gamma.value.clone()
            } else {
                template.beta.value.clone()
            };
            let fd = finite_difference(&mut pm, |t| {
                let mut b2 = template.clone();
                if pick == 0 {
                    b2.gamma.value = t.clone();
                } else {
                    b2.beta.value = t.clone();
                }
                dot(b2.forward(&x, true).data(), &probe)
            });
            let got = if pick == 0 { live.gamma.grad.data() } else { live.beta.grad.data() };
            assert_close(got, &fd, FD_TOL, what);
        }
    }

    #[test]
    fn batchnorm_eval_is_an_affine_map_independent_of_the_batch() {
        let mut r = rng(29);
        let mut bn = BatchNorm::new("bn", 3);
        // accumulate running stats from a couple of train batches
        for _ in 0..3 {
            let x = random_tensor(&[8, 3], -1.0, 3.0, &mut r);
            bn.forward(&x, true);
        }
        let a = random_tensor(&[4, 3], -1.0, 1.0, &mut r);
        let b = random_tensor(&[2, 3], 5.0, 9.0, &mut r);
        let ya = bn.forward(&a, false);
        let yb = bn.forward(&b, false);
        // the same input row maps identically regardless of batch company
        let mut joint_data = a.data().to_vec();
        joint_data.extend_from_slice(b.data());
        let joint = Tensor::from_vec(&[6, 3], joint_data).unwrap();
        let yj = bn.forward(&joint, false);
        assert_eq!(&yj.data()[..12], ya.data());
        assert_eq!(&yj.data()[12..], yb.data());
        // and the map is affine: y(2x) - y(x) = y(x) - y(0) componentwise
        let x1 = random_tensor(&[1, 3], -1.0, 1.0, &mut r);
        let mut x2 = x1.clone();
        for v in x2.data_mut() {
            *v *= 2.0;
        }
        let y0 = bn.forward(&Tensor::zeros(&[1, 3]), false);
        let y1 = bn.forward(&x1, false);
        let y2 = bn.forward(&x2, false);
        for j in 0..3 {
            let lhs = y2.data()[j] - y1.data()[j];
            let rhs = y1.data()[j] - y0.data()[j];
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_running_stats_converge_to_the_input_distribution() {
        let mut r = rng(31);
        let mut bn = BatchNorm::new("bn", 1);
        for _ in 0..200 {
            let mut x = Tensor::zeros(&[32, 1]);
            for v in x.data_mut() {
                *v = 3.0 + r.random_range(-0.5..0.5);
            }
            bn.forward(&x, true);
        }
        assert!((bn.running_mean[0] - 3.0).abs() < 0.05);
        // variance of U(-0.5, 0.5) = 1/12
        assert!((bn.running_var[0] - 1.0 / 12.0).abs() < 0.02);
    }

    #[test]
    fn relu_and_sigmoid_gradients() {
        let mut r = rng(37);
        // keep inputs away from the relu kink so finite differences are valid
        let mut x = random_tensor(&[3, 5], 0.05, 2.0, &mut r);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        let probe = random_probe(15, &mut r);

        let mut relu = Relu::new();
        let y = relu.forward(&x, true);
        assert!(y.data().iter().all(|&v| v >= 0.0));
        let dx = relu.backward(&Tensor::from_vec(&[3, 5], probe.clone()).unwrap());
        let mut xm = x.clone();
        let fd = finite_difference(&mut xm, |t| dot(Relu::new().forward(t, false).data(), &probe));
        assert_close(dx.data(), &fd, FD_TOL, "relu dx");

        let mut sig = Sigmoid::new();
        let y = sig.forward(&x, true);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let dx = sig.backward(&Tensor::from_vec(&[3, 5], probe.clone()).unwrap());
        let mut xm = x.clone();
        let fd =
            finite_difference(&mut xm, |t| dot(Sigmoid::new().forward(t, false).data(), &probe));
        assert_close(dx.data(), &fd, FD_TOL, "sigmoid dx");
    }

    #[test]
    fn pooling_layers_match_naive_definitions_and_gradients() {
        let mut r = rng(41);
        let x = random_tensor(&[2, 4, 6, 3], -1.0, 1.0, &mut r);

        let mut mp = MaxPool2d::new(2);
        let y = mp.forward(&x, true);
        assert_eq!(y.shape(), &[2, 2, 3, 3]);
        for s in 0..2 {
            for oy in 0..2 {
                for ox in 0..3 {
                    for j in 0..3 {
                        let mut want = f64::NEG_INFINITY;
                        for ky in 0..2 {
                            for kx in 0..2 {
                                want = want.max(
                                    x.data()[((s * 4 + oy * 2 + ky) * 6 + ox * 2 + kx) * 3 + j],
                                );
                            }
                        }
                        assert_eq!(y.data()[((s * 2 + oy) * 3 + ox) * 3 + j], want);
                    }
                }
            }
        }
        let probe = random_probe(y.numel(), &mut r);
        let dx = mp.backward(&Tensor::from_vec(y.shape(), probe.clone()).unwrap());
        let mut xm = x.clone();
        let fd = finite_difference(&mut xm, |t| {
            dot(MaxPool2d::new(2).forward(t, false).data(), &probe)
        });
        assert_close(dx.data(), &fd, FD_TOL, "maxpool dx");

        let mut ap = AvgPool2d::new(2);
        let y = ap.forward(&x, true);
        let probe = random_probe(y.numel(), &mut r);
        let dx = ap.backward(&Tensor::from_vec(y.shape(), probe.clone()).unwrap());
        let mut xm = x.clone();
        let fd = finite_difference(&mut xm, |t| {
            dot(AvgPool2d::new(2).forward(t, false).data(), &probe)
        });
        assert_close(dx.data(), &fd, FD_TOL, "avgpool dx");
        // average of a constant block is that constant
        let mut ones = Tensor::zeros(&[1, 2, 2, 1]);
        ones.fill(3.5);
        assert_eq!(AvgPool2d::new(2).forward(&ones, false).data(), &[3.5]);
    }

    #[test]
    fn upsample_nearest_replicates_and_bilinear_interpolates() {
        let mut r = rng(43);
        let x = random_tensor(&[1, 2, 2, 1], -1.0, 1.0, &mut r);
        let mut up = Upsample2d::new(UpsampleMode::Nearest);
        let y = up.forward(&x, false);
        assert_eq!(y.shape(), &[1, 4, 4, 1]);
        for oy in 0..4 {
            for ox in 0..4 {
                assert_eq!(y.data()[oy * 4 + ox], x.data()[(oy / 2) * 2 + ox / 2]);
            }
        }

        // bilinear: constant input stays constant (weights sum to 1)
        let mut c = Tensor::zeros(&[1, 3, 3, 2]);
        c.fill(0.7);
        let y = Upsample2d::new(UpsampleMode::Bilinear).forward(&c, false);
        for &v in y.data() {
            assert!((v - 0.7).abs() < 1e-12);
        }

        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            let x = random_tensor(&[2, 3, 4, 2], -1.0, 1.0, &mut r);
            let mut up = Upsample2d::new(mode);
            let y = up.forward(&x, true);
            let probe = random_probe(y.numel(), &mut r);
            let dx = up.backward(&Tensor::from_vec(y.shape(), probe.clone()).unwrap());
            let mut xm = x.clone();
            let fd = finite_difference(&mut xm, |t| {
                dot(Upsample2d::new(mode).forward(t, false).data(), &probe)
            });
            assert_close(dx.data(), &fd, FD_TOL, "upsample dx");
        }
    }

    #[test]
    fn global_pool_and_linear_gradients() {
        let mut r = rng(47);
        let x = random_tensor(&[2, 2, 3, 2, 4], -1.0, 1.0, &mut r);
        let mut gp = GlobalAvgPool3d::new();
        let y = gp.forward(&x, true);
        assert_eq!(y.shape(), &[2, 4]);
        let probe = random_probe(8, &mut r);
        let dx = gp.backward(&Tensor::from_vec(&[2, 4], probe.clone()).unwrap());
        let mut xm = x.clone();
        let fd = finite_difference(&mut xm, |t| {
            dot(GlobalAvgPool3d::new().forward(t, false).data(), &probe)
        });
        assert_close(dx.data(), &fd, FD_TOL, "gap dx");

        let lin = Linear::new("fc", 6, 5, &mut r);
        let x = random_tensor(&[3, 6], -1.0, 1.0, &mut r);
        let probe = random_probe(15, &mut r);
        let mut live = lin.clone();
        let y = live.forward(&x, true);
        let dx = live.backward(&Tensor::from_vec(y.shape(), probe.clone()).unwrap());

        let mut xm = x.clone();
        let fd = finite_difference(&mut xm, |t| dot(lin.clone().forward(t, false).data(), &probe));
        assert_close(dx.data(), &fd, FD_TOL, "linear dx");
        let mut wm = lin.weight.value.clone();
        let fd_w = finite_difference(&mut wm, |t| {
            let mut l = lin.clone();
            l.weight.value = t.clone();
            dot(l.forward(&x, false).data(), &probe)
        });
        assert_close(live.weight.grad.data(), &fd_w, FD_TOL, "linear dw");
        let mut bm = lin.bias.value.clone();
        let fd_b = finite_difference(&mut bm, |t| {
            let mut l = lin.clone();
            l.bias.value = t.clone();
            dot(l.forward(&x, false).data(), &probe)
        });
        assert_close(live.bias.grad.data(), &fd_b, FD_TOL, "linear db");
    }

    #[test]
    fn kaiming_bounds_hold() {
        let mut r = rng(53);
        let w = kaiming_uniform(&[3, 3, 8, 16], 72, &mut r);
        let bound = (6.0 / 72.0f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        // spread should roughly fill the interval
        let max = w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.8 * bound);
    }
}
