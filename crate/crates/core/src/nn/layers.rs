//! Layer primitives with explicit forward caches and hand-written backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::rng::SeededRng;

pub const BN_EPS: f64 = 1e-5;

/// Square convolution, no bias, zero padding `k/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    /// `[out_c][in_c][k][k]`
    pub weight: Vec<f64>,
}

impl Conv2d {
    /// Fan-in scaled uniform init, bound `sqrt(6 / fan_in)`.
    pub fn init(in_c: usize, out_c: usize, k: usize, stride: usize, rng: &mut SeededRng) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight = (0..out_c * in_c * k * k).map(|_| rng.random_range(-bound..bound)).collect();
        Self { in_c, out_c, k, stride, weight }
    }

    pub fn zeros_like(&self) -> Self {
        Self { weight: vec![0.0; self.weight.len()], ..self.clone() }
    }

    fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_dim(&self, d: usize) -> usize {
        (d + 2 * self.pad() - self.k) / self.stride + 1
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f64]) {
        let (k, s, p) = (self.k, self.stride, self.pad() as isize);
        let ohw = oh * ow;
        for ci in 0..self.in_c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * ohw..][..ohw];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f64]) {
        let (k, s, p) = (self.k, self.stride, self.pad() as isize);
        let ohw = oh * ow;
        for ci in 0..self.in_c {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * ohw..][..ohw];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = (self.out_dim(x.h), self.out_dim(x.w));
        let ckk = self.in_c * self.k * self.k;
        let mut out = Tensor::zeros(x.n, self.out_c, oh, ow);
        let mut cols = vec![0.0; ckk * oh * ow];
        for i in 0..x.n {
            self.im2col(x.sample(i), x.h, x.w, oh, ow, &mut cols);
            gemm(self.out_c, ckk, oh * ow, &self.weight, false, &cols, false, out.sample_mut(i), 0.0);
        }
        out
    }

    /// Returns `dx` when `want_dx`; accumulates the weight gradient into
    /// `dweight` when given.
    pub fn backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        dweight: Option<&mut [f64]>,
        want_dx: bool,
    ) -> Option<Tensor> {
        let (oh, ow) = (dy.h, dy.w);
        let ckk = self.in_c * self.k * self.k;
        let ohw = oh * ow;
        let mut cols = vec![0.0; ckk * ohw];
        let mut dx = want_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        let mut dcols = vec![0.0; if want_dx { ckk * ohw } else { 0 }];
        let mut dweight = dweight;
        for i in 0..x.n {
            if let Some(dw) = dweight.as_deref_mut() {
                self.im2col(x.sample(i), x.h, x.w, oh, ow, &mut cols);
                // dW[oc, ckk] += dy[oc, ohw] · cols[ckk, ohw]^T
                gemm(self.out_c, ohw, ckk, dy.sample(i), false, &cols, true, dw, 1.0);
            }
            if let Some(dx) = dx.as_mut() {
                // dcols[ckk, ohw] = W[oc, ckk]^T · dy[oc, ohw]
                gemm(ckk, self.out_c, ohw, &self.weight, true, dy.sample(i), false, &mut dcols, 0.0);
                self.col2im(&dcols, x.h, x.w, oh, ow, dx.sample_mut(i));
            }
        }
        dx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with the stored running statistics.
    Running,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mode: BnMode,
    /// Batch mean and unbiased variance (batch mode only), for running updates.
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        Self { gamma: vec![1.0; c], beta: vec![0.0; c], running_mean: vec![0.0; c], running_var: vec![1.0; c] }
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.gamma.len();
        Self { gamma: vec![0.0; c], beta: vec![0.0; c], running_mean: vec![0.0; c], running_var: vec![0.0; c] }
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode) -> (Tensor, BnCache) {
        let (c, plane) = (x.c, x.plane());
        let m = (x.n * plane) as f64;
        let (mean, var_biased, var_unbiased) = match mode {
            BnMode::Batch => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for i in 0..x.n {
                    let s = x.sample(i);
                    for ch in 0..c {
                        mean[ch] += s[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for i in 0..x.n {
                    let s = x.sample(i);
                    for ch in 0..c {
                        let mu = mean[ch];
                        var[ch] += s[ch * plane..(ch + 1) * plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                    }
                }
                let unbiased = var.iter().map(|v| if m > 1.0 { v / (m - 1.0) } else { 0.0 }).collect();
                let biased: Vec<f64> = var.iter().map(|v| v / m).collect();
                (mean, biased, unbiased)
            }
            BnMode::Running => (self.running_mean.clone(), self.running_var.clone(), vec![]),
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        for i in 0..x.n {
            let s = x.sample(i);
            let xs = xhat.sample_mut(i);
            for ch in 0..c {
                let (mu, is) = (mean[ch], inv_std[ch]);
                for j in ch * plane..(ch + 1) * plane {
                    xs[j] = (s[j] - mu) * is;
                }
            }
            let ys = y.sample_mut(i);
            let xs = xhat.sample(i);
            for ch in 0..c {
                let (g, b) = (self.gamma[ch], self.beta[ch]);
                for j in ch * plane..(ch + 1) * plane {
                    ys[j] = g * xs[j] + b;
                }
            }
        }
        let (batch_mean, batch_var) = match mode {
            BnMode::Batch => (mean, var_unbiased),
            BnMode::Running => (vec![], vec![]),
        };
        (y, BnCache { xhat, inv_std, mode, batch_mean, batch_var })
    }

    /// Returns `dx`; accumulates `dgamma`/`dbeta` into `grads` when given.
    pub fn backward(&self, cache: &BnCache, dy: &Tensor, grads: Option<&mut BatchNorm>) -> Tensor {
        let (c, plane) = (dy.c, dy.plane());
        let m = (dy.n * plane) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for i in 0..dy.n {
            let d = dy.sample(i);
            let xh = cache.xhat.sample(i);
            for ch in 0..c {
                for j in ch * plane..(ch + 1) * plane {
                    dgamma[ch] += d[j] * xh[j];
                    dbeta[ch] += d[j];
                }
            }
        }
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for i in 0..dy.n {
            let d = dy.sample(i);
            let xh = cache.xhat.sample(i);
            let out = dx.sample_mut(i);
            for ch in 0..c {
                let scale = self.gamma[ch] * cache.inv_std[ch];
                match cache.mode {
                    BnMode::Batch => {
                        let (db, dg) = (dbeta[ch] / m, dgamma[ch] / m);
                        for j in ch * plane..(ch + 1) * plane {
                            out[j] = scale * (d[j] - db - xh[j] * dg);
                        }
                    }
                    BnMode::Running => {
                        for j in ch * plane..(ch + 1) * plane {
                            out[j] = scale * d[j];
                        }
                    }
                }
            }
        }
        if let Some(g) = grads {
            for ch in 0..c {
                g.gamma[ch] += dgamma[ch];
                g.beta[ch] += dbeta[ch];
            }
        }
        dx
    }

    /// Exponential moving update of the running statistics from a batch-mode cache.
    pub fn update_running(&mut self, cache: &BnCache, momentum: f64) {
        if cache.mode != BnMode::Batch {
            return;
        }
        for ch in 0..self.gamma.len() {
            self.running_mean[ch] = (1.0 - momentum) * self.running_mean[ch] + momentum * cache.batch_mean[ch];
            self.running_var[ch] = (1.0 - momentum) * self.running_var[ch] + momentum * cache.batch_var[ch];
        }
    }
}

pub fn relu(x: &mut Tensor) {
    for v in x.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the gradient where the ReLU output was not positive.
pub fn relu_backward(out: &Tensor, dy: &mut Tensor) {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// `[n, c, h, w] -> [n, c]` mean over the spatial plane.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let plane = x.plane() as f64;
    let data = x.data.chunks(x.plane()).map(|p| p.iter().sum::<f64>() / plane).collect();
    Tensor::from_vec(x.n, x.c, 1, 1, data)
}

pub fn global_avg_pool_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let plane = (h * w) as f64;
    let mut data = Vec::with_capacity(dy.data.len() * h * w);
    for &g in &dy.data {
        data.extend(std::iter::repeat_n(g / plane, h * w));
    }
    Tensor::from_vec(dy.n, dy.c, h, w, data)
}

/// Fully connected layer, `weight` is `[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn init(in_f: usize, out_f: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (in_f as f64).sqrt();
        let weight = (0..in_f * out_f).map(|_| rng.random_range(-bound..bound)).collect();
        Self { in_f, out_f, weight, bias: vec![0.0; out_f] }
    }

    pub fn zeros_like(&self) -> Self {
        Self { weight: vec![0.0; self.weight.len()], bias: vec![0.0; self.out_f], ..self.clone() }
    }

    /// `x` is `[n][in]` flattened; returns `[n][out]`.
    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.out_f);
        for i in 0..n {
            let xi = &x[i * self.in_f..(i + 1) * self.in_f];
            for o in 0..self.out_f {
                let w = &self.weight[o * self.in_f..(o + 1) * self.in_f];
                out.push(self.bias[o] + w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        out
    }

    /// Returns `dx`; accumulates parameter gradients into `grads`.
    pub fn backward(&self, x: &[f64], dy: &[f64], n: usize, grads: Option<&mut Linear>) -> Vec<f64> {
        let mut dx = vec![0.0; n * self.in_f];
        for i in 0..n {
            for o in 0..self.out_f {
                let g = dy[i * self.out_f + o];
                let w = &self.weight[o * self.in_f..(o + 1) * self.in_f];
                for (d, wv) in dx[i * self.in_f..(i + 1) * self.in_f].iter_mut().zip(w) {
                    *d += g * wv;
                }
            }
        }
        if let Some(gr) = grads {
            for i in 0..n {
                let xi = &x[i * self.in_f..(i + 1) * self.in_f];
                for o in 0..self.out_f {
                    let g = dy[i * self.out_f + o];
                    gr.bias[o] += g;
                    for (d, xv) in gr.weight[o * self.in_f..(o + 1) * self.in_f].iter_mut().zip(xi) {
                        *d += g * xv;
                    }
                }
            }
        }
        dx
    }
}
