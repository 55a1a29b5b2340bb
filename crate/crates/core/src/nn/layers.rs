use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Layer, Param};
use crate::rng::Rng;
use crate::tensor::{gemm, Tensor};

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected an NCHW tensor, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    in_shape: (usize, usize, usize, usize),
    cols: Vec<Vec<f64>>,
}

impl Conv2d {
    /// He-normal initialised convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let w: Vec<f64> = (0..out_channels * fan_in).map(|_| normal.sample(rng)).collect();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(format!("{name}.weight"), &[out_channels, fan_in], w),
            bias: with_bias.then(|| {
                Param::new(format!("{name}.bias"), &[out_channels], vec![0.0; out_channels])
            }),
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let mut cols = vec![0.0; self.in_channels * k * k * ho * wo];
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oh in 0..ho {
                        let ih = (oh * s) as isize - p + ki as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                        for ow in 0..wo {
                            let iw = (ow * s) as isize - p + kj as isize;
                            if iw >= 0 && iw < w as isize {
                                dst[oh * wo + ow] = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, ho: usize, wo: usize, out: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        for c in 0..self.in_channels {
            let plane = &mut out[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oh in 0..ho {
                        let ih = (oh * s) as isize - p + ki as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for ow in 0..wo {
                            let iw = (ow * s) as isize - p + kj as isize;
                            if iw >= 0 && iw < w as isize {
                                plane[ih as usize * w + iw as usize] += src[oh * wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }

    fn run(&self, x: &Tensor, mut keep: Option<&mut Vec<Vec<f64>>>) -> Tensor {
        let (n, c, h, w) = dims4(x);
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_hw(h, w);
        let ckk = c * self.kernel * self.kernel;
        let mut out = Tensor::zeros(&[n, self.out_channels, ho, wo]);
        for i in 0..n {
            let xi = x.row(i);
            let owned;
            let cols: &[f64] = if self.is_pointwise() {
                xi
            } else {
                owned = self.im2col(xi, h, w, ho, wo);
                &owned
            };
            let oi = out.row_mut(i);
            gemm(
                self.out_channels,
                ckk,
                ho * wo,
                1.0,
                &self.weight.value,
                false,
                cols,
                false,
                0.0,
                oi,
            );
            if let Some(b) = &self.bias {
                for (o, bv) in oi.chunks_mut(ho * wo).zip(&b.value) {
                    o.iter_mut().for_each(|v| *v += bv);
                }
            }
            if let Some(store) = keep.as_deref_mut() {
                store.push(cols.to_vec());
            }
        }
        out
    }
}

impl Layer for Conv2d {
    fn infer(&self, x: &Tensor) -> Tensor {
        self.run(x, None)
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut cols = Vec::with_capacity(x.batch());
        let out = self.run(x, Some(&mut cols));
        self.cache = Some(ConvCache {
            in_shape: dims4(x),
            cols,
        });
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("conv backward without forward");
        let (n, c, h, w) = cache.in_shape;
        let (_, _, ho, wo) = dims4(grad);
        let ckk = c * self.kernel * self.kernel;
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let mut dcols = vec![0.0; ckk * ho * wo];
        for i in 0..n {
            let gi = grad.row(i);
            let cols = &cache.cols[i];
            gemm(
                self.out_channels,
                ho * wo,
                ckk,
                1.0,
                gi,
                false,
                cols,
                true,
                1.0,
                &mut self.weight.grad,
            );
            if let Some(b) = &mut self.bias {
                for (g, o) in b.grad.iter_mut().zip(gi.chunks(ho * wo)) {
                    *g += o.iter().sum::<f64>();
                }
            }
            if self.is_pointwise() {
                gemm(
                    ckk,
                    self.out_channels,
                    ho * wo,
                    1.0,
                    &self.weight.value,
                    true,
                    gi,
                    false,
                    0.0,
                    dx.row_mut(i),
                );
            } else {
                gemm(
                    ckk,
                    self.out_channels,
                    ho * wo,
                    1.0,
                    &self.weight.value,
                    true,
                    gi,
                    false,
                    0.0,
                    &mut dcols,
                );
                self.col2im(&dcols, h, w, ho, wo, dx.row_mut(i));
            }
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Batch normalisation over the channel axis of an NCHW tensor. Training mode
/// uses batch statistics and updates the running estimates; evaluation mode
/// uses the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.gamma"), &[channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.beta"), &[channels], vec![0.0; channels]),
            running_mean: Param::buffer(
                format!("{name}.running_mean"),
                &[channels],
                vec![0.0; channels],
            ),
            running_var: Param::buffer(
                format!("{name}.running_var"),
                &[channels],
                vec![1.0; channels],
            ),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }
}

impl Layer for BatchNorm2d {
    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = dims4(x);
        let mut y = x.clone();
        let hw = h * w;
        for i in 0..n {
            let row = y.row_mut(i);
            for ch in 0..c {
                let inv = 1.0 / (self.running_var.value[ch] + self.eps).sqrt();
                let scale = self.gamma.value[ch] * inv;
                let shift = self.beta.value[ch] - self.running_mean.value[ch] * scale;
                for v in &mut row[ch * hw..(ch + 1) * hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        y
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = dims4(x);
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..n {
            let row = x.row(i);
            for ch in 0..c {
                mean[ch] += row[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for i in 0..n {
            let row = x.row(i);
            for ch in 0..c {
                var[ch] += row[ch * hw..(ch + 1) * hw]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut xhat = x.clone();
        let mut y = x.clone();
        for i in 0..n {
            let xr = xhat.row_mut(i);
            for ch in 0..c {
                for v in &mut xr[ch * hw..(ch + 1) * hw] {
                    *v = (*v - mean[ch]) * inv_std[ch];
                }
            }
            let yr = y.row_mut(i);
            let xr = xhat.row(i);
            for ch in 0..c {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                for (yv, xv) in yr[ch * hw..(ch + 1) * hw]
                    .iter_mut()
                    .zip(&xr[ch * hw..(ch + 1) * hw])
                {
                    *yv = g * xv + b;
                }
            }
        }

        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for ch in 0..c {
            let rm = &mut self.running_mean.value[ch];
            *rm = (1.0 - self.momentum) * *rm + self.momentum * mean[ch];
            let rv = &mut self.running_var.value[ch];
            *rv = (1.0 - self.momentum) * *rv + self.momentum * var[ch] * unbias;
        }
        self.cache = Some(BnCache { xhat, inv_std });
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("batchnorm backward without forward");
        let (n, c, h, w) = dims4(grad);
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for i in 0..n {
            let g = grad.row(i);
            let xh = cache.xhat.row(i);
            for ch in 0..c {
                for (gv, xv) in g[ch * hw..(ch + 1) * hw]
                    .iter()
                    .zip(&xh[ch * hw..(ch + 1) * hw])
                {
                    sum_dy[ch] += gv;
                    sum_dy_xhat[ch] += gv * xv;
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad[ch] += sum_dy_xhat[ch];
            self.beta.grad[ch] += sum_dy[ch];
        }
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        for i in 0..n {
            let g = grad.row(i);
            let xh = cache.xhat.row(i);
            let d = dx.row_mut(i);
            for ch in 0..c {
                let k = self.gamma.value[ch] * cache.inv_std[ch] / m;
                for j in ch * hw..(ch + 1) * hw {
                    d[j] = k * (m * g[j] - sum_dy[ch] - xh[j] * sum_dy_xhat[ch]);
                }
            }
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Layer for Relu {
    fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data().iter().map(|v| *v > 0.0).collect();
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut dx = grad.clone();
        for (d, m) in dx.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *d = 0.0;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    out: Option<Tensor>,
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Layer for Sigmoid {
    fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = logistic(*v));
        y
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.infer(x);
        self.out = Some(y.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let y = self.out.take().expect("sigmoid backward without forward");
        let mut dx = grad.clone();
        for (d, s) in dx.data_mut().iter_mut().zip(y.data()) {
            *d *= s * (1.0 - s);
        }
        dx
    }
}

/// Fully connected layer on `(batch, features)` tensors.
#[derive(Debug, Clone)]
pub struct Linear {
    in_features: usize,
    out_features: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = (0..in_features * out_features)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Linear {
            in_features,
            out_features,
            weight: Param::new(format!("{name}.weight"), &[out_features, in_features], w),
            bias: Param::new(format!("{name}.bias"), &[out_features], vec![0.0; out_features]),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }
}

impl Layer for Linear {
    fn infer(&self, x: &Tensor) -> Tensor {
        let n = x.batch();
        assert_eq!(x.row_len(), self.in_features, "linear input width");
        let mut y = Tensor::zeros(&[n, self.out_features]);
        for i in 0..n {
            y.row_mut(i).copy_from_slice(&self.bias.value);
        }
        gemm(
            n,
            self.in_features,
            self.out_features,
            1.0,
            x.data(),
            false,
            &self.weight.value,
            true,
            1.0,
            y.data_mut(),
        );
        y
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.take().expect("linear backward without forward");
        let n = x.batch();
        gemm(
            self.out_features,
            n,
            self.in_features,
            1.0,
            grad.data(),
            true,
            x.data(),
            false,
            1.0,
            &mut self.weight.grad,
        );
        for i in 0..n {
            for (b, g) in self.bias.grad.iter_mut().zip(grad.row(i)) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            n,
            self.out_features,
            self.in_features,
            1.0,
            grad.data(),
            false,
            &self.weight.value,
            false,
            0.0,
            dx.data_mut(),
        );
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// `(N, C, H, W) -> (N, C)` spatial mean.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: Option<(usize, usize, usize, usize)>,
}

impl Layer for GlobalAvgPool {
    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = dims4(x);
        let hw = h * w;
        let mut y = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let xr = x.row(i);
            for (ch, out) in y.row_mut(i).iter_mut().enumerate() {
                *out = xr[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64;
            }
        }
        y
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = Some(dims4(x));
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (n, c, h, w) = self.in_shape.take().expect("pool backward without forward");
        let hw = h * w;
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        for i in 0..n {
            let g = grad.row(i).to_vec();
            for (ch, chunk) in dx.row_mut(i).chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v = g[ch] / hw as f64);
            }
        }
        dx
    }
}

/// Nearest-neighbour 2x spatial upsampling.
#[derive(Debug, Clone, Default)]
pub struct Upsample2x;

impl Layer for Upsample2x {
    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = dims4(x);
        let (h2, w2) = (2 * h, 2 * w);
        let mut y = Tensor::zeros(&[n, c, h2, w2]);
        for i in 0..n {
            let xr = x.row(i);
            let yr = y.row_mut(i);
            for ch in 0..c {
                for r in 0..h2 {
                    for col in 0..w2 {
                        yr[(ch * h2 + r) * w2 + col] = xr[(ch * h + r / 2) * w + col / 2];
                    }
                }
            }
        }
        y
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (n, c, h2, w2) = dims4(grad);
        let (h, w) = (h2 / 2, w2 / 2);
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        for i in 0..n {
            let g = grad.row(i);
            let d = dx.row_mut(i);
            for ch in 0..c {
                for r in 0..h2 {
                    for col in 0..w2 {
                        d[(ch * h + r / 2) * w + col / 2] += g[(ch * h2 + r) * w2 + col];
                    }
                }
            }
        }
        dx
    }
}
