//! Forward/backward implementations of the layer set. Each layer caches
//! what its backward pass needs during a train-mode forward; eval-mode
//! forwards skip the caches.

use super::tensor::{Parameter, Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// 2D cross-correlation with zero padding and square kernels. Output dims
/// follow floor arithmetic: `(H + 2p - k) / s + 1`, which must be positive.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Parameter<T>, // [out_c, in_c, k, k]
    pub bias: Option<Parameter<T>>,
    pub stride: usize,
    pub padding: usize,
    cache_x: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        weight: Parameter<T>,
        bias: Option<Parameter<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Self, NnError> {
        let shape = weight.value.shape().to_vec();
        match shape[..] {
            [_, _, kh, kw] if kh == kw && kh >= 1 => {}
            _ => {
                return Err(NnError::Shape {
                    context: format!("conv weight {} must be [out, in, k, k]", weight.name),
                    found: shape,
                })
            }
        }
        if let Some(b) = &bias {
            if b.value.shape() != [shape[0]] {
                return Err(NnError::Shape {
                    context: format!("conv bias {} must be [out_channels]", b.name),
                    found: b.value.shape().to_vec(),
                });
            }
        }
        assert!(stride >= 1, "stride must be at least 1");
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
            cache_x: None,
        })
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let k = self.kernel();
        let (s, p) = (self.stride, self.padding);
        if h + 2 * p < k || w + 2 * p < k {
            return Err(NnError::OutputDims { h, w, k, s, p });
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(NnError::Channels {
                input: c,
                expected: self.in_channels(),
            });
        }
        let (oh, ow) = self.out_dims(h, w)?;
        let (oc, k, s, p) = (self.out_channels(), self.kernel(), self.stride, self.padding);
        let xd = x.data();
        let wd = self.weight.value.data();
        let mut out = vec![T::zero(); n * oc * oh * ow];

        for b in 0..n {
            for o in 0..oc {
                let out_base = (b * oc + o) * oh * ow;
                if let Some(bias) = &self.bias {
                    out[out_base..out_base + oh * ow].fill(bias.value.data()[o]);
                }
                for ci in 0..c {
                    let x_base = (b * c + ci) * h * w;
                    let w_base = (o * c + ci) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = wd[w_base + ky * k + kx];
                            if s == 1 {
                                let oy0 = p.saturating_sub(ky);
                                let oy1 = oh.min((h + p).saturating_sub(ky));
                                let ox0 = p.saturating_sub(kx);
                                let ox1 = ow.min((w + p).saturating_sub(kx));
                                if oy0 >= oy1 || ox0 >= ox1 {
                                    continue;
                                }
                                let len = ox1 - ox0;
                                let col0 = ox0 + kx - p;
                                for oy in oy0..oy1 {
                                    let iy = oy + ky - p;
                                    let dst = &mut out[out_base + oy * ow + ox0..][..len];
                                    let src = &xd[x_base + iy * w + col0..][..len];
                                    for i in 0..len {
                                        dst[i] = dst[i] + wv * src[i];
                                    }
                                }
                            } else {
                                for oy in 0..oh {
                                    let iy = oy * s + ky;
                                    if iy < p || iy - p >= h {
                                        continue;
                                    }
                                    let x_row = x_base + (iy - p) * w;
                                    let o_row = out_base + oy * ow;
                                    for ox in 0..ow {
                                        let ix = ox * s + kx;
                                        if ix < p || ix - p >= w {
                                            continue;
                                        }
                                        out[o_row + ox] = out[o_row + ox] + wv * xd[x_row + ix - p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        if mode == Mode::Train {
            self.cache_x = Some(x.clone());
        }
        Tensor::from_vec(&[n, oc, oh, ow], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache_x.take().ok_or(NnError::NoCache)?;
        let (n, c, h, w) = x.dims4()?;
        let (gn, goc, oh, ow) = grad_out.dims4()?;
        let (oc, k, s, p) = (self.out_channels(), self.kernel(), self.stride, self.padding);
        if gn != n || goc != oc {
            return Err(NnError::Shape {
                context: "conv upstream gradient".into(),
                found: grad_out.shape().to_vec(),
            });
        }
        let xd = x.data();
        let gd = grad_out.data();
        let wd = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        let mut gx = vec![T::zero(); n * c * h * w];

        if let Some(bias) = &mut self.bias {
            let gb = bias.grad.data_mut();
            for b in 0..n {
                for o in 0..oc {
                    let g_base = (b * oc + o) * oh * ow;
                    gb[o] = gb[o] + gd[g_base..g_base + oh * ow].iter().copied().sum::<T>();
                }
            }
        }

        for b in 0..n {
            for o in 0..oc {
                let g_base = (b * oc + o) * oh * ow;
                for ci in 0..c {
                    let x_base = (b * c + ci) * h * w;
                    let w_base = (o * c + ci) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = wd[w_base + ky * k + kx];
                            let mut acc = T::zero();
                            if s == 1 {
                                let oy0 = p.saturating_sub(ky);
                                let oy1 = oh.min((h + p).saturating_sub(ky));
                                let ox0 = p.saturating_sub(kx);
                                let ox1 = ow.min((w + p).saturating_sub(kx));
                                if oy0 >= oy1 || ox0 >= ox1 {
                                    continue;
                                }
                                let len = ox1 - ox0;
                                let col0 = ox0 + kx - p;
                                for oy in oy0..oy1 {
                                    let iy = oy + ky - p;
                                    let g_row = &gd[g_base + oy * ow + ox0..][..len];
                                    let x_row = &xd[x_base + iy * w + col0..][..len];
                                    for i in 0..len {
                                        acc = acc + g_row[i] * x_row[i];
                                    }
                                    let gx_row = &mut gx[x_base + iy * w + col0..][..len];
                                    for i in 0..len {
                                        gx_row[i] = gx_row[i] + wv * g_row[i];
                                    }
                                }
                            } else {
                                for oy in 0..oh {
                                    let iy = oy * s + ky;
                                    if iy < p || iy - p >= h {
                                        continue;
                                    }
                                    let x_row = x_base + (iy - p) * w;
                                    let g_row = g_base + oy * ow;
                                    for ox in 0..ow {
                                        let ix = ox * s + kx;
                                        if ix < p || ix - p >= w {
                                            continue;
                                        }
                                        acc = acc + gd[g_row + ox] * xd[x_row + ix - p];
                                        gx[x_row + ix - p] =
                                            gx[x_row + ix - p] + wv * gd[g_row + ox];
                                    }
                                }
                            }
                            gw[w_base + ky * k + kx] = gw[w_base + ky * k + kx] + acc;
                        }
                    }
                }
            }
        }

        Tensor::from_vec(&[n, c, h, w], gx)
    }
}

/// Elementwise `max(0, x)`; backward masks by `x > 0`, so exact zeros route
/// no gradient.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let data: Vec<T> = x
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        if mode == Mode::Train {
            self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        }
        Tensor::from_vec(x.shape(), data)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mask = self.mask.take().ok_or(NnError::NoCache)?;
        if mask.len() != grad_out.numel() {
            return Err(NnError::Shape {
                context: "relu upstream gradient".into(),
                found: grad_out.shape().to_vec(),
            });
        }
        let data: Vec<T> = grad_out
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor::from_vec(grad_out.shape(), data)
    }
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>, // per channel
    dims: (usize, usize, usize, usize),
}

/// Per-channel batch normalization over `(batch, H, W)` with biased batch
/// variance; running statistics are blended with momentum 0.1 in train mode
/// and substituted for batch statistics in eval mode.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    prefix: String,
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        let prefix = prefix.into();
        BatchNorm2d {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor::filled(&[channels], T::one())),
            beta: Parameter::new(format!("{prefix}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            prefix,
            cache: None,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.numel()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(NnError::Channels {
                input: c,
                expected: self.channels(),
            });
        }
        let plane = h * w;
        let xd = x.data();
        let gd = self.gamma.value.data();
        let bd = self.beta.value.data();
        let eps = T::from_f64(self.eps);
        let mut out = vec![T::zero(); xd.len()];

        match mode {
            Mode::Eval => {
                let rm = self.running_mean.data();
                let rv = self.running_var.data();
                for b in 0..n {
                    for ci in 0..c {
                        let base = (b * c + ci) * plane;
                        let inv = T::one() / (rv[ci] + eps).sqrt();
                        let (m, g, be) = (rm[ci], gd[ci], bd[ci]);
                        for i in 0..plane {
                            out[base + i] = (xd[base + i] - m) * inv * g + be;
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train => {
                if n < 2 {
                    return Err(NnError::SmallBatch { batch: n });
                }
                let m_count = T::from_f64((n * plane) as f64);
                let mut x_hat = vec![T::zero(); xd.len()];
                let mut inv_std = vec![T::zero(); c];
                let mom = T::from_f64(self.momentum);
                for ci in 0..c {
                    let mut sum = T::zero();
                    let mut sum_sq = T::zero();
                    for b in 0..n {
                        let base = (b * c + ci) * plane;
                        for &v in &xd[base..base + plane] {
                            sum = sum + v;
                            sum_sq = sum_sq + v * v;
                        }
                    }
                    let mean = sum / m_count;
                    let var = (sum_sq / m_count - mean * mean).max(T::zero());
                    let inv = T::one() / (var + eps).sqrt();
                    inv_std[ci] = inv;
                    let (g, be) = (gd[ci], bd[ci]);
                    for b in 0..n {
                        let base = (b * c + ci) * plane;
                        for i in 0..plane {
                            let xh = (xd[base + i] - mean) * inv;
                            x_hat[base + i] = xh;
                            out[base + i] = xh * g + be;
                        }
                    }
                    let rm = self.running_mean.data_mut();
                    rm[ci] = (T::one() - mom) * rm[ci] + mom * mean;
                    let rv = self.running_var.data_mut();
                    rv[ci] = (T::one() - mom) * rv[ci] + mom * var;
                }
                self.cache = Some(BnCache {
                    x_hat,
                    inv_std,
                    dims: (n, c, h, w),
                });
            }
        }
        Tensor::from_vec(&[n, c, h, w], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.take().ok_or(NnError::NoCache)?;
        let (n, c, h, w) = cache.dims;
        if grad_out.shape() != [n, c, h, w] {
            return Err(NnError::Shape {
                context: "batch norm upstream gradient".into(),
                found: grad_out.shape().to_vec(),
            });
        }
        let plane = h * w;
        let m_count = T::from_f64((n * plane) as f64);
        let gd = grad_out.data();
        let gamma = self.gamma.value.data();
        let g_gamma = self.gamma.grad.data_mut();
        let g_beta = self.beta.grad.data_mut();
        let mut gx = vec![T::zero(); gd.len()];

        for ci in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for b in 0..n {
                let base = (b * c + ci) * plane;
                for i in 0..plane {
                    let g = gd[base + i];
                    sum_g = sum_g + g;
                    sum_gx = sum_gx + g * cache.x_hat[base + i];
                }
            }
            g_beta[ci] = g_beta[ci] + sum_g;
            g_gamma[ci] = g_gamma[ci] + sum_gx;
            let scale = gamma[ci] * cache.inv_std[ci] / m_count;
            for b in 0..n {
                let base = (b * c + ci) * plane;
                for i in 0..plane {
                    let g = gd[base + i];
                    gx[base + i] =
                        scale * (m_count * g - sum_g - cache.x_hat[base + i] * sum_gx);
                }
            }
        }
        Tensor::from_vec(&[n, c, h, w], gx)
    }
}

#[derive(Debug, Clone)]
struct PoolCache {
    argmax: Vec<usize>, // flat input index per output element
    in_shape: [usize; 4],
}

/// Max pooling with square windows. The `2x2` stride-2 case demands even
/// spatial dims; other configurations floor. Gradient routes to the first
/// row-major maximum of each window.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub k: usize,
    pub s: usize,
    pub p: usize,
    cache: Option<PoolCache>,
}

impl MaxPool2d {
    pub fn new(k: usize, s: usize, p: usize) -> Self {
        assert!(k >= 1 && s >= 1 && p < k, "degenerate pooling window");
        MaxPool2d {
            k,
            s,
            p,
            cache: None,
        }
    }

    fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let (k, s, p) = (self.k, self.s, self.p);
        if k == 2 && s == 2 && p == 0 && (h % 2 != 0 || w % 2 != 0) {
            return Err(NnError::OddDims { h, w });
        }
        if h + 2 * p < k || w + 2 * p < k {
            return Err(NnError::OutputDims { h, w, k, s, p });
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (n, c, h, w) = x.dims4()?;
        let (oh, ow) = self.out_dims(h, w)?;
        let (k, s, p) = (self.k, self.s, self.p);
        let xd = x.data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];

        for bc in 0..n * c {
            let x_base = bc * h * w;
            let o_base = bc * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for ky in 0..k {
                        let iy = oy * s + ky;
                        if iy < p || iy - p >= h {
                            continue;
                        }
                        let row = x_base + (iy - p) * w;
                        for kx in 0..k {
                            let ix = ox * s + kx;
                            if ix < p || ix - p >= w {
                                continue;
                            }
                            let v = xd[row + ix - p];
                            if v > best {
                                best = v;
                                best_idx = row + ix - p;
                            }
                        }
                    }
                    debug_assert!(best_idx != usize::MAX, "window fully in padding");
                    out[o_base + oy * ow + ox] = best;
                    argmax[o_base + oy * ow + ox] = best_idx;
                }
            }
        }

        if mode == Mode::Train {
            self.cache = Some(PoolCache {
                argmax,
                in_shape: [n, c, h, w],
            });
        }
        Tensor::from_vec(&[n, c, oh, ow], out)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.take().ok_or(NnError::NoCache)?;
        if grad_out.numel() != cache.argmax.len() {
            return Err(NnError::Shape {
                context: "max pool upstream gradient".into(),
                found: grad_out.shape().to_vec(),
            });
        }
        let [n, c, h, w] = cache.in_shape;
        let mut gx = vec![T::zero(); n * c * h * w];
        for (i, &g) in grad_out.data().iter().enumerate() {
            let idx = cache.argmax[i];
            gx[idx] = gx[idx] + g;
        }
        Tensor::from_vec(&[n, c, h, w], gx)
    }
}

/// `[N, C, H, W] -> [N, C*H*W]`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cache_shape: Option<[usize; 4]>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (n, c, h, w) = x.dims4()?;
        if mode == Mode::Train {
            self.cache_shape = Some([n, c, h, w]);
        }
        x.reshaped(&[n, c * h * w])
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let [n, c, h, w] = self.cache_shape.take().ok_or(NnError::NoCache)?;
        grad_out.reshaped(&[n, c, h, w])
    }
}

/// Affine map `y = W x + b` with `W` stored `[out, in]` row-major.
#[derive(Debug, Clone)]
pub struct FullyConnected<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    cache_x: Option<Tensor<T>>,
}

impl<T: Scalar> FullyConnected<T> {
    pub fn new(weight: Parameter<T>, bias: Parameter<T>) -> Result<Self, NnError> {
        let shape = weight.value.shape().to_vec();
        if shape.len() != 2 {
            return Err(NnError::Shape {
                context: format!("fc weight {} must be [out, in]", weight.name),
                found: shape,
            });
        }
        if bias.value.shape() != [shape[0]] {
            return Err(NnError::Shape {
                context: format!("fc bias {} must be [out]", bias.name),
                found: bias.value.shape().to_vec(),
            });
        }
        Ok(FullyConnected {
            weight,
            bias,
            cache_x: None,
        })
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (n, f) = x.dims2()?;
        let (of, inf) = (self.out_features(), self.in_features());
        if f != inf {
            return Err(NnError::Shape {
                context: format!("fc expects {inf} input features"),
                found: x.shape().to_vec(),
            });
        }
        let xd = x.data();
        let wd = self.weight.value.data();
        let bd = self.bias.value.data();
        let mut out = vec![T::zero(); n * of];
        for b in 0..n {
            let x_row = &xd[b * inf..(b + 1) * inf];
            for o in 0..of {
                let w_row = &wd[o * inf..(o + 1) * inf];
                let mut acc = bd[o];
                for i in 0..inf {
                    acc = acc + x_row[i] * w_row[i];
                }
                out[b * of + o] = acc;
            }
        }
        if mode == Mode::Train {
            self.cache_x = Some(x.clone());
        }
        Tensor::from_vec(&[n, of], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache_x.take().ok_or(NnError::NoCache)?;
        let (n, inf) = x.dims2()?;
        let of = self.out_features();
        if grad_out.shape() != [n, of] {
            return Err(NnError::Shape {
                context: "fc upstream gradient".into(),
                found: grad_out.shape().to_vec(),
            });
        }
        let xd = x.data();
        let gd = grad_out.data();
        let wd = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        let mut gx = vec![T::zero(); n * inf];
        for b in 0..n {
            let x_row = &xd[b * inf..(b + 1) * inf];
            let gx_row = &mut gx[b * inf..(b + 1) * inf];
            for o in 0..of {
                let g = gd[b * of + o];
                gb[o] = gb[o] + g;
                let w_row = &wd[o * inf..(o + 1) * inf];
                let gw_row = &mut gw[o * inf..(o + 1) * inf];
                for i in 0..inf {
                    gx_row[i] = gx_row[i] + g * w_row[i];
                    gw_row[i] = gw_row[i] + g * x_row[i];
                }
            }
        }
        Tensor::from_vec(&[n, inf], gx)
    }
}

/// `[N, C, H, W] -> [N, C]` per-channel spatial mean.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cache_shape: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (n, c, h, w) = x.dims4()?;
        let plane = T::from_f64((h * w) as f64);
        let xd = x.data();
        let mut out = vec![T::zero(); n * c];
        for bc in 0..n * c {
            let base = bc * h * w;
            out[bc] = xd[base..base + h * w].iter().copied().sum::<T>() / plane;
        }
        if mode == Mode::Train {
            self.cache_shape = Some([n, c, h, w]);
        }
        Tensor::from_vec(&[n, c], out)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let [n, c, h, w] = self.cache_shape.take().ok_or(NnError::NoCache)?;
        if grad_out.shape() != [n, c] {
            return Err(NnError::Shape {
                context: "global average pool upstream gradient".into(),
                found: grad_out.shape().to_vec(),
            });
        }
        let plane = T::from_f64((h * w) as f64);
        let gd = grad_out.data();
        let mut gx = vec![T::zero(); n * c * h * w];
        for bc in 0..n * c {
            let g = gd[bc] / plane;
            gx[bc * h * w..(bc + 1) * h * w].fill(g);
        }
        Tensor::from_vec(&[n, c, h, w], gx)
    }
}

/// Two 3x3 conv+BN pairs with a ReLU between, an identity or projected
/// shortcut added before the final ReLU: `out = relu(F(x) + shortcut(x))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub projection: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    relu_mid: Relu,
    relu_out: Relu,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(
        conv1: Conv2d<T>,
        bn1: BatchNorm2d<T>,
        conv2: Conv2d<T>,
        bn2: BatchNorm2d<T>,
        projection: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    ) -> Self {
        ResidualBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            projection,
            relu_mid: Relu::new(),
            relu_out: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let f = self.conv1.forward(x, mode)?;
        let f = self.bn1.forward(&f, mode)?;
        let f = self.relu_mid.forward(&f, mode)?;
        let f = self.conv2.forward(&f, mode)?;
        let f = self.bn2.forward(&f, mode)?;
        let shortcut = match &mut self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(x, mode)?;
                bn.forward(&s, mode)?
            }
            None => x.clone(),
        };
        if shortcut.shape() != f.shape() {
            return Err(NnError::Shape {
                context: format!("residual shortcut vs branch {:?}", f.shape()),
                found: shortcut.shape().to_vec(),
            });
        }
        let sum: Vec<T> = f
            .data()
            .iter()
            .zip(shortcut.data())
            .map(|(&a, &b)| a + b)
            .collect();
        let sum = Tensor::from_vec(f.shape(), sum)?;
        self.relu_out.forward(&sum, mode)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let d_sum = self.relu_out.backward(grad_out)?;
        let d = self.bn2.backward(&d_sum)?;
        let d = self.conv2.backward(&d)?;
        let d = self.relu_mid.backward(&d)?;
        let d = self.bn1.backward(&d)?;
        let d_branch = self.conv1.backward(&d)?;
        let d_short = match &mut self.projection {
            Some((conv, bn)) => {
                let d = bn.backward(&d_sum)?;
                conv.backward(&d)?
            }
            None => d_sum,
        };
        let gx: Vec<T> = d_branch
            .data()
            .iter()
            .zip(d_short.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_vec(d_branch.shape(), gx)
    }
}
