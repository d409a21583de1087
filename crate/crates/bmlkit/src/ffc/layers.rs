//! Layers of the inpainting network: spatial convolutions, transposed
//! convolutions, instance normalization, activations, the spectral transform,
//! and the FFC layer/residual block built from them.
//!
//! Each layer provides `forward` and a hand-written `backward`; correctness
//! is pinned by finite-difference tests rather than an autodiff graph.

use super::fft::{irfft2_unstack, irfft2_unstack_adjoint, rfft2_stack, rfft2_stack_adjoint};
use super::tensor::{
    conv2d_backward, conv2d_forward, conv2d_input_grad, conv2d_weight_grad, pointwise_backward,
    pointwise_forward, Tensor4,
};

pub const NORM_EPS: f64 = 1e-5;

/// Spatial convolution, square kernel, zero padding.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: Tensor4,
    pub b: Vec<f64>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        conv2d_forward(x, &self.w, &self.b, self.stride, self.pad)
    }

    /// Returns (dx, dw, db).
    pub fn backward(&self, x: &Tensor4, dy: &Tensor4) -> (Tensor4, Tensor4, Vec<f64>) {
        conv2d_backward(x, &self.w, dy, self.stride, self.pad)
    }
}

/// Transposed convolution (stride-2 upsampling). The weight is stored as
/// `[c_in, c_out, k, k]`; the forward pass is the adjoint of a strided
/// convolution, which doubles the spatial size for stride 2, kernel 3,
/// padding 1, output padding 1.
#[derive(Debug, Clone)]
pub struct ConvTLayer {
    pub w: Tensor4,
    pub b: Vec<f64>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTLayer {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        // (in - 1) * stride - 2 * pad + k + output_padding, output_padding
        // fixed at stride - 1 so even sizes double exactly
        let k = self.w.h;
        let op = self.stride - 1;
        (
            (h - 1) * self.stride + k + op - 2 * self.pad,
            (w - 1) * self.stride + k + op - 2 * self.pad,
        )
    }

    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut y = conv2d_input_grad(x, &self.w, self.stride, self.pad, (oh, ow));
        let co = self.w.c;
        for n in 0..y.n {
            for c in 0..co {
                let bias = self.b[c];
                for v in y.plane_mut(n, c) {
                    *v += bias;
                }
            }
        }
        y
    }

    /// Returns (dx, dw, db).
    pub fn backward(&self, x: &Tensor4, dy: &Tensor4) -> (Tensor4, Tensor4, Vec<f64>) {
        let zero_bias = vec![0.0; self.w.n];
        let dx = conv2d_forward(dy, &self.w, &zero_bias, self.stride, self.pad);
        let (dw, _) = conv2d_weight_grad(dy, x, (self.w.c, self.w.h, self.w.w), self.stride, self.pad);
        let co = self.w.c;
        let mut db = vec![0.0; co];
        for n in 0..dy.n {
            for c in 0..co {
                db[c] += dy.plane(n, c).iter().sum::<f64>();
            }
        }
        (dx, dw, db)
    }
}

/// Per-sample, per-channel normalization with learnable affine.
#[derive(Debug, Clone)]
pub struct NormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub struct NormCache {
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
}

impl NormLayer {
    pub fn identity(c: usize) -> Self {
        Self {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
        }
    }

    pub fn forward(&self, x: &Tensor4) -> (Tensor4, NormCache) {
        let (n, c, h, w) = x.dims();
        let m = (h * w) as f64;
        let mut xhat = Tensor4::zeros(n, c, h, w);
        let mut inv_std = vec![0.0; n * c];
        let mut y = Tensor4::zeros(n, c, h, w);
        for bn in 0..n {
            for ch in 0..c {
                let xp = x.plane(bn, ch);
                let mean = xp.iter().sum::<f64>() / m;
                let var = xp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                let istd = 1.0 / (var + NORM_EPS).sqrt();
                inv_std[bn * c + ch] = istd;
                let (g, b) = (self.gamma[ch], self.beta[ch]);
                let xh = xhat.plane_mut(bn, ch);
                for (i, &v) in xp.iter().enumerate() {
                    xh[i] = (v - mean) * istd;
                }
                let yp = y.plane_mut(bn, ch);
                for (yv, &xv) in yp.iter_mut().zip(xhat.plane(bn, ch)) {
                    *yv = g * xv + b;
                }
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    /// Returns (dx, dgamma, dbeta).
    pub fn backward(&self, cache: &NormCache, dy: &Tensor4) -> (Tensor4, Vec<f64>, Vec<f64>) {
        let (n, c, h, w) = dy.dims();
        let m = (h * w) as f64;
        let mut dx = Tensor4::zeros(n, c, h, w);
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for bn in 0..n {
            for ch in 0..c {
                let dyp = dy.plane(bn, ch);
                let xh = cache.xhat.plane(bn, ch);
                let istd = cache.inv_std[bn * c + ch];
                let g = self.gamma[ch];
                let sum_dy: f64 = dyp.iter().sum();
                let sum_dy_xh: f64 = dyp.iter().zip(xh).map(|(d, x)| d * x).sum();
                dbeta[ch] += sum_dy;
                dgamma[ch] += sum_dy_xh;
                let k1 = sum_dy / m;
                let k2 = sum_dy_xh / m;
                let dxp = dx.plane_mut(bn, ch);
                for i in 0..dxp.len() {
                    dxp[i] = g * istd * (dyp[i] - k1 - xh[i] * k2);
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    for v in &mut y.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward(y: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&y.data) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn sigmoid_forward(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    for v in &mut y.data {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    y
}

pub fn sigmoid_backward(y: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&y.data) {
        *d *= v * (1.0 - v);
    }
    dx
}

/// Global branch of the FFC layer: pointwise mixing of the stacked
/// (real, imag) half spectrum between a forward and an inverse real FFT.
#[derive(Debug, Clone)]
pub struct SpectralLayer {
    /// `[2c, 2c]` row-major mixing matrix over stacked channels.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub channels: usize,
}

pub struct SpectralCache {
    pub s: Tensor4,
    pub full_w: usize,
}

impl SpectralLayer {
    /// Identity mixing: reproduces the input up to FFT rounding.
    pub fn identity(channels: usize) -> Self {
        let c2 = 2 * channels;
        let mut w = vec![0.0; c2 * c2];
        for i in 0..c2 {
            w[i * c2 + i] = 1.0;
        }
        Self {
            w,
            b: vec![0.0; c2],
            channels,
        }
    }

    pub fn forward(&self, x: &Tensor4) -> (Tensor4, SpectralCache) {
        debug_assert!(x.h >= 2 && x.w >= 2, "spectral transform needs h, w >= 2");
        let s = rfft2_stack(x);
        let t = pointwise_forward(&s, &self.w, &self.b, 2 * self.channels);
        let y = irfft2_unstack(&t, x.w);
        (y, SpectralCache { s, full_w: x.w })
    }

    /// Returns (dx, dw, db).
    pub fn backward(&self, cache: &SpectralCache, dy: &Tensor4) -> (Tensor4, Vec<f64>, Vec<f64>) {
        let dt = irfft2_unstack_adjoint(dy);
        let (ds, dw, db) = pointwise_backward(&cache.s, &self.w, &dt, 2 * self.channels);
        let dx = rfft2_stack_adjoint(&ds, cache.full_w);
        (dx, dw, db)
    }
}

/// Apply a spectral transform to a tensor: `irFFT2(pointwise(rFFT2(x)))`.
pub fn spectral_transform(x: &Tensor4, layer: &SpectralLayer) -> Tensor4 {
    layer.forward(x).0
}

/// Fast-Fourier-convolution layer. Channels split into a local part
/// (spatial 3x3 convolutions) and a global part (spectral transform), with
/// summed cross connections:
///
/// ```text
/// y_local  = conv(x_local)  + conv(x_global)
/// y_global = conv(x_local)  + spectral(x_global)
/// ```
///
/// With a zero global fraction the layer degenerates to a plain spatial
/// convolution.
#[derive(Debug, Clone)]
pub struct FfcLayer {
    pub c_local: usize,
    pub c_global: usize,
    pub l2l: ConvLayer,
    pub g2l: Option<ConvLayer>,
    pub l2g: Option<ConvLayer>,
    pub spectral: Option<SpectralLayer>,
}

pub struct FfcCache {
    pub x_local: Tensor4,
    pub x_global: Tensor4,
    pub spectral: Option<SpectralCache>,
}

/// Gradients of one FFC layer, mirroring its parameter tensors.
pub struct FfcGrads {
    pub l2l_w: Tensor4,
    pub l2l_b: Vec<f64>,
    pub g2l_w: Option<Tensor4>,
    pub g2l_b: Option<Vec<f64>>,
    pub l2g_w: Option<Tensor4>,
    pub l2g_b: Option<Vec<f64>>,
    pub spec_w: Option<Vec<f64>>,
    pub spec_b: Option<Vec<f64>>,
}

impl FfcLayer {
    /// Channel split: `c_global = round(alpha * c)`, remainder local.
    pub fn split(channels: usize, alpha: f64) -> (usize, usize) {
        let c_global = (alpha * channels as f64).round() as usize;
        (channels - c_global, c_global)
    }

    pub fn forward(&self, x: &Tensor4) -> (Tensor4, FfcCache) {
        assert_eq!(x.c, self.c_local + self.c_global, "ffc channel mismatch");
        let x_local = x.slice_channels(0, self.c_local);
        let x_global = x.slice_channels(self.c_local, x.c);

        let mut y_local = self.l2l.forward(&x_local);
        if let Some(g2l) = &self.g2l {
            y_local.add_assign(&g2l.forward(&x_global));
        }

        let mut spec_cache = None;
        let y = if self.c_global > 0 {
            let mut y_global = self.l2g.as_ref().expect("l2g present").forward(&x_local);
            let (spec_out, sc) = self.spectral.as_ref().expect("spectral present").forward(&x_global);
            y_global.add_assign(&spec_out);
            spec_cache = Some(sc);
            Tensor4::concat_channels(&y_local, &y_global)
        } else {
            y_local
        };
        (
            y,
            FfcCache {
                x_local,
                x_global,
                spectral: spec_cache,
            },
        )
    }

    /// Returns (dx, grads).
    pub fn backward(&self, cache: &FfcCache, dy: &Tensor4) -> (Tensor4, FfcGrads) {
        let dy_local = dy.slice_channels(0, self.c_local);
        let (dx_l_from_l2l, l2l_w, l2l_b) = self.l2l.backward(&cache.x_local, &dy_local);
        let mut dx_local = dx_l_from_l2l;

        let mut grads = FfcGrads {
            l2l_w,
            l2l_b,
            g2l_w: None,
            g2l_b: None,
            l2g_w: None,
            l2g_b: None,
            spec_w: None,
            spec_b: None,
        };

        let mut dx_global = Tensor4::zeros(dy.n, self.c_global, cache.x_global.h, cache.x_global.w);
        if let Some(g2l) = &self.g2l {
            let (dxg, gw, gb) = g2l.backward(&cache.x_global, &dy_local);
            dx_global.add_assign(&dxg);
            grads.g2l_w = Some(gw);
            grads.g2l_b = Some(gb);
        }
        if self.c_global > 0 {
            let dy_global = dy.slice_channels(self.c_local, dy.c);
            let (dxl, lw, lb) = self.l2g.as_ref().unwrap().backward(&cache.x_local, &dy_global);
            dx_local.add_assign(&dxl);
            grads.l2g_w = Some(lw);
            grads.l2g_b = Some(lb);
            let (dxg, sw, sb) = self
                .spectral
                .as_ref()
                .unwrap()
                .backward(cache.spectral.as_ref().unwrap(), &dy_global);
            dx_global.add_assign(&dxg);
            grads.spec_w = Some(sw);
            grads.spec_b = Some(sb);
        }

        let dx = if self.c_global > 0 {
            Tensor4::concat_channels(&dx_local, &dx_global)
        } else {
            dx_local
        };
        (dx, grads)
    }
}

/// Residual block: `y = relu(x + norm(ffc(x)))`.
#[derive(Debug, Clone)]
pub struct FfcBlock {
    pub ffc: FfcLayer,
    pub norm: NormLayer,
}

pub struct BlockCache {
    pub ffc: FfcCache,
    pub norm: NormCache,
    pub out: Tensor4,
}

pub struct BlockGrads {
    pub ffc: FfcGrads,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl FfcBlock {
    pub fn forward(&self, x: &Tensor4) -> (Tensor4, BlockCache) {
        let (f, ffc_cache) = self.ffc.forward(x);
        let (h, norm_cache) = self.norm.forward(&f);
        let mut sum = x.clone();
        sum.add_assign(&h);
        let out = relu_forward(&sum);
        (
            out.clone(),
            BlockCache {
                ffc: ffc_cache,
                norm: norm_cache,
                out,
            },
        )
    }

    pub fn backward(&self, cache: &BlockCache, dy: &Tensor4) -> (Tensor4, BlockGrads) {
        let dsum = relu_backward(&cache.out, dy);
        let (dh, dgamma, dbeta) = self.norm.backward(&cache.norm, &dsum);
        let (dx_ffc, ffc_grads) = self.ffc.backward(&cache.ffc, &dh);
        let mut dx = dsum;
        dx.add_assign(&dx_ffc);
        (
            dx,
            BlockGrads {
                ffc: ffc_grads,
                gamma: dgamma,
                beta: dbeta,
            },
        )
    }
}
