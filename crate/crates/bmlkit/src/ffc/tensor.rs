//! Dense NCHW tensors and the convolution kernels used by the inpainter.
//!
//! Everything is `f64`: gradients are checked against central finite
//! differences at 64-bit precision, and the slice sizes involved are small
//! enough that memory is not a concern.

/// 4-D array in (batch, channel, height, width) layout, contiguous row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length mismatch");
        Self { n, c, h, w, data }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let base = (n * self.c + c) * self.h * self.w;
        &self.data[base..base + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let base = (n * self.c + c) * self.h * self.w;
        let hw = self.h * self.w;
        &mut self.data[base..base + hw]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channels `[from, to)` as a new tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> Tensor4 {
        assert!(from <= to && to <= self.c);
        let cc = to - from;
        let mut out = Tensor4::zeros(self.n, cc, self.h, self.w);
        let hw = self.h * self.w;
        for n in 0..self.n {
            for c in 0..cc {
                let src = (n * self.c + from + c) * hw;
                let dst = (n * cc + c) * hw;
                out.data[dst..dst + hw].copy_from_slice(&self.data[src..src + hw]);
            }
        }
        out
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Tensor4 {
        assert!(a.n == b.n && a.h == b.h && a.w == b.w);
        let mut out = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
        let hw = a.h * a.w;
        for n in 0..a.n {
            for c in 0..a.c {
                let dst = (n * out.c + c) * hw;
                out.data[dst..dst + hw].copy_from_slice(a.plane(n, c));
            }
            for c in 0..b.c {
                let dst = (n * out.c + a.c + c) * hw;
                out.data[dst..dst + hw].copy_from_slice(b.plane(n, c));
            }
        }
        out
    }

    /// Add channels of `src` into channels `[from, from + src.c)` of `self`.
    pub fn add_into_channels(&mut self, from: usize, src: &Tensor4) {
        assert!(self.n == src.n && self.h == src.h && self.w == src.w);
        assert!(from + src.c <= self.c);
        let hw = self.h * self.w;
        for n in 0..self.n {
            for c in 0..src.c {
                let dst = (n * self.c + from + c) * hw;
                for (d, s) in self.data[dst..dst + hw].iter_mut().zip(src.plane(n, c)) {
                    *d += s;
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &Tensor4) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_len(in_len: usize, k: usize, pad: usize, stride: usize) -> usize {
    (in_len + 2 * pad - k) / stride + 1
}

/// Valid output range `[o0, o1)` along one axis for a given kernel offset:
/// positions where `o * stride + kpos - pad` stays inside `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, kpos: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = pad as isize - kpos as isize;
    let o0 = if lo <= 0 {
        0
    } else {
        ((lo + stride as isize - 1) / stride as isize) as usize
    };
    let hi = (in_len as isize - 1 + pad as isize - kpos as isize) / stride as isize;
    let o1 = if hi < 0 { 0 } else { (hi as usize + 1).min(out_len) };
    (o0.min(out_len), o1)
}

/// Direct convolution: `y[n,co] = b[co] + sum_ci w[co,ci] * x[n,ci]`.
pub fn conv2d_forward(x: &Tensor4, w: &Tensor4, b: &[f64], stride: usize, pad: usize) -> Tensor4 {
    let (n, ci, ih, iw) = x.dims();
    let (co, wci, kh, kw) = w.dims();
    assert_eq!(ci, wci, "conv channel mismatch");
    assert_eq!(b.len(), co);
    let oh = conv_out_len(ih, kh, pad, stride);
    let ow = conv_out_len(iw, kw, pad, stride);
    let mut y = Tensor4::zeros(n, co, oh, ow);
    for bn in 0..n {
        for c_out in 0..co {
            y.plane_mut(bn, c_out).fill(b[c_out]);
            for c_in in 0..ci {
                let xp_base = (bn * ci + c_in) * ih * iw;
                let yp_base = (bn * co + c_out) * oh * ow;
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(oh, ih, ky, pad, stride);
                    for kx in 0..kw {
                        let wv = w.data[((c_out * ci + c_in) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(ow, iw, kx, pad, stride);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let xrow = xp_base + iy * iw;
                            let yrow = yp_base + oy * ow;
                            if stride == 1 {
                                let xoff = xrow + ox0 + kx - pad;
                                let ys = &mut y.data[yrow + ox0..yrow + ox1];
                                let xs = &x.data[xoff..xoff + (ox1 - ox0)];
                                for (yv, xv) in ys.iter_mut().zip(xs) {
                                    *yv += wv * xv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * stride + kx - pad;
                                    y.data[yrow + ox] += wv * x.data[xrow + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv2d_forward`] with respect to input, weights, and bias.
pub fn conv2d_backward(
    x: &Tensor4,
    w: &Tensor4,
    dy: &Tensor4,
    stride: usize,
    pad: usize,
) -> (Tensor4, Tensor4, Vec<f64>) {
    let dx = conv2d_input_grad(dy, w, stride, pad, (x.h, x.w));
    let (dw, db) = conv2d_weight_grad(x, dy, (w.c, w.h, w.w), stride, pad);
    (dx, dw, db)
}

/// Adjoint of the convolution with respect to its input: scatter `dy`
/// through the kernel. Also serves as the forward pass of a transposed
/// convolution (`dy` playing the input role, `out_hw` the upsampled size).
pub fn conv2d_input_grad(
    dy: &Tensor4,
    w: &Tensor4,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Tensor4 {
    let (n, co, oh, ow) = dy.dims();
    let (wco, ci, kh, kw) = w.dims();
    assert_eq!(co, wco, "conv channel mismatch");
    let (ih, iw) = out_hw;
    let mut dx = Tensor4::zeros(n, ci, ih, iw);
    for bn in 0..n {
        for c_out in 0..co {
            let dyp = (bn * co + c_out) * oh * ow;
            for c_in in 0..ci {
                let dxp = (bn * ci + c_in) * ih * iw;
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(oh, ih, ky, pad, stride);
                    for kx in 0..kw {
                        let wv = w.data[((c_out * ci + c_in) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(ow, iw, kx, pad, stride);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let dyrow = dyp + oy * ow;
                            let dxrow = dxp + iy * iw;
                            if stride == 1 {
                                let xoff = dxrow + ox0 + kx - pad;
                                let ds = &dy.data[dyrow + ox0..dyrow + ox1];
                                let xs = &mut dx.data[xoff..xoff + (ox1 - ox0)];
                                for (xv, dv) in xs.iter_mut().zip(ds) {
                                    *xv += wv * dv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * stride + kx - pad;
                                    dx.data[dxrow + ix] += wv * dy.data[dyrow + ox];
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

/// Weight and bias gradients: correlation of the input with `dy`.
pub fn conv2d_weight_grad(
    x: &Tensor4,
    dy: &Tensor4,
    w_dims: (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Tensor4, Vec<f64>) {
    let (n, ci, ih, iw) = x.dims();
    let (_, co, oh, ow) = dy.dims();
    let (wci, kh, kw) = w_dims;
    assert_eq!(ci, wci);
    let mut dw = Tensor4::zeros(co, ci, kh, kw);
    let mut db = vec![0.0; co];
    for bn in 0..n {
        for c_out in 0..co {
            let dyp = (bn * co + c_out) * oh * ow;
            db[c_out] += dy.data[dyp..dyp + oh * ow].iter().sum::<f64>();
            for c_in in 0..ci {
                let xp = (bn * ci + c_in) * ih * iw;
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(oh, ih, ky, pad, stride);
                    for kx in 0..kw {
                        let (ox0, ox1) = valid_range(ow, iw, kx, pad, stride);
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let dyrow = dyp + oy * ow;
                            let xrow = xp + iy * iw;
                            if stride == 1 {
                                let xoff = xrow + ox0 + kx - pad;
                                let ds = &dy.data[dyrow + ox0..dyrow + ox1];
                                let xs = &x.data[xoff..xoff + (ox1 - ox0)];
                                acc += ds.iter().zip(xs).map(|(d, xv)| d * xv).sum::<f64>();
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * stride + kx - pad;
                                    acc += dy.data[dyrow + ox] * x.data[xrow + ix];
                                }
                            }
                        }
                        dw.data[((c_out * ci + c_in) * kh + ky) * kw + kx] += acc;
                    }
                }
            }
        }
    }
    (dw, db)
}

/// 1x1 channel mixing: `y[n,o,p] = b[o] + sum_i w[o*ci + i] * x[n,i,p]`.
pub fn pointwise_forward(x: &Tensor4, w: &[f64], b: &[f64], co: usize) -> Tensor4 {
    let (n, ci, h, wd) = x.dims();
    assert_eq!(w.len(), co * ci);
    assert_eq!(b.len(), co);
    let hw = h * wd;
    let mut y = Tensor4::zeros(n, co, h, wd);
    for bn in 0..n {
        for o in 0..co {
            let yp = y.plane_mut(bn, o);
            yp.fill(b[o]);
            for i in 0..ci {
                let wv = w[o * ci + i];
                if wv == 0.0 {
                    continue;
                }
                let xp = &x.data[(bn * ci + i) * hw..(bn * ci + i + 1) * hw];
                for (yv, xv) in yp.iter_mut().zip(xp) {
                    *yv += wv * xv;
                }
            }
        }
    }
    y
}

/// Gradients of [`pointwise_forward`].
pub fn pointwise_backward(
    x: &Tensor4,
    w: &[f64],
    dy: &Tensor4,
    co: usize,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let (n, ci, h, wd) = x.dims();
    let hw = h * wd;
    let mut dx = Tensor4::zeros(n, ci, h, wd);
    let mut dw = vec![0.0; co * ci];
    let mut db = vec![0.0; co];
    for bn in 0..n {
        for o in 0..co {
            let dyp = dy.plane(bn, o);
            db[o] += dyp.iter().sum::<f64>();
            for i in 0..ci {
                let wv = w[o * ci + i];
                let xp = x.plane(bn, i);
                let mut acc = 0.0;
                let dxp = &mut dx.data[(bn * ci + i) * hw..(bn * ci + i + 1) * hw];
                for ((dv, xv), dxv) in dyp.iter().zip(xp).zip(dxp.iter_mut()) {
                    acc += dv * xv;
                    *dxv += wv * dv;
                }
                dw[o * ci + i] += acc;
            }
        }
    }
    (dx, dw, db)
}
