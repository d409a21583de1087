//! Real 2D FFT packing for the spectral branch, plus the exact adjoints of
//! both directions (needed for backpropagation).
//!
//! Forward packing: `rfft2_stack` maps `[n, c, h, w]` to `[n, 2c, h, w/2+1]`
//! where channel `k` holds the real part of channel `k`'s half spectrum and
//! channel `c + k` the imaginary part. `irfft2_unstack` rebuilds the full
//! spectrum by Hermitian symmetry in the column axis and inverts, so the pair
//! is an exact round trip on spectra that came from real input.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::tensor::Tensor4;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, dir: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, dir))
}

/// In-place 2D FFT of a row-major `h x w` complex buffer.
fn fft2_inplace(buf: &mut [Complex<f64>], h: usize, w: usize, dir: FftDirection) {
    debug_assert_eq!(buf.len(), h * w);
    if w > 1 {
        let row_fft = plan(w, dir);
        for row in buf.chunks_exact_mut(w) {
            row_fft.process(row);
        }
    }
    if h > 1 {
        let col_fft = plan(h, dir);
        let mut col = vec![Complex::default(); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            col_fft.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
    }
}

pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Real-input 2D FFT, half spectrum packed as stacked (real, imag) channels.
pub fn rfft2_stack(x: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = x.dims();
    let wr = half_width(w);
    let mut out = Tensor4::zeros(n, 2 * c, h, wr);
    let mut buf = vec![Complex::default(); h * w];
    for bn in 0..n {
        for ch in 0..c {
            for (b, &v) in buf.iter_mut().zip(x.plane(bn, ch)) {
                *b = Complex::new(v, 0.0);
            }
            fft2_inplace(&mut buf, h, w, FftDirection::Forward);
            {
                let re = out.plane_mut(bn, ch);
                for u in 0..h {
                    for v in 0..wr {
                        re[u * wr + v] = buf[u * w + v].re;
                    }
                }
            }
            {
                let im = out.plane_mut(bn, c + ch);
                for u in 0..h {
                    for v in 0..wr {
                        im[u * wr + v] = buf[u * w + v].im;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`rfft2_stack`]: embed the half-spectrum cotangent with zeros
/// (no symmetrization), apply the unnormalized inverse transform, take the
/// real part.
pub fn rfft2_stack_adjoint(ds: &Tensor4, full_w: usize) -> Tensor4 {
    let (n, c2, h, wr) = ds.dims();
    debug_assert_eq!(wr, half_width(full_w));
    let c = c2 / 2;
    let mut out = Tensor4::zeros(n, c, h, full_w);
    let mut buf = vec![Complex::default(); h * full_w];
    for bn in 0..n {
        for ch in 0..c {
            buf.fill(Complex::default());
            let re = ds.plane(bn, ch);
            let im = ds.plane(bn, c + ch);
            for u in 0..h {
                for v in 0..wr {
                    buf[u * full_w + v] = Complex::new(re[u * wr + v], im[u * wr + v]);
                }
            }
            fft2_inplace(&mut buf, h, full_w, FftDirection::Inverse);
            for (o, b) in out.plane_mut(bn, ch).iter_mut().zip(&buf) {
                *o = b.re;
            }
        }
    }
    out
}

/// Inverse of the packed transform: rebuild the full spectrum from the half
/// columns by conjugate symmetry, inverse FFT, normalize by `1/(h*w)`, and
/// keep the real part.
pub fn irfft2_unstack(t: &Tensor4, full_w: usize) -> Tensor4 {
    let (n, c2, h, wr) = t.dims();
    debug_assert_eq!(wr, half_width(full_w));
    let c = c2 / 2;
    let norm = 1.0 / (h * full_w) as f64;
    let mut out = Tensor4::zeros(n, c, h, full_w);
    let mut buf = vec![Complex::default(); h * full_w];
    for bn in 0..n {
        for ch in 0..c {
            let re = t.plane(bn, ch);
            let im = t.plane(bn, c + ch);
            for u in 0..h {
                for v in 0..full_w {
                    buf[u * full_w + v] = if v < wr {
                        Complex::new(re[u * wr + v], im[u * wr + v])
                    } else {
                        // conj of the mirrored coefficient
                        let mu = (h - u) % h;
                        let mv = full_w - v;
                        Complex::new(re[mu * wr + mv], -im[mu * wr + mv])
                    };
                }
            }
            fft2_inplace(&mut buf, h, full_w, FftDirection::Inverse);
            for (o, b) in out.plane_mut(bn, ch).iter_mut().zip(&buf) {
                *o = b.re * norm;
            }
        }
    }
    out
}

/// Adjoint of [`irfft2_unstack`]: forward FFT of the cotangent, scaled by
/// `dup(v) / (h*w)` where `dup` is 2 for columns that were mirrored into the
/// full spectrum and 1 for the self-conjugate columns (v = 0, and v = w/2
/// for even w).
pub fn irfft2_unstack_adjoint(dy: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = dy.dims();
    let wr = half_width(w);
    let norm = 1.0 / (h * w) as f64;
    let mut out = Tensor4::zeros(n, 2 * c, h, wr);
    let mut buf = vec![Complex::default(); h * w];
    for bn in 0..n {
        for ch in 0..c {
            for (b, &v) in buf.iter_mut().zip(dy.plane(bn, ch)) {
                *b = Complex::new(v, 0.0);
            }
            fft2_inplace(&mut buf, h, w, FftDirection::Forward);
            {
                let re = out.plane_mut(bn, ch);
                for u in 0..h {
                    for v in 0..wr {
                        let dup = if v == 0 || (w % 2 == 0 && v == w / 2) { 1.0 } else { 2.0 };
                        re[u * wr + v] = dup * norm * buf[u * w + v].re;
                    }
                }
            }
            {
                let im = out.plane_mut(bn, c + ch);
                for u in 0..h {
                    for v in 0..wr {
                        let dup = if v == 0 || (w % 2 == 0 && v == w / 2) { 1.0 } else { 2.0 };
                        im[u * wr + v] = dup * norm * buf[u * w + v].im;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
        Tensor4::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn pack_unpack_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &(h, w) in &[(8usize, 8usize), (7, 5), (4, 6), (2, 2), (5, 8)] {
            let x = random_tensor(&mut rng, 2, 3, h, w);
            let back = irfft2_unstack(&rfft2_stack(&x), w);
            for (a, b) in x.data.iter().zip(&back.data) {
                assert!((a - b).abs() < 1e-10, "{h}x{w}: {a} vs {b}");
            }
        }
    }

    /// Adjoint identity `<A x, y> == <x, A^T y>` for both packing directions.
    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(h, w) in &[(6usize, 6usize), (5, 7), (4, 4), (3, 8)] {
            let wr = half_width(w);
            let x = random_tensor(&mut rng, 1, 2, h, w);
            let y = random_tensor(&mut rng, 1, 4, h, wr);
            let ax = rfft2_stack(&x);
            let aty = rfft2_stack_adjoint(&y, w);
            let lhs: f64 = ax.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data.iter().zip(&aty.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "rfft adjoint {h}x{w}");

            let t = random_tensor(&mut rng, 1, 4, h, wr);
            let z = random_tensor(&mut rng, 1, 2, h, w);
            let bt = irfft2_unstack(&t, w);
            let btz = irfft2_unstack_adjoint(&z);
            let lhs: f64 = bt.data.iter().zip(&z.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = t.data.iter().zip(&btz.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "irfft adjoint {h}x{w}");
        }
    }
}
