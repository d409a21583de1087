//! Training-free inpainting: harmonic extension of the boundary values into
//! the masked region by iterative 4-neighbor averaging.
//!
//! The solver initializes from a coarse-to-fine pyramid so that the
//! averaging sweeps at full resolution start close to the solution, then
//! runs Gauss-Seidel sweeps in raster order until the largest update drops
//! below the tolerance. Every intermediate state is an average of boundary
//! values and in-range interior values, so the discrete maximum principle
//! holds exactly at any iteration count.

use crate::detect::Inpainter;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};

#[derive(Debug, Clone)]
pub struct ClassicalInpainter {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for ClassicalInpainter {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iters: 10_000,
        }
    }
}

impl Inpainter for ClassicalInpainter {
    fn inpaint(&self, image: &GrayImage, mask: &BinaryMask) -> Result<GrayImage> {
        classical_inpaint(image, mask, self.tolerance, self.max_iters)
    }
}

/// Check that every masked pixel can reach an unmasked neighbor through the
/// mask, and collect boundary statistics (min, max, mean of the unmasked
/// pixels 4-adjacent to the mask).
fn boundary_stats(image: &GrayImage, mask: &BinaryMask) -> Result<(f64, f64, f64)> {
    let (w, h) = (mask.width(), mask.height());
    let mut reached = vec![false; w * h];
    let mut queue = std::collections::VecDeque::new();
    let mut bmin = f64::INFINITY;
    let mut bmax = f64::NEG_INFINITY;
    let mut bsum = 0.0;
    let mut bcount = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut touches = false;
            for (nx, ny) in neighbors(x, y, w, h) {
                if !mask.get(nx, ny) {
                    touches = true;
                    let v = image.get(nx, ny);
                    bmin = bmin.min(v);
                    bmax = bmax.max(v);
                    bsum += v;
                    bcount += 1;
                }
            }
            if touches && !reached[y * w + x] {
                reached[y * w + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    if bcount == 0 {
        return Err(Error::NoBoundary);
    }
    while let Some((x, y)) = queue.pop_front() {
        for (nx, ny) in neighbors(x, y, w, h) {
            if mask.get(nx, ny) && !reached[ny * w + nx] {
                reached[ny * w + nx] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) && !reached[y * w + x] {
                return Err(Error::NoBoundary);
            }
        }
    }
    Ok((bmin, bmax, bsum / bcount as f64))
}

fn neighbors(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let candidates = [
        (x.wrapping_sub(1), y),
        (x + 1, y),
        (x, y.wrapping_sub(1)),
        (x, y + 1),
    ];
    candidates.into_iter().filter(move |&(nx, ny)| nx < w && ny < h)
}

/// Raster-order Gauss-Seidel sweeps of 4-neighbor averaging over the masked
/// pixels. Returns the number of sweeps used.
fn relax(values: &mut [f64], mask: &BinaryMask, tolerance: f64, max_iters: usize) -> usize {
    let (w, h) = (mask.width(), mask.height());
    let masked: Vec<usize> = (0..w * h).filter(|&i| mask.data()[i]).collect();
    for iter in 0..max_iters {
        let mut max_update = 0.0f64;
        for &i in &masked {
            let (x, y) = (i % w, i / w);
            let mut sum = 0.0;
            let mut count = 0.0;
            if x > 0 {
                sum += values[i - 1];
                count += 1.0;
            }
            if x + 1 < w {
                sum += values[i + 1];
                count += 1.0;
            }
            if y > 0 {
                sum += values[i - w];
                count += 1.0;
            }
            if y + 1 < h {
                sum += values[i + w];
                count += 1.0;
            }
            let new = sum / count;
            let delta = (new - values[i]).abs();
            if delta > max_update {
                max_update = delta;
            }
            values[i] = new;
        }
        if max_update < tolerance {
            return iter + 1;
        }
    }
    max_iters
}

/// Downsample one level: a coarse pixel is masked only when all of its fine
/// children are masked; its value is the mean of the children.
fn coarsen(image: &[f64], mask: &BinaryMask) -> (Vec<f64>, BinaryMask) {
    let (w, h) = (mask.width(), mask.height());
    let (cw, ch) = ((w + 1) / 2, (h + 1) / 2);
    let mut cimg = vec![0.0; cw * ch];
    let mut cmask = BinaryMask::empty(cw, ch);
    for cy in 0..ch {
        for cx in 0..cw {
            let mut sum = 0.0;
            let mut count = 0.0;
            let mut all_masked = true;
            for dy in 0..2 {
                for dx in 0..2 {
                    let x = (2 * cx + dx).min(w - 1);
                    let y = (2 * cy + dy).min(h - 1);
                    sum += image[y * w + x];
                    count += 1.0;
                    if !mask.get(x, y) {
                        all_masked = false;
                    }
                }
            }
            cimg[cy * cw + cx] = sum / count;
            cmask.set(cx, cy, all_masked);
        }
    }
    (cimg, cmask)
}

/// Fill the masked region of `image` with the discrete harmonic extension of
/// its boundary values. Unmasked pixels are returned untouched.
pub fn classical_inpaint(
    image: &GrayImage,
    mask: &BinaryMask,
    tolerance: f64,
    max_iters: usize,
) -> Result<GrayImage> {
    if !mask.same_size_as_image(image) {
        return Err(Error::Shape("inpaint mask must match image".into()));
    }
    if mask.is_empty() {
        return Ok(image.clone());
    }
    let (bmin, bmax, bmean) = boundary_stats(image, mask)?;
    let (w, h) = (image.width(), image.height());

    // pyramid of (values, mask), finest first
    let mut levels: Vec<(Vec<f64>, BinaryMask)> = vec![(image.data().to_vec(), mask.clone())];
    while {
        let (v, m) = levels.last().unwrap();
        m.width().max(m.height()) > 16 && m.count() > 16 && v.len() > 256
    } {
        let (v, m) = levels.last().unwrap();
        let (cv, cm) = coarsen(v, m);
        if cm.is_empty() {
            break;
        }
        levels.push((cv, cm));
    }

    // coarsest: start from the boundary mean
    {
        let (v, m) = levels.last_mut().unwrap();
        for (val, &is_masked) in v.iter_mut().zip(m.data()) {
            if is_masked {
                *val = bmean.clamp(bmin, bmax);
            }
        }
        let m = m.clone();
        relax(v, &m, tolerance, max_iters);
    }

    // prolong coarse solutions down the pyramid, smoothing at each level
    for li in (0..levels.len() - 1).rev() {
        let (coarse_v, _) = levels[li + 1].clone();
        let (v, m) = &mut levels[li];
        let lw = m.width();
        let cw = (lw + 1) / 2;
        for (i, val) in v.iter_mut().enumerate() {
            if m.data()[i] {
                let (x, y) = (i % lw, i / lw);
                *val = coarse_v[(y / 2) * cw + x / 2].clamp(bmin, bmax);
            }
        }
        let m = m.clone();
        let iters = if li == 0 { max_iters } else { max_iters.min(200) };
        relax(&mut levels[li].0, &m, tolerance, iters);
    }

    let solved = &levels[0].0;
    let mut out = image.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        if mask.data()[i] {
            *o = solved[i];
        }
    }
    debug_assert_eq!(out.width(), w);
    debug_assert_eq!(out.height(), h);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_boundary_fills_with_constant() {
        let img = GrayImage::filled(16, 16, 0.37);
        let mut mask = BinaryMask::empty(16, 16);
        for y in 4..12 {
            for x in 4..12 {
                mask.set(x, y, true);
            }
        }
        let out = classical_inpaint(&img, &mask, 1e-9, 10_000).unwrap();
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mask_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = GrayImage::new(8, 8, (0..64).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let out = classical_inpaint(&img, &BinaryMask::empty(8, 8), 1e-6, 100).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn fully_masked_image_errors() {
        let img = GrayImage::filled(8, 8, 0.5);
        assert!(classical_inpaint(&img, &BinaryMask::full(8, 8), 1e-6, 100).is_err());
    }

    /// Dense oracle for the 1D Laplace system: tridiagonal elimination.
    fn solve_1d_laplace(left: f64, right: f64, n: usize) -> Vec<f64> {
        // u[i-1] - 2 u[i] + u[i+1] = 0, u[-1] = left, u[n] = right
        let mut a = vec![0.0; n]; // sub
        let mut b = vec![-2.0; n]; // diag
        let mut c = vec![0.0; n]; // super
        let mut d = vec![0.0; n];
        for i in 0..n {
            if i > 0 {
                a[i] = 1.0;
            }
            if i + 1 < n {
                c[i] = 1.0;
            }
        }
        d[0] -= left;
        d[n - 1] -= right;
        // Thomas algorithm
        for i in 1..n {
            let w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            d[i] -= w * d[i - 1];
        }
        let mut u = vec![0.0; n];
        u[n - 1] = d[n - 1] / b[n - 1];
        for i in (0..n - 1).rev() {
            u[i] = (d[i] - c[i] * u[i + 1]) / b[i];
        }
        u
    }

    #[test]
    fn one_dimensional_strip_matches_dense_solve() {
        // 1 x 34 image, ends fixed at 0 and 1, interior masked
        let n = 34usize;
        let mut data = vec![0.5; n];
        data[0] = 0.0;
        data[n - 1] = 1.0;
        let img = GrayImage::new(n, 1, data).unwrap();
        let mut mask = BinaryMask::empty(n, 1);
        for x in 1..n - 1 {
            mask.set(x, 0, true);
        }
        let out = classical_inpaint(&img, &mask, 1e-10, 200_000).unwrap();
        let exact = solve_1d_laplace(0.0, 1.0, n - 2);
        for (i, &e) in exact.iter().enumerate() {
            assert!((out.get(i + 1, 0) - e).abs() < 1e-6, "x={} {} vs {e}", i + 1, out.get(i + 1, 0));
        }
    }

    #[test]
    fn maximum_principle_holds_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (w, h) = (24usize, 20usize);
            let img = GrayImage::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
            // random blob mask away from the border
            let mut mask = BinaryMask::empty(w, h);
            let cx = rng.gen_range(6..w - 6) as f64;
            let cy = rng.gen_range(6..h - 6) as f64;
            let r = rng.gen_range(2.0..5.0);
            for y in 0..h {
                for x in 0..w {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    if d <= r {
                        mask.set(x, y, true);
                    }
                }
            }
            if mask.is_empty() {
                continue;
            }
            // boundary range
            let mut bmin = f64::INFINITY;
            let mut bmax = f64::NEG_INFINITY;
            for y in 0..h {
                for x in 0..w {
                    if mask.get(x, y) {
                        for (nx, ny) in super::neighbors(x, y, w, h) {
                            if !mask.get(nx, ny) {
                                bmin = bmin.min(img.get(nx, ny));
                                bmax = bmax.max(img.get(nx, ny));
                            }
                        }
                    }
                }
            }
            // tight iteration cap on purpose: the principle must hold even
            // before convergence
            let out = classical_inpaint(&img, &mask, 1e-12, 7).unwrap();
            for y in 0..h {
                for x in 0..w {
                    if mask.get(x, y) {
                        let v = out.get(x, y);
                        assert!(v >= bmin && v <= bmax, "({x},{y}) {v} not in [{bmin},{bmax}]");
                    } else {
                        assert_eq!(out.get(x, y).to_bits(), img.get(x, y).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn interior_is_harmonic_after_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (32usize, 32usize);
        let img = GrayImage::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let mut mask = BinaryMask::empty(w, h);
        for y in 8..24 {
            for x in 8..24 {
                mask.set(x, y, true);
            }
        }
        let out = classical_inpaint(&img, &mask, 1e-11, 500_000).unwrap();
        for y in 9..23 {
            for x in 9..23 {
                let lap = out.get(x - 1, y) + out.get(x + 1, y) + out.get(x, y - 1) + out.get(x, y + 1)
                    - 4.0 * out.get(x, y);
                assert!(lap.abs() < 1e-6, "laplacian at ({x},{y}) = {lap}");
            }
        }
    }
}
