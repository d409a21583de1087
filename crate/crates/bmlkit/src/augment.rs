//! Flips, multiplicative bias fields, and histogram equalization.
//!
//! Flips and the bias field are training-time augmentations; histogram
//! equalization is also the contrast-enhancement step of the detection
//! pipeline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::{BinaryMask, GrayImage};
use crate::rng::{child_rng, stream};

/// Mirror axis. `Horizontal` mirrors columns (left/right), `Vertical` mirrors
/// rows (top/bottom).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

pub fn flip_image(image: &GrayImage, axis: FlipAxis) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = match axis {
                FlipAxis::Horizontal => (w - 1 - x, y),
                FlipAxis::Vertical => (x, h - 1 - y),
            };
            out.set(x, y, image.get(sx, sy));
        }
    }
    out
}

pub fn flip_mask(mask: &BinaryMask, axis: FlipAxis) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = BinaryMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = match axis {
                FlipAxis::Horizontal => (w - 1 - x, y),
                FlipAxis::Vertical => (x, h - 1 - y),
            };
            out.set(x, y, mask.get(sx, sy));
        }
    }
    out
}

/// Random multiplicative bias field: `exp` of a low-order 2D polynomial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasFieldParams {
    /// Polynomial order (total degree).
    pub order: usize,
    /// Coefficients are drawn uniformly from `[-bound, bound]`.
    pub bound: f64,
    pub seed: u64,
}

impl Default for BiasFieldParams {
    fn default() -> Self {
        Self {
            order: 3,
            bound: 0.15,
            seed: 0,
        }
    }
}

/// Monomial count of a degree-`order` polynomial in two variables.
pub fn coeff_count(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

/// Apply `clip(image * exp(P(u, v)), 0, 1)` for explicit coefficients.
///
/// Monomials are ordered by total degree, highest `u` power first within a
/// degree: `1, u, v, u^2, uv, v^2, ...`. Coordinates are pixel centers mapped
/// to `[-1, 1]`.
pub fn bias_field_from_coeffs(image: &GrayImage, order: usize, coeffs: &[f64]) -> GrayImage {
    assert_eq!(coeffs.len(), coeff_count(order), "coefficient count mismatch");
    let (w, h) = (image.width(), image.height());
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        let v = if h > 1 { 2.0 * (y as f64 + 0.5) / h as f64 - 1.0 } else { 0.0 };
        for x in 0..w {
            let u = if w > 1 { 2.0 * (x as f64 + 0.5) / w as f64 - 1.0 } else { 0.0 };
            let mut p = 0.0;
            let mut idx = 0;
            for d in 0..=order {
                for i in (0..=d).rev() {
                    let j = d - i;
                    p += coeffs[idx] * u.powi(i as i32) * v.powi(j as i32);
                    idx += 1;
                }
            }
            out.set(x, y, (image.get(x, y) * p.exp()).clamp(0.0, 1.0));
        }
    }
    out
}

/// Apply a random bias field; coefficients are drawn deterministically from
/// the params seed. `bound == 0` is the identity.
pub fn bias_field(image: &GrayImage, params: &BiasFieldParams) -> GrayImage {
    let coeffs = draw_bias_coeffs(params);
    bias_field_from_coeffs(image, params.order, &coeffs)
}

pub fn draw_bias_coeffs(params: &BiasFieldParams) -> Vec<f64> {
    let mut rng = child_rng(params.seed, stream::BIAS_FIELD, 0);
    (0..coeff_count(params.order))
        .map(|_| {
            if params.bound == 0.0 {
                0.0
            } else {
                rng.gen_range(-params.bound..=params.bound)
            }
        })
        .collect()
}

const HE_BINS: usize = 256;

#[inline]
pub(crate) fn he_bin(v: f64) -> usize {
    ((v * HE_BINS as f64) as usize).min(HE_BINS - 1)
}

/// Global 256-bin histogram equalization.
///
/// `y = (CDF(bin(x)) - CDF_min) / (1 - CDF_min)` with `CDF_min` the smallest
/// nonzero CDF value. The mapping is monotone non-decreasing in the input
/// bin; a single occupied bin maps to the input unchanged.
pub fn hist_equalize(image: &GrayImage) -> GrayImage {
    let n = image.data().len();
    if n == 0 {
        return image.clone();
    }
    let mut hist = [0u64; HE_BINS];
    for &v in image.data() {
        hist[he_bin(v)] += 1;
    }
    let mut cdf = [0.0f64; HE_BINS];
    let mut acc = 0u64;
    for (i, &h) in hist.iter().enumerate() {
        acc += h;
        cdf[i] = acc as f64 / n as f64;
    }
    let cdf_min = cdf
        .iter()
        .zip(hist.iter())
        .find(|(_, &h)| h > 0)
        .map(|(&c, _)| c)
        .unwrap_or(0.0);
    if (1.0 - cdf_min).abs() < f64::EPSILON {
        // every pixel in one bin: nothing to equalize
        return image.clone();
    }
    let mut lut = [0.0f64; HE_BINS];
    for i in 0..HE_BINS {
        lut[i] = ((cdf[i] - cdf_min) / (1.0 - cdf_min)).clamp(0.0, 1.0);
    }
    let data = image.data().iter().map(|&v| lut[he_bin(v)]).collect();
    GrayImage::new(image.width(), image.height(), data).expect("same dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flip_is_involution_and_matches_hand_case() {
        // [a b; c d] -> horizontal -> [b a; d c]
        let img = GrayImage::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let fl = flip_image(&img, FlipAxis::Horizontal);
        assert_eq!(fl.data(), &[0.2, 0.1, 0.4, 0.3]);
        assert_eq!(flip_image(&fl, FlipAxis::Horizontal), img);
        let fv = flip_image(&img, FlipAxis::Vertical);
        assert_eq!(fv.data(), &[0.3, 0.4, 0.1, 0.2]);
        assert_eq!(flip_image(&fv, FlipAxis::Vertical), img);
    }

    #[test]
    fn flip_preserves_mask_containment() {
        let mut bone = BinaryMask::empty(6, 6);
        let mut lesion = BinaryMask::empty(6, 6);
        for y in 1..5 {
            for x in 1..5 {
                bone.set(x, y, true);
            }
        }
        lesion.set(2, 2, true);
        lesion.set(3, 2, true);
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
            let b = flip_mask(&bone, axis);
            let l = flip_mask(&lesion, axis);
            assert!(l.is_subset_of(&b));
        }
    }

    #[test]
    fn bias_bound_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = GrayImage::new(8, 8, (0..64).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let params = BiasFieldParams {
            order: 3,
            bound: 0.0,
            seed: 9,
        };
        assert_eq!(bias_field(&img, &params), img);
    }

    #[test]
    fn bias_known_linear_coeffs_match_closed_form() {
        // order 1, coeffs (0, c, 0): output = 0.5 * exp(c * u)
        let c = 0.3;
        let img = GrayImage::filled(16, 4, 0.5);
        let out = bias_field_from_coeffs(&img, 1, &[0.0, c, 0.0]);
        for x in 0..16 {
            let u = 2.0 * (x as f64 + 0.5) / 16.0 - 1.0;
            let expect = (0.5 * (c * u).exp()).clamp(0.0, 1.0);
            for y in 0..4 {
                assert!((out.get(x, y) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bias_field_is_strictly_positive() {
        for seed in 0..1000u64 {
            let params = BiasFieldParams {
                order: 3,
                bound: 0.5,
                seed,
            };
            let coeffs = draw_bias_coeffs(&params);
            // exp of any finite polynomial value is positive; check the
            // realized field on a coarse grid
            let ones = GrayImage::filled(9, 9, 1.0);
            let field = bias_field_from_coeffs(&ones, params.order, &coeffs);
            assert!(field.data().iter().all(|&v| v > 0.0), "seed {seed}");
        }
    }

    #[test]
    fn he_constant_image_is_unchanged() {
        let img = GrayImage::filled(8, 8, 0.42);
        let out = hist_equalize(&img);
        assert_eq!(out, img);
    }

    #[test]
    fn he_two_level_maps_to_zero_and_one() {
        // 25% at the lower level, 75% at the upper:
        // CDF(lo)=0.25=CDF_min -> 0; CDF(hi)=1 -> 1
        let mut data = vec![0.2; 25];
        data.extend(vec![0.8; 75]);
        let img = GrayImage::new(10, 10, data).unwrap();
        let out = hist_equalize(&img);
        for (i, &v) in out.data().iter().enumerate() {
            if i < 25 {
                assert_eq!(v, 0.0);
            } else {
                assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn he_uniform_histogram_is_near_identity() {
        // every 256-bin level occupied equally: CDF(bin k) = (k+1)/256,
        // so y differs from the bin center by at most one bin width
        let mut data = Vec::with_capacity(256 * 4);
        for k in 0..256 {
            let center = (k as f64 + 0.5) / 256.0;
            data.extend(std::iter::repeat(center).take(4));
        }
        let img = GrayImage::new(64, 16, data).unwrap();
        let out = hist_equalize(&img);
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() <= 1.0 / 256.0 + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn he_idempotent_within_one_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let data: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(0.0..1.0).powi(2)).collect();
            let img = GrayImage::new(32, 32, data).unwrap();
            let once = hist_equalize(&img);
            let twice = hist_equalize(&once);
            for (a, b) in once.data().iter().zip(twice.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn he_is_monotone(data in proptest::collection::vec(0.0f64..=1.0, 64)) {
            let img = GrayImage::new(8, 8, data).unwrap();
            let out = hist_equalize(&img);
            for p in 0..64 {
                for q in 0..64 {
                    if he_bin(img.data()[p]) <= he_bin(img.data()[q]) {
                        prop_assert!(out.data()[p] <= out.data()[q] + 1e-15);
                    }
                }
            }
        }

        #[test]
        fn he_output_in_unit_range(data in proptest::collection::vec(0.0f64..=1.0, 64)) {
            let img = GrayImage::new(8, 8, data).unwrap();
            let out = hist_equalize(&img);
            prop_assert!(out.is_normalized());
        }
    }
}
