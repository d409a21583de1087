//! Anomaly detection from a reconstruction: difference map with negative
//! zeroing, Otsu thresholding over the bone region, morphological cleanup,
//! and the per-slice pipeline.

use serde::{Deserialize, Serialize};

use crate::augment::hist_equalize;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};

/// Pixel offsets of a discrete disk: `{(di, dj) : di^2 + dj^2 <= r^2}`.
fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let r2 = (radius * radius) as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Dilation by a disk. Out-of-bounds pixels count as background, so the
/// foreground can grow up to, but not across, the image border.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let offsets = disk_offsets(radius);
    let mut out = BinaryMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

/// Erosion by a disk. Out-of-bounds pixels count as foreground (only
/// in-bounds neighbors constrain), which makes `erode(x) == !dilate(!x)`
/// hold exactly on the finite grid.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let offsets = disk_offsets(radius);
    let mut out = BinaryMask::empty(w, h);
    'pixel: for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    if !mask.get(nx as usize, ny as usize) {
                        continue 'pixel;
                    }
                }
            }
            out.set(x, y, true);
        }
    }
    out
}

/// Opening: erosion then dilation. Removes structures smaller than the disk.
pub fn morph_open(mask: &BinaryMask, radius: usize) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}

/// Closing: dilation then erosion. Fills holes smaller than the disk.
pub fn morph_close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    erode(&dilate(mask, radius), radius)
}

/// `D(p) = max(x'(p) - x_recon'(p), 0)` inside `bone`, 0 elsewhere.
///
/// The difference is original minus reconstruction: the targets are brighter
/// than the surrounding marrow, so only positive residuals carry signal and
/// negative values are zeroed.
pub fn diff_map(enhanced: &GrayImage, enhanced_recon: &GrayImage, bone: &BinaryMask) -> Result<GrayImage> {
    if !enhanced.same_size(enhanced_recon) || !bone.same_size_as_image(enhanced) {
        return Err(Error::Shape("diff_map inputs must share dimensions".into()));
    }
    let data = enhanced
        .data()
        .iter()
        .zip(enhanced_recon.data())
        .zip(bone.data())
        .map(|((&a, &b), &m)| if m { (a - b).max(0.0) } else { 0.0 })
        .collect();
    GrayImage::new(enhanced.width(), enhanced.height(), data)
}

pub const OTSU_BINS: usize = 256;

/// Otsu threshold over a region of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct OtsuResult {
    /// Upper edge of the last bin assigned to the background class, in
    /// intensity units (`(bin + 1) / bins`). 1.0 when degenerate.
    pub threshold: f64,
    /// Index of the last background bin; the mask selects bins above it.
    pub threshold_bin: usize,
    /// All region pixels fell into a single bin: no split exists and the
    /// mask is empty ("no anomaly").
    pub degenerate: bool,
    pub mask: BinaryMask,
}

#[inline]
fn value_bin(v: f64) -> usize {
    ((v * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// 256-bin histogram of `values` over `region` pixels.
pub fn region_histogram(values: &GrayImage, region: &BinaryMask) -> [u64; OTSU_BINS] {
    let mut hist = [0u64; OTSU_BINS];
    for (&v, &m) in values.data().iter().zip(region.data()) {
        if m {
            hist[value_bin(v)] += 1;
        }
    }
    hist
}

/// Argmax of between-class variance over all candidate splits of a
/// histogram. Sums are accumulated in ascending bin order; ties keep the
/// smallest split. Returns `None` when every count sits in one bin.
pub fn otsu_split(hist: &[u64; OTSU_BINS]) -> Option<usize> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let total_f = total as f64;
    let mut sum_all = 0.0;
    for (i, &h) in hist.iter().enumerate() {
        sum_all += i as f64 * h as f64;
    }
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for t in 0..OTSU_BINS - 1 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total_f - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if best.map_or(true, |(_, b)| var > b) {
            best = Some((t, var));
        }
    }
    best.map(|(t, _)| t)
}

/// Threshold `values` over `region` with Otsu's method.
pub fn otsu_threshold(values: &GrayImage, region: &BinaryMask) -> Result<OtsuResult> {
    if !region.same_size_as_image(values) {
        return Err(Error::Shape("otsu region must match values".into()));
    }
    if region.is_empty() {
        return Err(Error::EmptyRegion("otsu needs a non-empty region".into()));
    }
    let hist = region_histogram(values, region);
    match otsu_split(&hist) {
        None => Ok(OtsuResult {
            threshold: 1.0,
            threshold_bin: OTSU_BINS - 1,
            degenerate: true,
            mask: BinaryMask::empty(values.width(), values.height()),
        }),
        Some(t) => {
            let data = values
                .data()
                .iter()
                .zip(region.data())
                .map(|(&v, &m)| m && value_bin(v) > t)
                .collect();
            Ok(OtsuResult {
                threshold: (t as f64 + 1.0) / OTSU_BINS as f64,
                threshold_bin: t,
                degenerate: false,
                mask: BinaryMask::new(values.width(), values.height(), data)?,
            })
        }
    }
}

/// Anything that can fill the masked region of a slice.
pub trait Inpainter {
    /// Reconstruct `image` inside `mask`; pixels outside `mask` must be
    /// returned bit-exact.
    fn inpaint(&self, image: &GrayImage, mask: &BinaryMask) -> Result<GrayImage>;
}

/// Post-processing configuration for one slice resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Disk radius of the opening that removes small structural noise.
    pub open_radius: usize,
    /// Disk radius of the closing that fills small holes.
    pub close_radius: usize,
    /// Build the Otsu histogram over bone pixels only (default) or the full
    /// slice.
    pub restrict_to_bone: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            open_radius: 1,
            close_radius: 2,
            restrict_to_bone: true,
        }
    }
}

impl DetectConfig {
    /// Defaults tuned at 128x128, radii scaled proportionally (rounded) for
    /// other resolutions.
    pub fn for_size(size: usize) -> Self {
        let scale = size as f64 / 128.0;
        Self {
            open_radius: (1.0 * scale).round() as usize,
            close_radius: (2.0 * scale).round() as usize,
            restrict_to_bone: true,
        }
    }
}

/// Every intermediate stage of the per-slice pipeline.
#[derive(Debug, Clone)]
pub struct PipelineTrace {
    pub input: GrayImage,
    pub reconstruction: GrayImage,
    pub input_eq: GrayImage,
    pub reconstruction_eq: GrayImage,
    pub difference: GrayImage,
    pub threshold: f64,
    pub degenerate: bool,
    pub mask_otsu: BinaryMask,
    pub mask_opened: BinaryMask,
    pub mask_final: BinaryMask,
}

/// Run the full per-slice pipeline: inpaint, equalize both, subtract with
/// negative zeroing, Otsu, open, close. The final mask is intersected with
/// the bone mask.
pub fn run_pipeline(
    image: &GrayImage,
    bone: &BinaryMask,
    inpainter: &dyn Inpainter,
    config: &DetectConfig,
) -> Result<(BinaryMask, PipelineTrace)> {
    if !bone.same_size_as_image(image) {
        return Err(Error::Shape("bone mask must match image".into()));
    }
    if bone.is_empty() {
        return Err(Error::EmptyRegion("bone mask is empty".into()));
    }
    let recon = inpainter.inpaint(image, bone)?;
    let input_eq = hist_equalize(image);
    let recon_eq = hist_equalize(&recon);
    let diff = diff_map(&input_eq, &recon_eq, bone)?;
    let region = if config.restrict_to_bone {
        bone.clone()
    } else {
        BinaryMask::full(image.width(), image.height())
    };
    let otsu = otsu_threshold(&diff, &region)?;
    let mask_otsu = if config.restrict_to_bone {
        otsu.mask.clone()
    } else {
        otsu.mask.intersect(bone)
    };
    let mask_opened = morph_open(&mask_otsu, config.open_radius);
    let mask_final = morph_close(&mask_opened, config.close_radius).intersect(bone);
    let trace = PipelineTrace {
        input: image.clone(),
        reconstruction: recon,
        input_eq,
        reconstruction_eq: recon_eq,
        difference: diff,
        threshold: otsu.threshold,
        degenerate: otsu.degenerate,
        mask_otsu,
        mask_opened,
        mask_final: mask_final.clone(),
    };
    Ok((mask_final, trace))
}

/// Write every stage of a trace as 16-bit images with stage-suffixed names:
/// `<stem>_input.pgm`, `_recon`, `_input_eq`, `_recon_eq`, `_diff`,
/// `_otsu`, `_opened`, `_final`.
pub fn write_trace(trace: &PipelineTrace, dir: &std::path::Path, stem: &str) -> Result<()> {
    use crate::io::{save_image, save_mask, Depth};
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let img = |name: &str| dir.join(format!("{stem}_{name}.pgm"));
    save_image(&trace.input, &img("input"), Depth::Sixteen)?;
    save_image(&trace.reconstruction, &img("recon"), Depth::Sixteen)?;
    save_image(&trace.input_eq, &img("input_eq"), Depth::Sixteen)?;
    save_image(&trace.reconstruction_eq, &img("recon_eq"), Depth::Sixteen)?;
    save_image(&trace.difference, &img("diff"), Depth::Sixteen)?;
    save_mask(&trace.mask_otsu, &img("otsu"))?;
    save_mask(&trace.mask_opened, &img("opened"))?;
    save_mask(&trace.mask_final, &img("final"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> BinaryMask {
        BinaryMask::new(w, h, (0..w * h).map(|_| rng.gen_bool(p)).collect()).unwrap()
    }

    #[test]
    fn diff_map_zeroes_negatives_and_outside() {
        let a = GrayImage::new(2, 1, vec![0.8, 0.3]).unwrap();
        let b = GrayImage::new(2, 1, vec![0.5, 0.5]).unwrap();
        let mut bone = BinaryMask::empty(2, 1);
        bone.set(0, 0, true);
        bone.set(1, 0, true);
        let d = diff_map(&a, &b, &bone).unwrap();
        assert!((d.data()[0] - 0.3).abs() < 1e-15);
        assert_eq!(d.data()[1], 0.0);

        let no_bone = BinaryMask::empty(2, 1);
        let d0 = diff_map(&a, &b, &no_bone).unwrap();
        assert!(d0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diff_map_identical_inputs_is_zero() {
        let a = GrayImage::filled(4, 4, 0.6);
        let bone = BinaryMask::full(4, 4);
        let d = diff_map(&a, &a, &bone).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn otsu_two_level_region() {
        // 100 pixels at 0.2 and 100 at 0.8: the split lands between them and
        // the mask selects exactly the bright pixels
        let mut data = vec![0.2; 100];
        data.extend(vec![0.8; 100]);
        let img = GrayImage::new(200, 1, data).unwrap();
        let region = BinaryMask::full(200, 1);
        let r = otsu_threshold(&img, &region).unwrap();
        assert!(!r.degenerate);
        assert!(r.threshold > 0.2 && r.threshold <= 0.8);
        assert_eq!(r.mask.count(), 100);
        for i in 100..200 {
            assert!(r.mask.data()[i]);
        }
    }

    #[test]
    fn otsu_degenerate_single_bin() {
        let img = GrayImage::filled(10, 10, 0.5);
        let region = BinaryMask::full(10, 10);
        let r = otsu_threshold(&img, &region).unwrap();
        assert!(r.degenerate);
        assert!(r.mask.is_empty());
    }

    #[test]
    fn otsu_empty_region_errors() {
        let img = GrayImage::filled(4, 4, 0.5);
        let region = BinaryMask::empty(4, 4);
        assert!(otsu_threshold(&img, &region).is_err());
    }

    /// Brute force: recompute class weights and means from scratch for every
    /// candidate split, ascending-bin summation.
    pub(crate) fn otsu_brute_force(hist: &[u64; OTSU_BINS]) -> Option<usize> {
        let total: u64 = hist.iter().sum();
        if total == 0 {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for t in 0..OTSU_BINS - 1 {
            let mut w0 = 0.0;
            let mut sum0 = 0.0;
            for i in 0..=t {
                w0 += hist[i] as f64;
                sum0 += i as f64 * hist[i] as f64;
            }
            let mut w1 = 0.0;
            let mut sum1 = 0.0;
            for i in t + 1..OTSU_BINS {
                w1 += hist[i] as f64;
                sum1 += i as f64 * hist[i] as f64;
            }
            if w0 == 0.0 || w1 == 0.0 {
                continue;
            }
            let mu0 = sum0 / w0;
            let mu1 = sum1 / w1;
            let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
            if best.map_or(true, |(_, b)| var > b) {
                best = Some((t, var));
            }
        }
        best.map(|(t, _)| t)
    }

    #[test]
    fn otsu_matches_brute_force_on_random_histograms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..200 {
            let mut hist = [0u64; OTSU_BINS];
            let occupied = rng.gen_range(2..40);
            for _ in 0..occupied {
                let bin = rng.gen_range(0..OTSU_BINS);
                hist[bin] += rng.gen_range(1..500);
            }
            assert_eq!(otsu_split(&hist), otsu_brute_force(&hist), "case {case}");
        }
    }

    #[test]
    fn otsu_invariant_under_bin_preserving_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = GrayImage::new(20, 20, data.clone()).unwrap();
        let region = BinaryMask::full(20, 20);
        let base = otsu_threshold(&img, &region).unwrap();
        // snap values to their bin centers: same bins, different values
        let snapped: Vec<f64> = data.iter().map(|&v| (value_bin(v) as f64 + 0.5) / 256.0).collect();
        let img2 = GrayImage::new(20, 20, snapped).unwrap();
        let r2 = otsu_threshold(&img2, &region).unwrap();
        assert_eq!(base.threshold_bin, r2.threshold_bin);
        assert_eq!(base.mask, r2.mask);
    }

    #[test]
    fn open_removes_isolated_pixel() {
        let mut mask = BinaryMask::empty(9, 9);
        mask.set(4, 4, true);
        assert!(morph_open(&mask, 1).is_empty());
    }

    #[test]
    fn open_preserves_solid_square() {
        // 7x7 square: erosion by a radius-1 disk shrinks it to 5x5, the
        // following dilation restores all 49 pixels
        let mut mask = BinaryMask::empty(11, 11);
        for y in 2..9 {
            for x in 2..9 {
                mask.set(x, y, true);
            }
        }
        assert_eq!(morph_open(&mask, 1), mask);
    }

    #[test]
    fn close_fills_interior_hole() {
        let mut mask = BinaryMask::empty(9, 9);
        for y in 2..7 {
            for x in 2..7 {
                mask.set(x, y, true);
            }
        }
        mask.set(4, 4, false);
        let closed = morph_close(&mask, 1);
        assert!(closed.get(4, 4));
        let mut expect = mask.clone();
        expect.set(4, 4, true);
        assert_eq!(closed, expect);
    }

    #[test]
    fn close_of_empty_is_empty() {
        assert!(morph_close(&BinaryMask::empty(8, 8), 2).is_empty());
    }

    #[test]
    fn morphology_algebra_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let mask = random_mask(&mut rng, 24, 24, 0.5);
            for radius in [1usize, 2] {
                let opened = morph_open(&mask, radius);
                let closed = morph_close(&mask, radius);
                // idempotence
                assert_eq!(morph_open(&opened, radius), opened);
                assert_eq!(morph_close(&closed, radius), closed);
                // anti-extensivity / extensivity
                assert!(opened.is_subset_of(&mask));
                assert!(mask.is_subset_of(&closed));
                // duality under complement
                assert_eq!(opened, morph_close(&mask.complement(), radius).complement());
            }
        }
    }

    #[test]
    fn radius_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mask = random_mask(&mut rng, 12, 12, 0.5);
        assert_eq!(morph_open(&mask, 0), mask);
        assert_eq!(morph_close(&mask, 0), mask);
    }

    /// Inpainter that returns the input unchanged.
    struct IdentityInpainter;
    impl Inpainter for IdentityInpainter {
        fn inpaint(&self, image: &GrayImage, _mask: &BinaryMask) -> Result<GrayImage> {
            Ok(image.clone())
        }
    }

    #[test]
    fn pipeline_perfect_reconstruction_gives_empty_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = GrayImage::new(16, 16, (0..256).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let mut bone = BinaryMask::empty(16, 16);
        for y in 4..12 {
            for x in 4..12 {
                bone.set(x, y, true);
            }
        }
        let (mask, trace) = run_pipeline(&img, &bone, &IdentityInpainter, &DetectConfig::default()).unwrap();
        assert!(trace.degenerate);
        assert!(mask.is_empty());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = GrayImage::new(16, 16, (0..256).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let bone = BinaryMask::full(16, 16);
        let inp = IdentityInpainter;
        let (m1, t1) = run_pipeline(&img, &bone, &inp, &DetectConfig::default()).unwrap();
        let (m2, t2) = run_pipeline(&img, &bone, &inp, &DetectConfig::default()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1.difference, t2.difference);
        assert_eq!(t1.threshold.to_bits(), t2.threshold.to_bits());
    }

    #[test]
    fn config_scales_with_resolution() {
        let c = DetectConfig::for_size(448);
        assert_eq!(c.open_radius, 4);
        assert_eq!(c.close_radius, 7);
        let c = DetectConfig::for_size(128);
        assert_eq!(c.open_radius, 1);
        assert_eq!(c.close_radius, 2);
    }
}
