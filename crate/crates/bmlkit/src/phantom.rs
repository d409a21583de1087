//! Synthetic knee-like slices with a bone region, marrow texture, and
//! injectable bright lesions with exact ground truth.
//!
//! A slice is composed of: a noisy background with a handful of soft
//! elliptical structures at varied intensities (so the global histogram
//! spans the full range and histogram equalization stays well-behaved), a
//! soft-tissue band hugging the bone, a dark cortical rim, and marrow built
//! from smoothed Gaussian noise. Lesions are soft-edged bright blobs with a
//! radially perturbed outline.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{dilate, erode};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};
use crate::io::{load_image, load_mask, save_image, save_mask, Depth};
use crate::rng::{child_rng, derive_seed, stream};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomConfig {
    /// Square slice size in pixels.
    pub size: usize,
    /// Bone center as a fraction of the slice size.
    pub bone_center: (f64, f64),
    /// Bone semi-axes as fractions of the slice size.
    pub bone_semi_axes: (f64, f64),
    /// Superellipse exponent for the bone outline.
    pub bone_exponent: f64,
    /// Amplitude of the smooth radial perturbation of the outline.
    pub bone_wobble: f64,
    /// Marrow base intensity.
    pub marrow_base: f64,
    /// Standard deviation of the marrow texture.
    pub marrow_noise: f64,
    /// Gaussian smoothing scale of the texture, in pixels (at size 128;
    /// scaled proportionally for other sizes).
    pub marrow_smoothing_px: f64,
    /// Cortical rim width in pixels (at size 128).
    pub rim_width_px: usize,
    pub rim_intensity: f64,
    /// Soft-tissue band around the bone: width (at size 128) and intensity.
    pub halo_width_px: usize,
    pub halo_intensity: f64,
    pub background_intensity: f64,
    /// Amplitude of the smooth background variation.
    pub background_variation: f64,
    /// Number of soft elliptical background structures.
    pub clutter_count: usize,
    /// Base seed for dataset generation.
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 128,
            bone_center: (0.5, 0.46),
            bone_semi_axes: (0.30, 0.24),
            bone_exponent: 2.5,
            bone_wobble: 0.05,
            marrow_base: 0.45,
            marrow_noise: 0.04,
            marrow_smoothing_px: 1.5,
            rim_width_px: 2,
            rim_intensity: 0.12,
            halo_width_px: 7,
            halo_intensity: 0.42,
            background_intensity: 0.30,
            background_variation: 0.045,
            clutter_count: 8,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    /// Pixel-space scale factor relative to the 128-size defaults.
    fn scale(&self) -> f64 {
        self.size as f64 / 128.0
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.bone_semi_axes;
        let (cx, cy) = self.bone_center;
        let s = self.size as f64;
        let margin = 4.0;
        let reach_x = a * s * (1.0 + self.bone_wobble) + margin;
        let reach_y = b * s * (1.0 + self.bone_wobble) + margin;
        if cx * s - reach_x < 0.0
            || cx * s + reach_x > s
            || cy * s - reach_y < 0.0
            || cy * s + reach_y > s
        {
            return Err(Error::Config(
                "bone outline would come within 4 px of the slice border".into(),
            ));
        }
        for v in [
            self.marrow_base,
            self.rim_intensity,
            self.halo_intensity,
            self.background_intensity,
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("intensity {v} outside [0, 1]")));
            }
        }
        if self.size < 32 {
            return Err(Error::Config("phantom size must be at least 32".into()));
        }
        Ok(())
    }
}

/// One lesion to inject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LesionSpec {
    pub target_area_px: f64,
    /// Center in pixel coordinates, must lie inside the rim-eroded bone.
    pub center: (usize, usize),
    /// Intensity lift in (0, 1].
    pub lift: f64,
    /// Gaussian falloff sigma of the edge, in pixels.
    pub edge_softness_px: f64,
    /// Radial outline perturbation amplitude, >= 0.
    pub irregularity: f64,
}

/// A generated slice with its ground truth.
#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub image: GrayImage,
    pub bone_mask: BinaryMask,
    pub lesion_mask: BinaryMask,
}

impl PhantomSample {
    /// Marrow region: bone eroded by the cortical rim width.
    pub fn marrow_mask(&self, config: &PhantomConfig) -> BinaryMask {
        erode(&self.bone_mask, scaled_rim_width(config))
    }
}

fn scaled_rim_width(config: &PhantomConfig) -> usize {
    ((config.rim_width_px as f64) * config.scale()).round().max(1.0) as usize
}

/// Separable Gaussian blur with edge replication.
fn gaussian_blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for k in -radius..=radius {
        let v = (-((k * k) as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in &mut kernel {
        *v /= sum;
    }
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * data[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// White Gaussian noise, blurred and renormalized to zero mean / unit
/// standard deviation over the full field.
fn smooth_unit_noise(rng: &mut rand_chacha::ChaCha8Rng, w: usize, h: usize, sigma: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let raw: Vec<f64> = (0..w * h).map(|_| StandardNormal.sample(rng)).collect();
    let mut field = gaussian_blur(&raw, w, h, sigma);
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    for v in &mut field {
        *v = (*v - mean) / std;
    }
    field
}

/// Superellipse bone outline with a smooth radial wobble.
fn bone_mask_for(config: &PhantomConfig, rng: &mut rand_chacha::ChaCha8Rng) -> BinaryMask {
    let s = config.size as f64;
    let (cx, cy) = (config.bone_center.0 * s, config.bone_center.1 * s);
    let (a, b) = (config.bone_semi_axes.0 * s, config.bone_semi_axes.1 * s);
    let n = config.bone_exponent;

    // random low-order harmonics, normalized to peak amplitude `bone_wobble`
    let harmonics: Vec<(f64, f64, f64)> = (2..5)
        .map(|k| (k as f64, rng.gen_range(0.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let peak: f64 = harmonics.iter().map(|(_, amp, _)| amp).sum::<f64>().max(1e-9);

    let mut mask = BinaryMask::empty(config.size, config.size);
    for y in 0..config.size {
        for x in 0..config.size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let theta = dy.atan2(dx);
            let wobble: f64 = harmonics
                .iter()
                .map(|(k, amp, phase)| amp * (k * theta + phase).cos())
                .sum::<f64>()
                / peak
                * config.bone_wobble;
            let rho = ((dx / a).abs().powf(n) + (dy / b).abs().powf(n)).powf(1.0 / n);
            if rho <= 1.0 + wobble {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Generate a healthy slice: no lesion, empty lesion mask.
pub fn gen_healthy(config: &PhantomConfig, seed: u64) -> Result<PhantomSample> {
    config.validate()?;
    let size = config.size;
    let scale = config.scale();
    let mut bg_rng = child_rng(seed, stream::PHANTOM, 0);
    let mut clutter_rng = child_rng(seed, stream::PHANTOM, 1);
    let mut bone_rng = child_rng(seed, stream::PHANTOM, 2);
    let mut marrow_rng = child_rng(seed, stream::PHANTOM, 3);

    // background: base + smooth variation
    let bg_noise = smooth_unit_noise(&mut bg_rng, size, size, size as f64 / 10.0);
    let mut img: Vec<f64> = bg_noise
        .iter()
        .map(|&v| config.background_intensity + config.background_variation * v)
        .collect();

    let bone = bone_mask_for(config, &mut bone_rng);
    let rim_w = scaled_rim_width(config);
    let interior = erode(&bone, rim_w);
    let halo_w = ((config.halo_width_px as f64) * scale).round() as usize;
    let halo = dilate(&bone, halo_w);

    // soft elliptical structures away from the bone neighborhood
    let keepout = dilate(&halo, (2.0 * scale).round() as usize);
    for _ in 0..config.clutter_count {
        // bounded rejection loop so generation stays deterministic
        for _attempt in 0..40 {
            let cx = clutter_rng.gen_range(0.0..size as f64);
            let cy = clutter_rng.gen_range(0.0..size as f64);
            let ra = clutter_rng.gen_range(0.05..0.16) * size as f64;
            let rb = clutter_rng.gen_range(0.05..0.16) * size as f64;
            let phi = clutter_rng.gen_range(0.0..std::f64::consts::TAU);
            let intensity = clutter_rng.gen_range(0.08..0.92);
            if keepout.get(
                (cx as usize).min(size - 1),
                (cy as usize).min(size - 1),
            ) {
                continue;
            }
            let (sin_p, cos_p) = phi.sin_cos();
            let x0 = ((cx - ra.max(rb) - 3.0).floor().max(0.0)) as usize;
            let x1 = ((cx + ra.max(rb) + 3.0).ceil().min(size as f64 - 1.0)) as usize;
            let y0 = ((cy - ra.max(rb) - 3.0).floor().max(0.0)) as usize;
            let y1 = ((cy + ra.max(rb) + 3.0).ceil().min(size as f64 - 1.0)) as usize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if keepout.get(x, y) {
                        continue;
                    }
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    let u = dx * cos_p + dy * sin_p;
                    let v = -dx * sin_p + dy * cos_p;
                    let rho = ((u / ra).powi(2) + (v / rb).powi(2)).sqrt();
                    // soft edge roughly 2 px wide
                    let edge = 2.0 / ra.min(rb);
                    let g = ((1.0 + edge - rho) / (2.0 * edge)).clamp(0.0, 1.0);
                    if g > 0.0 {
                        let i = y * size + x;
                        img[i] += (intensity - img[i]) * g;
                    }
                }
            }
            break;
        }
    }

    // soft-tissue band around the bone, lightly textured by the background
    // field so it is not perfectly flat
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            if halo.get(x, y) && !bone.get(x, y) {
                img[i] = config.halo_intensity + 0.25 * config.background_variation * bg_noise[i];
            }
        }
    }

    // cortical rim, then marrow texture
    let marrow_noise = smooth_unit_noise(
        &mut marrow_rng,
        size,
        size,
        config.marrow_smoothing_px * scale,
    );
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            if interior.get(x, y) {
                img[i] = config.marrow_base + config.marrow_noise * marrow_noise[i];
            } else if bone.get(x, y) {
                img[i] = config.rim_intensity + 0.15 * config.marrow_noise * marrow_noise[i];
            }
        }
    }

    let mut image = GrayImage::new(size, size, img)?;
    image.clamp01();
    Ok(PhantomSample {
        image,
        bone_mask: bone,
        lesion_mask: BinaryMask::empty(size, size),
    })
}

/// Distance from a pixel center to the nearest lesion pixel center, within
/// a bounding box; used for the soft edge falloff.
fn lesion_distance_field(mask: &BinaryMask, margin: usize) -> Vec<(usize, usize, f64)> {
    let (w, h) = (mask.width(), mask.height());
    let mut pixels = Vec::new();
    let mut x0 = w;
    let mut x1 = 0;
    let mut y0 = h;
    let mut y1 = 0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                pixels.push((x as f64, y as f64));
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    let mut out = Vec::new();
    let (bx0, bx1) = (x0.saturating_sub(margin), (x1 + margin).min(w - 1));
    let (by0, by1) = (y0.saturating_sub(margin), (y1 + margin).min(h - 1));
    for y in by0..=by1 {
        for x in bx0..=bx1 {
            if mask.get(x, y) {
                continue;
            }
            let mut best = f64::INFINITY;
            for &(px, py) in &pixels {
                let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                if d2 < best {
                    best = d2;
                }
            }
            out.push((x, y, best.sqrt()));
        }
    }
    out
}

/// Inject a bright lesion into a sample, returning the new sample.
///
/// The outline is a disk of the target area with a low-order radial
/// perturbation; the intensity is lifted by `lift` inside the outline and
/// decays with a Gaussian tail just outside it (the tail pixels are not part
/// of the ground-truth mask, which is what makes small lesions hard).
pub fn inject_lesion(
    sample: &PhantomSample,
    config: &PhantomConfig,
    spec: &LesionSpec,
    seed: u64,
) -> Result<PhantomSample> {
    if sample.bone_mask.is_empty() {
        return Err(Error::Invalid("sample has an empty bone mask".into()));
    }
    if spec.lift <= 0.0 || spec.lift > 1.0 {
        return Err(Error::Invalid(format!("lift must be in (0, 1], got {}", spec.lift)));
    }
    if spec.target_area_px < 4.0 {
        return Err(Error::Invalid("target lesion area must be at least 4 px".into()));
    }
    let interior = sample.marrow_mask(config);
    let (cx, cy) = spec.center;
    if !interior.get(cx, cy) {
        return Err(Error::LesionPlacement(format!(
            "center ({cx}, {cy}) is outside the rim-eroded bone"
        )));
    }

    let mut rng = child_rng(seed, stream::LESION, 0);
    let r0 = (spec.target_area_px / std::f64::consts::PI).sqrt();
    let r_max = r0 * (1.0 + spec.irregularity);

    // the whole perturbed outline must fit in the marrow
    let fit = erode(&interior, r_max.ceil() as usize);
    if !fit.get(cx, cy) {
        return Err(Error::LesionPlacement(format!(
            "lesion of area {:.0} px does not fit at ({cx}, {cy})",
            spec.target_area_px
        )));
    }

    let harmonics: Vec<(f64, f64, f64)> = (2..6)
        .map(|k| (k as f64, rng.gen_range(0.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let peak: f64 = harmonics.iter().map(|(_, a, _)| a).sum::<f64>().max(1e-9);

    let rasterize = |r_base: f64| -> BinaryMask {
        let size = sample.image.width();
        let mut m = BinaryMask::empty(size, sample.image.height());
        let reach = (r_base * (1.0 + spec.irregularity)).ceil() as isize + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let x = cx as isize + dx;
                let y = cy as isize + dy;
                if x < 0 || y < 0 || x >= size as isize || y >= sample.image.height() as isize {
                    continue;
                }
                let fx = dx as f64;
                let fy = dy as f64;
                let d = (fx * fx + fy * fy).sqrt();
                let theta = fy.atan2(fx);
                let s: f64 = harmonics
                    .iter()
                    .map(|(k, a, p)| a * (k * theta + p).cos())
                    .sum::<f64>()
                    / peak;
                let r = r_base * (1.0 + spec.irregularity * s);
                if d <= r && interior.get(x as usize, y as usize) {
                    m.set(x as usize, y as usize, true);
                }
            }
        }
        m
    };

    let mut mask = rasterize(r0);
    let mut area = mask.count() as f64;
    if area == 0.0 {
        return Err(Error::LesionPlacement("lesion rasterized to zero pixels".into()));
    }
    if (area - spec.target_area_px).abs() > 0.2 * spec.target_area_px {
        // one corrective pass keeps small rasterized areas inside +-20%
        let adjusted = r0 * (spec.target_area_px / area).sqrt();
        let m2 = rasterize(adjusted);
        if m2.count() > 0 {
            mask = m2;
            area = mask.count() as f64;
        }
    }
    if (area - spec.target_area_px).abs() > 0.2 * spec.target_area_px {
        return Err(Error::LesionPlacement(format!(
            "realized area {area} outside 20% of target {}",
            spec.target_area_px
        )));
    }

    let mut image = sample.image.clone();
    let w = image.width();
    // full lift inside the outline
    for (i, &m) in mask.data().iter().enumerate() {
        if m {
            let v = image.data()[i] + spec.lift;
            image.data_mut()[i] = v.min(1.0);
        }
    }
    // Gaussian tail outside, marrow only
    if spec.edge_softness_px > 0.0 {
        let margin = (3.0 * spec.edge_softness_px).ceil() as usize;
        for (x, y, d) in lesion_distance_field(&mask, margin) {
            if !interior.get(x, y) {
                continue;
            }
            let g = (-(d * d) / (2.0 * spec.edge_softness_px * spec.edge_softness_px)).exp();
            let i = y * w + x;
            let v = image.data()[i] + spec.lift * g;
            image.data_mut()[i] = v.min(1.0);
        }
    }

    Ok(PhantomSample {
        image,
        bone_mask: sample.bone_mask.clone(),
        lesion_mask: mask,
    })
}

/// Dataset split sizes and lesion parameter ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub train_healthy: usize,
    pub val: usize,
    pub test: usize,
    /// Target lesion areas as fractions of the realized bone area; val/test
    /// lesions cycle through these classes so each class gets an equal share.
    pub size_classes: Vec<f64>,
    pub lift_range: (f64, f64),
    pub softness_range: (f64, f64),
    pub irregularity_range: (f64, f64),
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            train_healthy: 200,
            val: 25,
            test: 50,
            size_classes: vec![0.005, 0.0125, 0.025, 0.045, 0.08],
            lift_range: (0.25, 0.5),
            softness_range: (0.8, 1.6),
            irregularity_range: (0.15, 0.35),
        }
    }
}

/// One dataset record. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: String,
    pub image_path: String,
    pub bone_mask_path: String,
    pub lesion_mask_path: String,
    pub lesion_area_px: usize,
    pub size_class: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub size: usize,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn split<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| e.split == name)
    }
}

impl ManifestEntry {
    pub fn load_image(&self, base: &Path) -> Result<GrayImage> {
        load_image(&base.join(&self.image_path))
    }

    pub fn load_bone(&self, base: &Path) -> Result<BinaryMask> {
        load_mask(&base.join(&self.bone_mask_path))
    }

    pub fn load_lesion(&self, base: &Path) -> Result<BinaryMask> {
        load_mask(&base.join(&self.lesion_mask_path))
    }
}

/// Pick a lesion center uniformly among pixels where the outline fits.
fn pick_center(
    interior: &BinaryMask,
    r_max: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(usize, usize)> {
    let fit = erode(interior, r_max.ceil() as usize + 1);
    let candidates: Vec<usize> = (0..fit.data().len()).filter(|&i| fit.data()[i]).collect();
    if candidates.is_empty() {
        return Err(Error::LesionPlacement(format!(
            "no center admits a lesion of reach {r_max:.1} px"
        )));
    }
    let i = candidates[rng.gen_range(0..candidates.len())];
    Ok((i % fit.width(), i / fit.width()))
}

/// Generate and write a full dataset: images, masks, and `manifest.json`.
///
/// Per-sample seeds derive from `config.seed` and the global sample index,
/// so regeneration with the same configuration is byte-identical.
pub fn gen_dataset(config: &PhantomConfig, opts: &DatasetOptions, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    if opts.train_healthy == 0 || opts.val == 0 || opts.test == 0 {
        return Err(Error::Config("every split needs at least one sample".into()));
    }
    if opts.size_classes.is_empty() {
        return Err(Error::Config("need at least one size class".into()));
    }
    for dir in ["images", "bone", "lesion"] {
        let p = out_dir.join(dir);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }

    let mut entries = Vec::new();
    let mut global_index = 0u64;
    let splits: [(&str, usize, bool); 3] = [
        ("train", opts.train_healthy, false),
        ("val", opts.val, true),
        ("test", opts.test, true),
    ];
    for (split, count, lesioned) in splits {
        for k in 0..count {
            let sample_seed = derive_seed(config.seed, stream::PHANTOM, global_index);
            let healthy = gen_healthy(config, sample_seed)?;
            let (sample, size_class) = if lesioned {
                let class = k % opts.size_classes.len();
                let bone_area = healthy.bone_mask.count() as f64;
                let target = opts.size_classes[class] * bone_area;
                let mut rng = child_rng(config.seed, stream::LESION, global_index);
                let irregularity = rng.gen_range(opts.irregularity_range.0..=opts.irregularity_range.1);
                let r_max = (target / std::f64::consts::PI).sqrt() * (1.0 + irregularity);
                let interior = healthy.marrow_mask(config);
                let center = pick_center(&interior, r_max, &mut rng)?;
                let spec = LesionSpec {
                    target_area_px: target,
                    center,
                    lift: rng.gen_range(opts.lift_range.0..=opts.lift_range.1),
                    edge_softness_px: rng.gen_range(opts.softness_range.0..=opts.softness_range.1),
                    irregularity,
                };
                let lesion_seed = derive_seed(config.seed, stream::LESION, global_index);
                (inject_lesion(&healthy, config, &spec, lesion_seed)?, Some(class))
            } else {
                (healthy, None)
            };

            let id = format!("{split}_{k:04}");
            let image_path = format!("images/{id}.pgm");
            let bone_path = format!("bone/{id}.pgm");
            let lesion_path = format!("lesion/{id}.pgm");
            save_image(&sample.image, &out_dir.join(&image_path), Depth::Sixteen)?;
            save_mask(&sample.bone_mask, &out_dir.join(&bone_path))?;
            save_mask(&sample.lesion_mask, &out_dir.join(&lesion_path))?;
            entries.push(ManifestEntry {
                id,
                split: split.to_string(),
                image_path,
                bone_mask_path: bone_path,
                lesion_mask_path: lesion_path,
                lesion_area_px: sample.lesion_mask.count(),
                size_class,
            });
            global_index += 1;
        }
    }
    let manifest = Manifest {
        size: config.size,
        entries,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Convenience for tests and examples: one lesioned sample from scratch.
pub fn gen_lesioned(
    config: &PhantomConfig,
    area_fraction: f64,
    lift: f64,
    softness: f64,
    irregularity: f64,
    seed: u64,
) -> Result<PhantomSample> {
    let healthy = gen_healthy(config, seed)?;
    let bone_area = healthy.bone_mask.count() as f64;
    let target = area_fraction * bone_area;
    let mut rng = child_rng(seed, stream::LESION, 1);
    let interior = healthy.marrow_mask(config);
    let r_max = (target / std::f64::consts::PI).sqrt() * (1.0 + irregularity);
    let center = pick_center(&interior, r_max, &mut rng)?;
    let spec = LesionSpec {
        target_area_px: target,
        center,
        lift,
        edge_softness_px: softness,
        irregularity,
    };
    inject_lesion(&healthy, config, &spec, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = PhantomConfig::default();
        let a = gen_healthy(&cfg, 42).unwrap();
        let b = gen_healthy(&cfg, 42).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.bone_mask, b.bone_mask);
        let c = gen_healthy(&cfg, 43).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn zero_noise_marrow_is_exactly_base() {
        let cfg = PhantomConfig {
            marrow_noise: 0.0,
            ..PhantomConfig::default()
        };
        let s = gen_healthy(&cfg, 7).unwrap();
        let interior = s.marrow_mask(&cfg);
        assert!(!interior.is_empty());
        for (i, &m) in interior.data().iter().enumerate() {
            if m {
                assert_eq!(s.image.data()[i], cfg.marrow_base);
            }
        }
    }

    #[test]
    fn healthy_sample_has_no_lesion_and_is_normalized() {
        let cfg = PhantomConfig::default();
        let s = gen_healthy(&cfg, 3).unwrap();
        assert!(s.lesion_mask.is_empty());
        assert!(s.image.is_normalized());
        assert!(!s.bone_mask.is_empty());
    }

    #[test]
    fn marrow_texture_matches_model_across_samples() {
        let cfg = PhantomConfig::default();
        let mut inside = 0u64;
        let mut total = 0u64;
        for seed in 0..1000u64 {
            let s = gen_healthy(&cfg, seed).unwrap();
            let interior = s.marrow_mask(&cfg);
            for (i, &m) in interior.data().iter().enumerate() {
                if m {
                    total += 1;
                    if (s.image.data()[i] - cfg.marrow_base).abs() <= 3.0 * cfg.marrow_noise {
                        inside += 1;
                    }
                }
            }
        }
        let fraction = inside as f64 / total as f64;
        assert!(fraction >= 0.95, "within-3-sigma fraction {fraction}");
    }

    #[test]
    fn bone_margin_validation() {
        let cfg = PhantomConfig {
            bone_semi_axes: (0.49, 0.30),
            ..PhantomConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lesion_zero_lift_rejected() {
        let cfg = PhantomConfig::default();
        let s = gen_healthy(&cfg, 5).unwrap();
        let spec = LesionSpec {
            target_area_px: 50.0,
            center: (64, 58),
            lift: 0.0,
            edge_softness_px: 1.0,
            irregularity: 0.0,
        };
        assert!(inject_lesion(&s, &cfg, &spec, 1).is_err());
    }

    #[test]
    fn round_lesion_hits_target_area() {
        let cfg = PhantomConfig::default();
        let s = gen_healthy(&cfg, 11).unwrap();
        let interior = s.marrow_mask(&cfg);
        // find a deep interior center
        let fit = erode(&interior, 8);
        let idx = fit.data().iter().position(|&b| b).expect("fit region");
        let center = (idx % 128, idx / 128);
        let spec = LesionSpec {
            target_area_px: 50.0,
            center,
            lift: 0.4,
            edge_softness_px: 1.0,
            irregularity: 0.0,
        };
        let out = inject_lesion(&s, &cfg, &spec, 2).unwrap();
        let area = out.lesion_mask.count();
        assert!((40..=60).contains(&area), "disk area {area}");
        assert!(out.lesion_mask.is_subset_of(&interior));
        assert!(out.lesion_mask.is_subset_of(&out.bone_mask));
    }

    #[test]
    fn lesion_at_boundary_margin_errors() {
        let cfg = PhantomConfig::default();
        let s = gen_healthy(&cfg, 13).unwrap();
        let interior = s.marrow_mask(&cfg);
        // a center just inside the marrow edge cannot host a large lesion
        let deep = erode(&interior, 2);
        let edge_idx = interior
            .data()
            .iter()
            .zip(deep.data())
            .position(|(&m, &d)| m && !d)
            .expect("edge pixel");
        let center = (edge_idx % 128, edge_idx / 128);
        let spec = LesionSpec {
            target_area_px: 200.0,
            center,
            lift: 0.4,
            edge_softness_px: 1.0,
            irregularity: 0.2,
        };
        assert!(inject_lesion(&s, &cfg, &spec, 3).is_err());
    }

    #[test]
    fn lesion_brightens_marrow_by_at_least_half_lift() {
        let cfg = PhantomConfig::default();
        for seed in [21u64, 22, 23, 24] {
            let s = gen_lesioned(&cfg, 0.03, 0.4, 1.5, 0.0, seed).unwrap();
            let interior = s.marrow_mask(&cfg);
            let mut lesion_sum = 0.0;
            let mut lesion_n = 0.0;
            let mut other_sum = 0.0;
            let mut other_n = 0.0;
            for (i, (&l, &m)) in s.lesion_mask.data().iter().zip(interior.data()).enumerate() {
                if l {
                    lesion_sum += s.image.data()[i];
                    lesion_n += 1.0;
                } else if m {
                    other_sum += s.image.data()[i];
                    other_n += 1.0;
                }
            }
            let lesion_mean = lesion_sum / lesion_n;
            let other_mean = other_sum / other_n;
            assert!(
                lesion_mean >= other_mean + 0.5 * 0.4,
                "seed {seed}: lesion {lesion_mean:.3} vs marrow {other_mean:.3}"
            );
        }
    }

    #[test]
    fn dataset_counts_classes_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig {
            size: 64,
            seed: 5,
            ..PhantomConfig::default()
        };
        let opts = DatasetOptions {
            train_healthy: 4,
            val: 2,
            test: 10,
            size_classes: vec![0.01, 0.02, 0.03, 0.045, 0.06],
            ..DatasetOptions::default()
        };
        let m = gen_dataset(&cfg, &opts, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 16);
        assert_eq!(m.split("train").count(), 4);
        assert_eq!(m.split("val").count(), 2);
        assert_eq!(m.split("test").count(), 10);
        // 10 test samples over 5 classes: exactly 2 per class
        for class in 0..5 {
            assert_eq!(
                m.split("test").filter(|e| e.size_class == Some(class)).count(),
                2
            );
        }
        for e in m.split("train") {
            assert_eq!(e.lesion_area_px, 0);
            assert_eq!(e.size_class, None);
        }
        // lesion masks on disk stay inside bone masks
        for e in m.split("test") {
            let bone = e.load_bone(dir.path()).unwrap();
            let lesion = e.load_lesion(dir.path()).unwrap();
            assert!(lesion.count() > 0);
            assert!(lesion.is_subset_of(&bone));
        }

        // byte-identical regeneration
        let manifest_bytes = std::fs::read(dir.path().join("manifest.json")).unwrap();
        let some_image = std::fs::read(dir.path().join(&m.entries[5].image_path)).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let m2 = gen_dataset(&cfg, &opts, dir2.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(std::fs::read(dir2.path().join("manifest.json")).unwrap(), manifest_bytes);
        assert_eq!(
            std::fs::read(dir2.path().join(&m.entries[5].image_path)).unwrap(),
            some_image
        );
    }
}
