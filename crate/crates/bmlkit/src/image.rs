//! Core raster types: grayscale slices, binary masks, slice stacks, and
//! connected-component labeling.
//!
//! Intensities live in `[0, 1]` as `f64` throughout the toolkit; quantization
//! happens only at file boundaries (see [`crate::io`]).

use crate::error::{Error, Result};

/// 2D scalar field, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "image data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_size(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Clamp every value into `[0, 1]` in place.
    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// True when every value is finite and within `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

/// 2D boolean field, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "mask data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn same_size_as_image(&self, image: &GrayImage) -> bool {
        self.width == image.width() && self.height == image.height()
    }

    pub fn same_size(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pixel-wise AND.
    pub fn intersect(&self, other: &BinaryMask) -> BinaryMask {
        assert!(self.same_size(other), "mask size mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a && b)
            .collect();
        BinaryMask {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Pixel-wise complement.
    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_size(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| !a || b)
    }
}

/// Stack of 2D slices stored as 32-bit scalars (the on-disk volume payload).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    width: usize,
    height: usize,
    slices: usize,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(width: usize, height: usize, slices: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * slices {
            return Err(Error::Shape(format!(
                "volume data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                slices
            )));
        }
        Ok(Self {
            width,
            height,
            slices,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Extract slice `k` as a [`GrayImage`].
    pub fn slice(&self, k: usize) -> Result<GrayImage> {
        if k >= self.slices {
            return Err(Error::Invalid(format!(
                "slice index {k} out of range 0..{}",
                self.slices
            )));
        }
        let plane = self.width * self.height;
        let data = self.data[k * plane..(k + 1) * plane]
            .iter()
            .map(|&v| v as f64)
            .collect();
        GrayImage::new(self.width, self.height, data)
    }
}

/// Pixel adjacency for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// One labeled component of a binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub id: u32,
    pub area: usize,
    /// (min_x, min_y, max_x, max_y), inclusive.
    pub bbox: (usize, usize, usize, usize),
}

/// Result of connected-component labeling: a per-pixel label map
/// (0 = background) and per-component statistics.
#[derive(Debug, Clone)]
pub struct LabeledComponents {
    pub labels: Vec<u32>,
    pub width: usize,
    pub height: usize,
    pub components: Vec<Component>,
}

/// Label connected foreground regions.
///
/// Labels are assigned in first-encounter raster order, so the output is
/// deterministic: component 1 contains the first foreground pixel in
/// row-major order, and so on.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> LabeledComponents {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut components = Vec::new();
    let mut queue = std::collections::VecDeque::new();

    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(0, -1), (-1, 0), (1, 0), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ],
    };

    let mut next = 1u32;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || labels[y * w + x] != 0 {
                continue;
            }
            let id = next;
            next += 1;
            let mut area = 0usize;
            let mut bbox = (x, y, x, y);
            labels[y * w + x] = id;
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                area += 1;
                bbox.0 = bbox.0.min(cx);
                bbox.1 = bbox.1.min(cy);
                bbox.2 = bbox.2.max(cx);
                bbox.3 = bbox.3.max(cy);
                for &(dx, dy) in offsets {
                    let nx = cx as isize + dx;
                    let ny = cy as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if mask.get(nx, ny) && labels[ny * w + nx] == 0 {
                        labels[ny * w + nx] = id;
                        queue.push_back((nx, ny));
                    }
                }
            }
            components.push(Component { id, area, bbox });
        }
    }

    LabeledComponents {
        labels,
        width: w,
        height: h,
        components,
    }
}

/// Bilinear resampling with half-pixel-center alignment and edge clamping.
///
/// Source coordinates are `(d + 0.5) * len_src / len_dst - 0.5`; samples past
/// the border clamp to the edge row/column. Constant images resize to the
/// same constant and outputs never leave the input `[min, max]` range.
pub fn resize_bilinear(image: &GrayImage, new_width: usize, new_height: usize) -> Result<GrayImage> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::Invalid("resize target dimensions must be >= 1".into()));
    }
    let (sw, sh) = (image.width(), image.height());
    if sw == new_width && sh == new_height {
        return Ok(image.clone());
    }
    let sx_scale = sw as f64 / new_width as f64;
    let sy_scale = sh as f64 / new_height as f64;
    let mut out = Vec::with_capacity(new_width * new_height);
    for dy in 0..new_height {
        let sy = (dy as f64 + 0.5) * sy_scale - 0.5;
        let y0 = sy.floor();
        let ty = sy - y0;
        let y0c = (y0 as isize).clamp(0, sh as isize - 1) as usize;
        let y1c = (y0 as isize + 1).clamp(0, sh as isize - 1) as usize;
        for dx in 0..new_width {
            let sx = (dx as f64 + 0.5) * sx_scale - 0.5;
            let x0 = sx.floor();
            let tx = sx - x0;
            let x0c = (x0 as isize).clamp(0, sw as isize - 1) as usize;
            let x1c = (x0 as isize + 1).clamp(0, sw as isize - 1) as usize;
            let v00 = image.get(x0c, y0c);
            let v10 = image.get(x1c, y0c);
            let v01 = image.get(x0c, y1c);
            let v11 = image.get(x1c, y1c);
            let top = v00 + tx * (v10 - v00);
            let bot = v01 + tx * (v11 - v01);
            out.push(top + ty * (bot - top));
        }
    }
    GrayImage::new(new_width, new_height, out)
}

/// Nearest-neighbor resampling for masks, same half-pixel-center convention
/// as [`resize_bilinear`].
pub fn resize_nearest_mask(mask: &BinaryMask, new_width: usize, new_height: usize) -> Result<BinaryMask> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::Invalid("resize target dimensions must be >= 1".into()));
    }
    let (sw, sh) = (mask.width(), mask.height());
    let sx_scale = sw as f64 / new_width as f64;
    let sy_scale = sh as f64 / new_height as f64;
    let mut out = Vec::with_capacity(new_width * new_height);
    for dy in 0..new_height {
        let sy = ((dy as f64 + 0.5) * sy_scale - 0.5).round();
        let yc = (sy as isize).clamp(0, sh as isize - 1) as usize;
        for dx in 0..new_width {
            let sx = ((dx as f64 + 0.5) * sx_scale - 0.5).round();
            let xc = (sx as isize).clamp(0, sw as isize - 1) as usize;
            out.push(mask.get(xc, yc));
        }
    }
    BinaryMask::new(new_width, new_height, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(GrayImage::new(3, 3, vec![0.0; 8]).is_err());
        assert!(BinaryMask::new(3, 3, vec![false; 10]).is_err());
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = GrayImage::new(4, 3, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        let out = resize_bilinear(&img, 4, 3).unwrap();
        assert_eq!(img, out);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = GrayImage::filled(5, 7, 0.37);
        for (w, h) in [(1, 1), (3, 11), (13, 2), (20, 20)] {
            let out = resize_bilinear(&img, w, h).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn resize_2x1_to_4x1_matches_hand_evaluated_centers() {
        // Centers at sx = {-0.25, 0.25, 0.75, 1.25}, edge-clamped.
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 4, 1).unwrap();
        let expected = [0.0, 0.25, 0.75, 1.0];
        for (o, e) in out.data().iter().zip(expected) {
            assert!((o - e).abs() < 1e-12, "{o} vs {e}");
        }
    }

    #[test]
    fn resize_zero_dim_errors() {
        let img = GrayImage::filled(4, 4, 0.5);
        assert!(resize_bilinear(&img, 0, 4).is_err());
        assert!(resize_bilinear(&img, 4, 0).is_err());
    }

    #[test]
    fn resize_respects_input_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (w, h) = (rng.gen_range(2..12), rng.gen_range(2..12));
            let data: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
            let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let img = GrayImage::new(w, h, data).unwrap();
            let out = resize_bilinear(&img, rng.gen_range(1..24), rng.gen_range(1..24)).unwrap();
            for &v in out.data() {
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn components_empty_mask() {
        let mask = BinaryMask::empty(6, 6);
        let lab = connected_components(&mask, Connectivity::Four);
        assert!(lab.components.is_empty());
    }

    #[test]
    fn components_diagonal_adjacency() {
        let mut mask = BinaryMask::empty(4, 4);
        mask.set(1, 1, true);
        mask.set(2, 2, true);
        assert_eq!(connected_components(&mask, Connectivity::Four).components.len(), 2);
        assert_eq!(connected_components(&mask, Connectivity::Eight).components.len(), 1);
    }

    /// Independent oracle: recursive flood fill over an explicit visit stack.
    fn flood_fill_components(mask: &BinaryMask, conn: Connectivity) -> Vec<usize> {
        let (w, h) = (mask.width(), mask.height());
        let mut seen = vec![false; w * h];
        let mut areas = Vec::new();
        for start in 0..w * h {
            if !mask.data()[start] || seen[start] {
                continue;
            }
            let mut area = 0;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(p) = stack.pop() {
                area += 1;
                let (x, y) = (p % w, p / w);
                let mut push = |nx: isize, ny: isize| {
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                        let q = ny as usize * w + nx as usize;
                        if mask.data()[q] && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                };
                push(x as isize - 1, y as isize);
                push(x as isize + 1, y as isize);
                push(x as isize, y as isize - 1);
                push(x as isize, y as isize + 1);
                if matches!(conn, Connectivity::Eight) {
                    push(x as isize - 1, y as isize - 1);
                    push(x as isize + 1, y as isize - 1);
                    push(x as isize - 1, y as isize + 1);
                    push(x as isize + 1, y as isize + 1);
                }
            }
            areas.push(area);
        }
        areas.sort_unstable();
        areas
    }

    #[test]
    fn components_match_flood_fill_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        for case in 0..100 {
            let (w, h) = (rng.gen_range(1..24), rng.gen_range(1..24));
            let data: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.45)).collect();
            let mask = BinaryMask::new(w, h, data).unwrap();
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let lab = connected_components(&mask, conn);
                let mut areas: Vec<usize> = lab.components.iter().map(|c| c.area).collect();
                areas.sort_unstable();
                assert_eq!(areas, flood_fill_components(&mask, conn), "case {case}");
                let total: usize = lab.components.iter().map(|c| c.area).sum();
                assert_eq!(total, mask.count());
                for (k, c) in lab.components.iter().enumerate() {
                    assert_eq!(c.id as usize, k + 1);
                    let counted = lab.labels.iter().filter(|&&l| l == c.id).count();
                    assert_eq!(counted, c.area);
                }
            }
        }
    }

    #[test]
    fn component_area_multiset_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let (w, h) = (10usize, 8usize);
            let data: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.4)).collect();
            let mask = BinaryMask::new(w, h, data).unwrap();
            // translate by (2, 3) inside a larger canvas
            let mut shifted = BinaryMask::empty(w + 4, h + 4);
            for y in 0..h {
                for x in 0..w {
                    if mask.get(x, y) {
                        shifted.set(x + 2, y + 3, true);
                    }
                }
            }
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let mut a: Vec<usize> = connected_components(&mask, conn)
                    .components
                    .iter()
                    .map(|c| c.area)
                    .collect();
                let mut b: Vec<usize> = connected_components(&shifted, conn)
                    .components
                    .iter()
                    .map(|c| c.area)
                    .collect();
                a.sort_unstable();
                b.sort_unstable();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn volume_slice_matches_independent_image() {
        let data: Vec<f32> = (0..4 * 4 * 3).map(|i| (i as f32) / 47.0).collect();
        let vol = Volume::new(4, 4, 3, data.clone()).unwrap();
        let k = 1;
        let img = vol.slice(k).unwrap();
        let direct = GrayImage::new(
            4,
            4,
            data[16..32].iter().map(|&v| v as f64).collect(),
        )
        .unwrap();
        assert_eq!(img, direct);
    }
}
