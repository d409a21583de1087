//! File formats: binary PGM (P5, 8/16-bit big-endian), single-channel PNG
//! (8/16-bit), raw `f32le` volumes with a JSON sidecar header.
//!
//! Loading scales the maximum representable code to 1.0; saving quantizes by
//! round-half-up, so a save/load round trip is exact up to one quantization
//! step `1/(2^depth - 1)`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage, Volume};

/// Output bit depth for grayscale files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Eight,
    Sixteen,
}

fn quantize(v: f64, max: u32) -> u32 {
    // round half up, clamped to the representable range
    let scaled = (v.clamp(0.0, 1.0) * max as f64 + 0.5).floor();
    (scaled as u32).min(max)
}

/// Load an 8- or 16-bit single-channel image (PGM or PNG, by extension).
pub fn load_image(path: &Path) -> Result<GrayImage> {
    match extension(path) {
        Some("pgm") => load_pgm(path),
        Some("png") => load_png(path),
        _ => Err(Error::format(path, "unsupported extension (expected .pgm or .png)")),
    }
}

/// Save a grayscale image (format chosen by extension).
pub fn save_image(image: &GrayImage, path: &Path, depth: Depth) -> Result<()> {
    match extension(path) {
        Some("pgm") => save_pgm(image, path, depth),
        Some("png") => save_png(image, path, depth),
        _ => Err(Error::format(path, "unsupported extension (expected .pgm or .png)")),
    }
}

/// Load a mask: foreground is any nonzero pixel.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = load_image(path)?;
    let data = img.data().iter().map(|&v| v > 0.0).collect();
    BinaryMask::new(img.width(), img.height(), data)
}

/// Save a mask as an 8-bit image with foreground = 255.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let data = mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let img = GrayImage::new(mask.width(), mask.height(), data)?;
    save_image(&img, path, Depth::Eight)
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn load_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(Error::format(path, "not a binary PGM (P5)"));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::format(path, "bad width"))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::format(path, "bad height"))?;
    let maxval: u32 = token(&bytes)?
        .parse()
        .map_err(|_| Error::format(path, "bad maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval

    let n = width * height;
    let data: Vec<f64> = if maxval < 256 {
        let payload = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::format(path, "payload shorter than header promises"))?;
        payload.iter().map(|&b| b as f64 / maxval as f64).collect()
    } else {
        let payload = bytes
            .get(pos..pos + 2 * n)
            .ok_or_else(|| Error::format(path, "payload shorter than header promises"))?;
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    };
    GrayImage::new(width, height, data)
}

fn save_pgm(image: &GrayImage, path: &Path, depth: Depth) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let maxval: u32 = match depth {
        Depth::Eight => 255,
        Depth::Sixteen => 65535,
    };
    write!(w, "P5\n{} {}\n{}\n", image.width(), image.height(), maxval)
        .map_err(|e| Error::io(path, e))?;
    match depth {
        Depth::Eight => {
            let buf: Vec<u8> = image.data().iter().map(|&v| quantize(v, 255) as u8).collect();
            w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        }
        Depth::Sixteen => {
            let mut buf = Vec::with_capacity(image.data().len() * 2);
            for &v in image.data() {
                buf.extend_from_slice(&(quantize(v, 65535) as u16).to_be_bytes());
            }
            w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_png(path: &Path) -> Result<GrayImage> {
    let dyn_img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    match dyn_img {
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            let data = img.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
            GrayImage::new(w as usize, h as usize, data)
        }
        image::DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            let data = img.into_raw().iter().map(|&b| b as f64 / 65535.0).collect();
            GrayImage::new(w as usize, h as usize, data)
        }
        _ => Err(Error::format(path, "expected single-channel 8/16-bit PNG")),
    }
}

fn save_png(image: &GrayImage, path: &Path, depth: Depth) -> Result<()> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    match depth {
        Depth::Eight => {
            let buf: Vec<u8> = image.data().iter().map(|&v| quantize(v, 255) as u8).collect();
            let img: image::GrayImage = image::ImageBuffer::from_raw(w, h, buf)
                .expect("buffer size matches dimensions");
            img.save(path).map_err(|e| Error::format(path, e.to_string()))
        }
        Depth::Sixteen => {
            let buf: Vec<u16> = image.data().iter().map(|&v| quantize(v, 65535) as u16).collect();
            let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
                image::ImageBuffer::from_raw(w, h, buf).expect("buffer size matches dimensions");
            img.save(path).map_err(|e| Error::format(path, e.to_string()))
        }
    }
}

/// Save an RGB overlay (e.g. mask contours over a grayscale slice) as PNG.
pub fn save_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Shape(format!(
            "rgb buffer length {} != {}x{}x3",
            rgb.len(),
            width,
            height
        )));
    }
    let img: image::RgbImage =
        image::ImageBuffer::from_raw(width as u32, height as u32, rgb.to_vec())
            .expect("buffer size matches dimensions");
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    width: usize,
    height: usize,
    slices: usize,
    dtype: String,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Load a raw `f32le` volume described by a `<path>.json` sidecar.
pub fn load_volume(path: &Path) -> Result<Volume> {
    let sidecar = sidecar_path(path);
    let header: VolumeHeader = serde_json::from_slice(
        &fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?,
    )?;
    if header.dtype != "f32le" {
        return Err(Error::format(&sidecar, format!("unsupported dtype {}", header.dtype)));
    }
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = header.width * header.height * header.slices * 4;
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header promises {expected}", payload.len()),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(header.width, header.height, header.slices, data)
}

/// Save a volume as raw `f32le` plus its JSON sidecar. Round trips bit-exactly.
pub fn save_volume(volume: &Volume, path: &Path) -> Result<()> {
    let header = VolumeHeader {
        width: volume.width(),
        height: volume.height(),
        slices: volume.slices(),
        dtype: "f32le".into(),
    };
    let sidecar = sidecar_path(path);
    fs::write(&sidecar, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&sidecar, e))?;
    let mut buf = Vec::with_capacity(volume.data().len() * 4);
    for &v in volume.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap()
    }

    #[test]
    fn pgm8_full_scale_and_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        let img = GrayImage::new(2, 1, vec![1.0, 0.0]).unwrap();
        save_image(&img, &p, Depth::Eight).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.data(), &[1.0, 0.0]);
    }

    #[test]
    fn sixteen_bit_code_scales_linearly() {
        // write code 32768 by hand, expect 32768/65535
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&32768u16.to_be_bytes());
        std::fs::write(&p, bytes).unwrap();
        let img = load_image(&p).unwrap();
        assert!((img.data()[0] - 32768.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn roundtrip_16bit_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        for (i, &(w, h)) in [(7usize, 5usize), (16, 16), (3, 9)].iter().enumerate() {
            let img = random_image(100 + i as u64, w, h);
            for ext in ["pgm", "png"] {
                let p = dir.path().join(format!("t{i}.{ext}"));
                save_image(&img, &p, Depth::Sixteen).unwrap();
                let back = load_image(&p).unwrap();
                for (a, b) in img.data().iter().zip(back.data()) {
                    assert!((a - b).abs() <= 1.0 / 65535.0, "{ext}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn constant_half_quantizes_to_128() {
        // 0.5 * 255 = 127.5, round half up -> 128
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.pgm");
        save_image(&GrayImage::filled(3, 3, 0.5), &p, Depth::Eight).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let payload = &bytes[bytes.len() - 9..];
        assert!(payload.iter().all(|&b| b == 128));
    }

    #[test]
    fn empty_path_errors() {
        let img = GrayImage::filled(2, 2, 0.5);
        assert!(save_image(&img, Path::new(""), Depth::Eight).is_err());
    }

    #[test]
    fn volume_roundtrip_and_header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vol.raw");
        let data: Vec<f32> = (0..4 * 4 * 3).map(|i| i as f32 * 0.25).collect();
        let vol = Volume::new(4, 4, 3, data).unwrap();
        save_volume(&vol, &p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(vol, back);

        // corrupt: drop one scalar
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_volume(&p).is_err());
    }

    #[test]
    fn mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let mut mask = BinaryMask::empty(5, 4);
        mask.set(1, 2, true);
        mask.set(4, 3, true);
        save_mask(&mask, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), mask);
    }
}
