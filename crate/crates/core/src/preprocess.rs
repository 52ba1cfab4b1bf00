//! Scanned signature → fixed-size float raster.
//!
//! The pipeline is: decode to 8-bit luminance, clear the background with an
//! Otsu threshold, move the ink centroid to the centre of a fixed canvas,
//! invert so that background is 0 and ink approaches 1, then resample to the
//! network input size.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format (PNG and binary PGM only): {0}")]
    UnsupportedFormat(PathBuf),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("image has no ink pixels after background removal")]
    NoInk,
    #[error("invalid image dimensions {height}x{width} for {len} pixels")]
    InvalidDimensions {
        height: usize,
        width: usize,
        len: usize,
    },
    #[error("invalid preprocessing config: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// 8-bit grayscale raster, row-major, 255 = white paper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self, PreprocessError> {
        if height == 0 || width == 0 || height * width != pixels.len() {
            return Err(PreprocessError::InvalidDimensions {
                height,
                width,
                len: pixels.len(),
            });
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        GrayImage {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

/// Row-major raster with values in `[0, 1]`; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FloatImage {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, PreprocessError> {
        if height == 0 || width == 0 || height * width != values.len() {
            return Err(PreprocessError::InvalidDimensions {
                height,
                width,
                len: values.len(),
            });
        }
        Ok(FloatImage {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        FloatImage {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub canvas_height: usize,
    pub canvas_width: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            canvas_height: 840,
            canvas_width: 1360,
            out_height: 170,
            out_width: 242,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let dims = [
            self.canvas_height,
            self.canvas_width,
            self.out_height,
            self.out_width,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(PreprocessError::InvalidConfig(
                "all dimensions must be positive".into(),
            ));
        }
        if self.out_height > self.canvas_height || self.out_width > self.canvas_width {
            return Err(PreprocessError::InvalidConfig(format!(
                "output {}x{} larger than canvas {}x{}",
                self.out_height, self.out_width, self.canvas_height, self.canvas_width
            )));
        }
        Ok(())
    }
}

/// Integer luminance `round(0.299 R + 0.587 G + 0.114 B)`.
#[inline]
fn luminance(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Composites onto white paper.
#[inline]
fn over_white(v: u8, alpha: u8) -> u8 {
    let a = alpha as f64 / 255.0;
    (v as f64 * a + 255.0 * (1.0 - a)).round() as u8
}

pub fn load_grayscale(path: impl AsRef<Path>) -> Result<GrayImage, PreprocessError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PreprocessError::FileNotFound(path.to_path_buf()),
        _ => PreprocessError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    decode_grayscale(&bytes).map_err(|e| match e {
        DecodeFailure::Unsupported => PreprocessError::UnsupportedFormat(path.to_path_buf()),
        DecodeFailure::Corrupt(reason) => PreprocessError::Decode {
            path: path.to_path_buf(),
            reason,
        },
    })
}

enum DecodeFailure {
    Unsupported,
    Corrupt(String),
}

fn decode_grayscale(bytes: &[u8]) -> Result<GrayImage, DecodeFailure> {
    let format = if bytes.starts_with(PNG_SIGNATURE) {
        ImageFormat::Png
    } else if bytes.starts_with(b"P5") {
        ImageFormat::Pnm
    } else {
        return Err(DecodeFailure::Unsupported);
    };
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| DecodeFailure::Corrupt(e.to_string()))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let pixels: Vec<u8> = match &decoded {
        DynamicImage::ImageLuma8(buf) => buf.as_raw().clone(),
        img if img.color().has_color() => img
            .to_rgba8()
            .pixels()
            .map(|p| over_white(luminance(p[0], p[1], p[2]), p[3]))
            .collect(),
        img if img.color().has_alpha() => img
            .to_luma_alpha8()
            .pixels()
            .map(|p| over_white(p[0], p[1]))
            .collect(),
        img => img.to_luma8().into_raw(),
    };
    GrayImage::new(height, width, pixels).map_err(|e| DecodeFailure::Corrupt(e.to_string()))
}

/// Otsu's threshold over the 256-bin histogram. Pixels `<= t` form the ink
/// class. Among equally good levels the smallest wins; a constant image
/// returns its own level.
pub fn otsu_threshold(img: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let n = img.pixels().len() as i128;
    let total: i128 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as i128 * c as i128)
        .sum();
    if hist.iter().filter(|&&c| c > 0).count() == 1 {
        return img.pixels()[0];
    }

    // sigma_b^2 * n^2 = (n*s0 - n0*S)^2 / (n0*n1); numerator is exact.
    let mut best_t = 0u8;
    let mut best = f64::NEG_INFINITY;
    let (mut n0, mut s0) = (0i128, 0i128);
    for t in 0..256usize {
        n0 += hist[t] as i128;
        s0 += t as i128 * hist[t] as i128;
        let n1 = n - n0;
        let score = if n0 == 0 || n1 == 0 {
            0.0
        } else {
            let diff = (n * s0 - n0 * total) as f64;
            diff * diff / (n0 as f64 * n1 as f64)
        };
        if score > best {
            best = score;
            best_t = t as u8;
        }
    }
    best_t
}

/// Everything brighter than the Otsu level becomes pure white.
pub fn remove_background(img: &GrayImage) -> GrayImage {
    let t = otsu_threshold(img);
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| if p > t { 255 } else { p })
        .collect();
    GrayImage {
        height: img.height,
        width: img.width,
        pixels,
    }
}

/// `round(num / den)` with halves rounded up, exact for integers.
fn div_round_half_up(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    (2 * num + den).div_euclid(2 * den)
}

/// Pastes `img` onto a white canvas so the centroid of its ink pixels
/// (anything below 255) sits on the canvas centre. Ink that falls outside the
/// canvas is cropped.
pub fn center_on_canvas(
    img: &GrayImage,
    cfg: &PreprocessConfig,
) -> Result<GrayImage, PreprocessError> {
    let (mut count, mut sum_y, mut sum_x) = (0i64, 0i64, 0i64);
    for y in 0..img.height {
        for x in 0..img.width {
            if img.get(y, x) < 255 {
                count += 1;
                sum_y += y as i64;
                sum_x += x as i64;
            }
        }
    }
    if count == 0 {
        return Err(PreprocessError::NoInk);
    }
    let (ch, cw) = (cfg.canvas_height as i64, cfg.canvas_width as i64);
    // offset = round((canvas - 1)/2 - sum/count), evaluated over 2*count.
    let dy = div_round_half_up(count * (ch - 1) - 2 * sum_y, 2 * count);
    let dx = div_round_half_up(count * (cw - 1) - 2 * sum_x, 2 * count);

    let mut canvas = GrayImage::filled(cfg.canvas_height, cfg.canvas_width, 255);
    for y in 0..img.height {
        let ty = y as i64 + dy;
        if ty < 0 || ty >= ch {
            continue;
        }
        for x in 0..img.width {
            let tx = x as i64 + dx;
            if tx < 0 || tx >= cw {
                continue;
            }
            canvas.set(ty as usize, tx as usize, img.get(y, x));
        }
    }
    Ok(canvas)
}

pub fn invert_normalize(img: &GrayImage) -> FloatImage {
    FloatImage {
        height: img.height,
        width: img.width,
        values: img
            .pixels()
            .iter()
            .map(|&p| (255 - p) as f64 / 255.0)
            .collect(),
    }
}

/// Source coordinate for output index `i` under corner-aligned sampling.
#[inline]
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in - 1) as f64 / 2.0
    } else {
        (i * (n_in - 1)) as f64 / (n_out - 1) as f64
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear resampling with the corner pixels of input and output aligned.
pub fn resize_bilinear(img: &FloatImage, out_h: usize, out_w: usize) -> FloatImage {
    assert!(out_h >= 1 && out_w >= 1, "output dimensions must be positive");
    let (h, w) = (img.height, img.width);
    let mut values = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let sy = source_coord(oy, h, out_h);
        let y0 = (sy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = source_coord(ox, w, out_w);
            let x0 = (sx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let top = lerp(img.get(y0, x0), img.get(y0, x1), fx);
            let bottom = lerp(img.get(y1, x0), img.get(y1, x1), fx);
            values.push(lerp(top, bottom, fy).clamp(0.0, 1.0));
        }
    }
    FloatImage {
        height: out_h,
        width: out_w,
        values,
    }
}

/// In-memory form of [`preprocess_pipeline`].
pub fn preprocess_image(
    img: &GrayImage,
    cfg: &PreprocessConfig,
) -> Result<FloatImage, PreprocessError> {
    cfg.validate()?;
    let cleaned = remove_background(img);
    let centered = center_on_canvas(&cleaned, cfg)?;
    let normalized = invert_normalize(&centered);
    Ok(resize_bilinear(&normalized, cfg.out_height, cfg.out_width))
}

pub fn preprocess_pipeline(
    path: impl AsRef<Path>,
    cfg: &PreprocessConfig,
) -> Result<FloatImage, PreprocessError> {
    cfg.validate()?;
    let img = load_grayscale(path)?;
    preprocess_image(&img, cfg)
}

/// Reads an image written by [`write_pgm`] back into `[0, 1]` ink units
/// (8-bit precision).
pub fn load_preprocessed(path: impl AsRef<Path>) -> Result<FloatImage, PreprocessError> {
    Ok(invert_normalize(&load_grayscale(path)?))
}

/// Writes a float raster as an 8-bit binary PGM (ink dark, background white).
pub fn write_pgm(img: &FloatImage, path: impl AsRef<Path>) -> Result<(), PreprocessError> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(
        img.values
            .iter()
            .map(|v| 255 - (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(|source| PreprocessError::Io {
        path: path.to_path_buf(),
        source,
    })
}
