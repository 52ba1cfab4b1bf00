//! Synthetic signature corpus: parametric pen-stroke glyphs per writer, with
//! genuine repetitions and skilled-forgery variants, written in the CEDAR
//! directory layout.
//!
//! A writer's signature is one continuous stroke
//!
//! ```text
//! x(s) = L s + Σ_k a_k sin(2π f_k s + φ_k)
//! y(s) =       Σ_k b_k sin(2π g_k s + ψ_k),   s ∈ [0, 1]
//! ```
//!
//! rendered with a round pen. Genuine samples jitter the writer's
//! parameters slightly; forgeries jitter them more, add a fast tremor and
//! use a heavier pen.
//!
//! Small tabular generators for exercising the classifiers live here too.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};
use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::preprocess::GrayImage;
use crate::rng::XorShiftRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub writers: usize,
    pub genuine_per_writer: usize,
    pub forged_per_writer: usize,
    pub page_height: usize,
    pub page_width: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            writers: 40,
            genuine_per_writer: 6,
            forged_per_writer: 6,
            page_height: 72,
            page_width: 108,
            seed: 0,
        }
    }
}

const HARMONICS: usize = 3;

#[derive(Debug, Clone)]
struct Glyph {
    length: f64,
    ax: [f64; HARMONICS],
    fx: [f64; HARMONICS],
    px: [f64; HARMONICS],
    ay: [f64; HARMONICS],
    fy: [f64; HARMONICS],
    py: [f64; HARMONICS],
}

impl Glyph {
    fn random(rng: &mut XorShiftRng, page_w: f64, page_h: f64) -> Glyph {
        let mut arr = |lo: f64, hi: f64| {
            let mut a = [0.0; HARMONICS];
            for v in &mut a {
                *v = lo + (hi - lo) * rng.unit();
            }
            a
        };
        let ax = arr(0.02 * page_w, 0.06 * page_w);
        let fx = arr(1.0, 4.0);
        let px = arr(0.0, std::f64::consts::TAU);
        let ay = arr(0.06 * page_h, 0.14 * page_h);
        let fy = arr(1.5, 6.0);
        let py = arr(0.0, std::f64::consts::TAU);
        Glyph {
            length: (0.45 + 0.2 * rng.unit()) * page_w,
            ax,
            fx,
            px,
            ay,
            fy,
            py,
        }
    }

    /// Multiplicative jitter on amplitudes/frequencies, additive on phases.
    fn perturbed(&self, rng: &mut XorShiftRng, rel: f64) -> Glyph {
        let n = Normal::new(0.0, rel).expect("positive sigma");
        let mut g = self.clone();
        g.length *= 1.0 + n.sample(rng);
        for k in 0..HARMONICS {
            g.ax[k] *= 1.0 + n.sample(rng);
            g.ay[k] *= 1.0 + n.sample(rng);
            g.fx[k] *= 1.0 + 0.5 * n.sample(rng);
            g.fy[k] *= 1.0 + 0.5 * n.sample(rng);
            g.px[k] += n.sample(rng);
            g.py[k] += n.sample(rng);
        }
        g
    }

    fn point(&self, s: f64) -> (f64, f64) {
        let tau = std::f64::consts::TAU;
        let mut x = self.length * s;
        let mut y = 0.0;
        for k in 0..HARMONICS {
            x += self.ax[k] * (tau * self.fx[k] * s + self.px[k]).sin();
            y += self.ay[k] * (tau * self.fy[k] * s + self.py[k]).sin();
        }
        (x, y)
    }
}

struct Pen {
    radius: f64,
    tremor: f64,
    ink: f64,
}

fn render(glyph: &Glyph, pen: &Pen, cfg: &SynthConfig, rng: &mut XorShiftRng) -> GrayImage {
    let (h, w) = (cfg.page_height, cfg.page_width);
    let steps = 400;
    let tremor_freq = 35.0 + 10.0 * rng.unit();
    let tremor_phase = std::f64::consts::TAU * rng.unit();
    let pts: Vec<(f64, f64)> = (0..=steps)
        .map(|i| {
            let s = i as f64 / steps as f64;
            let (x, y) = glyph.point(s);
            let wobble = pen.tremor * (std::f64::consts::TAU * tremor_freq * s + tremor_phase).sin();
            (x, y + wobble)
        })
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let margin = pen.radius + 1.0;
    let free_x = (w as f64 - (x1 - x0) - 2.0 * margin).max(0.0);
    let free_y = (h as f64 - (y1 - y0) - 2.0 * margin).max(0.0);
    let off_x = margin - x0 + free_x * rng.unit();
    let off_y = margin - y0 + free_y * rng.unit();

    // coverage from the nearest stroke sample, antialiased over one pixel
    let mut coverage = vec![0.0f64; h * w];
    let reach = pen.radius + 1.0;
    for &(px, py) in &pts {
        let (cx, cy) = (px + off_x, py + off_y);
        let ylo = (cy - reach).floor().max(0.0) as usize;
        let yhi = ((cy + reach).ceil() as isize).clamp(0, h as isize - 1) as usize;
        let xlo = (cx - reach).floor().max(0.0) as usize;
        let xhi = ((cx + reach).ceil() as isize).clamp(0, w as isize - 1) as usize;
        for yy in ylo..=yhi {
            for xx in xlo..=xhi {
                let d = ((xx as f64 - cx).powi(2) + (yy as f64 - cy).powi(2)).sqrt();
                let c = (pen.radius + 0.5 - d).clamp(0.0, 1.0);
                let slot = &mut coverage[yy * w + xx];
                if c > *slot {
                    *slot = c;
                }
            }
        }
    }
    let paper = 235.0;
    let pixels = coverage
        .iter()
        .map(|&c| {
            let base = paper - (paper - pen.ink) * c;
            (base + 12.0 * (rng.unit() - 0.5)).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(h, w, pixels).expect("dimensions match")
}

/// Renders one sample. `variant` indexes the repetition within its class.
pub fn render_sample(cfg: &SynthConfig, writer: usize, forged: bool, variant: usize) -> GrayImage {
    let (pw, ph) = (cfg.page_width as f64, cfg.page_height as f64);
    let mut wrng = XorShiftRng::derive(cfg.seed, writer as u64);
    let reference = Glyph::random(&mut wrng, pw, ph);
    let stream = ((writer as u64) << 32) | ((forged as u64) << 31) | variant as u64;
    let mut rng = XorShiftRng::derive(cfg.seed ^ 0x5EED_F00D, stream);
    if forged {
        let glyph = reference.perturbed(&mut rng, 0.12);
        let pen = Pen {
            radius: 1.6 + 0.4 * rng.unit(),
            tremor: 0.8 + 0.6 * rng.unit(),
            ink: 40.0 + 30.0 * rng.unit(),
        };
        render(&glyph, &pen, cfg, &mut rng)
    } else {
        let glyph = reference.perturbed(&mut rng, 0.03);
        let pen = Pen {
            radius: 0.9 + 0.3 * rng.unit(),
            tremor: 0.0,
            ink: 20.0 + 30.0 * rng.unit(),
        };
        render(&glyph, &pen, cfg, &mut rng)
    }
}

fn save_png(img: &GrayImage, path: &Path) -> std::io::Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
            .expect("buffer size matches");
    buf.save(path).map_err(std::io::Error::other)
}

/// Writes the corpus under `root` as `full_org/original_W_I.png` and
/// `full_forg/forgeries_W_I.png`, writers and indices counted from 1.
/// Returns the number of images written.
pub fn generate_corpus(cfg: &SynthConfig, root: impl AsRef<Path>) -> std::io::Result<usize> {
    let root = root.as_ref();
    let org = root.join("full_org");
    let forg = root.join("full_forg");
    fs::create_dir_all(&org)?;
    fs::create_dir_all(&forg)?;
    let jobs: Vec<(usize, bool, usize)> = (0..cfg.writers)
        .flat_map(|w| {
            (0..cfg.genuine_per_writer)
                .map(move |i| (w, false, i))
                .chain((0..cfg.forged_per_writer).map(move |i| (w, true, i)))
        })
        .collect();
    use rayon::prelude::*;
    jobs.par_iter().try_for_each(|&(w, forged, i)| {
        let img = render_sample(cfg, w, forged, i);
        let path = if forged {
            forg.join(format!("forgeries_{}_{}.png", w + 1, i + 1))
        } else {
            org.join(format!("original_{}_{}.png", w + 1, i + 1))
        };
        save_png(&img, &path)
    })?;
    Ok(jobs.len())
}

/// Two interleaved half circles with Gaussian jitter `noise`; label 1 is
/// the lower moon. Rows alternate between the classes.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> (Array2<f64>, Vec<u8>) {
    let mut rng = XorShiftRng::seed_from(seed);
    let jitter = Normal::new(0.0, noise).expect("noise must be non-negative");
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let t = std::f64::consts::PI * rng.unit();
        let label = (i % 2) as u8;
        let (a, b) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        x[[i, 0]] = a + jitter.sample(&mut rng);
        x[[i, 1]] = b + jitter.sample(&mut rng);
        y.push(label);
    }
    (x, y)
}

/// Feature matrices for two branches that are each informative on half of
/// the samples. Every row belongs to region A or B with equal probability.
/// In its own region a branch sees `label + N(0, noise)`; in the other it
/// sees label-free values from a disjoint range (`[4, 5)`). Returns
/// `(branch_a, branch_b, labels)`, each matrix one column wide.
pub fn complementary_branches(
    n: usize,
    noise: f64,
    seed: u64,
) -> (Array2<f64>, Array2<f64>, Vec<u8>) {
    let mut rng = XorShiftRng::seed_from(seed);
    let jitter = Normal::new(0.0, noise).expect("noise must be non-negative");
    let mut a = Array2::zeros((n, 1));
    let mut b = Array2::zeros((n, 1));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = rng.below(2) as u8;
        let informative = label as f64 + jitter.sample(&mut rng);
        let filler = 4.0 + rng.unit();
        if rng.below(2) == 0 {
            a[[i, 0]] = informative;
            b[[i, 0]] = filler;
        } else {
            a[[i, 0]] = filler;
            b[[i, 0]] = informative;
        }
        y.push(label);
    }
    (a, b, y)
}
