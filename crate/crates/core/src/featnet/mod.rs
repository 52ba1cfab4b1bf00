//! Compact convolutional feature extractors.
//!
//! Two networks share one architecture: a stack of `conv → ReLU → 2×2 max
//! pool` blocks, global average pooling, and a dense ReLU feature layer. The
//! writer-classification head and the optional forgery head sit on top of the
//! feature layer and are only used during training; extraction taps the
//! feature layer.
//!
//! All parameters live in one flat vector in declaration order (per block:
//! kernel then bias; feature layer; writer head; forgery head). That order is
//! also the on-disk order of the model file.

mod backprop;
mod io;
mod train;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::FloatImage;
use crate::rng::XorShiftRng;

pub use backprop::{loss_and_gradient, loss_signet, loss_signet_f};
pub use io::{decode_model, encode_model, load_model, save_model};
pub use train::{sgd_step, train, train_with_history, Objective, TrainSpec};

#[derive(Debug, Error)]
pub enum FeatNetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("invalid training spec: {0}")]
    InvalidTrainSpec(String),
    #[error("image is {got_h}x{got_w}, network expects {want_h}x{want_w}")]
    ShapeMismatch {
        want_h: usize,
        want_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("writer {writer} out of range for {num_writers} writer classes")]
    UnknownWriter { writer: usize, num_writers: usize },
    #[error("network has no forgery head")]
    MissingForgeryHead,
    #[error("network has no writer head")]
    MissingWriterHead,
    #[error("empty batch")]
    EmptyBatch,
    #[error("signet objective trains on genuine signatures only")]
    ForgedInGenuineSet,
    #[error("non-finite loss or parameter during training")]
    NonFinite,
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
}

impl ConvBlock {
    pub const fn new(out_channels: usize, kernel_size: usize, stride: usize) -> Self {
        ConvBlock {
            out_channels,
            kernel_size,
            stride,
        }
    }
}

/// Architecture plus initialization seed. `num_writers = 0` means no writer
/// head; otherwise it must be at least 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub feature_dim: usize,
    pub num_writers: usize,
    pub forgery_head: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_height: 170,
            input_width: 242,
            conv_blocks: vec![
                ConvBlock::new(16, 3, 1),
                ConvBlock::new(32, 3, 1),
                ConvBlock::new(64, 3, 1),
            ],
            feature_dim: 128,
            num_writers: 2,
            forgery_head: false,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), FeatNetError> {
        let bad = |m: String| Err(FeatNetError::InvalidConfig(m));
        if self.input_height == 0 || self.input_width == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        if self.num_writers == 1 {
            return bad("writer head needs at least 2 writers".into());
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 || b.stride == 0 {
                return bad(format!("block {i}: channels and stride must be positive"));
            }
            if b.kernel_size % 2 == 0 {
                return bad(format!("block {i}: kernel size {} is even", b.kernel_size));
            }
        }
        Ok(())
    }

    pub fn has_writer_head(&self) -> bool {
        self.num_writers >= 2
    }
}

/// Spatial geometry of one block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockShape {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub conv_h: usize,
    pub conv_w: usize,
    pub pool_h: usize,
    pub pool_w: usize,
    pub w_off: usize,
    pub b_off: usize,
}

/// Offsets of every parameter group in the flat vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub blocks: Vec<BlockShape>,
    pub gap_dim: usize,
    pub feat_w: usize,
    pub feat_b: usize,
    pub writer_w: usize,
    pub writer_b: usize,
    pub forgery_w: usize,
    pub forgery_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn of(cfg: &NetConfig) -> Layout {
        let mut off = 0;
        let (mut c, mut h, mut w) = (1, cfg.input_height, cfg.input_width);
        let mut blocks = Vec::with_capacity(cfg.conv_blocks.len());
        for b in &cfg.conv_blocks {
            let conv_h = (h - 1) / b.stride + 1;
            let conv_w = (w - 1) / b.stride + 1;
            let shape = BlockShape {
                in_c: c,
                in_h: h,
                in_w: w,
                out_c: b.out_channels,
                k: b.kernel_size,
                stride: b.stride,
                conv_h,
                conv_w,
                pool_h: conv_h.div_ceil(2),
                pool_w: conv_w.div_ceil(2),
                w_off: off,
                b_off: off + b.out_channels * c * b.kernel_size * b.kernel_size,
            };
            off = shape.b_off + b.out_channels;
            blocks.push(shape);
            c = shape.out_c;
            h = shape.pool_h;
            w = shape.pool_w;
        }
        let gap_dim = c;
        let feat_w = off;
        let feat_b = feat_w + cfg.feature_dim * gap_dim;
        off = feat_b + cfg.feature_dim;
        let writers = if cfg.has_writer_head() {
            cfg.num_writers
        } else {
            0
        };
        let writer_w = off;
        let writer_b = writer_w + writers * cfg.feature_dim;
        off = writer_b + writers;
        let forgery_w = off;
        let forgery_b = forgery_w + if cfg.forgery_head { cfg.feature_dim } else { 0 };
        off = forgery_b + usize::from(cfg.forgery_head);
        Layout {
            blocks,
            gap_dim,
            feat_w,
            feat_b,
            writer_w,
            writer_b,
            forgery_w,
            forgery_b,
            total: off,
        }
    }
}

/// Output of the feature layer for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// One training example for the extractors.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: FloatImage,
    pub writer: usize,
    pub forged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatNet {
    config: NetConfig,
    params: Vec<f64>,
}

/// Deterministic initialization: weights uniform in `±sqrt(6 / fan_in)`,
/// rounded to `f32` so the model file stores them exactly; biases zero.
pub fn init_network(cfg: &NetConfig) -> Result<FeatNet, FeatNetError> {
    cfg.validate()?;
    let layout = Layout::of(cfg);
    let mut params = vec![0.0; layout.total];
    let mut rng = XorShiftRng::seed_from(cfg.seed);
    let mut fill = |params: &mut [f64], fan_in: usize| {
        let bound = (6.0 / fan_in as f64).sqrt();
        for p in params {
            *p = ((2.0 * rng.unit() - 1.0) * bound) as f32 as f64;
        }
    };
    for b in &layout.blocks {
        fill(&mut params[b.w_off..b.b_off], b.in_c * b.k * b.k);
    }
    fill(&mut params[layout.feat_w..layout.feat_b], layout.gap_dim);
    fill(&mut params[layout.writer_w..layout.writer_b], cfg.feature_dim);
    fill(&mut params[layout.forgery_w..layout.forgery_b], cfg.feature_dim);
    Ok(FeatNet {
        config: cfg.clone(),
        params,
    })
}

impl FeatNet {
    pub(crate) fn from_parts(config: NetConfig, params: Vec<f64>) -> Result<Self, FeatNetError> {
        config.validate()?;
        let want = Layout::of(&config).total;
        if params.len() != want {
            return Err(FeatNetError::CorruptFile(format!(
                "expected {want} parameters, found {}",
                params.len()
            )));
        }
        Ok(FeatNet { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::of(&self.config)
    }

    pub(crate) fn check_input(&self, img: &FloatImage) -> Result<(), FeatNetError> {
        let (want_h, want_w) = (self.config.input_height, self.config.input_width);
        if img.height() != want_h || img.width() != want_w {
            return Err(FeatNetError::ShapeMismatch {
                want_h,
                want_w,
                got_h: img.height(),
                got_w: img.width(),
            });
        }
        Ok(())
    }

    /// Rounds every parameter to the nearest `f32`.
    pub(crate) fn quantize(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }
}

/// Activations kept for the backward pass.
pub(crate) struct Trace {
    /// Input to each block (block 0 gets the image).
    pub block_inputs: Vec<Vec<f64>>,
    /// Post-ReLU conv output of each block.
    pub conv_out: Vec<Vec<f64>>,
    /// For each pooled cell, the index of the winning conv cell.
    pub pool_argmax: Vec<Vec<usize>>,
    pub gap: Vec<f64>,
    pub features: Vec<f64>,
}

pub(crate) fn conv_forward(x: &[f64], s: &BlockShape, params: &[f64]) -> Vec<f64> {
    let pad = s.k / 2;
    let plane = s.conv_h * s.conv_w;
    let mut out = vec![0.0; s.out_c * plane];
    for o in 0..s.out_c {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(params[s.b_off + o]);
        for c in 0..s.in_c {
            let src = &x[c * s.in_h * s.in_w..(c + 1) * s.in_h * s.in_w];
            for i in 0..s.k {
                for j in 0..s.k {
                    let wv = params[s.w_off + ((o * s.in_c + c) * s.k + i) * s.k + j];
                    for oy in 0..s.conv_h {
                        let iy = (oy * s.stride + i) as isize - pad as isize;
                        if iy < 0 || iy >= s.in_h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * s.in_w..(iy as usize + 1) * s.in_w];
                        let drow = &mut dst[oy * s.conv_w..(oy + 1) * s.conv_w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * s.stride + j) as isize - pad as isize;
                            if ix >= 0 && ix < s.in_w as isize {
                                *d += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2×2 stride-2 max pool; edge windows use whatever cells exist. Ties go to
/// the first cell in row-major order.
pub(crate) fn max_pool(input: &[f64], s: &BlockShape) -> (Vec<f64>, Vec<usize>) {
    let n = s.out_c * s.pool_h * s.pool_w;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for c in 0..s.out_c {
        let base = c * s.conv_h * s.conv_w;
        for py in 0..s.pool_h {
            for px in 0..s.pool_w {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for y in (2 * py)..(2 * py + 2).min(s.conv_h) {
                    for x in (2 * px)..(2 * px + 2).min(s.conv_w) {
                        let i = base + y * s.conv_w + x;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Dense layer `W x + b` with `W` stored row-major (`rows × x.len()`).
pub(crate) fn dense(params: &[f64], w_off: usize, b_off: usize, x: &[f64], rows: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let w = &params[w_off + r * x.len()..w_off + (r + 1) * x.len()];
            params[b_off + r] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

impl FeatNet {
    /// Runs the trunk up to the feature layer, keeping activations.
    pub(crate) fn forward_trace(&self, img: &FloatImage) -> Trace {
        let layout = self.layout();
        let p = &self.params;
        let mut x = img.values().to_vec();
        let mut block_inputs = Vec::with_capacity(layout.blocks.len());
        let mut conv_out = Vec::with_capacity(layout.blocks.len());
        let mut pool_argmax = Vec::with_capacity(layout.blocks.len());
        for s in &layout.blocks {
            let mut y = conv_forward(&x, s, p);
            relu_in_place(&mut y);
            let (pooled, arg) = max_pool(&y, s);
            block_inputs.push(std::mem::replace(&mut x, pooled));
            conv_out.push(y);
            pool_argmax.push(arg);
        }
        let plane = x.len() / layout.gap_dim;
        let gap: Vec<f64> = x
            .chunks(plane)
            .map(|ch| ch.iter().sum::<f64>() / plane as f64)
            .collect();
        let mut features = dense(p, layout.feat_w, layout.feat_b, &gap, self.config.feature_dim);
        relu_in_place(&mut features);
        Trace {
            block_inputs,
            conv_out,
            pool_argmax,
            gap,
            features,
        }
    }

    pub(crate) fn writer_logits(&self, features: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let rows = if self.config.has_writer_head() {
            self.config.num_writers
        } else {
            0
        };
        dense(&self.params, l.writer_w, l.writer_b, features, rows)
    }

    pub(crate) fn forgery_logit(&self, features: &[f64]) -> Option<f64> {
        if !self.config.forgery_head {
            return None;
        }
        let l = self.layout();
        Some(dense(&self.params, l.forgery_w, l.forgery_b, features, 1)[0])
    }
}

/// Feature-layer activations (post-ReLU) for one image.
pub fn forward_features(net: &FeatNet, img: &FloatImage) -> Result<FeatureVector, FeatNetError> {
    net.check_input(img)?;
    let t = net.forward_trace(img);
    Ok(FeatureVector(t.features.iter().map(|&v| v as f32).collect()))
}

/// Row `i` is `forward_features(net, images[i])`. Rows are computed in
/// parallel; order is preserved.
pub fn extract_batch(net: &FeatNet, images: &[FloatImage]) -> Result<Array2<f64>, FeatNetError> {
    for img in images {
        net.check_input(img)?;
    }
    let dim = net.feature_dim();
    let rows: Vec<FeatureVector> = images
        .par_iter()
        .map(|img| forward_features(net, img))
        .collect::<Result<_, _>>()?;
    let flat: Vec<f64> = rows
        .iter()
        .flat_map(|r| r.as_slice().iter().map(|&v| v as f64))
        .collect();
    Ok(Array2::from_shape_vec((images.len(), dim), flat).expect("row lengths equal feature_dim"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> NetConfig {
        NetConfig {
            input_height: 6,
            input_width: 7,
            conv_blocks: vec![ConvBlock::new(2, 3, 1), ConvBlock::new(3, 3, 2)],
            feature_dim: 4,
            num_writers: 3,
            forgery_head: true,
            seed: 5,
        }
    }

    fn image(h: usize, w: usize, seed: u64) -> FloatImage {
        let mut rng = XorShiftRng::seed_from(seed);
        FloatImage::new(h, w, (0..h * w).map(|_| rng.unit()).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = toy_config();
        let a = init_network(&cfg).unwrap();
        let b = init_network(&cfg).unwrap();
        assert_eq!(a, b);
        let c = init_network(&NetConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn init_biases_zero_and_weights_bounded() {
        let cfg = toy_config();
        let net = init_network(&cfg).unwrap();
        let l = net.layout();
        for b in &l.blocks {
            assert!(net.params()[b.b_off..b.b_off + b.out_c].iter().all(|&v| v == 0.0));
            let bound = (6.0 / (b.in_c * b.k * b.k) as f64).sqrt();
            assert!(net.params()[b.w_off..b.b_off].iter().all(|v| v.abs() <= bound));
        }
        assert!(net.params().iter().all(|&v| v == v as f32 as f64));
    }

    #[test]
    fn even_kernel_rejected() {
        let mut cfg = toy_config();
        cfg.conv_blocks[0].kernel_size = 4;
        assert!(matches!(init_network(&cfg), Err(FeatNetError::InvalidConfig(_))));
    }

    #[test]
    fn one_writer_rejected() {
        let cfg = NetConfig { num_writers: 1, ..toy_config() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn layout_counts_parameters() {
        let l = Layout::of(&toy_config());
        // block0: 2*1*9+2, block1: 3*2*9+3, feat: 4*3+4, writer: 3*4+3, forgery: 4+1
        assert_eq!(l.total, 20 + 57 + 16 + 15 + 5);
        // 6x7 -> conv 6x7 -> pool 3x4 -> conv(stride 2) 2x2 -> pool 1x1
        assert_eq!((l.blocks[1].conv_h, l.blocks[1].conv_w), (2, 2));
        assert_eq!((l.blocks[1].pool_h, l.blocks[1].pool_w), (1, 1));
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_features() {
        let net = init_network(&toy_config()).unwrap();
        let f = forward_features(&net, &FloatImage::zeros(6, 7)).unwrap();
        assert_eq!(f.len(), 4);
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let net = init_network(&toy_config()).unwrap();
        assert!(matches!(
            forward_features(&net, &FloatImage::zeros(5, 7)),
            Err(FeatNetError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn single_block_matches_hand_rolled_forward() {
        let cfg = NetConfig {
            input_height: 3,
            input_width: 3,
            conv_blocks: vec![ConvBlock::new(2, 3, 1)],
            feature_dim: 2,
            num_writers: 0,
            forgery_head: false,
            seed: 17,
        };
        let mut net = init_network(&cfg).unwrap();
        // non-zero biases so every path is exercised
        let l = net.layout();
        net.params_mut()[l.blocks[0].b_off] = 0.05;
        net.params_mut()[l.feat_b + 1] = 0.1;
        let img = image(3, 3, 3);
        let p = net.params().to_vec();

        // oracle: zero-padded 3x3 conv, ReLU, 2x2 pool (ceil), GAP, dense, ReLU
        let px = |y: i32, x: i32| {
            if (0..3).contains(&y) && (0..3).contains(&x) {
                img.get(y as usize, x as usize)
            } else {
                0.0
            }
        };
        let mut gap = [0.0; 2];
        for o in 0..2 {
            let mut maps = [[0.0f64; 3]; 3];
            for (y, row) in maps.iter_mut().enumerate() {
                for (x, cell) in row.iter_mut().enumerate() {
                    let mut acc = p[18 + o];
                    for i in 0..3 {
                        for j in 0..3 {
                            acc += p[o * 9 + i * 3 + j] * px(y as i32 + i as i32 - 1, x as i32 + j as i32 - 1);
                        }
                    }
                    *cell = acc.max(0.0);
                }
            }
            let pools = [
                maps[0][0].max(maps[0][1]).max(maps[1][0]).max(maps[1][1]),
                maps[0][2].max(maps[1][2]),
                maps[2][0].max(maps[2][1]),
                maps[2][2],
            ];
            gap[o] = pools.iter().sum::<f64>() / 4.0;
        }
        let expect: Vec<f64> = (0..2)
            .map(|r| (p[l.feat_b + r] + p[l.feat_w + 2 * r] * gap[0] + p[l.feat_w + 2 * r + 1] * gap[1]).max(0.0))
            .collect();
        let got = forward_features(&net, &img).unwrap();
        for (g, e) in got.as_slice().iter().zip(&expect) {
            assert!((*g as f64 - e).abs() < 1e-6, "{g} vs {e}");
        }
    }

    #[test]
    fn batch_rows_equal_single_calls() {
        let net = init_network(&toy_config()).unwrap();
        let imgs: Vec<_> = (0..5).map(|s| image(6, 7, s)).collect();
        let mut with_dup = imgs.clone();
        with_dup.push(imgs[2].clone());
        let m = extract_batch(&net, &with_dup).unwrap();
        assert_eq!(m.dim(), (6, 4));
        for (i, img) in imgs.iter().enumerate() {
            let f = forward_features(&net, img).unwrap();
            let row: Vec<f64> = f.as_slice().iter().map(|&v| v as f64).collect();
            assert_eq!(m.row(i).to_vec(), row);
        }
        assert_eq!(m.row(2), m.row(5));
    }

    #[test]
    fn empty_batch_has_zero_rows() {
        let net = init_network(&toy_config()).unwrap();
        assert_eq!(extract_batch(&net, &[]).unwrap().dim(), (0, 4));
    }
}
