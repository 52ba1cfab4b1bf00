use rayon::prelude::*;

use super::{BlockShape, FeatNet, FeatNetError, LabeledImage, Objective, Trace};

/// `ln Σ exp(l)` and the softmax of `logits`.
fn log_softmax_parts(logits: &[f64]) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    (m + z.ln(), exps.into_iter().map(|e| e / z).collect())
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against target `t`, stable for large |z|.
#[inline]
fn bce_with_logit(z: f64, t: f64) -> f64 {
    z.max(0.0) - t * z + (-z.abs()).exp().ln_1p()
}

/// Per-sample loss weights for one batch.
struct Weights {
    writer: Vec<f64>,
    forgery: Vec<f64>,
}

fn batch_weights(
    net: &FeatNet,
    batch: &[LabeledImage],
    objective: Objective,
    forgery_weight: f64,
) -> Result<Weights, FeatNetError> {
    if batch.is_empty() {
        return Err(FeatNetError::EmptyBatch);
    }
    let cfg = net.config();
    for s in batch {
        net.check_input(&s.image)?;
    }
    let has_writer = cfg.has_writer_head();
    let n = batch.len() as f64;
    match objective {
        Objective::Signet => {
            if !has_writer {
                return Err(FeatNetError::MissingWriterHead);
            }
            check_writers(batch.iter(), cfg.num_writers)?;
            Ok(Weights {
                writer: vec![1.0 / n; batch.len()],
                forgery: vec![0.0; batch.len()],
            })
        }
        Objective::SignetF => {
            if !cfg.forgery_head {
                return Err(FeatNetError::MissingForgeryHead);
            }
            let genuine = batch.iter().filter(|s| !s.forged).count();
            let writer = if has_writer && genuine > 0 {
                check_writers(batch.iter().filter(|s| !s.forged), cfg.num_writers)?;
                batch
                    .iter()
                    .map(|s| if s.forged { 0.0 } else { 1.0 / genuine as f64 })
                    .collect()
            } else {
                vec![0.0; batch.len()]
            };
            Ok(Weights {
                writer,
                forgery: vec![forgery_weight / n; batch.len()],
            })
        }
    }
}

fn check_writers<'a>(
    samples: impl Iterator<Item = &'a LabeledImage>,
    num_writers: usize,
) -> Result<(), FeatNetError> {
    for s in samples {
        if s.writer >= num_writers {
            return Err(FeatNetError::UnknownWriter {
                writer: s.writer,
                num_writers,
            });
        }
    }
    Ok(())
}

/// Mean writer-classification cross-entropy over the batch.
pub fn loss_signet(net: &FeatNet, batch: &[LabeledImage]) -> Result<f64, FeatNetError> {
    let w = batch_weights(net, batch, Objective::Signet, 0.0)?;
    Ok(batch_loss(net, batch, &w))
}

/// Writer cross-entropy over the genuine samples plus `forgery_weight` times
/// the mean forgery BCE over all samples.
pub fn loss_signet_f(
    net: &FeatNet,
    batch: &[LabeledImage],
    forgery_weight: f64,
) -> Result<f64, FeatNetError> {
    let w = batch_weights(net, batch, Objective::SignetF, forgery_weight)?;
    Ok(batch_loss(net, batch, &w))
}

fn sample_loss(net: &FeatNet, features: &[f64], s: &LabeledImage, wc: f64, wf: f64) -> f64 {
    let mut loss = 0.0;
    if wc != 0.0 {
        let logits = net.writer_logits(features);
        let (lse, _) = log_softmax_parts(&logits);
        loss += wc * (lse - logits[s.writer]);
    }
    if wf != 0.0 {
        let z = net.forgery_logit(features).expect("forgery head checked");
        loss += wf * bce_with_logit(z, if s.forged { 1.0 } else { 0.0 });
    }
    loss
}

fn batch_loss(net: &FeatNet, batch: &[LabeledImage], w: &Weights) -> f64 {
    let parts: Vec<f64> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let t = net.forward_trace(&s.image);
            sample_loss(net, &t.features, s, w.writer[i], w.forgery[i])
        })
        .collect();
    parts.iter().sum()
}

/// Batch loss and its gradient with respect to every parameter.
pub fn loss_and_gradient(
    net: &FeatNet,
    batch: &[LabeledImage],
    objective: Objective,
    forgery_weight: f64,
) -> Result<(f64, Vec<f64>), FeatNetError> {
    let w = batch_weights(net, batch, objective, forgery_weight)?;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| sample_gradient(net, s, w.writer[i], w.forgery[i]))
        .collect();
    let mut grad = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    // fixed-order reduction keeps results independent of thread scheduling
    for (l, g) in parts {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    Ok((loss, grad))
}

fn sample_gradient(net: &FeatNet, s: &LabeledImage, wc: f64, wf: f64) -> (f64, Vec<f64>) {
    let layout = net.layout();
    let p = net.params();
    let cfg = net.config();
    let fd = cfg.feature_dim;
    let trace = net.forward_trace(&s.image);
    let f = &trace.features;
    let mut grad = vec![0.0; p.len()];
    let mut dfeat = vec![0.0; fd];
    let mut loss = 0.0;

    if wc != 0.0 {
        let logits = net.writer_logits(f);
        let (lse, probs) = log_softmax_parts(&logits);
        loss += wc * (lse - logits[s.writer]);
        for (r, pr) in probs.iter().enumerate() {
            let d = wc * (pr - if r == s.writer { 1.0 } else { 0.0 });
            grad[layout.writer_b + r] += d;
            let row = layout.writer_w + r * fd;
            for j in 0..fd {
                grad[row + j] += d * f[j];
                dfeat[j] += d * p[row + j];
            }
        }
    }
    if wf != 0.0 {
        let z = net.forgery_logit(f).expect("forgery head checked");
        let t = if s.forged { 1.0 } else { 0.0 };
        loss += wf * bce_with_logit(z, t);
        let d = wf * (sigmoid(z) - t);
        grad[layout.forgery_b] += d;
        for j in 0..fd {
            grad[layout.forgery_w + j] += d * f[j];
            dfeat[j] += d * p[layout.forgery_w + j];
        }
    }

    backward_trunk(net, &trace, &dfeat, &mut grad);
    (loss, grad)
}

/// Propagates the feature-layer gradient back through the conv stack.
fn backward_trunk(net: &FeatNet, trace: &Trace, dfeat: &[f64], grad: &mut [f64]) {
    let layout = net.layout();
    let p = net.params();
    let gap_dim = layout.gap_dim;

    let mut dgap = vec![0.0; gap_dim];
    for (r, (&d, &fv)) in dfeat.iter().zip(&trace.features).enumerate() {
        if fv <= 0.0 || d == 0.0 {
            continue;
        }
        grad[layout.feat_b + r] += d;
        let row = layout.feat_w + r * gap_dim;
        for j in 0..gap_dim {
            grad[row + j] += d * trace.gap[j];
            dgap[j] += d * p[row + j];
        }
    }

    let Some(last) = layout.blocks.last() else {
        return;
    };
    let plane = last.pool_h * last.pool_w;
    let mut dnext: Vec<f64> = dgap
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
        .collect();

    for (bi, s) in layout.blocks.iter().enumerate().rev() {
        let conv = &trace.conv_out[bi];
        let mut dconv = vec![0.0; conv.len()];
        for (k, &src) in trace.pool_argmax[bi].iter().enumerate() {
            dconv[src] += dnext[k];
        }
        for (d, &a) in dconv.iter_mut().zip(conv) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        let want_input = bi > 0;
        dnext = conv_backward(&trace.block_inputs[bi], s, p, &dconv, grad, want_input);
    }
}

fn conv_backward(
    x: &[f64],
    s: &BlockShape,
    params: &[f64],
    dout: &[f64],
    grad: &mut [f64],
    want_input: bool,
) -> Vec<f64> {
    let pad = s.k / 2;
    let plane = s.conv_h * s.conv_w;
    let in_plane = s.in_h * s.in_w;
    let mut dx = if want_input {
        vec![0.0; s.in_c * in_plane]
    } else {
        Vec::new()
    };
    for o in 0..s.out_c {
        let dsrc = &dout[o * plane..(o + 1) * plane];
        grad[s.b_off + o] += dsrc.iter().sum::<f64>();
        for c in 0..s.in_c {
            let xin = &x[c * in_plane..(c + 1) * in_plane];
            for i in 0..s.k {
                for j in 0..s.k {
                    let widx = s.w_off + ((o * s.in_c + c) * s.k + i) * s.k + j;
                    let wv = params[widx];
                    let mut gw = 0.0;
                    for oy in 0..s.conv_h {
                        let iy = (oy * s.stride + i) as isize - pad as isize;
                        if iy < 0 || iy >= s.in_h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..s.conv_w {
                            let ix = (ox * s.stride + j) as isize - pad as isize;
                            if ix < 0 || ix >= s.in_w as isize {
                                continue;
                            }
                            let d = dsrc[oy * s.conv_w + ox];
                            if d == 0.0 {
                                continue;
                            }
                            let xi = iy * s.in_w + ix as usize;
                            gw += d * xin[xi];
                            if want_input {
                                dx[c * in_plane + xi] += d * wv;
                            }
                        }
                    }
                    grad[widx] += gw;
                }
            }
        }
    }
    dx
}
