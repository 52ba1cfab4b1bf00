//! Stacked generalization over the two boosted branches.
//!
//! Each branch turns its feature matrix into a forgery probability; the two
//! probabilities form an `(n, 2)` matrix (column 0 = signet branch, column 1 =
//! signet-f branch) on which a two-weight logistic regression is fit.

use std::fs;
use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::sigmoid;
use crate::rgbt::{self, GbtModel, GbtParams, RgbtError};

#[derive(Debug, Error)]
pub enum StackError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("probability {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("stacking needs at least two rows")]
    EmptyInput,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("invalid combiner parameters: {0}")]
    InvalidParams(String),
    #[error("branch classifier: {0}")]
    Branch(#[from] RgbtError),
    #[error("corrupt ensemble file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row `i` is `(p_signet[i], p_signetf[i])`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StackMatrix {
    rows: Vec<[f64; 2]>,
}

impl StackMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub const fn ncols(&self) -> usize {
        2
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.rows
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows.len(), 2), |(i, j)| self.rows[i][j])
    }
}

fn check_probability(index: usize, value: f64) -> Result<(), StackError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(StackError::OutOfRange { index, value })
    }
}

pub fn stack_probs(p_signet: &[f64], p_signetf: &[f64]) -> Result<StackMatrix, StackError> {
    if p_signet.len() != p_signetf.len() {
        return Err(StackError::LengthMismatch(p_signet.len(), p_signetf.len()));
    }
    let rows = p_signet
        .iter()
        .zip(p_signetf)
        .enumerate()
        .map(|(i, (&a, &b))| {
            check_probability(i, a)?;
            check_probability(i, b)?;
            Ok([a, b])
        })
        .collect::<Result<_, StackError>>()?;
    Ok(StackMatrix { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StackModel {
    pub weights: [f64; 2],
    pub bias: f64,
}

impl StackModel {
    fn margin(&self, p1: f64, p2: f64) -> f64 {
        self.weights[0] * p1 + self.weights[1] * p2 + self.bias
    }
}

pub fn predict_stack(m: &StackModel, p1: f64, p2: f64) -> Result<f64, StackError> {
    check_probability(0, p1)?;
    check_probability(1, p2)?;
    Ok(sigmoid(m.margin(p1, p2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegParams {
    /// L2 penalty on the two weights (the bias is not penalized).
    pub reg: f64,
    /// Convergence threshold on the gradient max-norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegParams {
    fn default() -> Self {
        LogRegParams {
            reg: 1e-6,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegFit {
    pub model: StackModel,
    /// False when `max_iter` ran out or no step could decrease the objective
    /// before the gradient fell under `tol`. The model is still usable.
    pub converged: bool,
    pub iterations: usize,
    /// Objective value at the start and after every accepted step.
    pub objective: Vec<f64>,
}

const PROB_CLIP: f64 = 1e-12;

/// Mean clipped logistic loss plus `½ reg ‖w‖²`.
pub fn logreg_objective(x: &StackMatrix, y: &[f64], m: &StackModel, reg: f64) -> f64 {
    let loss: f64 = x
        .rows
        .iter()
        .zip(y)
        .map(|(r, &t)| {
            let p = sigmoid(m.margin(r[0], r[1])).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    loss / y.len() as f64 + 0.5 * reg * (m.weights[0].powi(2) + m.weights[1].powi(2))
}

fn grad_hess(x: &StackMatrix, y: &[f64], m: &StackModel, reg: f64) -> (Vector3<f64>, Matrix3<f64>) {
    let n = y.len() as f64;
    let mut g = Vector3::zeros();
    let mut h = Matrix3::zeros();
    for (r, &t) in x.rows.iter().zip(y) {
        let xi = Vector3::new(r[0], r[1], 1.0);
        let p = sigmoid(m.margin(r[0], r[1]));
        g += xi * (p - t);
        h += xi * xi.transpose() * (p * (1.0 - p));
    }
    g /= n;
    h /= n;
    g[0] += reg * m.weights[0];
    g[1] += reg * m.weights[1];
    h[(0, 0)] += reg;
    h[(1, 1)] += reg;
    (g, h)
}

fn newton_direction(g: &Vector3<f64>, h: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let mut ridge = 0.0;
    for _ in 0..12 {
        let hr = h + Matrix3::identity() * ridge;
        if let Some(ch) = hr.cholesky() {
            let d = ch.solve(&(-g));
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
    }
    None
}

fn validate_labels(labels: &[u8]) -> Result<(), StackError> {
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(StackError::InvalidLabel(bad));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(StackError::SingleClass);
    }
    Ok(())
}

/// Newton's method with step halving from the zero model.
pub fn train_logreg(
    x: &StackMatrix,
    labels: &[u8],
    params: &LogRegParams,
) -> Result<LogRegFit, StackError> {
    if x.nrows() != labels.len() {
        return Err(StackError::LengthMismatch(x.nrows(), labels.len()));
    }
    if labels.len() < 2 {
        return Err(StackError::EmptyInput);
    }
    validate_labels(labels)?;
    if !(params.reg >= 0.0 && params.reg.is_finite()) || !(params.tol > 0.0) {
        return Err(StackError::InvalidParams(
            "reg must be non-negative and tol positive".into(),
        ));
    }
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let mut model = StackModel::default();
    let mut value = logreg_objective(x, &y, &model, params.reg);
    let mut trace = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        let (g, h) = grad_hess(x, &y, &model, params.reg);
        if g.amax() < params.tol {
            converged = true;
            break;
        }
        let Some(d) = newton_direction(&g, &h) else {
            break;
        };
        iterations += 1;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let cand = StackModel {
                weights: [model.weights[0] + step * d[0], model.weights[1] + step * d[1]],
                bias: model.bias + step * d[2],
            };
            let v = logreg_objective(x, &y, &cand, params.reg);
            if v <= value {
                accepted = Some((cand, v));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            break;
        };
        model = cand;
        value = v;
        trace.push(v);
    }
    if !converged {
        let (g, _) = grad_hess(x, &y, &model, params.reg);
        converged = g.amax() < params.tol;
    }
    Ok(LogRegFit {
        model,
        converged,
        iterations,
        objective: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleParams {
    pub gbt: GbtParams,
    pub logreg: LogRegParams,
    /// 0 fits the combiner on in-sample branch probabilities; `k >= 2` uses
    /// out-of-fold probabilities from k-fold cross-fitting instead.
    pub oof_folds: usize,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            gbt: GbtParams::default(),
            logreg: LogRegParams::default(),
            oof_folds: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub gbt_signet: GbtModel,
    pub gbt_signetf: GbtModel,
    pub combiner: StackModel,
}

/// A trained ensemble together with the combiner fit diagnostics.
#[derive(Debug, Clone)]
pub struct EnsembleFit {
    pub model: EnsembleModel,
    pub combiner_fit: LogRegFit,
    /// Stacked matrix the combiner was trained on.
    pub train_stack: StackMatrix,
}

/// Branch probabilities for rows of fold `fold`, from a model trained on the
/// other folds.
fn out_of_fold_probs(
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    params: &GbtParams,
    folds: usize,
) -> Result<Vec<f64>, StackError> {
    let n = x.nrows();
    let mut probs = vec![0.0; n];
    for fold in 0..folds {
        let train_idx: Vec<usize> = (0..n).filter(|i| i % folds != fold).collect();
        let held: Vec<usize> = (0..n).filter(|i| i % folds == fold).collect();
        if held.is_empty() {
            continue;
        }
        let xt = x.select(Axis(0), &train_idx);
        let yt: Vec<u8> = train_idx.iter().map(|&i| labels[i]).collect();
        let m = rgbt::train_gbt(xt.view(), &yt, params)?;
        let p = m.predict_proba_batch(&x.select(Axis(0), &held))?;
        for (&i, v) in held.iter().zip(p) {
            probs[i] = v;
        }
    }
    Ok(probs)
}

fn train_branch(
    x: &Array2<f64>,
    labels: &[u8],
    params: &EnsembleParams,
) -> Result<(GbtModel, Vec<f64>), StackError> {
    let model = rgbt::train_gbt(x.view(), labels, &params.gbt)?;
    let probs = if params.oof_folds >= 2 {
        out_of_fold_probs(x.view(), labels, &params.gbt, params.oof_folds)?
    } else {
        model.predict_proba_batch(x)?
    };
    Ok((model, probs))
}

/// Trains both branches (concurrently), stacks their training-set
/// probabilities and fits the combiner on that matrix.
pub fn train_ensemble(
    feat_signet: &Array2<f64>,
    feat_signetf: &Array2<f64>,
    labels: &[u8],
    params: &EnsembleParams,
) -> Result<EnsembleFit, StackError> {
    let n = labels.len();
    for rows in [feat_signet.nrows(), feat_signetf.nrows()] {
        if rows != n {
            return Err(StackError::LengthMismatch(rows, n));
        }
    }
    if n < 2 {
        return Err(StackError::EmptyInput);
    }
    validate_labels(labels)?;
    if params.oof_folds == 1 {
        return Err(StackError::InvalidParams("oof_folds must be 0 or >= 2".into()));
    }
    let (a, b) = rayon::join(
        || train_branch(feat_signet, labels, params),
        || train_branch(feat_signetf, labels, params),
    );
    let (gbt_signet, p_signet) = a?;
    let (gbt_signetf, p_signetf) = b?;
    let train_stack = stack_probs(&p_signet, &p_signetf)?;
    let combiner_fit = train_logreg(&train_stack, labels, &params.logreg)?;
    if !combiner_fit.converged {
        log::warn!(
            "combiner did not converge after {} Newton steps",
            combiner_fit.iterations
        );
    }
    Ok(EnsembleFit {
        model: EnsembleModel {
            gbt_signet,
            gbt_signetf,
            combiner: combiner_fit.model,
        },
        combiner_fit,
        train_stack,
    })
}

impl EnsembleModel {
    /// Per-branch forgery probabilities for row-aligned feature matrices.
    pub fn branch_probs(
        &self,
        feat_signet: &Array2<f64>,
        feat_signetf: &Array2<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>), StackError> {
        if feat_signet.nrows() != feat_signetf.nrows() {
            return Err(StackError::LengthMismatch(
                feat_signet.nrows(),
                feat_signetf.nrows(),
            ));
        }
        Ok((
            self.gbt_signet.predict_proba_batch(feat_signet)?,
            self.gbt_signetf.predict_proba_batch(feat_signetf)?,
        ))
    }

    pub fn predict_proba(
        &self,
        feat_signet: &Array2<f64>,
        feat_signetf: &Array2<f64>,
    ) -> Result<Vec<f64>, StackError> {
        let (a, b) = self.branch_probs(feat_signet, feat_signetf)?;
        a.iter()
            .zip(&b)
            .map(|(&p1, &p2)| predict_stack(&self.combiner, p1, p2))
            .collect()
    }
}

// SENS container: "SENS" | version u16 | SGBT (signet) | SGBT (signet-f)
//                 | w0 f64 | w1 f64 | bias f64, little-endian.
const SENS_MAGIC: &[u8; 4] = b"SENS";
const SENS_VERSION: u16 = 1;

pub fn encode_ensemble(m: &EnsembleModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SENS_MAGIC);
    out.write_u16::<LE>(SENS_VERSION).unwrap();
    rgbt::write_model(&m.gbt_signet, &mut out);
    rgbt::write_model(&m.gbt_signetf, &mut out);
    for v in [m.combiner.weights[0], m.combiner.weights[1], m.combiner.bias] {
        out.write_f64::<LE>(v).unwrap();
    }
    out
}

pub fn decode_ensemble(bytes: &[u8]) -> Result<EnsembleModel, StackError> {
    let corrupt = |m: &str| StackError::CorruptFile(m.to_string());
    let mut cur = bytes;
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| corrupt("truncated header"))?;
    if &magic != SENS_MAGIC {
        return Err(corrupt("bad magic, expected SENS"));
    }
    let version = cur
        .read_u16::<LE>()
        .map_err(|_| corrupt("truncated header"))?;
    if version != SENS_VERSION {
        return Err(StackError::CorruptFile(format!("unsupported version {version}")));
    }
    let embedded = |e: RgbtError| StackError::CorruptFile(format!("embedded model: {e}"));
    let gbt_signet = rgbt::read_model(&mut cur).map_err(embedded)?;
    let gbt_signetf = rgbt::read_model(&mut cur).map_err(embedded)?;
    let mut tail = [0f64; 3];
    cur.read_f64_into::<LE>(&mut tail)
        .map_err(|_| corrupt("truncated combiner block"))?;
    if !cur.is_empty() {
        return Err(StackError::CorruptFile(format!("{} trailing bytes", cur.len())));
    }
    Ok(EnsembleModel {
        gbt_signet,
        gbt_signetf,
        combiner: StackModel {
            weights: [tail[0], tail[1]],
            bias: tail[2],
        },
    })
}

pub fn save_ensemble(m: &EnsembleModel, path: impl AsRef<Path>) -> Result<(), StackError> {
    fs::write(path, encode_ensemble(m))?;
    Ok(())
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<EnsembleModel, StackError> {
    decode_ensemble(&fs::read(path)?)
}
