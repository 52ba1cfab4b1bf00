//! Verification metrics, evaluation reports and the end-to-end experiment.

mod pipeline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ndarray::Array2;

use crate::stacker::{EnsembleModel, StackError};

pub use pipeline::{
    preprocess_manifest, run_experiment, train_extractor, writer_index, DatasetSource,
    PipelineError, PretrainedNets, RunArtifacts, RunConfig, Stage,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("{probs} probabilities but {labels} labels")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("both genuine and forged samples are required")]
    SingleClass,
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("probability {0} is not finite")]
    NonFinite(f64),
    #[error(transparent)]
    Model(#[from] StackError),
}

fn check(probs: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if probs.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            probs: probs.len(),
            labels: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::InvalidLabel(l));
    }
    if let Some(&p) = probs.iter().find(|p| !p.is_finite()) {
        return Err(EvalError::NonFinite(p));
    }
    Ok(())
}

/// Fraction of samples where `prob >= t` agrees with `label == 1` (forged).
pub fn accuracy_at_threshold(probs: &[f64], labels: &[u8], t: f64) -> Result<f64, EvalError> {
    check(probs, labels)?;
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| (p >= t) == (l == 1))
        .count();
    Ok(correct as f64 / probs.len() as f64)
}

/// Best accuracy over the thresholds `{0} ∪ midpoints ∪ {1}`, where the
/// midpoints lie between consecutive distinct sorted probabilities. Accuracy
/// is constant between those points, so the scan is exhaustive. Ties go to
/// the smallest threshold.
pub fn max_accuracy(probs: &[f64], labels: &[u8]) -> Result<(f64, f64), EvalError> {
    check(probs, labels)?;
    let n = probs.len();
    let mut pairs: Vec<(f64, u8)> = probs.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // forged[k] = forged count among the k smallest probabilities
    let mut forged_below = Vec::with_capacity(n + 1);
    forged_below.push(0usize);
    for &(_, l) in &pairs {
        forged_below.push(forged_below.last().unwrap() + l as usize);
    }
    let total_forged = forged_below[n];
    let correct_at = |t: f64| {
        // rows [0, k) predicted genuine, [k, n) predicted forged
        let k = pairs.partition_point(|&(p, _)| p < t);
        (k - forged_below[k]) + (total_forged - forged_below[k])
    };
    let mut candidates = vec![0.0];
    for w in pairs.windows(2) {
        if w[0].0 < w[1].0 {
            candidates.push(w[0].0 + (w[1].0 - w[0].0) / 2.0);
        }
    }
    candidates.push(1.0);
    let mut best = (0usize, 0.0);
    let mut first = true;
    for t in candidates {
        let c = correct_at(t);
        if first || c > best.0 {
            best = (c, t);
            first = false;
        }
    }
    Ok((best.0 as f64 / n as f64, best.1))
}

/// `(FAR, FRR)` at threshold `t`, where a sample is accepted as genuine iff
/// `prob < t`. FAR is over forged samples, FRR over genuine ones.
pub fn far_frr(probs: &[f64], labels: &[u8], t: f64) -> Result<(f64, f64), EvalError> {
    check(probs, labels)?;
    let n_forged = labels.iter().filter(|&&l| l == 1).count();
    let n_genuine = labels.len() - n_forged;
    if n_forged == 0 || n_genuine == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut false_accept = 0;
    let mut false_reject = 0;
    for (&p, &l) in probs.iter().zip(labels) {
        let accepted = p < t;
        if l == 1 && accepted {
            false_accept += 1;
        }
        if l == 0 && !accepted {
            false_reject += 1;
        }
    }
    Ok((
        false_accept as f64 / n_forged as f64,
        false_reject as f64 / n_genuine as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchAccuracy {
    pub signet: f64,
    pub signetf: f64,
}

/// Test-set summary. `far`/`frr` are taken at `best_threshold`;
/// `per_branch` holds each boosted branch alone at threshold 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_at_half: f64,
    pub max_accuracy: f64,
    pub best_threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub n_test: usize,
    pub per_branch: BranchAccuracy,
}

impl EvalReport {
    pub fn from_probs(
        probs: &[f64],
        branch_signet: &[f64],
        branch_signetf: &[f64],
        labels: &[u8],
    ) -> Result<Self, EvalError> {
        let accuracy_at_half = accuracy_at_threshold(probs, labels, 0.5)?;
        let (max_accuracy, best_threshold) = max_accuracy(probs, labels)?;
        let (far, frr) = far_frr(probs, labels, best_threshold)?;
        Ok(EvalReport {
            accuracy_at_half,
            max_accuracy,
            best_threshold,
            far,
            frr,
            n_test: labels.len(),
            per_branch: BranchAccuracy {
                signet: accuracy_at_threshold(branch_signet, labels, 0.5)?,
                signetf: accuracy_at_threshold(branch_signetf, labels, 0.5)?,
            },
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text table for terminals.
    pub fn table(&self) -> String {
        let pct = |v: f64| format!("{:6.2}%", 100.0 * v);
        let rows = [
            ("test samples", format!("{:>7}", self.n_test)),
            ("accuracy @ 0.5", pct(self.accuracy_at_half)),
            ("best-threshold accuracy", pct(self.max_accuracy)),
            ("best threshold", format!("{:7.4}", self.best_threshold)),
            ("FAR @ best", pct(self.far)),
            ("FRR @ best", pct(self.frr)),
            ("signet branch @ 0.5", pct(self.per_branch.signet)),
            ("signet-f branch @ 0.5", pct(self.per_branch.signetf)),
        ];
        rows.iter()
            .map(|(k, v)| format!("{k:<26}{v}\n"))
            .collect()
    }
}

/// Scores a trained ensemble on row-aligned test features.
pub fn evaluate_ensemble(
    model: &EnsembleModel,
    feat_signet: &Array2<f64>,
    feat_signetf: &Array2<f64>,
    labels: &[u8],
) -> Result<EvalReport, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for rows in [feat_signet.nrows(), feat_signetf.nrows()] {
        if rows != labels.len() {
            return Err(EvalError::LengthMismatch {
                probs: rows,
                labels: labels.len(),
            });
        }
    }
    let (p1, p2) = model.branch_probs(feat_signet, feat_signetf)?;
    let probs = model.predict_proba(feat_signet, feat_signetf)?;
    EvalReport::from_probs(&probs, &p1, &p2, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::XorShiftRng;

    #[test]
    fn threshold_examples() {
        assert_eq!(accuracy_at_threshold(&[0.9, 0.1], &[1, 0], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy_at_threshold(&[0.9, 0.1], &[0, 1], 0.5).unwrap(), 0.0);
        assert!(matches!(
            accuracy_at_threshold(&[], &[], 0.5),
            Err(EvalError::EmptyInput)
        ));
    }

    #[test]
    fn threshold_matches_counting_oracle() {
        let mut rng = XorShiftRng::seed_from(20);
        let probs: Vec<f64> = (0..20).map(|_| rng.unit()).collect();
        let labels: Vec<u8> = (0..20).map(|_| rng.below(2) as u8).collect();
        for t in [0.0, 0.3, 0.5, 0.77, 1.0] {
            let mut correct = 0;
            for i in 0..20 {
                let predicted_forged = if probs[i] >= t { 1 } else { 0 };
                if predicted_forged == labels[i] {
                    correct += 1;
                }
            }
            assert_eq!(
                accuracy_at_threshold(&probs, &labels, t).unwrap(),
                correct as f64 / 20.0
            );
        }
    }

    #[test]
    fn max_accuracy_examples() {
        let (acc, t) = max_accuracy(&[0.1, 0.2, 0.7, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(acc, 1.0);
        assert!((t - 0.45).abs() < 1e-15);
        let (acc, t) = max_accuracy(&[0.4; 10], &[1, 1, 1, 1, 1, 1, 0, 0, 0, 0]).unwrap();
        assert_eq!(acc, 0.6);
        assert_eq!(t, 0.0);
    }

    #[test]
    fn max_accuracy_matches_dense_grid() {
        let mut rng = XorShiftRng::seed_from(10);
        for _ in 0..50 {
            // multiples of 0.01 keep every midpoint on the 1e-4 grid
            let probs: Vec<f64> = (0..10).map(|_| rng.below(101) as f64 / 100.0).collect();
            let labels: Vec<u8> = (0..10).map(|_| rng.below(2) as u8).collect();
            let grid_best = (0..=10_000)
                .map(|k| accuracy_at_threshold(&probs, &labels, k as f64 / 10_000.0).unwrap())
                .fold(0.0, f64::max);
            let (acc, t) = max_accuracy(&probs, &labels).unwrap();
            assert_eq!(acc, grid_best);
            assert_eq!(accuracy_at_threshold(&probs, &labels, t).unwrap(), acc);
        }
    }

    #[test]
    fn far_frr_examples() {
        assert_eq!(far_frr(&[0.9, 0.1], &[1, 0], 0.5).unwrap(), (0.0, 0.0));
        assert_eq!(far_frr(&[0.9, 0.1, 1.0], &[1, 0, 1], 1.0 + 1e-9).unwrap(), (1.0, 0.0));
        assert!(matches!(far_frr(&[0.2], &[0], 0.5), Err(EvalError::SingleClass)));
    }

    #[test]
    fn far_frr_counting_oracle() {
        let probs = [0.1, 0.8, 0.45, 0.5, 0.3, 0.95, 0.6, 0.05, 0.7, 0.2, 0.55, 0.4];
        let labels = [0, 1, 1, 0, 0, 1, 0, 0, 1, 1, 1, 0];
        // t = 0.5: forged accepted (prob < 0.5) = {0.45, 0.2} of 6;
        // genuine rejected (prob >= 0.5) = {0.5, 0.6} of 6
        let (far, frr) = far_frr(&probs, &labels, 0.5).unwrap();
        assert_eq!(far, 2.0 / 6.0);
        assert_eq!(frr, 2.0 / 6.0);
    }

    #[test]
    fn report_round_trips_through_json() {
        let r = EvalReport::from_probs(
            &[0.2, 0.7, 0.4, 0.9],
            &[0.3, 0.6, 0.6, 0.8],
            &[0.1, 0.9, 0.2, 0.7],
            &[0, 1, 0, 1],
        )
        .unwrap();
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.table().contains("best threshold"));
    }
}
