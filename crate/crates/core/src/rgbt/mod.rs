//! Regularized gradient-boosted decision trees for the binary
//! genuine/forged decision.
//!
//! Each round fits a depth-limited regression tree to the first and second
//! derivatives of the logistic loss at the current margins, with L2-shrunk
//! leaf weights and a minimum split gain. The model margin is
//! `base_margin + η · Σ_t tree_t(x)`.

mod builder;
mod io;
mod objective;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::sigmoid;

pub use builder::{build_tree, train_gbt, train_gbt_traced, SortedColumns, TrainTrace};
pub use io::{decode_model, encode_model, load_model, read_model, save_model, write_model};
pub use objective::{leaf_weight, logistic_grad_hess, split_gain};

#[derive(Debug, Error)]
pub enum RgbtError {
    #[error("invalid boosting parameters: {0}")]
    InvalidParams(String),
    #[error("empty training input")]
    EmptyInput,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("feature value at row {row}, column {col} is not finite")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("degenerate leaf: hessian sum {hess_sum} + lambda {lambda} is not positive")]
    DegenerateLeaf { hess_sum: f64, lambda: f64 },
    #[error("input has {got} features, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub min_gain: f64,
    pub min_child_hessian: f64,
}

/// Depth 3, learning rate 0.1, 100 trees, λ = 1, γ = 0.
impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            l2_lambda: 1.0,
            min_gain: 0.0,
            min_child_hessian: 0.0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<(), RgbtError> {
        let bad = |m: &str| Err(RgbtError::InvalidParams(m.into()));
        if self.n_rounds == 0 {
            return bad("n_rounds must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        for (name, v) in [
            ("l2_lambda", self.l2_lambda),
            ("min_gain", self.min_gain),
            ("min_child_hessian", self.min_child_hessian),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RgbtError::InvalidParams(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        weight: f64,
    },
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf(weight: f64) -> Self {
        TreeNode::Leaf { weight }
    }

    /// Leaf weight reached by routing `x`.
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] < *threshold { left } else { right },
            }
        }
    }

    /// Largest number of split nodes on any root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.num_leaves() + right.num_leaves(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub trees: Vec<TreeNode>,
    pub params: GbtParams,
    pub base_margin: f64,
    pub n_features: usize,
}

impl GbtModel {
    /// A model with no trees; predicts `base_margin`.
    pub fn empty(params: GbtParams, n_features: usize) -> Self {
        GbtModel {
            trees: Vec::new(),
            params,
            base_margin: 0.0,
            n_features,
        }
    }

    fn check_dim(&self, got: usize) -> Result<(), RgbtError> {
        if got != self.n_features {
            return Err(RgbtError::DimensionMismatch {
                expected: self.n_features,
                got,
            });
        }
        Ok(())
    }

    fn margin_unchecked(&self, x: ArrayView1<'_, f64>) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.eval(x)).sum();
        self.base_margin + self.params.learning_rate * sum
    }

    pub fn predict_margin(&self, x: &[f64]) -> Result<f64, RgbtError> {
        self.check_dim(x.len())?;
        Ok(self.margin_unchecked(ArrayView1::from(x)))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, RgbtError> {
        self.predict_margin(x).map(sigmoid)
    }

    pub fn predict_margin_batch(&self, features: &Array2<f64>) -> Result<Vec<f64>, RgbtError> {
        self.check_dim(features.ncols())?;
        Ok(features
            .rows()
            .into_iter()
            .map(|r| self.margin_unchecked(r))
            .collect())
    }

    pub fn predict_proba_batch(&self, features: &Array2<f64>) -> Result<Vec<f64>, RgbtError> {
        Ok(self
            .predict_margin_batch(features)?
            .into_iter()
            .map(sigmoid)
            .collect())
    }
}
