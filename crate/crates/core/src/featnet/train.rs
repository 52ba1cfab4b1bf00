use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{loss_and_gradient, FeatNet, FeatNetError, LabeledImage};
use crate::rng::XorShiftRng;

/// Which extractor is being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Writer classification on genuine signatures only.
    #[serde(rename = "signet")]
    Signet,
    /// Writer classification plus forgery discrimination.
    #[serde(rename = "signet-f")]
    SignetF,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Signet => "signet",
            Objective::SignetF => "signet-f",
        })
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "signet" => Ok(Objective::Signet),
            "signet-f" | "signet_f" => Ok(Objective::SignetF),
            other => Err(format!("unknown objective `{other}` (signet | signet-f)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub forgery_loss_weight: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            forgery_loss_weight: 1.0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<(), FeatNetError> {
        let bad = |m: &str| Err(FeatNetError::InvalidTrainSpec(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.forgery_loss_weight.is_finite() && self.forgery_loss_weight >= 0.0) {
            return bad("forgery_loss_weight must be finite and non-negative");
        }
        Ok(())
    }
}

/// One momentum-SGD update on `batch`: `v = μ v + g`, `θ -= lr v`.
/// Returns the batch loss before the update.
pub fn sgd_step(
    net: &mut FeatNet,
    velocity: &mut [f64],
    batch: &[LabeledImage],
    spec: &TrainSpec,
    objective: Objective,
) -> Result<f64, FeatNetError> {
    let (loss, grad) = loss_and_gradient(net, batch, objective, spec.forgery_loss_weight)?;
    if !loss.is_finite() {
        return Err(FeatNetError::NonFinite);
    }
    for ((p, v), g) in net.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad) {
        *v = spec.momentum * *v + g;
        *p -= spec.learning_rate * *v;
    }
    Ok(loss)
}

pub fn train(
    net: FeatNet,
    samples: &[LabeledImage],
    spec: &TrainSpec,
    objective: Objective,
) -> Result<FeatNet, FeatNetError> {
    train_with_history(net, samples, spec, objective).map(|(net, _)| net)
}

/// Minibatch SGD with momentum. Each epoch visits the samples in an order
/// drawn from the network seed, so runs are reproducible. Also returns the
/// size-weighted mean batch loss of every epoch. Final parameters are rounded
/// to `f32`, the precision of the model file.
pub fn train_with_history(
    mut net: FeatNet,
    samples: &[LabeledImage],
    spec: &TrainSpec,
    objective: Objective,
) -> Result<(FeatNet, Vec<f64>), FeatNetError> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(FeatNetError::EmptyBatch);
    }
    if objective == Objective::Signet && samples.iter().any(|s| s.forged) {
        return Err(FeatNetError::ForgedInGenuineSet);
    }
    let seed = net.config().seed;
    let mut velocity = vec![0.0; net.num_params()];
    let mut history = Vec::with_capacity(spec.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..spec.epochs {
        XorShiftRng::derive(seed, epoch as u64 + 1).shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let batch: Vec<LabeledImage> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let loss = sgd_step(&mut net, &mut velocity, &batch, spec, objective)?;
            total += loss * batch.len() as f64;
        }
        if net.params().iter().any(|p| !p.is_finite()) {
            return Err(FeatNetError::NonFinite);
        }
        let mean = total / samples.len() as f64;
        log::debug!("{objective} epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    net.quantize();
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::{init_network, loss_signet, ConvBlock, NetConfig};
    use crate::preprocess::FloatImage;

    fn cfg() -> NetConfig {
        NetConfig {
            input_height: 6,
            input_width: 6,
            conv_blocks: vec![ConvBlock::new(3, 3, 1)],
            feature_dim: 4,
            num_writers: 2,
            forgery_head: true,
            seed: 21,
        }
    }

    /// Writer 0 draws a horizontal bar, writer 1 a vertical one.
    fn separable_set() -> Vec<LabeledImage> {
        let mut rng = XorShiftRng::seed_from(5);
        (0..16)
            .map(|i| {
                let writer = i % 2;
                let mut v = vec![0.0; 36];
                let line = 1 + rng.below(4) as usize;
                for k in 0..6 {
                    let idx = if writer == 0 { line * 6 + k } else { k * 6 + line };
                    v[idx] = 0.7 + 0.3 * rng.unit();
                }
                LabeledImage {
                    image: FloatImage::new(6, 6, v).unwrap(),
                    writer,
                    forged: false,
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let net = init_network(&cfg()).unwrap();
        let spec = TrainSpec {
            epochs: 1,
            batch_size: 4,
            learning_rate: 0.0,
            ..TrainSpec::default()
        };
        let trained = train(net.clone(), &separable_set(), &spec, Objective::Signet).unwrap();
        assert_eq!(trained.params(), net.params());
    }

    #[test]
    fn training_reduces_loss_on_separable_writers() {
        let data = separable_set();
        let net = init_network(&cfg()).unwrap();
        let before = loss_signet(&net, &data).unwrap();
        let spec = TrainSpec {
            epochs: 50,
            batch_size: 4,
            learning_rate: 0.05,
            momentum: 0.9,
            forgery_loss_weight: 1.0,
        };
        let trained = train(net, &data, &spec, Objective::Signet).unwrap();
        let after = loss_signet(&trained, &data).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn single_step_follows_finite_difference_gradient() {
        let data = separable_set()[..4].to_vec();
        let mut net = init_network(&cfg()).unwrap();
        // keep conv outputs off the ReLU kink on the all-zero background
        let l = net.layout();
        for v in &mut net.params_mut()[l.blocks[0].b_off..l.blocks[0].b_off + 3] {
            *v = 0.05;
        }
        let spec = TrainSpec {
            learning_rate: 0.1,
            ..TrainSpec::default()
        };
        let mut stepped = net.clone();
        let mut velocity = vec![0.0; net.num_params()];
        sgd_step(&mut stepped, &mut velocity, &data, &spec, Objective::Signet).unwrap();
        let h = 1e-6;
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let g = (loss_signet(&plus, &data).unwrap() - loss_signet(&minus, &data).unwrap())
                / (2.0 * h);
            let expect = net.params()[i] - spec.learning_rate * g;
            let got = stepped.params()[i];
            let scale = (got - net.params()[i]).abs().max(1e-6);
            assert!(
                (got - expect).abs() / scale < 1e-4 || (got - expect).abs() < 1e-10,
                "param {i}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn signet_rejects_forgeries() {
        let mut data = separable_set();
        data[3].forged = true;
        let net = init_network(&cfg()).unwrap();
        assert!(matches!(
            train(net, &data, &TrainSpec::default(), Objective::Signet),
            Err(FeatNetError::ForgedInGenuineSet)
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_set();
        let spec = TrainSpec {
            epochs: 3,
            batch_size: 5,
            ..TrainSpec::default()
        };
        let a = train(init_network(&cfg()).unwrap(), &data, &spec, Objective::SignetF).unwrap();
        let b = train(init_network(&cfg()).unwrap(), &data, &spec, Objective::SignetF).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objective_parses() {
        assert_eq!("signet-f".parse::<Objective>().unwrap(), Objective::SignetF);
        assert!("nope".parse::<Objective>().is_err());
    }
}
