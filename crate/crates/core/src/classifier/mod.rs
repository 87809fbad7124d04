//! Differentiable image classifiers.
//!
//! Anything implementing [`Classifier`] can be attacked: the bundled
//! [`ConvNet`], the hand-checkable [`LinearModel`], or an out-of-process
//! network behind [`ExternalClassifier`].

mod cnn;
mod dataset;
mod external;

pub use cnn::{train, train_bundled, Architecture, ConvNet, TrainConfig, TrainOutcome};
pub use dataset::{Split, SyntheticDataset, SHAPE_NAMES};
pub use external::{ExternalClassifier, DEFAULT_TIMEOUT};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;

pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;

    fn logits(&self, x: &Image) -> Result<Vec<f64>>;

    /// Cross-entropy of `label` and its gradient with respect to every
    /// sample of `x`, in the same row-major layout.
    fn loss_and_input_gradient(&self, x: &Image, label: usize) -> Result<(f64, Vec<f64>)>;

    fn input_gradient(&self, x: &Image, label: usize) -> Result<Vec<f64>> {
        Ok(self.loss_and_input_gradient(x, label)?.1)
    }

    fn loss(&self, x: &Image, label: usize) -> Result<f64> {
        cross_entropy_loss(&self.logits(x)?, label)
    }

    fn predict(&self, x: &Image) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]` with max subtraction.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Label {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    Ok(lse - logits[label])
}

/// `d loss / d logits = softmax - onehot(label)`.
pub(crate) fn logit_gradient(logits: &[f64], label: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    g
}

/// `logits = W x + b` on the flattened image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    shape: (usize, usize, usize),
    classes: usize,
    /// `classes x (h*w*c)`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearModel {
    pub fn new(
        shape: (usize, usize, usize),
        classes: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let n = shape.0 * shape.1 * shape.2;
        if classes < 2 {
            return Err(Error::domain("a classifier needs at least 2 classes"));
        }
        if weights.len() != classes * n || bias.len() != classes {
            return Err(Error::dimension(
                format!("{} weights and {classes} biases", classes * n),
                format!("{} weights and {} biases", weights.len(), bias.len()),
            ));
        }
        Ok(Self {
            shape,
            classes,
            weights,
            bias,
        })
    }

    pub fn zeros(shape: (usize, usize, usize), classes: usize) -> Result<Self> {
        let n = shape.0 * shape.1 * shape.2;
        Self::new(shape, classes, vec![0.0; classes * n], vec![0.0; classes])
    }

    /// Weights and biases uniform in `[-scale, scale]`.
    pub fn random(shape: (usize, usize, usize), classes: usize, scale: f64, seed: u64) -> Result<Self> {
        let n = shape.0 * shape.1 * shape.2;
        let mut rng = rng::stream(seed, "linear-model");
        let weights = (0..classes * n).map(|_| rng.random_range(-scale..=scale)).collect();
        let bias = (0..classes).map(|_| rng.random_range(-scale..=scale)).collect();
        Self::new(shape, classes, weights, bias)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check(&self, x: &Image) -> Result<()> {
        if x.shape() != self.shape {
            return Err(Error::dimension(format!("{:?}", self.shape), format!("{:?}", x.shape())));
        }
        Ok(())
    }
}

impl Classifier for LinearModel {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, x: &Image) -> Result<Vec<f64>> {
        self.check(x)?;
        let n = x.len();
        Ok(self
            .weights
            .chunks(n)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x.data()).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect())
    }

    fn loss_and_input_gradient(&self, x: &Image, label: usize) -> Result<(f64, Vec<f64>)> {
        let logits = self.logits(x)?;
        let loss = cross_entropy_loss(&logits, label)?;
        let dz = logit_gradient(&logits, label);
        let n = x.len();
        let mut grad = vec![0.0; n];
        for (row, d) in self.weights.chunks(n).zip(&dz) {
            for (g, w) in grad.iter_mut().zip(row) {
                *g += d * w;
            }
        }
        Ok((loss, grad))
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Central differences of the loss at `coords`.
    pub fn finite_difference(model: &dyn Classifier, x: &Image, label: usize, coords: &[usize], h: f64) -> Vec<f64> {
        let (hh, ww, cc) = x.shape();
        coords
            .iter()
            .map(|&i| {
                let mut plus = x.data().to_vec();
                let mut minus = x.data().to_vec();
                plus[i] += h;
                minus[i] -= h;
                let lp = model.loss(&Image::from_clamped(hh, ww, cc, plus), label).unwrap();
                let lm = model.loss(&Image::from_clamped(hh, ww, cc, minus), label).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }
}
