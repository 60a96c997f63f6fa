//! Logistic-regression stand-in for the MSPs' learning models.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::FlError;

/// Logistic regression over `d` features. `weights` holds the `d` feature
/// weights followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    /// 0 or 1.
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ToyModel {
    pub fn zeros(d: usize) -> Self {
        Self {
            weights: vec![0.0; d + 1],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    /// Probability of class 1.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let z = self.weights[d]
            + self.weights[..d]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>();
        sigmoid(z)
    }

    pub fn predictions(&self, data: &Dataset) -> Vec<f64> {
        data.features.iter().map(|x| self.predict(x)).collect()
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| (self.predict(x) >= 0.5) == (y >= 0.5))
            .count();
        correct as f64 / data.len() as f64
    }

    /// Mean cross-entropy.
    pub fn loss(&self, data: &Dataset) -> f64 {
        let total: f64 = data
            .features
            .iter()
            .zip(&data.labels)
            .map(|(x, &y)| {
                let p = self.predict(x).clamp(1e-15, 1.0 - 1e-15);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        total / data.len().max(1) as f64
    }
}

/// Two Gaussian classes with unit variance whose means sit at
/// `+-separation / 2` along `direction` (a unit vector).
#[derive(Clone, Debug, PartialEq)]
pub struct Blobs {
    pub direction: Vec<f64>,
    pub separation: f64,
}

impl Blobs {
    /// Random unit direction in `d` dimensions.
    pub fn random(d: usize, separation: f64, rng: &mut impl Rng) -> Self {
        let mut direction: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = direction
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(1e-300);
        for v in &mut direction {
            *v /= norm;
        }
        Self {
            direction,
            separation,
        }
    }

    /// `n` samples, each labelled 1 with probability `positive_fraction`.
    pub fn sample(&self, n: usize, positive_fraction: f64, rng: &mut impl Rng) -> Dataset {
        let mut data = Dataset {
            features: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let y = if rng.random::<f64>() < positive_fraction {
                1.0
            } else {
                0.0
            };
            let shift = if y > 0.5 { 0.5 } else { -0.5 } * self.separation;
            let x = self
                .direction
                .iter()
                .map(|u| {
                    let z: f64 = StandardNormal.sample(rng);
                    shift * u + z
                })
                .collect();
            data.features.push(x);
            data.labels.push(y);
        }
        data
    }
}

/// Balanced two-class blobs along the first axis: `n_samples` training
/// points and as many held-out points.
pub fn synth_dataset(
    d: usize,
    n_samples: usize,
    separation: f64,
    rng: &mut impl Rng,
) -> (Dataset, Dataset) {
    assert!(d >= 1);
    let mut direction = vec![0.0; d];
    direction[0] = 1.0;
    let blobs = Blobs {
        direction,
        separation,
    };
    let train = blobs.sample(n_samples, 0.5, rng);
    let test = blobs.sample(n_samples, 0.5, rng);
    (train, test)
}

/// Local iterations for accuracy threshold `theta`: `ceil(ln(1/theta))`,
/// at least one.
pub fn local_epochs(theta: f64) -> usize {
    ((1.0 / theta).ln().ceil() as usize).max(1)
}

/// Momentum SGD on the cross-entropy, one sample at a time, for
/// `local_epochs(theta)` shuffled passes.
pub fn local_train(
    model: &ToyModel,
    data: &Dataset,
    theta: f64,
    lr: f64,
    momentum: f64,
    rng: &mut impl Rng,
) -> ToyModel {
    let mut w = model.clone();
    let d = w.dim();
    let mut velocity = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..local_epochs(theta) {
        order.shuffle(rng);
        for &i in &order {
            let x = &data.features[i];
            let err = w.predict(x) - data.labels[i];
            for j in 0..=d {
                let g = if j < d { err * x[j] } else { err };
                velocity[j] = momentum * velocity[j] + g;
                w.weights[j] -= lr * velocity[j];
            }
        }
    }
    w
}

/// Data-size weighted average of local models.
pub fn fedavg_aggregate(locals: &[(ToyModel, f64)]) -> Result<ToyModel, FlError> {
    let total: f64 = locals.iter().map(|(_, s)| s).sum();
    if locals.is_empty() || !(total > 0.0) {
        return Err(FlError::EmptyRound);
    }
    let dim = locals[0].0.weights.len();
    let mut weights = vec![0.0; dim];
    for (model, size) in locals {
        if model.weights.len() != dim {
            return Err(FlError::ShapeMismatch(dim, model.weights.len()));
        }
        for (a, w) in weights.iter_mut().zip(&model.weights) {
            *a += size / total * w;
        }
    }
    Ok(ToyModel { weights })
}
