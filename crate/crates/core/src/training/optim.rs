use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Probabilities below this are clamped before the logarithm.
pub const LOSS_CLAMP: f64 = 1e-12;

/// Mean over the batch of `-ln(max(p[label], 1e-12))`.
pub fn scce_loss<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let k = probs.features();
    if probs.is_sequence() || labels.len() != probs.batch() {
        return Err(Error::Shape(format!(
            "{} labels for probabilities of shape {:?}",
            labels.len(),
            probs.shape()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    let mut total = 0.0;
    for (row, &label) in probs.data().chunks_exact(k).zip(labels) {
        if label >= k {
            return Err(Error::LabelOutOfRange(label));
        }
        let sum: f64 = row.iter().map(|p| p.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidArgument(format!(
                "probability row sums to {sum}, not 1"
            )));
        }
        total -= row[label].as_f64().max(LOSS_CLAMP).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Row-wise argmax; ties go to the lower index.
pub fn argmax_rows<T: Real>(probs: &Tensor<T>) -> Vec<usize> {
    probs
        .data()
        .chunks_exact(probs.features())
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &p)| {
                    if p > best.1 {
                        (i, p)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Completed steps.
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(shapes: &[usize], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One bias-corrected update of every parameter array.
    pub fn step(&mut self, params: Vec<&mut [T]>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "{} parameter arrays, {} gradients, {} optimizer slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Shape(
                    "parameter, gradient and moment sizes differ".into(),
                ));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (nb1, nb2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let (lr_t, inv_c1, inv_c2, eps) = (
            T::lit(lr),
            T::lit(1.0 / c1),
            T::lit(1.0 / c2),
            T::lit(self.epsilon),
        );
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + nb1 * g[i];
                v[i] = b2 * v[i] + nb2 * g[i] * g[i];
                let mhat = m[i] * inv_c1;
                let vhat = v[i] * inv_c2;
                p[i] -= lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// a validation-accuracy gain above `min_delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub best: Option<f64>,
    pub wait: usize,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_delta: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_delta,
            best: None,
            wait: 0,
        }
    }

    /// Records one epoch's validation accuracy; returns the learning rate
    /// for the next epoch.
    pub fn observe(&mut self, accuracy: f64) -> f64 {
        match self.best {
            Some(best) if accuracy <= best + self.min_delta => {
                self.wait += 1;
                if self.wait >= self.patience {
                    self.lr *= self.factor;
                    self.wait = 0;
                }
            }
            _ => {
                self.best = Some(accuracy);
                self.wait = 0;
            }
        }
        self.lr
    }
}
