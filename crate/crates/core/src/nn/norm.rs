use super::{Mode, Real, Tensor};
use crate::error::{Error, Result};

pub const MOMENTUM: f64 = 0.99;
pub const EPSILON: f64 = 1e-3;

/// Per-feature normalisation over every leading axis (batch and time).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Set once the running statistics have seen a training batch.
    pub initialized: bool,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    shape: Vec<usize>,
    mode: Mode,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: vec![T::one(); features],
            beta: vec![T::zero(); features],
            running_mean: vec![T::zero(); features],
            running_var: vec![T::one(); features],
            initialized: false,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let f = self.features();
        if x.features() != f {
            return Err(Error::Shape(format!(
                "batch norm over {f} features got {:?}",
                x.shape()
            )));
        }
        let rows = x.data().len() / f;
        let data = x.data();
        let (mean, var) = match mode {
            Mode::Train => {
                if rows == 0 {
                    return Err(Error::Shape("batch norm on an empty batch".into()));
                }
                let mut mean = vec![0.0; f];
                for row in data.chunks_exact(f) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v.as_f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; f];
                for row in data.chunks_exact(f) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v.as_f64() - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                (mean, var)
            }
            Mode::Infer => {
                if !self.initialized {
                    return Err(Error::UninitializedStatistics);
                }
                (
                    self.running_mean.iter().map(|v| v.as_f64()).collect(),
                    self.running_var.iter().map(|v| v.as_f64()).collect(),
                )
            }
        };
        let inv_std: Vec<T> = var
            .iter()
            .map(|v| T::lit(1.0 / (v + EPSILON).sqrt()))
            .collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::lit(m)).collect();
        let mut xhat = Vec::with_capacity(data.len());
        let mut y = Vec::with_capacity(data.len());
        for row in data.chunks_exact(f) {
            for j in 0..f {
                let xh = (row[j] - mean_t[j]) * inv_std[j];
                xhat.push(xh);
                y.push(self.gamma[j] * xh + self.beta[j]);
            }
        }
        let cache = BatchNormCache {
            shape: x.shape().to_vec(),
            mode,
            xhat,
            inv_std,
            batch_mean: if mode == Mode::Train {
                mean
            } else {
                Vec::new()
            },
            batch_var: if mode == Mode::Train { var } else { Vec::new() },
        };
        Ok((Tensor::new(x.shape().to_vec(), y)?, cache))
    }

    /// Folds a training batch's statistics into the running averages.
    pub fn commit(&mut self, cache: &BatchNormCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        for j in 0..self.features() {
            let m =
                MOMENTUM * self.running_mean[j].as_f64() + (1.0 - MOMENTUM) * cache.batch_mean[j];
            let v = MOMENTUM * self.running_var[j].as_f64() + (1.0 - MOMENTUM) * cache.batch_var[j];
            self.running_mean[j] = T::lit(m);
            self.running_var[j] = T::lit(v);
        }
        self.initialized = true;
    }

    /// Gradient through the batch statistics in training mode, or through
    /// the fixed affine map in inference mode.
    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        dy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
        if dy.shape() != cache.shape.as_slice() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?}, expected {:?}",
                dy.shape(),
                cache.shape
            )));
        }
        let f = self.features();
        let rows = dy.data().len() / f;
        let mut dgamma = vec![0.0; f];
        let mut dbeta = vec![0.0; f];
        for (g, xh) in dy.data().chunks_exact(f).zip(cache.xhat.chunks_exact(f)) {
            for j in 0..f {
                dgamma[j] += (g[j] * xh[j]).as_f64();
                dbeta[j] += g[j].as_f64();
            }
        }
        let mut dx = Vec::with_capacity(dy.data().len());
        match cache.mode {
            Mode::Train => {
                let n = rows as f64;
                let scale: Vec<T> = (0..f)
                    .map(|j| self.gamma[j] * cache.inv_std[j] / T::lit(n))
                    .collect();
                let (db, dg): (Vec<T>, Vec<T>) = (
                    dbeta.iter().map(|&v| T::lit(v)).collect(),
                    dgamma.iter().map(|&v| T::lit(v)).collect(),
                );
                let n = T::lit(n);
                for (g, xh) in dy.data().chunks_exact(f).zip(cache.xhat.chunks_exact(f)) {
                    for j in 0..f {
                        dx.push(scale[j] * (n * g[j] - db[j] - xh[j] * dg[j]));
                    }
                }
            }
            Mode::Infer => {
                for g in dy.data().chunks_exact(f) {
                    for j in 0..f {
                        dx.push(g[j] * self.gamma[j] * cache.inv_std[j]);
                    }
                }
            }
        }
        Ok((
            Tensor::new(cache.shape.clone(), dx)?,
            vec![
                dgamma.into_iter().map(T::lit).collect(),
                dbeta.into_iter().map(T::lit).collect(),
            ],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn channel_stats(y: &Tensor<f64>, j: usize) -> (f64, f64) {
        let f = y.features();
        let col: Vec<f64> = y.data().chunks_exact(f).map(|r| r[j]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
        (m, v)
    }

    #[test]
    fn training_output_is_standardised() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // batch 4 × time 20 = 80 rows, channels with different scales.
        let data: Vec<f64> = (0..4 * 20 * 3)
            .map(|i| (i % 3 + 1) as f64 * 5.0 * rng.random::<f64>() + i as f64 % 7.0)
            .collect();
        let x = Tensor::from_f64(vec![4, 20, 3], &data).unwrap();
        let (y, _) = BatchNorm::<f64>::new(3).forward(&x, Mode::Train).unwrap();
        for j in 0..3 {
            let (m, v) = channel_stats(&y, j);
            assert!(m.abs() < 1e-5, "mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
    }

    #[test]
    fn unit_input_scaled_by_epsilon_factor() {
        let data = [1.0, -1.0, 1.0, -1.0];
        let x = Tensor::from_f64(vec![4, 1], &data).unwrap();
        let (y, _) = BatchNorm::<f64>::new(1).forward(&x, Mode::Train).unwrap();
        let k = 1.0 / (1.0f64 + 1e-3).sqrt();
        for (a, b) in y.data().iter().zip(data) {
            assert!((a - b * k).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut bn = BatchNorm::<f64>::new(2);
        bn.beta = vec![0.25, -2.0];
        let x = Tensor::from_f64(vec![3, 2], &[7.0, 1.0, 7.0, 2.0, 7.0, 3.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for row in y.data().chunks_exact(2) {
            assert_eq!(row[0], 0.25);
        }
    }

    #[test]
    fn inference_requires_statistics() {
        let mut bn = BatchNorm::<f32>::new(2);
        let x = Tensor::from_f64(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(
            bn.forward(&x, Mode::Infer),
            Err(Error::UninitializedStatistics)
        ));
        let (_, c) = bn.forward(&x, Mode::Train).unwrap();
        bn.commit(&c);
        assert!(bn.initialized);
        // 0.99 · 0 + 0.01 · 2 and 0.99 · 1 + 0.01 · 1.
        assert!((bn.running_mean[0] - 0.02).abs() < 1e-7);
        assert!((bn.running_var[0] - 1.0).abs() < 1e-7);
        assert!(bn.forward(&x, Mode::Infer).is_ok());
    }
}
