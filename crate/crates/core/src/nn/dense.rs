use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use super::{axpy, dot, Context, Mode, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::None => "linear",
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
        })
    }
}

/// Fully connected layer `y = act(x W + b)` on `[batch, inputs]`; `w` is
/// `inputs × outputs` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    x: Tensor<T>,
    y: Tensor<T>,
}

impl<T> DenseCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.y
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(z: &mut [T], cols: usize) {
    for row in z.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

impl<T: Real> Dense<T> {
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Self {
            inputs,
            outputs,
            w: glorot_uniform(rng, inputs, outputs)
                .into_iter()
                .map(T::lit)
                .collect(),
            b: vec![T::zero(); outputs],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
        if x.is_sequence() || x.features() != self.inputs {
            return Err(Error::Shape(format!(
                "dense layer expects [batch, {}], got {:?}",
                self.inputs,
                x.shape()
            )));
        }
        if self.w.len() != self.inputs * self.outputs || self.b.len() != self.outputs {
            return Err(Error::Shape(
                "dense parameters do not match layer size".into(),
            ));
        }
        let (b, o) = (x.batch(), self.outputs);
        let mut y = Vec::with_capacity(b * o);
        for i in 0..b {
            let mut row = self.b.clone();
            for (k, &xk) in x.sample(i).iter().enumerate() {
                axpy(xk, &self.w[k * o..(k + 1) * o], &mut row);
            }
            y.extend(row);
        }
        match self.activation {
            Activation::None => {}
            Activation::Relu => y.iter_mut().for_each(|v| *v = v.max(T::zero())),
            Activation::Softmax => softmax_rows(&mut y, o),
        }
        let y = Tensor::new(vec![b, o], y)?;
        Ok((y.clone(), DenseCache { x: x.clone(), y }))
    }

    pub fn backward(
        &self,
        cache: &DenseCache<T>,
        dy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
        if dy.shape() != cache.y.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?}, expected {:?}",
                dy.shape(),
                cache.y.shape()
            )));
        }
        let o = self.outputs;
        let mut dz = dy.data().to_vec();
        match self.activation {
            Activation::None => {}
            Activation::Relu => {
                for (d, y) in dz.iter_mut().zip(cache.y.data()) {
                    if *y <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            Activation::Softmax => {
                for (d, p) in dz.chunks_exact_mut(o).zip(cache.y.data().chunks_exact(o)) {
                    let s = dot(d, p);
                    for (dj, pj) in d.iter_mut().zip(p) {
                        *dj = *pj * (*dj - s);
                    }
                }
            }
        }
        self.backward_linear(cache, &dz)
    }

    /// Backward pass from the gradient of the pre-activation `x W + b`.
    pub fn backward_linear(
        &self,
        cache: &DenseCache<T>,
        dz: &[T],
    ) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
        let (b, n, o) = (cache.x.batch(), self.inputs, self.outputs);
        if dz.len() != b * o {
            return Err(Error::Shape(
                "pre-activation gradient has the wrong size".into(),
            ));
        }
        let mut dw = vec![T::zero(); n * o];
        let mut db = vec![T::zero(); o];
        let mut dx = Vec::with_capacity(b * n);
        for i in 0..b {
            let g = &dz[i * o..(i + 1) * o];
            axpy(T::one(), g, &mut db);
            for (k, &xk) in cache.x.sample(i).iter().enumerate() {
                axpy(xk, g, &mut dw[k * o..(k + 1) * o]);
                dx.push(dot(&self.w[k * o..(k + 1) * o], g));
            }
        }
        Ok((Tensor::new(vec![b, n], dx)?, vec![dw, db]))
    }
}

/// Inverted dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        Ok(Self { rate })
    }

    /// Returns the output and, in training mode, the applied scale mask.
    pub fn forward<T: Real>(
        &self,
        x: &Tensor<T>,
        ctx: &mut Context<'_>,
    ) -> Result<(Tensor<T>, Option<Vec<T>>)> {
        if ctx.mode == Mode::Infer || self.rate == 0.0 {
            return Ok((x.clone(), None));
        }
        let rng = ctx.rng.as_deref_mut().ok_or_else(|| {
            Error::InvalidArgument("training-mode dropout needs a random source".into())
        })?;
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.data().len())
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let y = x.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        Ok((Tensor::new(x.shape().to_vec(), y)?, Some(mask)))
    }
}
