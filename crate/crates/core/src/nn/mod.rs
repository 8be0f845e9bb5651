//! Recurrent network layers with hand-written backward passes, and the
//! BiLGNet stack built from them.

mod dense;
pub mod gradcheck;
mod init;
mod model;
mod norm;
mod rnn;

pub use dense::{softmax_rows, Activation, Dense, Dropout};
pub use init::{glorot_uniform, orthogonal};
pub use model::{BiLGNet, BiLGNetConfig, Gradients, Tape, Upstream};
pub use norm::BatchNorm;
pub use rnn::{BiRnn, CellKind, Rnn};

use std::fmt;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Floating point element type for network arithmetic.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + Default
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Dense row-major array of shape `[batch, time, features]` or
/// `[batch, features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.len() < 2 || shape.len() > 3 {
            return Err(Error::Shape(format!(
                "tensor rank must be 2 or 3, got {shape:?}"
            )));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Sequence length; 1 for rank-2 tensors.
    pub fn time(&self) -> usize {
        if self.shape.len() == 3 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn features(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn is_sequence(&self) -> bool {
        self.shape.len() == 3
    }

    /// Slice holding one batch element.
    pub fn sample(&self, i: usize) -> &[T] {
        let n = self.data.len() / self.batch();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-call context for a forward pass.
pub struct Context<'a> {
    pub mode: Mode,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Context<'a> {
    pub fn infer() -> Self {
        Self {
            mode: Mode::Infer,
            rng: None,
        }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            mode: Mode::Train,
            rng: Some(rng),
        }
    }
}

/// Forward-pass values a layer keeps for its backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Recurrent(rnn::BiRnnCache<T>),
    BatchNorm(norm::BatchNormCache<T>),
    Dense(dense::DenseCache<T>),
    Dropout(Option<Vec<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Recurrent(BiRnn<T>),
    BatchNorm(BatchNorm<T>),
    Dense(Dense<T>),
    Dropout(Dropout),
}

impl<T: Real> Layer<T> {
    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Context<'_>) -> Result<(Tensor<T>, Cache<T>)> {
        let (y, cache) = match self {
            Layer::Recurrent(l) => {
                let (y, c) = l.forward(x)?;
                (y, Cache::Recurrent(c))
            }
            Layer::BatchNorm(l) => {
                let (y, c) = l.forward(x, ctx.mode)?;
                (y, Cache::BatchNorm(c))
            }
            Layer::Dense(l) => {
                let (y, c) = l.forward(x)?;
                (y, Cache::Dense(c))
            }
            Layer::Dropout(l) => {
                let (y, mask) = l.forward(x, ctx)?;
                (y, Cache::Dropout(mask))
            }
        };
        debug_assert!(y.is_finite(), "non-finite output");
        Ok((y, cache))
    }

    /// Returns the input gradient and one gradient per parameter array.
    pub fn backward(&self, cache: &Cache<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
        match (self, cache) {
            (Layer::Recurrent(l), Cache::Recurrent(c)) => l.backward(c, dy),
            (Layer::BatchNorm(l), Cache::BatchNorm(c)) => l.backward(c, dy),
            (Layer::Dense(l), Cache::Dense(c)) => l.backward(c, dy),
            (Layer::Dropout(_), Cache::Dropout(mask)) => {
                let mut dx = dy.clone();
                if let Some(mask) = mask {
                    for (d, m) in dx.data.iter_mut().zip(mask) {
                        *d *= *m;
                    }
                }
                Ok((dx, Vec::new()))
            }
            _ => Err(Error::Shape("cache does not belong to this layer".into())),
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Recurrent(l) => l.params(),
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Dense(l) => vec![&l.w, &l.b],
            Layer::Dropout(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Layer::Recurrent(l) => l.params_mut(),
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Dense(l) => vec![&mut l.w, &mut l.b],
            Layer::Dropout(_) => Vec::new(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Layer::Recurrent(l) => format!(
                "Bi{}({}, {})",
                l.fwd.kind,
                l.fwd.hidden,
                if l.return_sequences { "seq" } else { "final" }
            ),
            Layer::BatchNorm(l) => format!("BatchNorm({})", l.features()),
            Layer::Dense(l) => format!("Dense({}, {})", l.outputs, l.activation),
            Layer::Dropout(l) => format!("Dropout({})", l.rate),
        }
    }
}

pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent accumulators, summed in a fixed order.
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for k in 0..8 {
            acc[k] += a[k] * b[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (a, b) in xr.iter().zip(yr) {
        s += *a * *b;
    }
    s
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shapes() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![6], vec![0.0; 6]).is_err());
        let t = Tensor::<f64>::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        assert_eq!((t.batch(), t.time(), t.features()), (2, 3, 4));
        assert_eq!(t.sample(1)[0], 12.0);
    }

    #[test]
    fn dot_matches_naive() {
        let x: Vec<f64> = (0..19).map(|i| i as f64 * 0.5 - 3.0).collect();
        let y: Vec<f64> = (0..19).map(|i| (i as f64).sin()).collect();
        let naive: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((dot(&x, &y) - naive).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }
}
