use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Activation, BatchNorm, BiRnn, Cache, CellKind, Context, Dense, Dropout, Layer, Mode, Real,
    Tensor,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLGNetConfig {
    pub input_dim: usize,
    pub encoder: Vec<usize>,
    pub latent: usize,
    pub decoder: Vec<usize>,
    pub bottleneck: usize,
    pub dropout: f64,
    pub classes: usize,
}

impl Default for BiLGNetConfig {
    fn default() -> Self {
        Self {
            input_dim: 24,
            encoder: vec![128, 64, 32],
            latent: 16,
            decoder: vec![32, 64, 128],
            bottleneck: 16,
            dropout: 0.5,
            classes: 7,
        }
    }
}

impl BiLGNetConfig {
    /// Encoder 32/16/8, latent 4, decoder 8/16/32, bottleneck 8.
    pub fn reduced(input_dim: usize) -> Self {
        Self {
            input_dim,
            encoder: vec![32, 16, 8],
            latent: 4,
            decoder: vec![8, 16, 32],
            bottleneck: 8,
            ..Self::default()
        }
    }

    /// Encoder 8/4/2, latent 2, decoder 2/4/8.
    pub fn small(input_dim: usize) -> Self {
        Self {
            input_dim,
            encoder: vec![8, 4, 2],
            latent: 2,
            decoder: vec![2, 4, 8],
            bottleneck: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.input_dim == 0 {
            return bad("input dimension must be positive".into());
        }
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return bad("encoder and decoder need at least one layer each".into());
        }
        let widths = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .chain([&self.latent, &self.bottleneck]);
        if widths.clone().any(|&w| w == 0) {
            return bad("layer widths must be positive".into());
        }
        if let Some(w) = self.decoder.windows(2).find(|w| w[1] != 2 * w[0]) {
            return bad(format!(
                "decoder widths must double layer to layer, got {} then {}",
                w[0], w[1]
            ));
        }
        if self.classes != 7 {
            return bad(format!("output classes must be 7, got {}", self.classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Gradient source for [`BiLGNet::backward`].
pub enum Upstream<'a, T> {
    /// Mean sparse cross-entropy over the batch, differentiated through the
    /// softmax in closed form: (probs − onehot) / batch.
    Labels(&'a [usize]),
    /// Gradient of some loss with respect to the output probabilities.
    Output(&'a Tensor<T>),
}

/// Forward values kept for one backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    mode: Mode,
    caches: Vec<Cache<T>>,
    output: Tensor<T>,
}

impl<T> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// One array per parameter, in [`BiLGNet::params`] order.
    pub params: Vec<Vec<T>>,
    pub input: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLGNet<T> {
    config: BiLGNetConfig,
    layers: Vec<Layer<T>>,
}

impl<T: Real> BiLGNet<T> {
    /// BiLSTM encoder with batch norm after each layer, BiGRU latent layer,
    /// BiGRU decoder with batch norm (the last returning final states), then
    /// dense ReLU bottleneck, dropout and a softmax output.
    pub fn build(config: &BiLGNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut dim = config.input_dim;
        for &w in &config.encoder {
            layers.push(Layer::Recurrent(BiRnn::init(
                CellKind::Lstm,
                dim,
                w,
                true,
                &mut rng,
            )));
            dim = 2 * w;
            layers.push(Layer::BatchNorm(BatchNorm::new(dim)));
        }
        layers.push(Layer::Recurrent(BiRnn::init(
            CellKind::Gru,
            dim,
            config.latent,
            true,
            &mut rng,
        )));
        dim = 2 * config.latent;
        for (i, &w) in config.decoder.iter().enumerate() {
            let seq = i + 1 < config.decoder.len();
            layers.push(Layer::Recurrent(BiRnn::init(
                CellKind::Gru,
                dim,
                w,
                seq,
                &mut rng,
            )));
            dim = 2 * w;
            layers.push(Layer::BatchNorm(BatchNorm::new(dim)));
        }
        layers.push(Layer::Dense(Dense::init(
            dim,
            config.bottleneck,
            Activation::Relu,
            &mut rng,
        )));
        layers.push(Layer::Dropout(Dropout::new(config.dropout)?));
        layers.push(Layer::Dense(Dense::init(
            config.bottleneck,
            config.classes,
            Activation::Softmax,
            &mut rng,
        )));
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &BiLGNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Batch-norm running means and variances, layer by layer.
    pub fn state(&self) -> Vec<&[T]> {
        self.batch_norms()
            .flat_map(|b| [b.running_mean.as_slice(), b.running_var.as_slice()])
            .collect()
    }

    pub fn state_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some(b),
                _ => None,
            })
            .flat_map(|b| [b.running_mean.as_mut_slice(), b.running_var.as_mut_slice()])
            .collect()
    }

    pub fn statistics_initialized(&self) -> bool {
        self.batch_norms().all(|b| b.initialized)
    }

    pub fn set_statistics_initialized(&mut self, value: bool) {
        for l in &mut self.layers {
            if let Layer::BatchNorm(b) = l {
                b.initialized = value;
            }
        }
    }

    fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(b) => Some(b),
            _ => None,
        })
    }

    /// The same network in another precision.
    pub fn cast<U: Real>(&self) -> BiLGNet<U> {
        let mut out = BiLGNet::<U>::build(&self.config, 0).expect("config already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::lit(s.as_f64());
            }
        }
        for (dst, src) in out.state_mut().into_iter().zip(self.state()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::lit(s.as_f64());
            }
        }
        out.set_statistics_initialized(self.statistics_initialized());
        out
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Context<'_>) -> Result<Tape<T>> {
        if !x.is_sequence() || x.features() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects [batch, time, {}], got {:?}",
                self.config.input_dim,
                x.shape()
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&h, ctx)?;
            caches.push(cache);
            h = y;
        }
        Ok(Tape {
            mode: ctx.mode,
            caches,
            output: h,
        })
    }

    /// Class probabilities in inference mode.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, &mut Context::infer())?.output)
    }

    /// Updates batch-norm running statistics from a training-mode tape.
    pub fn update_statistics(&mut self, tape: &Tape<T>) {
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (Layer::BatchNorm(b), Cache::BatchNorm(c)) = (layer, cache) {
                b.commit(c);
            }
        }
    }

    pub fn backward(&self, tape: &Tape<T>, upstream: Upstream<'_, T>) -> Result<Gradients<T>> {
        if tape.mode != Mode::Train {
            return Err(Error::InferenceBackward);
        }
        let n = self.layers.len();
        let mut grads: Vec<Vec<Vec<T>>> = vec![Vec::new(); n];
        let (mut dy, last) = match upstream {
            Upstream::Labels(labels) => {
                let (dense, cache) = match (&self.layers[n - 1], &tape.caches[n - 1]) {
                    (Layer::Dense(d), Cache::Dense(c)) if d.activation == Activation::Softmax => {
                        (d, c)
                    }
                    _ => return Err(Error::Shape("label gradient needs a softmax output".into())),
                };
                let probs = &tape.output;
                if labels.len() != probs.batch() {
                    return Err(Error::Shape(format!(
                        "{} labels for a batch of {}",
                        labels.len(),
                        probs.batch()
                    )));
                }
                let k = probs.features();
                let scale = T::lit(1.0 / labels.len() as f64);
                let mut dz = probs.data().to_vec();
                for (i, &l) in labels.iter().enumerate() {
                    if l >= k {
                        return Err(Error::LabelOutOfRange(l));
                    }
                    dz[i * k + l] -= T::one();
                }
                dz.iter_mut().for_each(|v| *v *= scale);
                let (dx, g) = dense.backward_linear(cache, &dz)?;
                grads[n - 1] = g;
                (dx, n - 1)
            }
            Upstream::Output(d) => (d.clone(), n),
        };
        for i in (0..last).rev() {
            let (dx, g) = self.layers[i].backward(&tape.caches[i], &dy)?;
            grads[i] = g;
            dy = dx;
        }
        Ok(Gradients {
            params: grads.into_iter().flatten().collect(),
            input: dy,
        })
    }

    /// One line per layer with its parameter count.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (i, l) in self.layers.iter().enumerate() {
            let count: usize = l.params().iter().map(|p| p.len()).sum();
            out.push_str(&format!("L{:<2} {:<28} {:>9}\n", i + 1, l.name(), count));
        }
        out.push_str(&format!("total {:>33}\n", self.param_count()));
        out
    }
}
