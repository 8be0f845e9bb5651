//! Loss, optimiser, learning-rate schedule, the epoch loop and checkpoints.

mod checkpoint;
mod optim;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use optim::{argmax_rows, scce_loss, Adam, Plateau, LOSS_CLAMP};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureCache;
use crate::dsp::{FeatureKind, StftConfig};
use crate::error::{Error, Result};
use crate::nn::{BiLGNet, BiLGNetConfig, Context, Tensor, Upstream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    /// Minimum validation-accuracy gain that counts as an improvement.
    pub plateau_min_delta: f64,
    pub seed: u64,
    /// Standardise each input feature with training-split statistics.
    pub standardize: bool,
    /// Stop after this many epochs without a validation improvement.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            plateau_factor: 0.7,
            plateau_patience: 7,
            plateau_min_delta: 1e-3,
            seed: 0,
            standardize: true,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must be in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!(
                "plateau factor {} must be in (0, 1)",
                self.plateau_factor
            ));
        }
        if self.plateau_patience == 0 {
            return bad("plateau patience must be at least 1".into());
        }
        if !(self.plateau_min_delta >= 0.0) {
            return bad("plateau min_delta must be non-negative".into());
        }
        if self.early_stop_patience == Some(0) {
            return bad("early-stop patience must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training-mode forward passes seen during the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Learning rate used during this epoch.
    pub learning_rate: f64,
}

/// Feature extraction settings a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub stft: StftConfig,
}

/// Per-feature affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn fit(samples: &Samples) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("no samples to standardise".into()));
        }
        let c = samples.cols;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        let mut n = 0usize;
        for row in samples.data.chunks_exact(c) {
            for j in 0..c {
                let v = row[j] as f64;
                sum[j] += v;
                sq[j] += v * v;
            }
            n += 1;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n as f64 - m * m).max(0.0);
                if var.sqrt() < 1e-8 {
                    1.0
                } else {
                    var.sqrt() as f32
                }
            })
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn apply(&self, row: &mut [f32]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Feature matrices held in memory for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    data: Vec<f32>,
}

impl Samples {
    pub fn new(
        ids: Vec<String>,
        labels: Vec<usize>,
        rows: usize,
        cols: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if ids.len() != labels.len() || data.len() != ids.len() * rows * cols {
            return Err(Error::Shape(format!(
                "{} ids, {} labels and {} values for {rows}×{cols} samples",
                ids.len(),
                labels.len(),
                data.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= 7) {
            return Err(Error::LabelOutOfRange(l));
        }
        Ok(Self {
            ids,
            labels,
            rows,
            cols,
            data,
        })
    }

    /// Reads the named segments from a cache; all must share one shape.
    pub fn load(cache: &FeatureCache, ids: &[String]) -> Result<Self> {
        let mut labels = Vec::with_capacity(ids.len());
        let mut data = Vec::new();
        let mut shape = None;
        for id in ids {
            let entry = cache.entry(id).ok_or_else(|| {
                Error::InvalidArgument(format!("segment `{id}` is not in the cache"))
            })?;
            let m = cache.read(entry)?;
            match shape {
                None => shape = Some((m.rows(), m.cols())),
                Some(s) if s != (m.rows(), m.cols()) => {
                    return Err(Error::Shape(format!(
                        "segment `{id}` is {}×{}, others are {}×{}",
                        m.rows(),
                        m.cols(),
                        s.0,
                        s.1
                    )))
                }
                _ => {}
            }
            labels.push(entry.label);
            data.extend(m.values().iter().map(|&v| v as f32));
        }
        let (rows, cols) = shape.unwrap_or((0, 0));
        Self::new(ids.to_vec(), labels, rows, cols, data)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.data[i * n..(i + 1) * n]
    }

    /// Stacks the given samples into a `[batch, rows, cols]` tensor.
    pub fn batch(&self, indices: &[usize], standardizer: Option<&Standardizer>) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.rows * self.cols);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        if let Some(s) = standardizer {
            data.chunks_exact_mut(self.cols).for_each(|r| s.apply(r));
        }
        Tensor::new(vec![indices.len(), self.rows, self.cols], data).expect("consistent shape")
    }
}

/// Class probabilities for every sample, computed in inference mode.
pub fn predict(
    model: &BiLGNet<f32>,
    standardizer: Option<&Standardizer>,
    samples: &Samples,
    batch_size: usize,
) -> Result<Vec<Vec<f32>>> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let p = model.predict(&samples.batch(chunk, standardizer))?;
        out.extend(p.data().chunks_exact(p.features()).map(<[f32]>::to_vec));
    }
    Ok(out)
}

pub fn accuracy(probs: &[Vec<f32>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, &l)| argmax(p) == l)
        .count();
    correct as f64 / labels.len() as f64
}

pub fn argmax(p: &[f32]) -> usize {
    p.iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |b, (i, &v)| if v > b.1 { (i, v) } else { b },
        )
        .0
}

/// Everything needed to continue training: the model, optimiser and
/// scheduler state, and the epoch history.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: BiLGNet<f32>,
    pub optimizer: Adam<f32>,
    pub scheduler: Plateau,
    pub config: TrainConfig,
    pub features: FeatureSpec,
    pub standardizer: Option<Standardizer>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    pub best_val: Option<f64>,
    pub stale_epochs: usize,
}

impl Trainer {
    pub fn new(
        model_config: &BiLGNetConfig,
        config: &TrainConfig,
        features: FeatureSpec,
        train: &Samples,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Empty("training split is empty".into()));
        }
        if train.cols != model_config.input_dim {
            return Err(Error::Shape(format!(
                "features have {} dimensions but the model expects {}",
                train.cols, model_config.input_dim
            )));
        }
        let model = BiLGNet::build(model_config, config.seed)?;
        let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        let standardizer = if config.standardize {
            Some(Standardizer::fit(train)?)
        } else {
            None
        };
        Ok(Self {
            optimizer: Adam::new(&shapes, config.beta1, config.beta2, config.epsilon),
            scheduler: Plateau::new(
                config.learning_rate,
                config.plateau_factor,
                config.plateau_patience,
                config.plateau_min_delta,
            ),
            model,
            config: config.clone(),
            features,
            standardizer,
            epoch: 0,
            history: Vec::new(),
            best_val: None,
            stale_epochs: 0,
        })
    }

    pub fn stopped_early(&self) -> bool {
        matches!(self.config.early_stop_patience, Some(p) if self.stale_epochs >= p)
    }

    fn check_inputs(&self, s: &Samples, what: &str) -> Result<()> {
        if s.is_empty() {
            return Err(Error::Empty(format!("{what} split is empty")));
        }
        if s.cols != self.model.config().input_dim {
            return Err(Error::Shape(format!(
                "{what} features have {} dimensions but the model expects {}",
                s.cols,
                self.model.config().input_dim
            )));
        }
        Ok(())
    }

    /// One pass over the training split followed by validation.
    pub fn run_epoch(&mut self, train: &Samples, val: &Samples) -> Result<EpochStats> {
        self.check_inputs(train, "training")?;
        self.check_inputs(val, "validation")?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let lr = self.scheduler.lr;
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for idx in order.chunks(self.config.batch_size) {
            let x = train.batch(idx, self.standardizer.as_ref());
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let tape = self.model.forward(&x, &mut Context::train(&mut rng))?;
            let loss = scce_loss(tape.output(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss {loss} at epoch {}",
                    self.epoch + 1
                )));
            }
            loss_sum += loss * idx.len() as f64;
            correct += argmax_rows(tape.output())
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            let grads = self.model.backward(&tape, Upstream::Labels(&labels))?;
            self.model.update_statistics(&tape);
            self.optimizer
                .step(self.model.params_mut(), &grads.params, lr)?;
        }

        let probs = predict(
            &self.model,
            self.standardizer.as_ref(),
            val,
            self.config.batch_size,
        )?;
        let val_accuracy = accuracy(&probs, &val.labels);
        self.scheduler.observe(val_accuracy);
        match self.best_val {
            Some(b) if val_accuracy <= b + self.config.plateau_min_delta => self.stale_epochs += 1,
            _ => {
                self.best_val = Some(val_accuracy);
                self.stale_epochs = 0;
            }
        }
        self.epoch += 1;
        let stats = EpochStats {
            epoch: self.epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
            learning_rate: lr,
        };
        self.history.push(stats.clone());
        Ok(stats)
    }

    /// Trains until `max_epochs` epochs are complete or early stopping
    /// triggers, appending one JSON line per epoch to `log`.
    pub fn fit(
        &mut self,
        train: &Samples,
        val: &Samples,
        mut log: Option<&mut dyn Write>,
    ) -> Result<()> {
        while self.epoch < self.config.max_epochs && !self.stopped_early() {
            let s = self.run_epoch(train, val)?;
            log::info!(
                "epoch {:>3}  loss {:.4}  train {:.3}  val {:.3}  lr {:.2e}",
                s.epoch,
                s.train_loss,
                s.train_accuracy,
                s.val_accuracy,
                s.learning_rate
            );
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &s)?;
                writeln!(w)?;
                w.flush()?;
            }
        }
        Ok(())
    }

    pub fn predict(&self, samples: &Samples) -> Result<Vec<Vec<f32>>> {
        predict(
            &self.model,
            self.standardizer.as_ref(),
            samples,
            self.config.batch_size,
        )
    }
}
