use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, EpochStats, FeatureSpec, Plateau, Standardizer, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::nn::{BiLGNet, BiLGNetConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NAVM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: BiLGNetConfig,
    train: TrainConfig,
    features: FeatureSpec,
    epoch: usize,
    scheduler: Plateau,
    adam_steps: u64,
    statistics_initialized: bool,
    standardized: bool,
    best_val: Option<f64>,
    stale_epochs: usize,
    history: Vec<EpochStats>,
    arrays: usize,
}

/// Layout: magic, u32 version, u32 header length, JSON header, then arrays
/// (parameters, batch-norm running statistics, Adam first and second
/// moments, standardiser mean and deviation) each as a u32 element count
/// followed by little-endian f32 values.
pub fn encode_checkpoint(t: &Trainer) -> Result<Vec<u8>> {
    let mut arrays: Vec<&[f32]> = t.model.params();
    arrays.extend(t.model.state());
    arrays.extend(t.optimizer.m.iter().map(Vec::as_slice));
    arrays.extend(t.optimizer.v.iter().map(Vec::as_slice));
    if let Some(s) = &t.standardizer {
        arrays.push(&s.mean);
        arrays.push(&s.std);
    }
    let header = Header {
        model: t.model.config().clone(),
        train: t.config.clone(),
        features: t.features,
        epoch: t.epoch,
        scheduler: t.scheduler.clone(),
        adam_steps: t.optimizer.t,
        statistics_initialized: t.model.statistics_initialized(),
        standardized: t.standardizer.is_some(),
        best_val: t.best_val,
        stale_epochs: t.stale_epochs,
        history: t.history.clone(),
        arrays: arrays.len(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for a in arrays {
        out.extend_from_slice(&(a.len() as u32).to_le_bytes());
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn fill(&mut self, dst: &mut [f32], what: &str) -> Result<()> {
        let n = self.u32(what)? as usize;
        if n != dst.len() {
            return Err(Error::Checkpoint(format!(
                "{what} holds {n} values, the configured model needs {}",
                dst.len()
            )));
        }
        let raw = self.take(4 * n, what)?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(
            "not a model checkpoint (bad magic)".into(),
        ));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let mut model = BiLGNet::<f32>::build(&header.model, 0)?;
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let expected = 3 * shapes.len() + model.state().len() + if header.standardized { 2 } else { 0 };
    if header.arrays != expected {
        return Err(Error::Checkpoint(format!(
            "header lists {} arrays, the configured model has {expected}",
            header.arrays
        )));
    }
    for (i, p) in model.params_mut().into_iter().enumerate() {
        r.fill(p, &format!("parameter {i}"))?;
    }
    for (i, s) in model.state_mut().into_iter().enumerate() {
        r.fill(s, &format!("running statistic {i}"))?;
    }
    model.set_statistics_initialized(header.statistics_initialized);
    let mut optimizer = Adam::new(
        &shapes,
        header.train.beta1,
        header.train.beta2,
        header.train.epsilon,
    );
    optimizer.t = header.adam_steps;
    for (i, m) in optimizer.m.iter_mut().enumerate() {
        r.fill(m, &format!("first moment {i}"))?;
    }
    for (i, v) in optimizer.v.iter_mut().enumerate() {
        r.fill(v, &format!("second moment {i}"))?;
    }
    let standardizer = if header.standardized {
        let mut s = Standardizer {
            mean: vec![0.0; header.model.input_dim],
            std: vec![0.0; header.model.input_dim],
        };
        r.fill(&mut s.mean, "standardiser mean")?;
        r.fill(&mut s.std, "standardiser deviation")?;
        Some(s)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last array",
            bytes.len() - r.pos
        )));
    }
    Ok(Trainer {
        model,
        optimizer,
        scheduler: header.scheduler,
        config: header.train,
        features: header.features,
        standardizer,
        epoch: header.epoch,
        history: header.history,
        best_val: header.best_val,
        stale_epochs: header.stale_epochs,
    })
}

/// Writes via a temporary file in the same directory, then renames.
pub fn save_checkpoint(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(trainer)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    decode_checkpoint(&std::fs::read(path)?)
}
