use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use nava::audio_io::{self, AudioClip, PIPELINE_RATE};
use nava::dataset::{self, Dastgah, SynthSpec};
use nava::dsp::{FeatureExtractor, FeatureKind, StftConfig};
use nava::eval::{self, ReportFormat};
use nava::nn::{gradcheck, BiLGNet, BiLGNetConfig, Tensor};
use nava::training::{self, Trainer};

fn err(e: nava::Error) -> PyErr {
    match e {
        nava::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn kind(name: &str) -> PyResult<FeatureKind> {
    name.parse().map_err(err)
}

/// Dastgah names indexed by class code.
#[pyfunction]
fn dastgah_names() -> Vec<&'static str> {
    Dastgah::ALL.iter().map(|d| d.name()).collect()
}

/// Returns `(samples, sample_rate)` with samples mixed to mono in [-1, 1].
#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let clip = audio_io::read_wav(path).map_err(err)?;
    let rate = clip.sample_rate();
    Ok((clip.into_samples(), rate))
}

#[pyfunction]
fn write_wav(path: PathBuf, samples: Vec<f64>, sample_rate: u32) -> PyResult<()> {
    let clip = AudioClip::new(samples, sample_rate).map_err(err)?;
    audio_io::write_wav(path, &clip).map_err(err)
}

#[pyfunction]
fn resample(samples: Vec<f64>, sample_rate: u32, target_rate: u32) -> PyResult<Vec<f64>> {
    let clip = AudioClip::new(samples, sample_rate).map_err(err)?;
    Ok(audio_io::resample(&clip, target_rate)
        .map_err(err)?
        .into_samples())
}

/// Frames x dims feature matrix of a 22050 Hz signal.
#[pyfunction]
#[pyo3(signature = (samples, feature = "mfcc", hop_length = 1536, frame_length = 2048))]
fn extract(
    samples: Vec<f64>,
    feature: &str,
    hop_length: usize,
    frame_length: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = StftConfig {
        frame_length,
        hop_length,
        ..Default::default()
    };
    let ex = FeatureExtractor::new(kind(feature)?, cfg, PIPELINE_RATE).map_err(err)?;
    let m = ex.extract(&samples).map_err(err)?;
    Ok((0..m.rows()).map(|r| m.row(r).to_vec()).collect())
}

/// Writes a synthetic corpus and returns the number of clips.
#[pyfunction]
#[pyo3(signature = (out_dir, per_class = 1, seconds = 20.0, seed = 0, random_tonic = false))]
fn synth(
    out_dir: PathBuf,
    per_class: usize,
    seconds: f64,
    seed: u64,
    random_tonic: bool,
) -> PyResult<usize> {
    let spec = SynthSpec {
        clips_per_class: per_class,
        clip_seconds: seconds,
        seed,
        random_tonic,
        ..Default::default()
    };
    Ok(dataset::synth_dataset(&spec, out_dir).map_err(err)?.len())
}

/// 7x7 counts, rows true class, columns predicted.
#[pyfunction]
fn confusion(predictions: Vec<usize>, labels: Vec<usize>) -> PyResult<Vec<Vec<u64>>> {
    let cm = eval::confusion(&predictions, &labels).map_err(err)?;
    Ok(cm.counts().iter().map(|r| r.to_vec()).collect())
}

#[pyfunction]
#[pyo3(signature = (predictions, labels, format = "text"))]
fn report(predictions: Vec<usize>, labels: Vec<usize>, format: &str) -> PyResult<String> {
    let format: ReportFormat = format.parse().map_err(err)?;
    let cm = eval::confusion(&predictions, &labels).map_err(err)?;
    Ok(eval::render(&eval::report(&cm).map_err(err)?, format))
}

#[pyfunction]
fn weighted_average(values: Vec<f64>, supports: Vec<u64>) -> PyResult<f64> {
    eval::weighted_average(&values, &supports).map_err(err)
}

/// `(name, max relative error, passed)` for every finite-difference check.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck_suite(seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    Ok(gradcheck::run_suite(seed)
        .map_err(err)?
        .into_iter()
        .map(|r| {
            let ok = r.passed();
            (r.name, r.max_rel_error, ok)
        })
        .collect())
}

/// Parameter count of a freshly built network.
#[pyfunction]
#[pyo3(signature = (preset = "full", input_dim = 24))]
fn param_count(preset: &str, input_dim: usize) -> PyResult<usize> {
    let cfg = match preset {
        "full" => BiLGNetConfig {
            input_dim,
            ..Default::default()
        },
        "reduced" => BiLGNetConfig::reduced(input_dim),
        "small" => BiLGNetConfig::small(input_dim),
        other => return Err(PyValueError::new_err(format!("unknown preset `{other}`"))),
    };
    Ok(BiLGNet::<f32>::build(&cfg, 0).map_err(err)?.param_count())
}

/// A trained classifier loaded from a checkpoint.
#[pyclass(module = "nava")]
struct Model {
    trainer: Trainer,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            trainer: training::load_checkpoint(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        training::save_checkpoint(&self.trainer, path).map_err(err)
    }

    #[getter]
    fn feature(&self) -> &'static str {
        self.trainer.features.kind.name()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.trainer.epoch
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.trainer.model.param_count()
    }

    fn summary(&self) -> String {
        self.trainer.model.summary()
    }

    /// Class probabilities for a batch of equally sized frames x dims matrices.
    fn predict(&self, batch: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f32>>> {
        let (rows, cols) = match batch.first() {
            Some(m) => (m.len(), m.first().map_or(0, Vec::len)),
            None => return Ok(Vec::new()),
        };
        let mut data = Vec::with_capacity(batch.len() * rows * cols);
        for m in &batch {
            if m.len() != rows || m.iter().any(|r| r.len() != cols) {
                return Err(PyValueError::new_err("matrices differ in shape"));
            }
            for r in m {
                let mut row: Vec<f32> = r.iter().map(|&v| v as f32).collect();
                if let Some(s) = &self.trainer.standardizer {
                    s.apply(&mut row);
                }
                data.extend(row);
            }
        }
        let x = Tensor::new(vec![batch.len(), rows, cols], data).map_err(err)?;
        let p = self.trainer.model.predict(&x).map_err(err)?;
        Ok(p.data().chunks_exact(p.features()).map(<[f32]>::to_vec).collect())
    }

    /// Per-segment probabilities and the majority-vote class code.
    fn classify_wav(&self, path: PathBuf) -> PyResult<(Vec<Vec<f32>>, usize)> {
        let clip = audio_io::resample(&audio_io::read_wav(path).map_err(err)?, PIPELINE_RATE)
            .map_err(err)?;
        let segments = dataset::segmentize(&clip, "clip", Dastgah::Shur).map_err(err)?;
        if segments.is_empty() {
            return Err(PyValueError::new_err("no full segment"));
        }
        let f = self.trainer.features;
        let ex = FeatureExtractor::new(f.kind, f.stft, PIPELINE_RATE).map_err(err)?;
        let mut batch = Vec::new();
        for s in &segments {
            let m = ex.extract(&s.samples).map_err(err)?;
            batch.push((0..m.rows()).map(|r| m.row(r).to_vec()).collect());
        }
        let probs = self.predict(batch)?;
        let verdict = eval::majority_vote(&probs).map_err(err)?;
        Ok((probs, verdict.class))
    }
}

#[pymodule]
#[pyo3(name = "nava")]
fn nava_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PIPELINE_RATE", PIPELINE_RATE)?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(dastgah_names, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(resample, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_average, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck_suite, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    Ok(())
}
