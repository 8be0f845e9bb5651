use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{manifest_to_csv, Dastgah, Instrument, RecordEntry};
use crate::audio_io::{encode_wav, AudioClip, PIPELINE_RATE};
use crate::error::{Error, Result};

/// Scale templates in quartertone steps above the tonic. Class 0 is the base
/// scale; every other class moves exactly one degree by one quartertone.
pub const TEMPLATES: [[u8; 7]; 7] = [
    [0, 4, 7, 10, 14, 18, 21],
    [0, 4, 7, 10, 14, 18, 22],
    [0, 4, 7, 11, 14, 18, 21],
    [0, 4, 8, 10, 14, 18, 21],
    [0, 3, 7, 10, 14, 18, 21],
    [0, 4, 7, 10, 14, 17, 21],
    [0, 4, 7, 10, 15, 18, 21],
];

const HARMONICS: usize = 4;
const FUNDAMENTAL_AMPLITUDE: f64 = 0.4;
/// The envelope decays by a factor e^-DECAY over one note.
const DECAY: f64 = 0.5;
/// Time constant of the exponential onset and release ramps.
const ATTACK_SECONDS: f64 = 0.01;
const NOISE_DBFS: f64 = -30.0;
const NOTE_SECONDS: (f64, f64) = (0.2, 0.6);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    pub seed: u64,
    pub tonic_hz: f64,
    /// Transpose each clip by a random whole number of quartertones (0..24).
    pub random_tonic: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: Dastgah::COUNT,
            clips_per_class: 1,
            clip_seconds: 20.0,
            seed: 0,
            tonic_hz: 220.0,
            random_tonic: false,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > Dastgah::COUNT {
            return Err(Error::InvalidArgument(format!(
                "class count must be in 1..={}",
                Dastgah::COUNT
            )));
        }
        if self.clips_per_class == 0 {
            return Err(Error::InvalidArgument("clips per class must be positive".into()));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return Err(Error::InvalidArgument("clip length must be positive".into()));
        }
        if !(self.tonic_hz > 0.0) {
            return Err(Error::InvalidArgument("tonic must be positive".into()));
        }
        Ok(())
    }

    fn clip_rng(&self, class: usize, clip: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((class as u64) << 32) | clip as u64);
        rng
    }
}

/// Renders one random melody over `template`.
pub fn synth_clip(template: &[u8; 7], spec: &SynthSpec, rng: &mut impl Rng) -> AudioClip {
    let sr = PIPELINE_RATE as f64;
    let total = (spec.clip_seconds * sr).round() as usize;
    let tonic = if spec.random_tonic {
        spec.tonic_hz * 2f64.powf(rng.random_range(0..24) as f64 / 24.0)
    } else {
        spec.tonic_hz
    };

    let mut samples = Vec::with_capacity(total);
    while samples.len() < total {
        let degree = template[rng.random_range(0..template.len())];
        let seconds = rng.random_range(NOTE_SECONDS.0..NOTE_SECONDS.1);
        let len = ((seconds * sr).round() as usize).min(total - samples.len());
        let freq = tonic * 2f64.powf(degree as f64 / 24.0);

        // Per-harmonic phasors advanced by complex rotation.
        let mut phasors: Vec<(f64, f64)> = vec![(1.0, 0.0); HARMONICS];
        let steps: Vec<(f64, f64)> = (1..=HARMONICS)
            .map(|h| {
                let w = 2.0 * std::f64::consts::PI * freq * h as f64 / sr;
                (w.cos(), w.sin())
            })
            .collect();
        let decay_per_sample = (-DECAY / (seconds * sr)).exp();
        let ramp = ATTACK_SECONDS * sr;
        let attack_per_sample = (-1.0 / ramp).exp();
        let mut env = FUNDAMENTAL_AMPLITUDE;
        let mut attack = 1.0;
        for n in 0..len {
            let remaining = (len - n) as f64;
            let release = if remaining < 40.0 * ramp {
                1.0 - (-remaining / ramp).exp()
            } else {
                1.0
            };
            let mut v = 0.0;
            for (h, (p, s)) in phasors.iter_mut().zip(&steps).enumerate() {
                v += p.1 / (h + 1) as f64;
                *p = (p.0 * s.0 - p.1 * s.1, p.0 * s.1 + p.1 * s.0);
            }
            samples.push(env * (1.0 - attack) * release * v);
            env *= decay_per_sample;
            attack *= attack_per_sample;
        }
    }

    let noise = Normal::new(0.0, 10f64.powf(NOISE_DBFS / 20.0)).unwrap();
    for s in &mut samples {
        *s = (*s + noise.sample(rng)).clamp(-1.0, 1.0);
    }
    AudioClip::new(samples, PIPELINE_RATE).expect("synthesised samples are finite")
}

/// Writes `clips_per_class` WAV files per class plus `manifest.csv` into
/// `out_dir`, returning the manifest entries with paths under `out_dir`.
pub fn synth_dataset(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<Vec<RecordEntry>> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;

    let jobs: Vec<(usize, usize)> = (0..spec.classes)
        .flat_map(|c| (0..spec.clips_per_class).map(move |i| (c, i)))
        .collect();
    let written: Vec<Result<RecordEntry>> = jobs
        .par_iter()
        .map(|&(class, clip)| {
            let mut rng = spec.clip_rng(class, clip);
            let audio = synth_clip(&TEMPLATES[class], spec, &mut rng);
            let record_id = format!("syn_c{class}_{clip:03}");
            let file = format!("{record_id}.wav");
            std::fs::write(out_dir.join(&file), encode_wav(&audio))?;
            Ok(RecordEntry {
                record_id,
                path: file.into(),
                dastgah: Dastgah::ALL[class],
                instrument: Instrument::ALL[(class + clip) % Instrument::ALL.len()],
                artist: "synthetic".into(),
            })
        })
        .collect();
    let relative = written.into_iter().collect::<Result<Vec<_>>>()?;
    std::fs::write(out_dir.join("manifest.csv"), manifest_to_csv(&relative))?;
    Ok(relative
        .into_iter()
        .map(|mut e| {
            e.path = out_dir.join(&e.path);
            e
        })
        .collect())
}
