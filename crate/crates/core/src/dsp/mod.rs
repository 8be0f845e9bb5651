//! Framing, windowing, STFT and the spectral features built on top of it.

mod features;
mod fft;

pub use features::{
    cens, chroma24, dct2_ortho, dct3_ortho, hz_to_mel, mel_filterbank, mel_spectrogram,
    mel_to_hz, mfcc, FeatureExtractor, FeatureKind, FeatureMatrix, MelFilterbank, CHROMA_BINS,
    CHROMA_MIN_HZ, MEL_BANDS, MFCC_COEFFS,
};
pub use fft::Fft;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
    /// No taper; only useful for checking the transform itself.
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_length: usize,
    pub hop_length: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 2048-sample frames with 25% overlap.
    fn default() -> Self {
        Self {
            frame_length: 2048,
            hop_length: 1536,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.frame_length.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "frame length {} is not a power of two",
                self.frame_length
            )));
        }
        if self.hop_length == 0 || self.hop_length > self.frame_length {
            return Err(Error::InvalidArgument(format!(
                "hop length {} must be in 1..={}",
                self.hop_length, self.frame_length
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    /// Number of whole frames in a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len < self.frame_length {
            return Err(Error::TooShort {
                len,
                needed: self.frame_length,
            });
        }
        Ok((len - self.frame_length) / self.hop_length + 1)
    }

    pub(crate) fn window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => hann_window(self.frame_length),
            WindowKind::Rectangular => vec![1.0; self.frame_length],
        }
    }
}

/// Periodic Hann window, `w[k] = 0.5 (1 - cos(2 pi k / n))`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()))
        .collect()
}

/// Splits a signal into frames without centring or padding; a trailing
/// partial frame is dropped.
pub fn frame_signal<'a>(samples: &'a [f64], cfg: &StftConfig) -> Result<Vec<&'a [f64]>> {
    cfg.validate()?;
    let count = cfg.frame_count(samples.len())?;
    Ok((0..count)
        .map(|i| &samples[i * cfg.hop_length..i * cfg.hop_length + cfg.frame_length])
        .collect())
}

/// Power spectrogram, frames x (frame_length/2 + 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f64>,
    frames: usize,
    bins: usize,
    sample_rate: u32,
    hop_length: usize,
}

impl Spectrogram {
    pub fn new(
        values: Vec<f64>,
        frames: usize,
        bins: usize,
        sample_rate: u32,
        hop_length: usize,
    ) -> Result<Self> {
        if values.len() != frames * bins || bins < 2 {
            return Err(Error::Shape(format!(
                "{} values for {frames}x{bins} spectrogram",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "spectrogram entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            values,
            frames,
            bins,
            sample_rate,
            hop_length,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// FFT size the bins were computed with.
    pub fn n_fft(&self) -> usize {
        (self.bins - 1) * 2
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop_length as f64
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.values[i * self.bins..(i + 1) * self.bins]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Short-time power spectrum: window, radix-2 FFT, keep bins 0..=N/2, |X|^2.
pub fn stft(samples: &[f64], sample_rate: u32, cfg: &StftConfig) -> Result<Spectrogram> {
    let fft = Fft::new(cfg.frame_length)?;
    stft_with(&fft, &cfg.window(), samples, sample_rate, cfg)
}

pub(crate) fn stft_with(
    fft: &Fft,
    window: &[f64],
    samples: &[f64],
    sample_rate: u32,
    cfg: &StftConfig,
) -> Result<Spectrogram> {
    let frames = frame_signal(samples, cfg)?;
    let bins = cfg.bins();
    let mut values = Vec::with_capacity(frames.len() * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.frame_length];
    for frame in &frames {
        for ((b, &x), &w) in buf.iter_mut().zip(frame.iter()).zip(window) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.forward(&mut buf);
        values.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(Spectrogram {
        frames: frames.len(),
        values,
        bins,
        sample_rate,
        hop_length: cfg.hop_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_closed_form() {
        assert_eq!(hann_window(1), vec![0.0]);
        let w4 = hann_window(4);
        for (a, b) in w4.iter().zip([0.0, 0.5, 1.0, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(hann_window(2048)[1024], 1.0);
    }

    #[test]
    fn frame_counts() {
        let cfg = StftConfig::default();
        let len = 441_000;
        let mut enumerated = 0;
        let mut start = 0;
        while start + 2048 <= len {
            enumerated += 1;
            start += 1536;
        }
        assert_eq!(enumerated, 286);
        assert_eq!(cfg.frame_count(len).unwrap(), 286);
        assert_eq!(cfg.frame_count(2048).unwrap(), 1);
        assert!(matches!(
            cfg.frame_count(2047),
            Err(Error::TooShort { len: 2047, needed: 2048 })
        ));
        let samples = vec![0.0; 5000];
        let frames = frame_signal(&samples, &cfg).unwrap();
        assert_eq!(frames.len(), 2);
        assert!(frames.iter().all(|f| f.len() == 2048));
        assert_eq!(frames[1].as_ptr(), samples[1536..].as_ptr());
    }

    #[test]
    fn config_validation() {
        let mut cfg = StftConfig::default();
        cfg.frame_length = 2000;
        assert!(cfg.validate().is_err());
        cfg.frame_length = 1024;
        cfg.hop_length = 2048;
        assert!(cfg.validate().is_err());
        cfg.hop_length = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn impulse_rectangular_is_flat() {
        let cfg = StftConfig {
            frame_length: 64,
            hop_length: 64,
            window: WindowKind::Rectangular,
        };
        let mut x = vec![0.0; 64];
        x[0] = 1.0;
        let spec = stft(&x, 8000, &cfg).unwrap();
        assert_eq!(spec.bins(), 33);
        assert!(spec.frame(0).iter().all(|&p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn bin_centred_sine_leakage() {
        let cfg = StftConfig::default();
        let sr = 22050u32;
        let k = 100;
        let f = k as f64 * sr as f64 / 2048.0;
        let x: Vec<f64> = (0..2048)
            .map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / sr as f64).sin())
            .collect();
        let spec = stft(&x, sr, &cfg).unwrap();
        let p = spec.frame(0);
        let peak = p[k];
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, k);
        // Periodic Hann leaves half the peak amplitude (a quarter of the
        // power) in each adjacent bin and nothing outside the main lobe.
        assert!((p[k - 1] / peak - 0.25).abs() < 1e-9);
        assert!((p[k + 1] / peak - 0.25).abs() < 1e-9);
        for (j, &v) in p.iter().enumerate() {
            if j.abs_diff(k) >= 2 {
                assert!(v / peak < 0.01, "bin {j}: {}", v / peak);
            }
        }
    }

    #[test]
    fn spectrogram_rejects_negative() {
        assert!(Spectrogram::new(vec![0.0, -1.0], 1, 2, 8000, 1).is_err());
        assert!(Spectrogram::new(vec![0.0; 3], 1, 2, 8000, 1).is_err());
    }
}
