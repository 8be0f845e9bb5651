use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{stft_with, Fft, Spectrogram, StftConfig};
use crate::error::{Error, Result};

pub const MEL_BANDS: usize = 128;
pub const MFCC_COEFFS: usize = 24;
/// Quartertone resolution: 24 pitch classes per octave.
pub const CHROMA_BINS: usize = 24;
/// FFT bins below this frequency do not contribute to chroma.
pub const CHROMA_MIN_HZ: f64 = 32.0;

const DB_FLOOR_POWER: f64 = 1e-10;
const CENS_THRESHOLDS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
const CENS_SMOOTH_LEN: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mfcc,
    ChromaCens,
    Mel,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Mfcc, FeatureKind::ChromaCens, FeatureKind::Mel];

    /// Code stored in feature-file headers.
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Mfcc => 0,
            FeatureKind::ChromaCens => 1,
            FeatureKind::Mel => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn dims(self) -> usize {
        match self {
            FeatureKind::Mfcc => MFCC_COEFFS,
            FeatureKind::ChromaCens => CHROMA_BINS,
            FeatureKind::Mel => MEL_BANDS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::ChromaCens => "chroma_cens",
            FeatureKind::Mel => "mel",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mfcc" => Ok(FeatureKind::Mfcc),
            "chroma_cens" | "cens" => Ok(FeatureKind::ChromaCens),
            "mel" => Ok(FeatureKind::Mel),
            other => Err(Error::InvalidArgument(format!(
                "unknown feature kind `{other}` (expected mfcc, chroma-cens or mel)"
            ))),
        }
    }
}

/// Time frames x feature dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    kind: FeatureKind,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(kind: FeatureKind, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} feature matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature values must be finite".into()));
        }
        Ok(Self {
            kind,
            rows,
            cols,
            values,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular, area-normalised mel filters stored as dense rows plus the
/// span of non-zero bins in each row.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    bins: usize,
    weights: Vec<f64>,
    spans: Vec<(usize, usize)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    fn apply(&self, power: &[f64], out: &mut Vec<f64>) {
        for m in 0..self.n_mels {
            let (lo, hi) = self.spans[m];
            let row = self.row(m);
            let e: f64 = (lo..hi).map(|k| row[k] * power[k]).sum();
            out.push(10.0 * e.max(DB_FLOOR_POWER).log10());
        }
    }
}

pub fn mel_filterbank(
    n_mels: usize,
    sample_rate: u32,
    n_fft: usize,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 {
        return Err(Error::InvalidArgument("n_mels must be at least 1".into()));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::InvalidArgument(format!(
            "mel range {f_min}..{f_max} Hz must satisfy 0 <= f_min < f_max <= {nyquist}"
        )));
    }
    if n_fft < 2 {
        return Err(Error::InvalidArgument("n_fft must be at least 2".into()));
    }
    let bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let centers_hz: Vec<f64> = points[1..=n_mels].to_vec();
    for pair in centers_hz.windows(2) {
        if (pair[0] / bin_hz).round() == (pair[1] / bin_hz).round() {
            return Err(Error::DegenerateFilterbank(format!(
                "centres {:.2} Hz and {:.2} Hz fall on the same FFT bin ({n_mels} bands, n_fft {n_fft})",
                pair[0], pair[1]
            )));
        }
    }

    let mut weights = vec![0.0; n_mels * bins];
    let mut spans = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lower, center, upper) = (points[m], points[m + 1], points[m + 2]);
        let norm = 2.0 / (upper - lower);
        let row = &mut weights[m * bins..(m + 1) * bins];
        let mut span = (bins, 0);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lower) / (center - lower);
            let falling = (upper - f) / (upper - center);
            let v = rising.min(falling).max(0.0) * norm;
            if v > 0.0 {
                *w = v;
                span = (span.0.min(k), k + 1);
            }
        }
        if span.0 >= span.1 {
            return Err(Error::DegenerateFilterbank(format!(
                "band {m} ({lower:.2}..{upper:.2} Hz) covers no FFT bin"
            )));
        }
        spans.push(span);
    }
    Ok(MelFilterbank {
        n_mels,
        bins,
        weights,
        spans,
        centers_hz,
    })
}

/// Mel energies in dB (reference 1.0, floor 1e-10).
pub fn mel_spectrogram(spec: &Spectrogram, fb: &MelFilterbank) -> Result<FeatureMatrix> {
    if spec.bins() != fb.bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.bins(),
            fb.bins()
        )));
    }
    let mut values = Vec::with_capacity(spec.frames() * fb.n_mels());
    for t in 0..spec.frames() {
        fb.apply(spec.frame(t), &mut values);
    }
    FeatureMatrix::new(FeatureKind::Mel, spec.frames(), fb.n_mels(), values)
}

fn dct_matrix(n_out: usize, n_in: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(n_out * n_in);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            let arg = std::f64::consts::PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64;
            m.push(scale * arg.cos());
        }
    }
    m
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct2_ortho(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = dct_matrix(n_out, x.len());
    m.chunks_exact(x.len().max(1))
        .take(n_out)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Orthonormal DCT-III, the inverse of a full-length [`dct2_ortho`].
pub fn dct3_ortho(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    let m = dct_matrix(n, n);
    (0..n)
        .map(|i| (0..n).map(|k| m[k * n + i] * coeffs[k]).sum())
        .collect()
}

/// Cepstral coefficients from a dB mel spectrogram.
pub fn mfcc(mel_db: &FeatureMatrix, n_coeff: usize) -> Result<FeatureMatrix> {
    if n_coeff > mel_db.cols() {
        return Err(Error::InvalidArgument(format!(
            "{n_coeff} coefficients requested from {} mel bands",
            mel_db.cols()
        )));
    }
    let dct = dct_matrix(n_coeff, mel_db.cols());
    Ok(mfcc_with(&dct, n_coeff, mel_db))
}

fn mfcc_with(dct: &[f64], n_coeff: usize, mel_db: &FeatureMatrix) -> FeatureMatrix {
    let n_mels = mel_db.cols();
    let mut values = Vec::with_capacity(mel_db.rows() * n_coeff);
    for t in 0..mel_db.rows() {
        let frame = mel_db.row(t);
        for k in 0..n_coeff {
            let row = &dct[k * n_mels..(k + 1) * n_mels];
            values.push(row.iter().zip(frame).map(|(a, b)| a * b).sum());
        }
    }
    FeatureMatrix {
        kind: FeatureKind::Mfcc,
        rows: mel_db.rows(),
        cols: n_coeff,
        values,
    }
}

/// Pitch class of each FFT bin, or `None` below [`CHROMA_MIN_HZ`].
fn chroma_classes(bins: usize, sample_rate: u32, f_ref: f64) -> Vec<Option<usize>> {
    let n_fft = (bins - 1) * 2;
    (0..bins)
        .map(|k| {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            (f >= CHROMA_MIN_HZ).then(|| {
                let steps = (CHROMA_BINS as f64 * (f / f_ref).log2()).round() as i64;
                steps.rem_euclid(CHROMA_BINS as i64) as usize
            })
        })
        .collect()
}

fn chroma_with(classes: &[Option<usize>], spec: &Spectrogram) -> Vec<[f64; CHROMA_BINS]> {
    (0..spec.frames())
        .map(|t| {
            let mut acc = [0.0; CHROMA_BINS];
            for (p, c) in spec.frame(t).iter().zip(classes) {
                if let Some(c) = c {
                    acc[*c] += p;
                }
            }
            acc
        })
        .collect()
}

/// Quartertone chroma: every bin at or above 32 Hz adds its power to pitch
/// class `round(24 log2(f / f_ref)) mod 24`; class 0 is the reference pitch.
pub fn chroma24(spec: &Spectrogram, f_ref: f64) -> Vec<[f64; CHROMA_BINS]> {
    chroma_with(&chroma_classes(spec.bins(), spec.sample_rate(), f_ref), spec)
}

fn cens_quantize(v: f64) -> f64 {
    0.25 * CENS_THRESHOLDS.iter().filter(|&&t| v > t).count() as f64
}

/// Chroma energy normalised statistics at the input frame rate.
pub fn cens(chroma: &[[f64; CHROMA_BINS]]) -> Result<FeatureMatrix> {
    if chroma.iter().flatten().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "chroma values must be finite and non-negative".into(),
        ));
    }
    let frames = chroma.len();
    let quantized: Vec<[f64; CHROMA_BINS]> = chroma
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            let mut q = [0.0; CHROMA_BINS];
            for (qv, &v) in q.iter_mut().zip(row) {
                let normed = if total > 0.0 {
                    v / total
                } else {
                    1.0 / CHROMA_BINS as f64
                };
                *qv = cens_quantize(normed);
            }
            q
        })
        .collect();

    // Symmetric Hann without its zero end points, normalised to unit sum.
    let len = CENS_SMOOTH_LEN;
    let mut kernel: Vec<f64> = (1..=len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (len + 1) as f64).cos())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= ksum);
    let half = len / 2;

    let mut values = Vec::with_capacity(frames * CHROMA_BINS);
    for t in 0..frames {
        let mut row = [0.0; CHROMA_BINS];
        for (j, &w) in kernel.iter().enumerate() {
            let src = t as isize + j as isize - half as isize;
            if src < 0 || src as usize >= frames {
                continue;
            }
            for (r, q) in row.iter_mut().zip(&quantized[src as usize]) {
                *r += w * q;
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
        values.extend_from_slice(&row);
    }
    FeatureMatrix::new(FeatureKind::ChromaCens, frames, CHROMA_BINS, values)
}

/// Precomputed transform state for turning fixed-rate segments into one
/// feature kind.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    kind: FeatureKind,
    cfg: StftConfig,
    sample_rate: u32,
    fft: Fft,
    window: Vec<f64>,
    filterbank: Option<MelFilterbank>,
    dct: Vec<f64>,
    chroma_classes: Vec<Option<usize>>,
}

impl FeatureExtractor {
    pub fn new(kind: FeatureKind, cfg: StftConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let fft = Fft::new(cfg.frame_length)?;
        let filterbank = match kind {
            FeatureKind::Mel | FeatureKind::Mfcc => Some(mel_filterbank(
                MEL_BANDS,
                sample_rate,
                cfg.frame_length,
                0.0,
                sample_rate as f64 / 2.0,
            )?),
            FeatureKind::ChromaCens => None,
        };
        let dct = match kind {
            FeatureKind::Mfcc => dct_matrix(MFCC_COEFFS, MEL_BANDS),
            _ => Vec::new(),
        };
        let chroma_classes = match kind {
            FeatureKind::ChromaCens => chroma_classes(cfg.bins(), sample_rate, 440.0),
            _ => Vec::new(),
        };
        Ok(Self {
            kind,
            window: cfg.window(),
            cfg,
            sample_rate,
            fft,
            filterbank,
            dct,
            chroma_classes,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn extract(&self, samples: &[f64]) -> Result<FeatureMatrix> {
        let spec = stft_with(&self.fft, &self.window, samples, self.sample_rate, &self.cfg)?;
        match self.kind {
            FeatureKind::Mel => mel_spectrogram(&spec, self.filterbank.as_ref().unwrap()),
            FeatureKind::Mfcc => {
                let mel = mel_spectrogram(&spec, self.filterbank.as_ref().unwrap())?;
                Ok(mfcc_with(&self.dct, MFCC_COEFFS, &mel))
            }
            FeatureKind::ChromaCens => cens(&chroma_with(&self.chroma_classes, &spec)),
        }
    }
}
