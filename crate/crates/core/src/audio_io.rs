//! WAV decoding/encoding, mono mixdown and band-limited resampling.

use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate every downstream stage expects.
pub const PIPELINE_RATE: u32 = 22_050;

/// Zero crossings of the sinc kernel on each side of the centre tap.
const SINC_ZERO_CROSSINGS: usize = 64;
const KAISER_BETA: f64 = 14.77;
/// Above this many polyphase branches the taps are evaluated per output sample.
const MAX_POLYPHASE_BRANCHES: usize = 4096;

/// A mono signal at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SampleEncoding {
    Int(u16),
    Float32,
}

struct FormatChunk {
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    encoding: SampleEncoding,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FormatChunk> {
    if body.len() < 16 {
        return Err(Error::wav("fmt ", format!("{} bytes, need at least 16", body.len())));
    }
    let mut tag = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let block_align = read_u16(body, 12);
    let bits = read_u16(body, 14);
    if tag == 0xFFFE {
        // WAVE_FORMAT_EXTENSIBLE: the real tag leads the sub-format GUID.
        if body.len() < 26 {
            return Err(Error::wav("fmt ", "extensible format without sub-format GUID"));
        }
        tag = read_u16(body, 24);
    }
    if channels == 0 {
        return Err(Error::wav("fmt ", "zero channels"));
    }
    if sample_rate == 0 {
        return Err(Error::wav("fmt ", "zero sample rate"));
    }
    let encoding = match (tag, bits) {
        (1, 8 | 16 | 24 | 32) => SampleEncoding::Int(bits),
        (1, b) => return Err(Error::UnsupportedFormat(format!("{b}-bit integer PCM"))),
        (3, 32) => SampleEncoding::Float32,
        (3, b) => return Err(Error::UnsupportedFormat(format!("{b}-bit float PCM"))),
        (t, _) => {
            return Err(Error::UnsupportedFormat(format!(
                "compressed or unknown WAV codec tag 0x{t:04x}"
            )))
        }
    };
    let bytes_per_sample = match encoding {
        SampleEncoding::Int(b) => b as usize / 8,
        SampleEncoding::Float32 => 4,
    };
    if block_align as usize != bytes_per_sample * channels as usize {
        return Err(Error::wav(
            "fmt ",
            format!(
                "block align {block_align} inconsistent with {channels} channels of {bytes_per_sample} bytes"
            ),
        ));
    }
    Ok(FormatChunk {
        channels,
        sample_rate,
        block_align,
        encoding,
    })
}

/// Decodes a RIFF/WAVE byte buffer, mixing all channels down to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(Error::wav("RIFF", "missing RIFF signature"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::wav("RIFF", "form type is not WAVE"));
    }

    let mut fmt: Option<FormatChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let start = pos + 8;
        let name = String::from_utf8_lossy(id).into_owned();
        match id {
            b"fmt " => {
                if start + size > bytes.len() {
                    return Err(Error::wav("fmt ", "chunk extends past end of file"));
                }
                fmt = Some(parse_fmt(&bytes[start..start + size])?);
            }
            b"data" => {
                // Streaming writers often leave the size unpatched; take what is there.
                let end = (start + size).min(bytes.len());
                data = Some(&bytes[start..end]);
            }
            _ => {
                if start + size > bytes.len() {
                    return Err(Error::wav(&name, "chunk extends past end of file"));
                }
            }
        }
        if data.is_some() && fmt.is_some() {
            break;
        }
        pos = start + size + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::wav("fmt ", "no format chunk before end of file"))?;
    let data = data.ok_or_else(|| Error::wav("data", "no data chunk"))?;

    let channels = fmt.channels as usize;
    let frame_bytes = fmt.block_align as usize;
    let frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(frames);
    for frame in data.chunks_exact(frame_bytes) {
        let mut acc = 0.0;
        for ch in 0..channels {
            acc += decode_sample(frame, ch, fmt.encoding);
        }
        let v = acc / channels as f64;
        if !v.is_finite() {
            return Err(Error::wav("data", "non-finite float sample"));
        }
        samples.push(v);
    }
    AudioClip::new(samples, fmt.sample_rate)
}

fn decode_sample(frame: &[u8], ch: usize, enc: SampleEncoding) -> f64 {
    match enc {
        SampleEncoding::Int(8) => (frame[ch] as f64 - 128.0) / 128.0,
        SampleEncoding::Int(16) => {
            let at = ch * 2;
            i16::from_le_bytes([frame[at], frame[at + 1]]) as f64 / 32_768.0
        }
        SampleEncoding::Int(24) => {
            let at = ch * 3;
            let raw = i32::from_le_bytes([0, frame[at], frame[at + 1], frame[at + 2]]) >> 8;
            raw as f64 / 8_388_608.0
        }
        SampleEncoding::Int(_) => {
            let at = ch * 4;
            let raw = i32::from_le_bytes([frame[at], frame[at + 1], frame[at + 2], frame[at + 3]]);
            raw as f64 / 2_147_483_648.0
        }
        SampleEncoding::Float32 => {
            let at = ch * 4;
            f32::from_le_bytes([frame[at], frame[at + 1], frame[at + 2], frame[at + 3]]) as f64
        }
    }
}

/// Encodes a clip as 16-bit mono PCM. Samples are scaled by 32768, rounded
/// and clamped to the i16 range.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    decode_wav(&std::fs::read(path)?)
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    std::fs::write(path, encode_wav(clip))?;
    Ok(())
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Kaiser-windowed sinc interpolator between two fixed rates.
struct SincKernel {
    /// Cutoff relative to the input Nyquist frequency.
    cutoff: f64,
    /// Kernel half-width in input samples.
    half_width: f64,
    /// Taps on each side of the interpolation point.
    side_taps: usize,
    i0_beta: f64,
}

impl SincKernel {
    fn new(source: u32, target: u32) -> Self {
        let cutoff = (target as f64 / source as f64).min(1.0);
        let half_width = SINC_ZERO_CROSSINGS as f64 / cutoff;
        Self {
            cutoff,
            half_width,
            side_taps: half_width.ceil() as usize,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    fn eval(&self, u: f64) -> f64 {
        let r = u / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        self.cutoff * sinc(self.cutoff * u) * window
    }

    /// Taps for input indices `floor(t) - side_taps + 1 ..= floor(t) + side_taps`,
    /// where `frac = t - floor(t)`; normalised to unit DC gain.
    fn taps(&self, frac: f64) -> Vec<f64> {
        let k = self.side_taps as f64;
        let mut taps: Vec<f64> = (0..2 * self.side_taps)
            .map(|i| self.eval(frac + k - 1.0 - i as f64))
            .collect();
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        taps
    }
}

/// Resamples with a Kaiser-windowed sinc (64 zero crossings per side,
/// beta 14.77) whose cutoff sits at the lower of the two Nyquist rates.
/// Equal rates return an exact copy.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    let source_rate = clip.sample_rate;
    if source_rate == target_rate {
        return Ok(clip.clone());
    }
    let n_in = clip.len() as u128;
    let n_out =
        ((n_in * target_rate as u128 + source_rate as u128 / 2) / source_rate as u128) as usize;

    let g = gcd(source_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (source_rate as u64 / g) as usize;
    let kernel = SincKernel::new(source_rate, target_rate);
    let side = kernel.side_taps as isize;
    let x = &clip.samples;

    let apply = |base: isize, taps: &[f64]| -> f64 {
        let first = base - side + 1;
        let mut acc = 0.0;
        for (i, &w) in taps.iter().enumerate() {
            let n = first + i as isize;
            if n >= 0 && (n as usize) < x.len() {
                acc += w * x[n as usize];
            }
        }
        acc
    };

    let mut out = Vec::with_capacity(n_out);
    if up <= MAX_POLYPHASE_BRANCHES {
        let branches: Vec<Vec<f64>> = (0..up)
            .map(|p| kernel.taps(p as f64 / up as f64))
            .collect();
        for j in 0..n_out {
            let pos = j as u128 * down as u128;
            let base = (pos / up as u128) as isize;
            let phase = (pos % up as u128) as usize;
            out.push(apply(base, &branches[phase]));
        }
    } else {
        for j in 0..n_out {
            let pos = j as u128 * down as u128;
            let base = (pos / up as u128) as isize;
            let frac = (pos % up as u128) as f64 / up as f64;
            out.push(apply(base, &kernel.taps(frac)));
        }
    }
    AudioClip::new(out, target_rate)
}

/// Half-width of the resampling filter, in output samples, for a rate pair.
/// Samples closer than this to either end see zero padding.
pub fn resample_edge(source_rate: u32, target_rate: u32) -> usize {
    if source_rate == target_rate {
        return 0;
    }
    let kernel = SincKernel::new(source_rate, target_rate);
    (kernel.half_width * target_rate as f64 / source_rate as f64).ceil() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16_wav(channels: u16, rate: u32, frames: &[i16]) -> Vec<u8> {
        let data_len = frames.len() * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for f in frames {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out
    }

    fn wav_with(tag: u16, channels: u16, bits: u16, data: &[u8]) -> Vec<u8> {
        let block = channels * bits / 8;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&8000u32.to_le_bytes());
        out.extend_from_slice(&(8000 * block as u32).to_le_bytes());
        out.extend_from_slice(&block.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn pcm16_scaling() {
        let clip = decode_wav(&pcm16_wav(1, 22050, &[0, -32768, 16384, 32767])).unwrap();
        assert_eq!(clip.samples(), &[0.0, -1.0, 0.5, 32767.0 / 32768.0]);
        assert_eq!(clip.sample_rate(), 22050);
    }

    #[test]
    fn stereo_mixdown_is_mean() {
        let clip = decode_wav(&pcm16_wav(2, 44100, &[16384, -16384, 16384, 0])).unwrap();
        assert_eq!(clip.samples(), &[0.0, 0.25]);
    }

    #[test]
    fn other_bit_depths() {
        let c8 = decode_wav(&wav_with(1, 1, 8, &[128, 0, 192])).unwrap();
        assert_eq!(c8.samples(), &[0.0, -1.0, 0.5]);

        let c24 = decode_wav(&wav_with(1, 1, 24, &[0, 0, 0x80, 0, 0, 0x40])).unwrap();
        assert_eq!(c24.samples(), &[-1.0, 0.5]);

        let mut d32 = Vec::new();
        d32.extend_from_slice(&i32::MIN.to_le_bytes());
        d32.extend_from_slice(&(1i32 << 30).to_le_bytes());
        let c32 = decode_wav(&wav_with(1, 1, 32, &d32)).unwrap();
        assert_eq!(c32.samples(), &[-1.0, 0.5]);

        let mut df = Vec::new();
        df.extend_from_slice(&0.25f32.to_le_bytes());
        df.extend_from_slice(&(-0.75f32).to_le_bytes());
        let cf = decode_wav(&wav_with(3, 1, 32, &df)).unwrap();
        assert_eq!(cf.samples(), &[0.25, -0.75]);
    }

    #[test]
    fn malformed_and_unsupported() {
        match decode_wav(b"RIFX0000WAVE") {
            Err(Error::WavDecode { chunk, .. }) => assert_eq!(chunk, "RIFF"),
            other => panic!("unexpected {other:?}"),
        }
        let mut truncated_fmt = pcm16_wav(1, 8000, &[]);
        truncated_fmt.truncate(24);
        match decode_wav(&truncated_fmt) {
            Err(Error::WavDecode { chunk, .. }) => assert_eq!(chunk, "fmt "),
            other => panic!("unexpected {other:?}"),
        }
        // 0x55 is MPEG layer 3.
        assert!(matches!(
            decode_wav(&wav_with(0x55, 1, 16, &[0, 0])),
            Err(Error::UnsupportedFormat(_))
        ));
        let mut no_data = pcm16_wav(1, 8000, &[]);
        no_data.truncate(36);
        match decode_wav(&no_data) {
            Err(Error::WavDecode { chunk, .. }) => assert_eq!(chunk, "data"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_float_rejected() {
        let df = f32::NAN.to_le_bytes();
        assert!(decode_wav(&wav_with(3, 1, 32, &df)).is_err());
    }

    #[test]
    fn equal_rate_is_identity() {
        let clip = AudioClip::new(vec![0.1, -0.2, 0.3], 22050).unwrap();
        assert_eq!(resample(&clip, 22050).unwrap(), clip);
    }

    #[test]
    fn resample_length_and_zero() {
        let clip = AudioClip::new(vec![0.0; 88200], 44100).unwrap();
        let out = resample(&clip, 22050).unwrap();
        assert_eq!(out.len(), 44100);
        assert!(out.samples().iter().all(|&s| s == 0.0));

        let clip = AudioClip::new(vec![0.0; 1000], 48000).unwrap();
        let out = resample(&clip, 22050).unwrap();
        assert_eq!(out.len(), 459); // round(459.375)
    }

    #[test]
    fn resample_preserves_dc() {
        for &(src, dst) in &[(44100u32, 22050u32), (22050, 44100), (48000, 22050), (16000, 22050)] {
            let clip = AudioClip::new(vec![0.37; src as usize / 2], src).unwrap();
            let out = resample(&clip, dst).unwrap();
            let edge = resample_edge(src, dst);
            for &s in &out.samples()[edge..out.len() - edge] {
                assert!((s - 0.37).abs() < 1e-6, "{src}->{dst}: {s}");
            }
        }
    }

    #[test]
    fn rejects_zero_rates() {
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        let clip = AudioClip::new(vec![0.0], 8000).unwrap();
        assert!(resample(&clip, 0).is_err());
    }
}
