use nava::audio_io::{decode_wav, encode_wav, resample, AudioClip};
use nava::dsp::{stft, StftConfig};
use proptest::prelude::*;
use std::f64::consts::PI;

fn tone(freqs: &[(f64, f64)], sr: u32, len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let t = n as f64 / sr as f64;
            freqs
                .iter()
                .map(|(f, a)| a * (2.0 * PI * f * t).sin())
                .sum()
        })
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn downsampled_sine_keeps_frequency_and_level() {
    let x = tone(&[(1000.0, 1.0)], 44_100, 44_100);
    let y = resample(&AudioClip::new(x.clone(), 44_100).unwrap(), 22_050).unwrap();
    assert_eq!(y.sample_rate(), 22_050);
    assert_eq!(y.len(), 22_050);
    let spec = stft(y.samples(), 22_050, &StftConfig::default()).unwrap();
    let mut mean = vec![0.0; spec.bins()];
    for t in 0..spec.frames() {
        for (m, v) in mean.iter_mut().zip(spec.frame(t)) {
            *m += v;
        }
    }
    let peak = (0..mean.len()).fold(0, |b, i| if mean[i] > mean[b] { i } else { b });
    let expected = 1000.0 * 2048.0 / 22_050.0;
    assert!(
        (peak as f64 - expected).abs() <= 0.5,
        "peak bin {peak}, expected {expected:.2}"
    );
    let inner = &y.samples()[500..y.len() - 500];
    let ratio = rms(inner) / rms(&x);
    assert!((ratio - 1.0).abs() < 0.02, "rms ratio {ratio}");
}

#[test]
fn band_limited_round_trip() {
    let partials = [(220.0, 0.3), (1234.5, 0.2), (3000.0, 0.25), (7900.0, 0.1)];
    let x = tone(&partials, 22_050, 22_050);
    let clip = AudioClip::new(x.clone(), 22_050).unwrap();
    for rate in [44_100, 48_000] {
        let up = resample(&clip, rate).unwrap();
        let back = resample(&up, 22_050).unwrap();
        assert_eq!(back.len(), x.len());
        let edge = 1000;
        let a = &x[edge..x.len() - edge];
        let b = &back.samples()[edge..x.len() - edge];
        let err: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        let rel = rms(&err) / rms(a);
        assert!(rel < 1e-3, "rate {rate}: relative rms error {rel:e}");
    }
}

proptest! {
    #[test]
    fn pcm16_round_trip_is_exact(
        q in prop::collection::vec(any::<i16>(), 1..2000),
        rate in prop::sample::select(vec![8_000u32, 22_050, 44_100, 48_000]),
    ) {
        let samples: Vec<f64> = q.iter().map(|&v| v as f64 / 32_768.0).collect();
        let clip = AudioClip::new(samples.clone(), rate).unwrap();
        let back = decode_wav(&encode_wav(&clip)).unwrap();
        prop_assert_eq!(back.sample_rate(), rate);
        prop_assert_eq!(back.samples(), samples.as_slice());
    }
}
