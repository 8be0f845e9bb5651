use num_complex::Complex64;

use crate::error::{Error, Result};

/// Iterative radix-2 decimation-in-time FFT with precomputed twiddles.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex64>,
    bit_reverse: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "FFT length {n} is not a power of two"
            )));
        }
        let bits = n.trailing_zeros();
        let bit_reverse = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / n as f64))
            .collect();
        Ok(Self {
            n,
            twiddles,
            bit_reverse,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform, X[k] = sum_n x[n] e^{-2 pi i k n / N}.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "FFT buffer length");
        for i in 0..self.n {
            let j = self.bit_reverse[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= self.n {
            let half = size / 2;
            let stride = self.n / size;
            for start in (0..self.n).step_by(size) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }

    /// Transforms a real frame and returns the full complex spectrum.
    pub fn forward_real(&self, frame: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Fft::new(0).is_err());
        assert!(Fft::new(1000).is_err());
        assert!(Fft::new(1).is_ok());
    }

    #[test]
    fn impulse_is_flat() {
        let fft = Fft::new(16).unwrap();
        let mut x = vec![0.0; 16];
        x[0] = 1.0;
        for c in fft.forward_real(&x) {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn length_one_and_two() {
        let fft = Fft::new(1).unwrap();
        assert_eq!(fft.forward_real(&[3.0])[0], Complex64::new(3.0, 0.0));
        let fft = Fft::new(2).unwrap();
        let out = fft.forward_real(&[1.0, 2.0]);
        assert_eq!(out, vec![Complex64::new(3.0, 0.0), Complex64::new(-1.0, 0.0)]);
    }
}
