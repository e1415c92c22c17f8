//! Second-order Butterworth low-pass, run forward and backward.

use crate::error::{Error, Result};

/// Biquad coefficients, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Butterworth low-pass by bilinear transform with frequency pre-warping.
    pub fn butterworth_lowpass(cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
            return Err(Error::InvalidCutoff {
                cutoff_hz,
                sample_rate_hz,
            });
        }
        let k = (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
        let k2 = k * k;
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k2);
        let b0 = k2 * norm;
        Ok(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k2 - 1.0) * norm, (1.0 - sqrt2 * k + k2) * norm],
        })
    }

    /// Single-pass magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = std::f64::consts::TAU * freq_hz / sample_rate_hz;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num_re = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let num_im = self.b[1] * s1 + self.b[2] * s2;
        let den_re = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let den_im = self.a[0] * s1 + self.a[1] * s2;
        (num_re.hypot(num_im)) / (den_re.hypot(den_im))
    }

    /// Transposed direct form II, with the state initialized to the steady
    /// state of a constant input equal to `x[0]`.
    fn run(&self, x: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let Some(&x0) = x.first() else {
            return Vec::new();
        };
        let mut z2 = (b2 - a2) * x0;
        let mut z1 = (b1 - a1) * x0 + z2;
        x.iter()
            .map(|&xi| {
                let y = b0 * xi + z1;
                z1 = b1 * xi - a1 * y + z2;
                z2 = b2 * xi - a2 * y;
                y
            })
            .collect()
    }

    /// Zero-phase filtering: odd extension at both ends, forward pass, backward pass.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = PAD_LEN.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let mut y = self.run(&ext);
        y.reverse();
        let mut y = self.run(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

const PAD_LEN: usize = 9;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_gain_is_one() {
        let f = Biquad::butterworth_lowpass(20.0, 100.0).unwrap();
        assert!((f.magnitude(0.0, 100.0) - 1.0).abs() < 1e-14);
        let y = f.filtfilt(&[0.37; 64]);
        assert!(y.iter().all(|v| (v - 0.37).abs() < 1e-14));
    }

    #[test]
    fn half_power_at_cutoff() {
        let f = Biquad::butterworth_lowpass(20.0, 100.0).unwrap();
        assert!((f.magnitude(20.0, 100.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cutoff_must_be_below_nyquist() {
        assert!(matches!(
            Biquad::butterworth_lowpass(50.0, 100.0),
            Err(Error::InvalidCutoff { .. })
        ));
        assert!(Biquad::butterworth_lowpass(0.0, 100.0).is_err());
        assert!(Biquad::butterworth_lowpass(-3.0, 100.0).is_err());
    }

    #[test]
    fn short_inputs() {
        let f = Biquad::butterworth_lowpass(20.0, 100.0).unwrap();
        assert!(f.filtfilt(&[]).is_empty());
        assert_eq!(f.filtfilt(&[2.0]), vec![2.0]);
        assert_eq!(f.filtfilt(&[1.0, 3.0]).len(), 2);
    }
}
