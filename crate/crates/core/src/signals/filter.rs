use std::f64::consts::PI;

use super::EegSample;
use crate::error::{invalid, Result};

/// Second-order IIR section, `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Butterworth (Q = 1/√2) low-pass via the bilinear transform.
    pub fn lowpass(cutoff_hz: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / fs;
        let (cs, alpha) = (w0.cos(), w0.sin() / std::f64::consts::SQRT_2);
        let a0 = 1.0 + alpha;
        Self {
            b: [
                (1.0 - cs) / 2.0 / a0,
                (1.0 - cs) / a0,
                (1.0 - cs) / 2.0 / a0,
            ],
            a: [-2.0 * cs / a0, (1.0 - alpha) / a0],
        }
    }

    /// Butterworth (Q = 1/√2) high-pass via the bilinear transform.
    pub fn highpass(cutoff_hz: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / fs;
        let (cs, alpha) = (w0.cos(), w0.sin() / std::f64::consts::SQRT_2);
        let a0 = 1.0 + alpha;
        Self {
            b: [
                (1.0 + cs) / 2.0 / a0,
                -(1.0 + cs) / a0,
                (1.0 + cs) / 2.0 / a0,
            ],
            a: [-2.0 * cs / a0, (1.0 - alpha) / a0],
        }
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    /// Runs the section in place (transposed direct form II), starting from
    /// the steady state for a constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&u) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y = self.dc_gain() * u;
        let mut z2 = b2 * u - a2 * y;
        let mut z1 = b1 * u - a1 * y + z2;
        for v in x.iter_mut() {
            let xin = *v;
            let out = b0 * xin + z1;
            z1 = b1 * xin - a1 * out + z2;
            z2 = b2 * xin - a2 * out;
            *v = out;
        }
    }
}

fn forward_backward(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let pad = pad.min(n.saturating_sub(1));
    // Odd reflection about each end keeps level and slope continuous.
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase band-pass: a second-order Butterworth high-pass cascaded with a
/// second-order low-pass (fourth order overall), run forward then backward.
pub fn bandpass(sample: &EegSample, lo_hz: f64, hi_hz: f64) -> Result<EegSample> {
    let fs = sample.fs();
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs / 2.0) {
        return Err(invalid(format!(
            "band {lo_hz}–{hi_hz} Hz must satisfy 0 < lo < hi < fs/2 = {}",
            fs / 2.0
        )));
    }
    let sections = [Biquad::highpass(lo_hz, fs), Biquad::lowpass(hi_hz, fs)];
    let pad = (3.0 * fs / lo_hz).ceil() as usize;
    let mut data = Vec::with_capacity(sample.data().len());
    for i in 0..sample.n_channels() {
        data.extend(forward_backward(&sections, sample.channel(i), pad));
    }
    Ok(sample.with_rows(fs, sample.n_times(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: f64, n: usize, amp: f64) -> EegSample {
        let data = (0..n)
            .map(|t| amp * (2.0 * PI * freq * t as f64 / fs).sin())
            .collect();
        EegSample::new(vec!["x".into()], fs, n, data).unwrap()
    }

    /// Magnitude of the DFT bin nearest `freq`, computed directly.
    fn dft_magnitude(x: &[f64], freq: f64, fs: f64) -> f64 {
        let n = x.len();
        let k = (freq * n as f64 / fs).round();
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            let ph = -2.0 * PI * k * t as f64 / n as f64;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        (re * re + im * im).sqrt()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn removes_dc() {
        let s = EegSample::new(vec!["x".into()], 200.0, 800, vec![3.0; 800]).unwrap();
        let out = bandpass(&s, 0.5, 70.0).unwrap();
        assert!(rms(out.data()) < 0.01 * 3.0, "{}", rms(out.data()));
        assert!(dft_magnitude(out.data(), 0.0, 200.0) < 0.01 * dft_magnitude(s.data(), 0.0, 200.0));
    }

    #[test]
    fn passes_in_band_tone() {
        let s = tone(10.0, 200.0, 800, 1.0);
        let out = bandpass(&s, 0.5, 70.0).unwrap();
        let ratio = rms(out.data()) / rms(s.data());
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
        let spec = dft_magnitude(out.data(), 10.0, 200.0) / dft_magnitude(s.data(), 10.0, 200.0);
        assert!((spec - 1.0).abs() < 0.05, "{spec}");
    }

    #[test]
    fn attenuates_out_of_band_tone() {
        let s = tone(95.0, 250.0, 1000, 1.0);
        let out = bandpass(&s, 0.5, 70.0).unwrap();
        let gain = dft_magnitude(out.data(), 95.0, 250.0) / dft_magnitude(s.data(), 95.0, 250.0);
        assert!(20.0 * gain.log10() <= -20.0, "{} dB", 20.0 * gain.log10());
    }

    #[test]
    fn rejects_band_beyond_nyquist() {
        let s = tone(10.0, 200.0, 100, 1.0);
        assert!(bandpass(&s, 0.5, 100.0).is_err());
        assert!(bandpass(&s, 5.0, 1.0).is_err());
        assert!(bandpass(&s, 0.0, 50.0).is_err());
    }

    #[test]
    fn zero_phase() {
        // Cross-correlation peak between input and output sits at lag 0.
        let s = tone(7.0, 200.0, 800, 1.0);
        let out = bandpass(&s, 0.5, 70.0).unwrap();
        let xc = |lag: i64| -> f64 {
            (100..700)
                .map(|t| s.data()[t] * out.data()[(t as i64 + lag) as usize])
                .sum()
        };
        let best = (-5..=5).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
    }
}
