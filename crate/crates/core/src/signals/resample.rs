use std::f64::consts::PI;

use super::EegSample;
use crate::error::{invalid, Result};

const MAX_DENOMINATOR: u64 = 1000;
const KAISER_BETA: f64 = 5.0;

/// Best rational `up / down ≈ fs_out / fs_in` with `down ≤ 1000`, in lowest terms.
pub fn rational_ratio(fs_in: f64, fs_out: f64) -> (u64, u64) {
    let target = fs_out / fs_in;
    // Continued-fraction convergents.
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut x = target;
    let mut best = (target.round().max(1.0) as u64, 1u64);
    for _ in 0..64 {
        let a = x.floor();
        let (h2, k2) = (a as u64 * h1 + h0, a as u64 * k1 + k0);
        if k2 > MAX_DENOMINATOR || k2 == 0 {
            break;
        }
        best = (h2, k2);
        if ((h2 as f64 / k2 as f64) - target).abs() < 1e-12 * target {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = x - a;
        if frac < 1e-15 {
            break;
        }
        x = 1.0 / frac;
    }
    best
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc anti-alias filter for an `up/down` rate change.
/// Each of the `up` polyphase branches is scaled to unit DC gain.
fn design_filter(up: u64, down: u64) -> (Vec<f64>, usize) {
    let factor = up.max(down) as usize;
    let half = 10 * factor;
    let n = 2 * half + 1;
    let fc = 0.5 / factor as f64;
    let i0b = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 - half as f64;
            let sinc = if t == 0.0 {
                1.0
            } else {
                (2.0 * PI * fc * t).sin() / (2.0 * PI * fc * t)
            };
            let r = t / half as f64;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            2.0 * fc * sinc * w
        })
        .collect();
    let up = up as usize;
    for phase in 0..up {
        let s: f64 = h.iter().skip(phase).step_by(up).sum();
        h.iter_mut().skip(phase).step_by(up).for_each(|v| *v /= s);
    }
    (h, half)
}

/// Odd reflection at the ends (clamped for very short signals).
fn sample_ext(x: &[f64], q: i64) -> f64 {
    let n = x.len() as i64;
    if n == 1 {
        return x[0];
    }
    if q < 0 {
        let m = (-q).min(n - 1);
        2.0 * x[0] - x[m as usize]
    } else if q >= n {
        let m = (q - (n - 1)).min(n - 1);
        2.0 * x[(n - 1) as usize] - x[(n - 1 - m) as usize]
    } else {
        x[q as usize]
    }
}

fn resample_channel(
    x: &[f64],
    up: u64,
    down: u64,
    h: &[f64],
    half: usize,
    out_len: usize,
) -> Vec<f64> {
    let (up, down, half) = (up as i64, down as i64, half as i64);
    let ntaps = h.len() as i64;
    (0..out_len as i64)
        .map(|m| {
            let pos = m * down + half;
            // Taps with index pos - q·up in [0, ntaps).
            let q_hi = pos.div_euclid(up);
            let q_lo = (pos - ntaps + 1 + up - 1).div_euclid(up);
            (q_lo..=q_hi)
                .map(|q| h[(pos - q * up) as usize] * sample_ext(x, q))
                .sum()
        })
        .collect()
}

/// Rational-factor polyphase resampling to `fs_out`.
///
/// The output holds `round(T · fs_out / fs)` samples. Equal rates return the
/// input unchanged.
pub fn resample(sample: &EegSample, fs_out: f64) -> Result<EegSample> {
    if !(fs_out > 0.0) {
        return Err(invalid(format!(
            "target rate must be positive, got {fs_out}"
        )));
    }
    let fs = sample.fs();
    if fs_out == fs {
        return Ok(sample.clone());
    }
    let (up, down) = rational_ratio(fs, fs_out);
    let out_len = (sample.n_times() as f64 * fs_out / fs).round() as usize;
    if out_len == 0 {
        return Err(invalid("resampled signal would be empty"));
    }
    let (h, half) = design_filter(up, down);
    let mut data = Vec::with_capacity(sample.n_channels() * out_len);
    for i in 0..sample.n_channels() {
        data.extend(resample_channel(
            sample.channel(i),
            up,
            down,
            &h,
            half,
            out_len,
        ));
    }
    Ok(sample.with_rows(fs_out, out_len, data))
}
