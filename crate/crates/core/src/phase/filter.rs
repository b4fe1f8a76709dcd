//! Butterworth low-pass design and zero-phase second-order-section filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ButterworthSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    /// Forward and backward pass.
    pub zero_phase: bool,
}

impl Default for ButterworthSpec {
    fn default() -> Self {
        ButterworthSpec {
            order: 4,
            cutoff_hz: 3.0,
            zero_phase: true,
        }
    }
}

/// One biquad: `[b0, b1, b2, a0, a1, a2]` with `a0 = 1`.
pub type Section = [f64; 6];

/// Digital low-pass Butterworth as second-order sections (bilinear
/// transform with frequency prewarping). Sections are ordered with the poles
/// farthest from the unit circle first and the overall gain on the first.
pub fn butter_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Vec<Section>> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::invalid("Butterworth order must be even and positive"));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
            fs / 2.0
        )));
    }
    let n = order as f64;
    // normalised design with sampling rate 2
    let wn = 2.0 * cutoff_hz / fs;
    let fs2 = 4.0;
    let warped = 2.0 * 2.0 * (PI * wn / 2.0).tan();
    let poles: Vec<Complex64> = (0..order)
        .map(|k| {
            let m = -(n - 1.0) + 2.0 * k as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * n)) * warped
        })
        .collect();
    let gain_analog = warped.powi(order as i32);
    let zp: Vec<Complex64> = poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    let denom = poles.iter().fold(Complex64::new(1.0, 0.0), |acc, p| acc * (fs2 - p));
    let k = gain_analog * (Complex64::new(1.0, 0.0) / denom).re;

    // one representative of each conjugate pair
    let mut reps: Vec<Complex64> = zp.into_iter().filter(|p| p.im > 0.0).collect();
    reps.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    let mut sos: Vec<Section> = reps
        .iter()
        .map(|p| [1.0, 2.0, 1.0, 1.0, -2.0 * p.re, p.norm_sqr()])
        .collect();
    for c in &mut sos[0][..3] {
        *c *= k;
    }
    Ok(sos)
}

/// Direct-form II transposed filtering; `zi` holds two states per section
/// and is updated in place.
pub fn sosfilt(sos: &[Section], x: &[f64], zi: &mut [[f64; 2]]) -> Vec<f64> {
    let mut y = x.to_vec();
    for (s, z) in sos.iter().zip(zi.iter_mut()) {
        for v in y.iter_mut() {
            let xi = *v;
            let yi = s[0] * xi + z[0];
            z[0] = s[1] * xi - s[4] * yi + z[1];
            z[1] = s[2] * xi - s[5] * yi;
            *v = yi;
        }
    }
    y
}

/// Initial states giving the steady-state response to a unit step.
pub fn sosfilt_zi(sos: &[Section]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|s| {
            let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
            // (I - companion(a)^T) zi = b[1..] - a[1..] * b0
            let r0 = b1 - a1 * b0;
            let r1 = b2 - a2 * b0;
            let m = [[1.0 + a1, -1.0], [a2, 1.0]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let z0 = (r0 * m[1][1] - m[0][1] * r1) / det;
            let z1 = (m[0][0] * r1 - m[1][0] * r0) / det;
            let zi = [z0 * scale, z1 * scale];
            scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
            zi
        })
        .collect()
}

/// Zero-phase filtering with odd-extension padding of `3 * (2 * sections + 1)`
/// samples (shortened for short inputs).
pub fn sosfiltfilt(sos: &[Section], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let pad = (3 * (2 * sos.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = sosfilt_zi(sos);
    let mut z: Vec<[f64; 2]> = zi.iter().map(|s| [s[0] * ext[0], s[1] * ext[0]]).collect();
    let mut y = sosfilt(sos, &ext, &mut z);
    y.reverse();
    let mut z: Vec<[f64; 2]> = zi.iter().map(|s| [s[0] * y[0], s[1] * y[0]]).collect();
    let mut y = sosfilt(sos, &y, &mut z);
    y.reverse();
    y[pad..pad + n].to_vec()
}

/// Applies `spec` to a series sampled at `fs`.
pub fn lowpass(spec: &ButterworthSpec, fs: f64, x: &[f64]) -> Result<Vec<f64>> {
    let sos = butter_lowpass(spec.order, spec.cutoff_hz, fs)?;
    if spec.zero_phase {
        Ok(sosfiltfilt(&sos, x))
    } else {
        let mut zi: Vec<[f64; 2]> = sosfilt_zi(&sos)
            .iter()
            .map(|s| [s[0] * x.first().copied().unwrap_or(0.0), s[1] * x.first().copied().unwrap_or(0.0)])
            .collect();
        Ok(sosfilt(&sos, x, &mut zi))
    }
}
