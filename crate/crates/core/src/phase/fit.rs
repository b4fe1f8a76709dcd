//! Windowed sinusoid fitting: `a sin(2 pi f t - s) + b` per frame.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::PhaseTrack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub window_s: f64,
    pub min_hz: f64,
    pub max_hz: f64,
    pub max_iterations: usize,
    /// Fit every `stride` frames and interpolate between.
    pub stride: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            window_s: 2.0,
            min_hz: 0.25,
            max_hz: 4.0,
            max_iterations: 50,
            stride: 10,
        }
    }
}

/// Parameters of one window fit with time measured from the window's
/// reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineFit {
    pub a: f64,
    pub f: f64,
    /// Shift relative to the reference frame.
    pub s: f64,
    pub b: f64,
    pub converged: bool,
}

struct Fitter {
    fft: Arc<dyn Fft<f64>>,
    nfft: usize,
    fps: f64,
    cfg: FitConfig,
}

fn linear_fit(y: &[f64], tau: &[f64], f: f64) -> (f64, f64, f64) {
    let w = TAU * f;
    let mut m = Matrix3::<f64>::zeros();
    let mut r = Vector3::<f64>::zeros();
    for (&yk, &t) in y.iter().zip(tau) {
        let g = Vector3::new((w * t).sin(), (w * t).cos(), 1.0);
        m += g * g.transpose();
        r += g * yk;
    }
    match m.lu().solve(&r) {
        Some(v) => (v[0], v[1], v[2]),
        None => (0.0, 0.0, y.iter().sum::<f64>() / y.len().max(1) as f64),
    }
}

fn cost(y: &[f64], tau: &[f64], p: &Vector4<f64>) -> f64 {
    let w = TAU * p[3];
    y.iter()
        .zip(tau)
        .map(|(&yk, &t)| {
            let r = yk - (p[0] * (w * t).sin() + p[1] * (w * t).cos() + p[2]);
            r * r
        })
        .sum()
}

impl Fitter {
    fn new(window: usize, fps: f64, cfg: FitConfig) -> Self {
        let nfft = (4 * window).next_power_of_two().max(1024);
        Fitter {
            fft: FftPlanner::new().plan_fft_forward(nfft),
            nfft,
            fps,
            cfg,
        }
    }

    /// Dominant frequency of the Hann-windowed, zero-padded spectrum.
    fn initial_frequency(&self, y: &[f64]) -> f64 {
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        for (k, v) in y.iter().enumerate() {
            let hann = 0.5 - 0.5 * (TAU * k as f64 / (n.max(2) - 1) as f64).cos();
            buf[k] = Complex64::new((v - mean) * hann, 0.0);
        }
        self.fft.process(&mut buf);
        let df = self.fps / self.nfft as f64;
        let lo = ((self.cfg.min_hz / df).floor() as usize).max(1);
        let hi = ((self.cfg.max_hz / df).ceil() as usize).min(self.nfft / 2 - 1);
        let mag: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
        let k = (lo..=hi).max_by(|&a, &b| mag[a].partial_cmp(&mag[b]).unwrap()).unwrap_or(lo);
        let (m0, m1, m2) = (mag[k - 1], mag[k], mag[k + 1]);
        let denom = m0 - 2.0 * m1 + m2;
        let delta = if denom.abs() > 1e-300 { 0.5 * (m0 - m2) / denom } else { 0.0 };
        ((k as f64 + delta.clamp(-0.5, 0.5)) * df).clamp(self.cfg.min_hz, self.cfg.max_hz)
    }

    fn fit(&self, y: &[f64], tau: &[f64]) -> SineFit {
        let f0 = self.initial_frequency(y);
        let (a0, b0, c0) = linear_fit(y, tau, f0);
        let mut p = Vector4::new(a0, b0, c0, f0);
        let mut c = cost(y, tau, &p);
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let mut lambda = 1e-3;
        let mut converged = c <= 1e-24 * y.len() as f64;
        let mut it = 0;
        while !converged && it < self.cfg.max_iterations {
            it += 1;
            let w = TAU * p[3];
            let mut jtj = Matrix4::<f64>::zeros();
            let mut jtr = Vector4::<f64>::zeros();
            for (&yk, &t) in y.iter().zip(tau) {
                let (s, co) = (w * t).sin_cos();
                let r = yk - (p[0] * s + p[1] * co + p[2]);
                let g = Vector4::new(s, co, 1.0, TAU * t * (p[0] * co - p[1] * s));
                jtj += g * g.transpose();
                jtr += g * r;
            }
            let mut stepped = false;
            for _ in 0..10 {
                let mut m = jtj;
                for d in 0..4 {
                    m[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
                }
                let Some(delta) = m.cholesky().map(|ch| ch.solve(&jtr)) else {
                    lambda *= 4.0;
                    continue;
                };
                let mut q = p + delta;
                q[3] = q[3].clamp(self.cfg.min_hz, self.cfg.max_hz);
                let cq = cost(y, tau, &q);
                if cq <= c {
                    let small = delta.rows(0, 3).amax() < 1e-10 * scale && delta[3].abs() < 1e-10;
                    let flat = c - cq <= 1e-14 * c.max(1e-300);
                    p = q;
                    c = cq;
                    lambda = (lambda / 3.0).max(1e-12);
                    stepped = true;
                    converged = small || flat;
                    break;
                }
                lambda *= 4.0;
            }
            if !stepped {
                // no descent direction left: at a minimum up to round-off
                converged = true;
            }
        }
        if !converged {
            let (a, b, c) = linear_fit(y, tau, f0);
            p = Vector4::new(a, b, c, f0);
        }
        // A sin + B cos = a sin(wt - s) with A = a cos s, B = -a sin s
        let a = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let s = (-p[1]).atan2(p[0]);
        SineFit {
            a,
            f: p[3],
            s,
            b: p[2],
            converged,
        }
    }
}

fn wrap_pi(x: f64) -> f64 {
    (x + PI).rem_euclid(TAU) - PI
}

/// Fits every frame (on a stride grid, interpolated in between). The
/// returned track has parameters and phases filled; features are zero.
pub fn fit_sinusoid(series: &[f64], fps: f64, cfg: &FitConfig, bone: usize) -> PhaseTrack {
    let n = series.len();
    let mut track = PhaseTrack::empty(bone, n);
    if n == 0 {
        return track;
    }
    let w = ((cfg.window_s * fps).round() as usize).max(3);
    let half = w / 2;
    let fitter = Fitter::new(2 * half + 1, fps, *cfg);
    let stride = cfg.stride.max(1);
    let mut grid: Vec<usize> = (0..n).step_by(stride).collect();
    if *grid.last().unwrap() != n - 1 {
        grid.push(n - 1);
    }

    // (frame, a, f, b, phi, flagged)
    let fits: Vec<(usize, f64, f64, f64, f64, bool)> = grid
        .iter()
        .map(|&i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let y = &series[lo..=hi];
            let tau: Vec<f64> = (lo..=hi).map(|k| (k as f64 - i as f64) / fps).collect();
            let fit = fitter.fit(y, &tau);
            (i, fit.a, fit.f, fit.b, (-fit.s).rem_euclid(TAU), !fit.converged)
        })
        .collect();

    for win in fits.windows(2).chain(std::iter::once(&fits[fits.len() - 1..])) {
        let (i0, a0, f0, b0, p0, fl0) = win[0];
        let (i1, a1, f1, b1, p1) = if win.len() == 2 {
            let (i1, a1, f1, b1, p1, _) = win[1];
            (i1, a1, f1, b1, p1)
        } else {
            (i0 + 1, a0, f0, b0, p0)
        };
        let span = (i1 - i0) as f64;
        // unwrap around the advance the fitted frequencies predict
        let predicted = TAU * 0.5 * (f0 + f1) * span / fps;
        let advance = predicted + wrap_pi(p1 - p0 - predicted);
        let end = if win.len() == 2 { i1 } else { i0 + 1 };
        for i in i0..end {
            let u = (i - i0) as f64 / span;
            let f = f0 + (f1 - f0) * u;
            let phi = (p0 + advance * u).rem_euclid(TAU);
            let t = i as f64 / fps;
            track.a[i] = (a0 + (a1 - a0) * u).max(0.0);
            track.f[i] = f;
            track.b[i] = b0 + (b1 - b0) * u;
            track.phi[i] = phi;
            track.s[i] = (TAU * f * t - phi).rem_euclid(TAU);
            track.flagged[i] = fl0;
        }
    }
    track
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(n: usize, f: f64, shift: f64) -> Vec<f64> {
        (0..n).map(|i| (TAU * f * i as f64 / 60.0 - shift).sin()).collect()
    }

    fn phase_error(a: f64, b: f64) -> f64 {
        wrap_pi(a - b).abs()
    }

    #[test]
    fn recovers_pure_sine() {
        for stride in [1, 10] {
            let cfg = FitConfig { stride, ..Default::default() };
            let tr = fit_sinusoid(&sine(600, 1.0, 0.4), 60.0, &cfg, 0);
            for i in 60..540 {
                assert!((tr.f[i] - 1.0).abs() < 0.01, "f {} at {i}", tr.f[i]);
                let truth = (TAU * i as f64 / 60.0 - 0.4).rem_euclid(TAU);
                assert!(phase_error(tr.phi[i], truth) < 0.1, "phi at {i}");
                assert!((tr.a[i] - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn zero_series_has_zero_amplitude() {
        let tr = fit_sinusoid(&vec![0.0; 200], 60.0, &FitConfig::default(), 0);
        assert!(tr.a.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn square_wave_fundamental() {
        let x: Vec<f64> = (0..600).map(|i| if (i / 30) % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let c = crate::phase::condition_source(
            &crate::phase::SourceSeries { values: x, origin: crate::phase::SourceOrigin::Contact, bone: 0 },
            60.0,
            1.0,
            &crate::phase::ButterworthSpec::default(),
        )
        .unwrap();
        let tr = fit_sinusoid(&c.values, 60.0, &FitConfig::default(), 0);
        for i in 90..510 {
            assert!((tr.f[i] - 1.0).abs() <= 0.05, "f {} at {i}", tr.f[i]);
        }
    }

    #[test]
    fn time_shift_equivariance() {
        let cfg = FitConfig::default();
        let a = fit_sinusoid(&sine(600, 1.3, 0.0), 60.0, &cfg, 0);
        let k = 17;
        let shifted: Vec<f64> = (0..600).map(|i| (TAU * 1.3 * (i as f64 + k as f64) / 60.0).sin()).collect();
        let b = fit_sinusoid(&shifted, 60.0, &cfg, 0);
        for i in 90..500 {
            let expect = a.phi[i] + TAU * 1.3 * k as f64 / 60.0;
            assert!(phase_error(b.phi[i], expect) < 0.1);
        }
    }

    #[test]
    fn frequency_is_clamped() {
        let tr = fit_sinusoid(&sine(600, 8.0, 0.0), 60.0, &FitConfig::default(), 0);
        assert!(tr.f.iter().all(|&f| (0.25..=4.0).contains(&f)));
    }
}
