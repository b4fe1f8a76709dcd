use glam::Vec3;
use serde::{Deserialize, Serialize};

/// Per-frame sinusoid parameters and local phase features of one bone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrack {
    pub bone: usize,
    pub a: Vec<f64>,
    pub f: Vec<f64>,
    pub s: Vec<f64>,
    pub b: Vec<f64>,
    pub phi: Vec<f64>,
    /// Frames whose fit fell back to the spectral estimate.
    pub flagged: Vec<bool>,
    /// Mean bone speed over the one-second window.
    pub window_velocity: Vec<f64>,
    pub feature: Vec<[f64; 2]>,
    /// Feature at the next frame minus feature here.
    pub update: Vec<[f64; 2]>,
}

impl PhaseTrack {
    pub fn empty(bone: usize, n: usize) -> Self {
        PhaseTrack {
            bone,
            a: vec![0.0; n],
            f: vec![0.0; n],
            s: vec![0.0; n],
            b: vec![0.0; n],
            phi: vec![0.0; n],
            flagged: vec![false; n],
            window_velocity: vec![0.0; n],
            feature: vec![[0.0; 2]; n],
            update: vec![[0.0; 2]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn features_f32(&self) -> Vec<[f32; 2]> {
        self.feature.iter().map(|v| [v[0] as f32, v[1] as f32]).collect()
    }
}

/// Mean speed over a centred window of `window` frames, clamped at the ends.
pub fn window_speed(velocities: &[Vec3], window: usize) -> Vec<f64> {
    let n = velocities.len();
    let half = window / 2;
    let speed: Vec<f64> = velocities.iter().map(|v| v.as_dvec3().length()).collect();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + speed[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Fills the velocity-scaled phase features and their per-frame updates.
pub fn phase_features(track: &mut PhaseTrack, bone_velocities: &[Vec3], fps: f64) {
    let n = track.len();
    let window = fps.round() as usize;
    track.window_velocity = window_speed(bone_velocities, window);
    for i in 0..n {
        let m = track.window_velocity[i] * track.a[i];
        let (s, c) = track.phi[i].sin_cos();
        track.feature[i] = [m * s, m * c];
    }
    for i in 0..n {
        track.update[i] = if i + 1 < n {
            [
                track.feature[i + 1][0] - track.feature[i][0],
                track.feature[i + 1][1] - track.feature[i][1],
            ]
        } else if i > 0 {
            track.update[i - 1]
        } else {
            [0.0; 2]
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(n: usize) -> PhaseTrack {
        let mut t = PhaseTrack::empty(0, n);
        for i in 0..n {
            t.a[i] = 1.5;
            t.phi[i] = (i as f64 * 0.1) % std::f64::consts::TAU;
        }
        t
    }

    #[test]
    fn zero_velocity_gives_zero_feature() {
        let mut t = track(100);
        phase_features(&mut t, &vec![Vec3::ZERO; 100], 60.0);
        assert!(t.feature.iter().all(|f| f == &[0.0, 0.0]));
    }

    #[test]
    fn linear_in_speed_and_matches_structure() {
        let vel: Vec<Vec3> = (0..100).map(|i| Vec3::new(0.5 + (i as f32 * 0.05).sin() * 0.2, 0.0, 0.1)).collect();
        let mut a = track(100);
        phase_features(&mut a, &vel, 60.0);
        let doubled: Vec<Vec3> = vel.iter().map(|v| *v * 2.0).collect();
        let mut b = track(100);
        phase_features(&mut b, &doubled, 60.0);
        for i in 0..100 {
            let na = a.feature[i][0].hypot(a.feature[i][1]);
            let nb = b.feature[i][0].hypot(b.feature[i][1]);
            assert!((nb - 2.0 * na).abs() < 1e-6);
            assert!((na - a.window_velocity[i] * a.a[i]).abs() < 1e-9);
            let ang = a.feature[i][0].atan2(a.feature[i][1]).rem_euclid(std::f64::consts::TAU);
            assert!((ang - a.phi[i]).abs() < 1e-9);
        }
        assert_eq!(a.update[99], a.update[98]);
        assert!((a.update[5][0] - (a.feature[6][0] - a.feature[5][0])).abs() < 1e-15);
    }
}
