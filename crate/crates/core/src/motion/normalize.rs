//! Streaming per-dimension statistics and the network's standardisation.

use serde::{Deserialize, Serialize};

use super::{TrainingExample, INPUT_DIM, OUTPUT_DIM, PHASE_DIM, POSE_DIM};
use crate::error::{Error, Result};

pub const STD_FLOOR: f32 = 1e-5;

/// Welford accumulator over fixed-width rows; mergeable.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        RunningStats {
            count: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, row: &[f32]) {
        debug_assert_eq!(row.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(row) {
            let v = v as f64;
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    /// Mean and population standard deviation floored at `floor`.
    pub fn finish(&self, floor: f32) -> (Vec<f32>, Vec<f32>) {
        let n = self.count.max(1) as f64;
        let std = self
            .m2
            .iter()
            .map(|s| ((s / n).max(0.0).sqrt() as f32).max(floor))
            .collect();
        (self.mean.iter().map(|&m| m as f32).collect(), std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    /// Input channels followed by the phase channels.
    pub input_mean: Vec<f32>,
    pub input_std: Vec<f32>,
    pub output_mean: Vec<f32>,
    pub output_std: Vec<f32>,
    pub clip_mean: Vec<f32>,
    pub clip_std: Vec<f32>,
}

impl NormalizationStats {
    /// Identity standardisation of the given widths.
    pub fn identity(input: usize, output: usize, clip: usize) -> Self {
        NormalizationStats {
            input_mean: vec![0.0; input],
            input_std: vec![1.0; input],
            output_mean: vec![0.0; output],
            output_std: vec![1.0; output],
            clip_mean: vec![0.0; clip],
            clip_std: vec![1.0; clip],
        }
    }

    pub fn standardize_input(&self, x: &[f32], p: &[f32], out_x: &mut [f32], out_p: &mut [f32]) {
        let nx = x.len();
        for i in 0..nx {
            out_x[i] = (x[i] - self.input_mean[i]) / self.input_std[i];
        }
        for i in 0..p.len() {
            out_p[i] = (p[i] - self.input_mean[nx + i]) / self.input_std[nx + i];
        }
    }

    pub fn standardize_output(&self, z: &[f32], out: &mut [f32]) {
        for i in 0..z.len() {
            out[i] = (z[i] - self.output_mean[i]) / self.output_std[i];
        }
    }

    pub fn destandardize_output(&self, z: &mut [f32]) {
        for i in 0..z.len() {
            z[i] = z[i] * self.output_std[i] + self.output_mean[i];
        }
    }

    /// Standardises a frame-major clip in place.
    pub fn standardize_clip(&self, clip: &mut [f32]) {
        let w = self.clip_mean.len();
        for row in clip.chunks_mut(w) {
            for i in 0..w {
                row[i] = (row[i] - self.clip_mean[i]) / self.clip_std[i];
            }
        }
    }
}

/// Accumulates example and clip-frame statistics in one pass.
#[derive(Debug, Clone)]
pub struct StatsBuilder {
    input: RunningStats,
    output: RunningStats,
    clip: RunningStats,
}

impl Default for StatsBuilder {
    fn default() -> Self {
        StatsBuilder {
            input: RunningStats::new(INPUT_DIM + PHASE_DIM),
            output: RunningStats::new(OUTPUT_DIM),
            clip: RunningStats::new(POSE_DIM),
        }
    }
}

impl StatsBuilder {
    pub fn push_example(&mut self, e: &TrainingExample) {
        let mut row = Vec::with_capacity(INPUT_DIM + PHASE_DIM);
        row.extend_from_slice(&e.x);
        row.extend_from_slice(&e.p);
        self.input.push(&row);
        self.output.push(&e.z);
    }

    /// Style-clip statistics come from every frame of the training clips.
    pub fn push_pose_rows(&mut self, pose: &[f32]) {
        for row in pose.chunks(POSE_DIM) {
            self.clip.push(row);
        }
    }

    pub fn merge(&mut self, other: &StatsBuilder) {
        self.input.merge(&other.input);
        self.output.merge(&other.output);
        self.clip.merge(&other.clip);
    }

    pub fn finish(&self) -> Result<NormalizationStats> {
        if self.input.count() < 2 {
            return Err(Error::invalid("normalisation needs at least two examples"));
        }
        let (input_mean, input_std) = self.input.finish(STD_FLOOR);
        let (output_mean, output_std) = self.output.finish(STD_FLOOR);
        let (clip_mean, clip_std) = if self.clip.count() == 0 {
            (vec![0.0; POSE_DIM], vec![1.0; POSE_DIM])
        } else {
            self.clip.finish(STD_FLOOR)
        };
        Ok(NormalizationStats {
            input_mean,
            input_std,
            output_mean,
            output_std,
            clip_mean,
            clip_std,
        })
    }
}

/// Normalisation over a stream of examples (clip statistics left at identity).
pub fn compute_normalization<'a>(
    examples: impl IntoIterator<Item = &'a TrainingExample>,
) -> Result<NormalizationStats> {
    let mut b = StatsBuilder::default();
    for e in examples {
        b.push_example(e);
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_values_give_unit_std() {
        let mut s = RunningStats::new(1);
        s.push(&[-1.0]);
        s.push(&[1.0]);
        let (m, d) = s.finish(STD_FLOOR);
        assert_eq!(m, vec![0.0]);
        assert!((d[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn identical_examples_hit_the_floor() {
        let e = TrainingExample {
            x: (0..INPUT_DIM).map(|i| i as f32).collect(),
            p: [0.5; PHASE_DIM],
            z: vec![2.0; OUTPUT_DIM],
            frame: 0,
            clip_start: 0,
        };
        let st = compute_normalization([&e, &e]).unwrap();
        assert!(st.input_std.iter().all(|&s| s == STD_FLOOR));
        assert_eq!(&st.input_mean[..INPUT_DIM], &e.x[..]);
        assert!(compute_normalization([&e]).is_err());
        assert!(compute_normalization(std::iter::empty()).is_err());
    }

    #[test]
    fn matches_two_pass_and_merges() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f32>> = (0..10_000)
            .map(|_| (0..4).map(|d| rng.gen_range(-1.0..1.0) * (d + 1) as f32 + 10.0).collect())
            .collect();
        let mut whole = RunningStats::new(4);
        let mut a = RunningStats::new(4);
        let mut b = RunningStats::new(4);
        for (i, r) in rows.iter().enumerate() {
            whole.push(r);
            if i < 3000 { a.push(r) } else { b.push(r) }
        }
        a.merge(&b);
        let (m, s) = whole.finish(0.0);
        let (m2, s2) = a.finish(0.0);
        for d in 0..4 {
            let mean: f64 = rows.iter().map(|r| r[d] as f64).sum::<f64>() / rows.len() as f64;
            let var: f64 = rows.iter().map(|r| (r[d] as f64 - mean).powi(2)).sum::<f64>() / rows.len() as f64;
            assert!(((m[d] as f64 - mean) / mean).abs() < 1e-6);
            assert!(((s[d] as f64 - var.sqrt()) / var.sqrt()).abs() < 1e-6);
            assert!((m[d] - m2[d]).abs() < 1e-5 && (s[d] - s2[d]).abs() < 1e-5);
        }
    }
}
