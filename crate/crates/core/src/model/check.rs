//! Finite-difference check of the whole composed model at toy sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward, tape_loss, Dims, ForwardOptions, LossLayout, ModelSpec, ModulatorMode, StyleInput, StyleModel};
use crate::error::Result;
use crate::motion::NormalizationStats;
use crate::nn::{gradient_check, reference, GradCheckConfig, GradCheckReport, Objective, ParamStore, Scalar, Tape, Var};

/// Training loss of a small batch through gating, experts and the style
/// path, as a function of every parameter.
pub struct ComposedObjective {
    pub spec: ModelSpec,
    pub norm: NormalizationStats,
    pub layout: LossLayout,
    pub x: Vec<f32>,
    pub p: Vec<f32>,
    pub z: Vec<f32>,
    pub clip: Vec<f32>,
}

impl Objective for ComposedObjective {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>) -> Result<Var> {
        let style = match self.spec.mode {
            ModulatorMode::Film => StyleInput::Clip(&self.clip),
            _ => StyleInput::Index(1),
        };
        let opts = ForwardOptions {
            training: true,
            freeze_synthesis: false,
        };
        // dropout masks must repeat across evaluations
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let out = forward(&self.spec, params, tape, &self.x, &self.p, style, opts, &mut rng)?;
        Ok(tape_loss(tape, out.output, &self.z, &self.norm, &self.layout)?.total)
    }
}

/// Random tiny model plus objective, every tensor perturbed away from its
/// initial value.
pub fn composed_problem(mode: ModulatorMode, seed: u64) -> Result<(StyleModel, ComposedObjective)> {
    let d = Dims::tiny();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut v = |n: usize, lo: f32, hi: f32| -> Vec<f32> { (0..n).map(|_| r.gen_range(lo..hi)).collect() };
    let norm = NormalizationStats {
        input_mean: v(d.input + d.phase, -0.5, 0.5),
        input_std: v(d.input + d.phase, 0.5, 2.0),
        output_mean: v(d.output, -0.5, 0.5),
        output_std: v(d.output, 0.5, 2.0),
        clip_mean: v(d.clip_channels, -0.5, 0.5),
        clip_std: v(d.clip_channels, 0.5, 2.0),
    };
    let spec = ModelSpec {
        dims: d,
        mode,
        styles: 3,
        dropout: 0.3,
    };
    let names = vec!["a".into(), "b".into(), "c".into()];
    let mut model = StyleModel::new(spec, names, norm.clone(), seed)?;
    for p in model.params.iter_mut() {
        for x in p.value.data_mut() {
            *x += r.gen_range(-0.3..0.3);
        }
    }
    let mut v = |n: usize| -> Vec<f32> { (0..n).map(|_| r.gen_range(-1.0..1.0)).collect() };
    let obj = ComposedObjective {
        spec,
        norm,
        layout: LossLayout {
            position_offset: 1,
            joints: 2,
            bones: vec![(0, 1)],
        },
        x: v(3 * d.input),
        p: v(3 * d.phase),
        z: v(3 * d.output),
        clip: v(d.clip_frames * d.clip_channels),
    };
    Ok((model, obj))
}

/// f32 and f64 reports for one modulator mode.
pub fn check_composed_model(mode: ModulatorMode, seed: u64) -> Result<(GradCheckReport, GradCheckReport)> {
    let (model, obj) = composed_problem(mode, seed)?;
    let f32r = gradient_check(&obj, &model.params, &GradCheckConfig::f32())?;
    let f64r = gradient_check(&obj, &model.params, &reference())?;
    Ok((f32r, f64r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn film_model_passes() {
        let (a, b) = check_composed_model(ModulatorMode::Film, 0).unwrap();
        assert!(a.max_rel_error < 1e-4, "{a:?}");
        assert!(b.max_rel_error < 1e-7, "{b:?}");
    }
}
