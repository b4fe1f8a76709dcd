use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    forward, tape_loss, Dims, ForwardOptions, LossLayout, ModelSpec, ModulatorMode, RuntimeStyle, StyleInput, StyleModel,
};
use crate::data::{Dataset, StyleSet};
use crate::error::{Error, Result};
use crate::motion::TrainingExample;
use crate::nn::{Adam, ParamId, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dims: Dims,
    pub mode: ModulatorMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: Dims::desk(),
            mode: ModulatorMode::Film,
            batch_size: 32,
            epochs: 10,
            learning_rate: 1e-4,
            dropout: 0.3,
            seed: 0,
        }
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub mse: f64,
    pub bone: f64,
}

struct Stepper<'a> {
    layout: &'a LossLayout,
    adam: Adam,
    rng: ChaCha8Rng,
    /// Restrict updates to these parameters (fine-tuning).
    only: Option<Vec<ParamId>>,
}

impl Stepper<'_> {
    fn step(&mut self, model: &mut StyleModel, set: &StyleSet, slot: usize, batch: &[usize]) -> Result<[f64; 3]> {
        let d = model.spec.dims;
        let mut x = vec![0f32; batch.len() * d.input];
        let mut p = vec![0f32; batch.len() * d.phase];
        let mut z = Vec::with_capacity(batch.len() * d.output);
        for (r, &i) in batch.iter().enumerate() {
            let e = &set.examples[i];
            model.norm.standardize_input(
                &e.x,
                &e.p,
                &mut x[r * d.input..(r + 1) * d.input],
                &mut p[r * d.phase..(r + 1) * d.phase],
            );
            z.extend_from_slice(&e.z);
        }
        let clip;
        let style = match model.spec.mode {
            ModulatorMode::Film => {
                let (c, s) = set.sample_window(&mut self.rng)?;
                let mut w = set.window(c, s)?.to_vec();
                model.norm.standardize_clip(&mut w);
                clip = w;
                StyleInput::Clip(&clip)
            }
            _ => StyleInput::Index(slot),
        };
        let opts = ForwardOptions {
            training: true,
            freeze_synthesis: self.only.is_some(),
        };
        let mut tape = Tape::<f32>::new();
        let out = forward(&model.spec, &model.params, &mut tape, &x, &p, style, opts, &mut self.rng)?;
        let loss = tape_loss(&mut tape, out.output, &z, &model.norm, self.layout)?;
        let vals = [loss.total, loss.mse, loss.bone].map(|v| tape.value(v).data()[0] as f64);
        if !vals[0].is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss on style {:?} (mse {}, bone {})",
                set.name, vals[1], vals[2]
            )));
        }
        let grads = tape.backward(loss.total)?;
        tape.accumulate_param_grads(&grads, &mut model.params);
        match &self.only {
            Some(ids) => self.adam.step_only(&mut model.params, ids),
            None => self.adam.step(&mut model.params),
        }
        Ok(vals)
    }
}

fn check_widths(ds: &Dataset, dims: &Dims) -> Result<()> {
    let e = ds
        .styles
        .iter()
        .find_map(|s| s.examples.first())
        .ok_or_else(|| Error::invalid("dataset has no examples"))?;
    if e.x.len() != dims.input || e.p.len() != dims.phase || e.z.len() != dims.output {
        return Err(Error::shape(format!(
            "examples are {}/{}/{} wide, model expects {}/{}/{}",
            e.x.len(),
            e.p.len(),
            e.z.len(),
            dims.input,
            dims.phase,
            dims.output
        )));
    }
    Ok(())
}

/// Trains a new model. Minibatches hold a single style and cycle through
/// the styles in dataset order; an epoch is as many rounds as the smallest
/// style fills.
pub fn train(ds: &Dataset, cfg: &TrainConfig, on_epoch: &mut dyn FnMut(&EpochStats)) -> Result<StyleModel> {
    check_widths(ds, &cfg.dims)?;
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    for s in &ds.styles {
        if s.len() < cfg.batch_size {
            return Err(Error::invalid(format!(
                "style {:?} has {} examples, fewer than one minibatch of {}",
                s.name,
                s.len(),
                cfg.batch_size
            )));
        }
    }
    let spec = ModelSpec {
        dims: cfg.dims,
        mode: cfg.mode,
        styles: ds.styles.len(),
        dropout: cfg.dropout,
    };
    let norm = ds.normalization()?;
    let mut model = StyleModel::new(spec, ds.style_names(), norm, cfg.seed)?.with_skeleton(ds.skeleton.clone());
    let layout = LossLayout::for_skeleton(&ds.skeleton);
    let mut stepper = Stepper {
        layout: &layout,
        adam: Adam::with_lr(cfg.learning_rate),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)),
        only: None,
    };
    let rounds = ds.styles.iter().map(StyleSet::len).min().unwrap_or(0) / cfg.batch_size;
    for epoch in 1..=cfg.epochs {
        let perms: Vec<Vec<usize>> = ds
            .styles
            .iter()
            .map(|s| {
                let mut p: Vec<usize> = (0..s.len()).collect();
                p.shuffle(&mut stepper.rng);
                p
            })
            .collect();
        let mut sums = [0f64; 3];
        let mut steps = 0;
        for r in 0..rounds {
            for (slot, set) in ds.styles.iter().enumerate() {
                let batch = &perms[slot][r * cfg.batch_size..(r + 1) * cfg.batch_size];
                let v = stepper.step(&mut model, set, slot, batch)?;
                for k in 0..3 {
                    sums[k] += v[k];
                }
                steps += 1;
            }
        }
        let n = steps.max(1) as f64;
        on_epoch(&EpochStats {
            epoch,
            steps,
            loss: sums[0] / n,
            mse: sums[1] / n,
            bone: sums[2] / n,
        });
    }
    Ok(model)
}

/// Adapts a film model to a new style by updating only the generator.
pub fn finetune(
    model: &StyleModel,
    set: &StyleSet,
    skeleton_layout: &LossLayout,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<StyleModel> {
    if model.spec.mode != ModulatorMode::Film {
        return Err(Error::invalid(format!(
            "fine-tuning needs a film model; a {} model must be retrained",
            model.spec.mode
        )));
    }
    if set.len() < cfg.batch_size || cfg.batch_size == 0 {
        return Err(Error::invalid(format!(
            "style {:?} has {} examples, fewer than one minibatch",
            set.name,
            set.len()
        )));
    }
    let mut out = model.clone();
    let mut stepper = Stepper {
        layout: skeleton_layout,
        adam: Adam::with_lr(cfg.learning_rate),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2)),
        only: Some(model.generator_ids()),
    };
    let rounds = set.len() / cfg.batch_size;
    for epoch in 1..=cfg.epochs {
        let mut perm: Vec<usize> = (0..set.len()).collect();
        perm.shuffle(&mut stepper.rng);
        let mut sums = [0f64; 3];
        for r in 0..rounds {
            let v = stepper.step(&mut out, set, 0, &perm[r * cfg.batch_size..(r + 1) * cfg.batch_size])?;
            for k in 0..3 {
                sums[k] += v[k];
            }
        }
        let n = rounds.max(1) as f64;
        on_epoch(&EpochStats {
            epoch,
            steps: rounds,
            loss: sums[0] / n,
            mse: sums[1] / n,
            bone: sums[2] / n,
        });
    }
    if !out.style_names.contains(&set.name) {
        out.style_names.push(set.name.clone());
    }
    Ok(out)
}

/// Mean squared error of inference-path predictions in standardised output
/// units, averaged over `examples`.
pub fn prediction_mse(model: &StyleModel, examples: &[TrainingExample], style: RuntimeStyle<'_>) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    let d = model.spec.dims;
    let mut zs = vec![0f32; d.output];
    let mut ps = vec![0f32; d.output];
    let mut sum = 0f64;
    for e in examples {
        let (pred, _) = model.predict(&e.x, &e.p, style)?;
        model.norm.standardize_output(&e.z, &mut zs);
        model.norm.standardize_output(&pred, &mut ps);
        sum += zs.iter().zip(&ps).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / d.output as f64;
    }
    Ok(sum / examples.len() as f64)
}
