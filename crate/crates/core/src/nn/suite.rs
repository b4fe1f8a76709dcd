//! Finite-difference checks for each differentiable layer on its own, at
//! small sizes with fixed draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{glorot, gradient_check, BoneLossSpec, GradCheckConfig, GradCheckReport, Objective, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::Result;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, &mut rng(seed))
}

// squared error against a fixed random target, so every output element gets
// its own gradient
fn project<T: Scalar>(tape: &mut Tape<T>, y: Var, seed: u64) -> Result<Var> {
    let target: Tensor<T> = Tensor::<f64>::uniform(tape.value(y).shape(), 1.0, &mut rng(seed)).cast();
    tape.mse(y, target.data())
}

fn param<T: Scalar>(tape: &mut Tape<T>, p: &ParamStore<T>, name: &str) -> Var {
    tape.param(p, p.find(name).expect("suite parameter"))
}

enum Layer {
    Dense(&'static str),
    ConvPool,
    NormModulate,
    Experts,
    BoneLength,
}

struct Case {
    layer: Layer,
    x: Tensor<f64>,
}

impl Objective for Case {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> Result<Var> {
        let x = tape.constant(self.x.cast());
        match self.layer {
            Layer::Dense(act) => {
                let (w, b) = (param(tape, p, "w"), param(tape, p, "b"));
                let h = tape.linear(x, w, b)?;
                let h = match act {
                    "elu" => tape.elu(h),
                    "softmax" => tape.softmax(h),
                    _ => h,
                };
                project(tape, h, 99)
            }
            Layer::ConvPool => {
                let (w, b) = (param(tape, p, "w"), param(tape, p, "b"));
                let h = tape.conv1d(x, w, b)?;
                let h = tape.elu(h);
                let h = tape.max_pool(h, 2)?;
                project(tape, h, 11)
            }
            Layer::NormModulate => {
                let (w, b) = (param(tape, p, "w"), param(tape, p, "b"));
                let (g, be) = (param(tape, p, "gamma"), param(tape, p, "beta"));
                let h = tape.linear(x, w, b)?;
                let h = tape.layer_norm(h)?;
                let h = tape.mul_bias(h, g)?;
                let h = tape.add_bias(h, be)?;
                let h = tape.elu(h);
                project(tape, h, 12)
            }
            Layer::Experts => {
                let (gw, gb) = (param(tape, p, "gw"), param(tape, p, "gb"));
                let logits = tape.linear(x, gw, gb)?;
                let alpha = tape.softmax(logits);
                let (w, b) = (param(tape, p, "w"), param(tape, p, "b"));
                let y = tape.expert_linear(x, alpha, w, b)?;
                let y = tape.slice_cols(y, 1, 4)?;
                project(tape, y, 15)
            }
            Layer::BoneLength => {
                let (w, b) = (param(tape, p, "w"), param(tape, p, "b"));
                let y = tape.linear(x, w, b)?;
                let spec = BoneLossSpec {
                    bones: vec![(0, 1), (1, 2), (0, 3)],
                    position_offset: 2,
                    scale: (0..12).map(|i| T::from_f64(0.5 + 0.1 * i as f64)).collect(),
                    shift: (0..12).map(|i| T::from_f64(0.05 * i as f64)).collect(),
                };
                let target: Vec<T> = Tensor::<f64>::uniform(&[3, 12], 2.0, &mut rng(19))
                    .into_vec()
                    .into_iter()
                    .map(T::from_f64)
                    .collect();
                tape.bone_length(y, &target, &spec)
            }
        }
    }
}

fn cases() -> Vec<(&'static str, Case, ParamStore<f32>)> {
    let mut out = Vec::new();
    for (k, act) in ["none", "elu", "softmax"].into_iter().enumerate() {
        let mut r = rng(2 + k as u64);
        let mut p = ParamStore::new();
        p.add("w", glorot(&[8, 8], 8, 8, &mut r));
        p.add("b", Tensor::uniform(&[8], 0.5, &mut r));
        let name = match act {
            "none" => "dense",
            "elu" => "dense+elu",
            _ => "dense+softmax",
        };
        out.push((name, Case { layer: Layer::Dense(act), x: input(&[4, 8], 1) }, p));
    }

    let mut r = rng(9);
    let mut p = ParamStore::new();
    p.add("w", glorot(&[4, 3, 5], 15, 20, &mut r));
    p.add("b", Tensor::uniform(&[4], 0.5, &mut r));
    out.push(("conv1d+maxpool", Case { layer: Layer::ConvPool, x: input(&[3, 12], 10) }, p));

    let mut r = rng(13);
    let mut p = ParamStore::new();
    p.add("w", glorot(&[6, 10], 6, 10, &mut r));
    p.add("b", Tensor::uniform(&[10], 0.5, &mut r));
    p.add("gamma", Tensor::uniform(&[1, 10], 1.5, &mut r));
    p.add("beta", Tensor::uniform(&[1, 10], 0.5, &mut r));
    out.push(("layernorm+scale+shift", Case { layer: Layer::NormModulate, x: input(&[5, 6], 14) }, p));

    let mut r = rng(16);
    let mut p = ParamStore::new();
    p.add("gw", glorot(&[6, 3], 6, 3, &mut r));
    p.add("gb", Tensor::uniform(&[3], 0.5, &mut r));
    p.add("w", glorot(&[3, 6, 7], 6, 7, &mut r));
    p.add("b", Tensor::uniform(&[3, 7], 0.5, &mut r));
    out.push(("gating+expert blend", Case { layer: Layer::Experts, x: input(&[4, 6], 17) }, p));

    let mut r = rng(18);
    let mut p = ParamStore::new();
    p.add("w", glorot(&[5, 14], 5, 14, &mut r));
    p.add("b", Tensor::uniform(&[14], 0.5, &mut r));
    out.push(("bone length", Case { layer: Layer::BoneLength, x: input(&[3, 5], 20) }, p));
    out
}

/// f64 setting for smooth objectives: a central difference at 1e-5 leaves
/// roundoff near 1e-7 relative on gradients of order 1e-5. Objectives with
/// max-pool or absolute-value kinks keep the narrow central difference,
/// since a wide step straddles the switch point.
pub fn reference() -> GradCheckConfig {
    GradCheckConfig {
        epsilon: 1e-3,
        five_point: true,
        ..GradCheckConfig::default()
    }
}

/// `(layer, f32 report, f64 report)` for every layer type.
pub fn check_layers() -> Result<Vec<(&'static str, GradCheckReport, GradCheckReport)>> {
    cases()
        .into_iter()
        .map(|(name, case, p)| {
            let r32 = gradient_check(&case, &p, &GradCheckConfig::f32())?;
            let cfg = match case.layer {
                Layer::ConvPool | Layer::BoneLength => GradCheckConfig::default(),
                _ => reference(),
            };
            let r64 = gradient_check(&case, &p, &cfg)?;
            Ok((name, r32, r64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for (name, a, b) in check_layers().unwrap() {
            assert!(a.max_rel_error < 1e-4, "{name} f32: {a:?}");
            assert!(b.max_rel_error < 1e-7, "{name} f64: {b:?}");
        }
    }
}
