//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Scalar, Tape, Var};
use crate::error::{Error, Result};

/// A scalar function of a parameter set, evaluable at any precision.
pub trait Objective {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>) -> Result<Var>;

    /// Instrumentation hook applied to analytic gradients before comparison.
    fn adjust_gradients<T: Scalar>(&self, _params: &mut ParamStore<T>) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Analytic gradients at f32, compared with f64 finite differences.
    F32,
    /// Analytic gradients and finite differences both at f64.
    F64,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub precision: Precision,
    pub epsilon: f64,
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator.
    pub denom_floor: f64,
    /// Five-point stencil instead of the two-point central difference.
    pub five_point: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            precision: Precision::F64,
            epsilon: 1e-5,
            samples_per_tensor: 200,
            seed: 0,
            denom_floor: 1e-6,
            five_point: false,
        }
    }
}

impl GradCheckConfig {
    pub fn f32() -> Self {
        GradCheckConfig {
            precision: Precision::F32,
            epsilon: 1e-5,
            denom_floor: 1e-3,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub per_tensor: Vec<(String, f64)>,
}

fn eval<T: Scalar, O: Objective>(obj: &O, params: &ParamStore<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let out = obj.loss(&mut tape, params)?;
    Ok(tape.value(out).data()[0].as_f64())
}

fn analytic<T: Scalar, O: Objective>(obj: &O, params: &ParamStore<T>) -> Result<Vec<Vec<f64>>> {
    let mut store = params.clone();
    store.zero_grads();
    let mut tape = Tape::new();
    let out = obj.loss(&mut tape, &store)?;
    let grads = tape.backward(out)?;
    tape.accumulate_param_grads(&grads, &mut store);
    obj.adjust_gradients(&mut store);
    Ok(store
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g.as_f64()).collect())
        .collect())
}

/// Compares analytic gradients with central differences on up to
/// `samples_per_tensor` entries of every parameter tensor.
pub fn gradient_check<O: Objective>(
    obj: &O,
    params: &ParamStore<f32>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut shadow: ParamStore<f64> = params.cast();

    let analytic = match cfg.precision {
        Precision::F32 => {
            let a = eval(obj, params)?;
            let b = eval(obj, params)?;
            if a.to_bits() != b.to_bits() {
                return Err(Error::Numeric(format!(
                    "forward is not deterministic: {a} vs {b}"
                )));
            }
            analytic(obj, params)?
        }
        Precision::F64 => {
            let a = eval(obj, &shadow)?;
            let b = eval(obj, &shadow)?;
            if a.to_bits() != b.to_bits() {
                return Err(Error::Numeric(format!(
                    "forward is not deterministic: {a} vs {b}"
                )));
            }
            analytic(obj, &shadow)?
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        per_tensor: Vec::new(),
    };
    let ids: Vec<_> = shadow.ids().collect();
    for id in ids {
        let len = shadow.value(id).len();
        let picks: Vec<usize> = if len <= cfg.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, cfg.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut tensor_max = 0.0f64;
        for idx in picks {
            let orig = shadow.value(id).data()[idx];
            let h = cfg.epsilon;
            let mut at = |delta: f64| -> Result<f64> {
                shadow.get_mut(id).value.data_mut()[idx] = orig + delta;
                eval(obj, &shadow)
            };
            let numeric = if cfg.five_point {
                let d1 = at(h)? - at(-h)?;
                let d2 = at(2.0 * h)? - at(-2.0 * h)?;
                (8.0 * d1 - d2) / (12.0 * h)
            } else {
                (at(h)? - at(-h)?) / (2.0 * h)
            };
            shadow.get_mut(id).value.data_mut()[idx] = orig;
            let a = analytic[id.0][idx];
            let denom = a.abs().max(numeric.abs()).max(cfg.denom_floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            tensor_max = tensor_max.max(rel);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((shadow.get(id).name.clone(), idx));
                }
            }
        }
        report
            .per_tensor
            .push((shadow.get(id).name.clone(), tensor_max));
    }
    Ok(report)
}
