use gaitstyle::nn::{
    glorot, gradient_check, BoneLossSpec, GradCheckConfig, Objective, ParamStore, Precision, Scalar, Tape,
    Tensor, Var,
};
use gaitstyle::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, &mut rng(seed))
}

/// Projects an output onto fixed random weights so every element gets a
/// distinct gradient.
fn project<T: Scalar>(tape: &mut Tape<T>, y: Var, seed: u64) -> Result<Var> {
    let target: Tensor<T> = Tensor::<f64>::uniform(tape.value(y).shape(), 1.0, &mut rng(seed)).cast();
    tape.mse(y, target.data())
}

struct DenseNet {
    input: Tensor<f64>,
    activation: &'static str,
}

impl Objective for DenseNet {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> Result<Var> {
        let x = tape.constant(self.input.cast());
        let w = tape.param(p, p.find("w").unwrap());
        let b = tape.param(p, p.find("b").unwrap());
        let h = tape.linear(x, w, b)?;
        let h = match self.activation {
            "elu" => tape.elu(h),
            "softmax" => tape.softmax(h),
            _ => h,
        };
        project(tape, h, 99)
    }
}

fn dense_params(seed: u64) -> ParamStore<f32> {
    let mut r = rng(seed);
    let mut p = ParamStore::new();
    p.add("w", glorot(&[8, 8], 8, 8, &mut r));
    p.add("b", Tensor::uniform(&[8], 0.5, &mut r));
    p
}

#[test]
fn dense_gradients_match_finite_differences() {
    for act in ["none", "elu", "softmax"] {
        let obj = DenseNet {
            input: random_input(&[4, 8], 1),
            activation: act,
        };
        let p = dense_params(2);
        let r64 = gradient_check(&obj, &p, &GradCheckConfig::default()).unwrap();
        assert!(r64.max_rel_error < 1e-7, "{act} f64: {r64:?}");
        let r32 = gradient_check(&obj, &p, &GradCheckConfig::f32()).unwrap();
        assert!(r32.max_rel_error < 1e-4, "{act} f32: {r32:?}");
    }
}

#[test]
fn dense_check_with_coarse_epsilon() {
    let obj = DenseNet {
        input: random_input(&[4, 8], 3),
        activation: "elu",
    };
    let cfg = GradCheckConfig {
        epsilon: 1e-3,
        ..GradCheckConfig::default()
    };
    let r = gradient_check(&obj, &dense_params(4), &cfg).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn linear_network_is_exact() {
    let obj = DenseNet {
        input: random_input(&[4, 8], 5),
        activation: "none",
    };
    let r = gradient_check(&obj, &dense_params(6), &GradCheckConfig::default()).unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

struct FaultyBias(DenseNet);

impl Objective for FaultyBias {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> Result<Var> {
        self.0.loss(tape, p)
    }

    fn adjust_gradients<T: Scalar>(&self, params: &mut ParamStore<T>) {
        let id = params.find("b").unwrap();
        for g in params.get_mut(id).grad.data_mut() {
            *g = *g * T::from_f64(1.5) + T::from_f64(0.01);
        }
    }
}

#[test]
fn harness_flags_a_wrong_bias_gradient() {
    let obj = FaultyBias(DenseNet {
        input: random_input(&[4, 8], 7),
        activation: "elu",
    });
    let r = gradient_check(&obj, &dense_params(8), &GradCheckConfig::default()).unwrap();
    assert!(r.max_rel_error > 1e-2, "{r:?}");
    assert_eq!(r.worst.as_ref().unwrap().0, "b");
}

struct ConvNet {
    input: Tensor<f64>,
    pool: usize,
}

impl Objective for ConvNet {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> Result<Var> {
        let x = tape.constant(self.input.cast());
        let w = tape.param(p, p.find("w").unwrap());
        let b = tape.param(p, p.find("b").unwrap());
        let h = tape.conv1d(x, w, b)?;
        let h = tape.elu(h);
        let h = tape.max_pool(h, self.pool)?;
        project(tape, h, 11)
    }
}

#[test]
fn conv_pool_gradients_match_finite_differences() {
    let mut r = rng(9);
    let mut p = ParamStore::new();
    p.add("w", glorot(&[4, 3, 5], 15, 20, &mut r));
    p.add("b", Tensor::uniform(&[4], 0.5, &mut r));
    let obj = ConvNet {
        input: random_input(&[3, 12], 10),
        pool: 2,
    };
    let r64 = gradient_check(&obj, &p, &GradCheckConfig::default()).unwrap();
    assert!(r64.max_rel_error < 1e-7, "{r64:?}");
    let r32 = gradient_check(&obj, &p, &GradCheckConfig::f32()).unwrap();
    assert!(r32.max_rel_error < 1e-4, "{r32:?}");
}

struct NormFilm {
    input: Tensor<f64>,
}

impl Objective for NormFilm {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> Result<Var> {
        let x = tape.constant(self.input.cast());
        let w = tape.param(p, p.find("w").unwrap());
        let b = tape.param(p, p.find("b").unwrap());
        let g = tape.param(p, p.find("gamma").unwrap());
        let be = tape.param(p, p.find("beta").unwrap());
        let h = tape.linear(x, w, b)?;
        let h = tape.layer_norm(h)?;
        let h = tape.mul_bias(h, g)?;
        let h = tape.add_bias(h, be)?;
        let h = tape.elu(h);
        project(tape, h, 12)
    }
}

#[test]
fn layer_norm_and_modulation_gradients() {
    let mut r = rng(13);
    let mut p = ParamStore::new();
    p.add("w", glorot(&[6, 10], 6, 10, &mut r));
    p.add("b", Tensor::uniform(&[10], 0.5, &mut r));
    p.add("gamma", Tensor::uniform(&[1, 10], 1.5, &mut r));
    p.add("beta", Tensor::uniform(&[1, 10], 0.5, &mut r));
    let obj = NormFilm {
        input: random_input(&[5, 6], 14),
    };
    let r64 = gradient_check(&obj, &p, &GradCheckConfig::default()).unwrap();
    assert!(r64.max_rel_error < 1e-7, "{r64:?}");
    let r32 = gradient_check(&obj, &p, &GradCheckConfig::f32()).unwrap();
    assert!(r32.max_rel_error < 1e-4, "{r32:?}");
}

struct Experts {
    input: Tensor<f64>,
}

impl Objective for Experts {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> Result<Var> {
        let x = tape.constant(self.input.cast());
        let gw = tape.param(p, p.find("gw").unwrap());
        let gb = tape.param(p, p.find("gb").unwrap());
        let logits = tape.linear(x, gw, gb)?;
        let alpha = tape.softmax(logits);
        let w = tape.param(p, p.find("w").unwrap());
        let b = tape.param(p, p.find("b").unwrap());
        let y = tape.expert_linear(x, alpha, w, b)?;
        let sliced = tape.slice_cols(y, 1, 4)?;
        project(tape, sliced, 15)
    }
}

#[test]
fn expert_blend_gradients() {
    let mut r = rng(16);
    let mut p = ParamStore::new();
    p.add("gw", glorot(&[6, 3], 6, 3, &mut r));
    p.add("gb", Tensor::uniform(&[3], 0.5, &mut r));
    p.add("w", glorot(&[3, 6, 7], 6, 7, &mut r));
    p.add("b", Tensor::uniform(&[3, 7], 0.5, &mut r));
    let obj = Experts {
        input: random_input(&[4, 6], 17),
    };
    let r64 = gradient_check(&obj, &p, &GradCheckConfig::default()).unwrap();
    assert!(r64.max_rel_error < 1e-7, "{r64:?}");
    let r32 = gradient_check(&obj, &p, &GradCheckConfig::f32()).unwrap();
    assert!(r32.max_rel_error < 1e-4, "{r32:?}");
}

struct Bones {
    input: Tensor<f64>,
    target: Vec<f64>,
}

impl Objective for Bones {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> Result<Var> {
        let x = tape.constant(self.input.cast());
        let w = tape.param(p, p.find("w").unwrap());
        let b = tape.param(p, p.find("b").unwrap());
        let y = tape.linear(x, w, b)?;
        let spec = BoneLossSpec {
            bones: vec![(0, 1), (1, 2), (0, 3)],
            position_offset: 2,
            scale: (0..12).map(|i| T::from_f64(0.5 + 0.1 * i as f64)).collect(),
            shift: (0..12).map(|i| T::from_f64(0.05 * i as f64)).collect(),
        };
        let target: Vec<T> = self.target.iter().map(|v| T::from_f64(*v)).collect();
        tape.bone_length(y, &target, &spec)
    }
}

#[test]
fn bone_length_gradients() {
    let mut r = rng(18);
    let mut p = ParamStore::new();
    p.add("w", glorot(&[5, 14], 5, 14, &mut r));
    p.add("b", Tensor::uniform(&[14], 0.5, &mut r));
    let target = Tensor::<f64>::uniform(&[3, 12], 2.0, &mut rng(19)).into_vec();
    let obj = Bones {
        input: random_input(&[3, 5], 20),
        target,
    };
    let r64 = gradient_check(&obj, &p, &GradCheckConfig::default()).unwrap();
    assert!(r64.max_rel_error < 1e-7, "{r64:?}");
    let r32 = gradient_check(&obj, &p, &GradCheckConfig::f32()).unwrap();
    assert!(r32.max_rel_error < 1e-4, "{r32:?}");
}

#[test]
fn softmax_rows_sum_to_one_and_are_shift_invariant() {
    let x = Tensor::<f32>::uniform(&[6, 9], 20.0, &mut rng(21));
    let mut shifted = x.clone();
    shifted.data_mut().iter_mut().for_each(|v| *v += 37.5);
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(x);
    let b = tape.constant(shifted);
    let sa = tape.softmax(a);
    let sb = tape.softmax(b);
    for row in tape.value(sa).data().chunks(9) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
    for (p, q) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
        assert!((p - q).abs() < 1e-6);
    }
}

#[test]
fn layer_norm_rows_are_standardised_and_affine_invariant() {
    let x = Tensor::<f64>::uniform(&[4, 32], 3.0, &mut rng(22));
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(x.clone());
    let na = tape.layer_norm(a).unwrap();
    for row in tape.value(na).data().chunks(32) {
        let mean = row.iter().sum::<f64>() / 32.0;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-4);
    }
    let mut moved = x;
    moved.data_mut().iter_mut().for_each(|v| *v = 2.5 * *v - 4.0);
    let b = tape.constant(moved);
    let nb = tape.layer_norm(b).unwrap();
    for (p, q) in tape.value(na).data().iter().zip(tape.value(nb).data()) {
        assert!((p - q).abs() < 1e-5);
    }
    let c = tape.constant(Tensor::full(&[1, 8], 3.0));
    let nc = tape.layer_norm(c).unwrap();
    assert!(tape.value(nc).data().iter().all(|v| *v == 0.0));
}

#[test]
fn dropout_statistics_and_identities() {
    let n = 1_000_000;
    let x = Tensor::<f32>::full(&[1, n], 1.0);
    let mut tape = Tape::<f32>::new();
    let v = tape.constant(x);
    let mut r = rng(23);
    let same = tape.dropout(v, 0.3, false, &mut r).unwrap();
    assert_eq!(same, v);
    let same = tape.dropout(v, 0.0, true, &mut r).unwrap();
    assert_eq!(same, v);
    let d = tape.dropout(v, 0.3, true, &mut r).unwrap();
    let vals = tape.value(d).data();
    let kept = vals.iter().filter(|v| **v != 0.0).count() as f64 / n as f64;
    assert!((kept - 0.7).abs() < 0.002, "kept {kept}");
    let mean = vals.iter().map(|v| *v as f64).sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert!(tape.dropout(v, 1.0, true, &mut r).is_err());
}

#[test]
fn conv_identity_kernel_and_full_size_shapes() {
    let x = Tensor::<f32>::uniform(&[1, 10], 1.0, &mut rng(24));
    let mut tape = Tape::<f32>::new();
    let xv = tape.constant(x.clone());
    let mut k = vec![0.0f32; 5];
    k[2] = 1.0;
    let w = tape.constant(Tensor::from_vec(&[1, 1, 5], k).unwrap());
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv1d(xv, w, b).unwrap();
    let y = tape.max_pool(y, 1).unwrap();
    assert_eq!(tape.value(y).data(), x.data());

    let clip = tape.constant(Tensor::zeros(&[300, 240]));
    let w1 = tape.constant(Tensor::zeros(&[256, 300, 25]));
    let b1 = tape.constant(Tensor::zeros(&[256]));
    let h = tape.conv1d(clip, w1, b1).unwrap();
    let h = tape.max_pool(h, 2).unwrap();
    assert_eq!(tape.value(h).shape(), &[256, 120]);
    let w2 = tape.constant(Tensor::zeros(&[256, 256, 25]));
    let h = tape.conv1d(h, w2, b1).unwrap();
    let h = tape.max_pool(h, 2).unwrap();
    assert_eq!(tape.value(h).shape(), &[256, 60]);

    let even = tape.constant(Tensor::zeros(&[1, 1, 4]));
    let b0 = tape.constant(Tensor::zeros(&[1]));
    assert!(tape.conv1d(xv, even, b0).is_err());
    let short = tape.constant(Tensor::zeros(&[1, 1]));
    assert!(tape.max_pool(short, 2).is_err());
}

#[test]
fn dense_identity_and_shape_errors() {
    let x = Tensor::<f32>::uniform(&[3, 4], 1.0, &mut rng(25));
    let mut eye = Tensor::<f32>::zeros(&[4, 4]);
    for i in 0..4 {
        eye.data_mut()[i * 5] = 1.0;
    }
    let mut tape = Tape::<f32>::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(eye);
    let b = tape.constant(Tensor::zeros(&[4]));
    let y = tape.linear(xv, w, b).unwrap();
    assert_eq!(tape.value(y).data(), x.data());
    let bad = tape.constant(Tensor::zeros(&[5, 2]));
    let err = tape.matmul(xv, bad).unwrap_err().to_string();
    assert!(err.contains("[3, 4]") && err.contains("[5, 2]"), "{err}");
    let e = tape.constant(Tensor::from_vec(&[1, 2], vec![-1e4f32, 2.0]).unwrap());
    let e = tape.elu(e);
    assert!((tape.value(e).data()[0] + 1.0).abs() < 1e-6);
    assert_eq!(tape.value(e).data()[1], 2.0);
}

#[test]
fn precision_modes_are_reported() {
    assert_eq!(GradCheckConfig::f32().precision, Precision::F32);
}
