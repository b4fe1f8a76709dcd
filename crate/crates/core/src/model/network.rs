//! The style-conditioned synthesis network: gating, gated experts and the
//! style modulator, on the tape for training and as a plain f32 path for
//! inference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dims, ModelSpec, ModulatorMode};
use crate::error::{Error, Result};
use crate::motion::{NormalizationStats, Skeleton};
use crate::nn::{elu, glorot, layer_norm_in_place, softmax_in_place, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

pub const GENERATOR_PREFIX: &str = "film.";

/// How a forward pass receives its style.
#[derive(Debug, Clone, Copy)]
pub enum StyleInput<'a> {
    /// Standardised frame-major style clip, run through the generator.
    Clip(&'a [f32]),
    /// Precomputed scale/shift values.
    Embedding(&'a [f32]),
    /// Style slot of a onehot or resad model.
    Index(usize),
}

/// Trained network plus everything needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleModel {
    pub spec: ModelSpec,
    /// Style slot names (onehot, resad) or the training styles (film).
    pub style_names: Vec<String>,
    pub norm: NormalizationStats,
    pub params: ParamStore<f32>,
    /// Skeleton of the training data; absent for synthetic test models.
    pub skeleton: Option<Skeleton>,
}

pub(crate) fn pid<T: Scalar>(store: &ParamStore<T>, name: &str) -> Result<ParamId> {
    store
        .find(name)
        .ok_or_else(|| Error::Format(format!("missing parameter {name:?}")))
}

fn tensor<T: Scalar>(shape: &[usize], data: &[f32]) -> Result<Tensor<T>> {
    Tensor::from_vec(shape, data.iter().map(|v| T::from_f64(*v as f64)).collect())
}

/// Builds freshly initialised parameters for `spec`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamStore<f32>> {
    spec.validate()?;
    let d = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let g = [d.phase, d.gating_hidden, d.gating_hidden, d.experts];
    for l in 0..3 {
        s.add(format!("gating.{l}.w"), glorot(&[g[l], g[l + 1]], g[l], g[l + 1], &mut rng));
        s.add(format!("gating.{l}.b"), Tensor::zeros(&[g[l + 1]]));
    }
    let e = [d.input, d.hidden, d.hidden, d.output];
    for l in 0..3 {
        let mut w = Vec::with_capacity(d.experts * e[l] * e[l + 1]);
        for _ in 0..d.experts {
            w.extend(glorot::<f32, _>(&[e[l], e[l + 1]], e[l], e[l + 1], &mut rng).into_vec());
        }
        s.add(format!("expert.{l}.w"), Tensor::from_vec(&[d.experts, e[l], e[l + 1]], w)?);
        s.add(format!("expert.{l}.b"), Tensor::zeros(&[d.experts, e[l + 1]]));
    }
    match spec.mode {
        ModulatorMode::Film => {
            let c = [d.clip_channels, d.conv_channels, d.conv_channels];
            for l in 0..2 {
                let fan_in = c[l] * d.kernel;
                s.add(
                    format!("film.conv{l}.w"),
                    glorot(&[c[l + 1], c[l], d.kernel], fan_in, c[l + 1] * d.kernel, &mut rng),
                );
                s.add(format!("film.conv{l}.b"), Tensor::zeros(&[c[l + 1]]));
            }
            let f = [d.conv_flat(), d.film_hidden, d.embedding_len()];
            for l in 0..2 {
                s.add(format!("film.dense{l}.w"), glorot(&[f[l], f[l + 1]], f[l], f[l + 1], &mut rng));
                let mut b = vec![0f32; f[l + 1]];
                if l == 1 {
                    // scales start at one so an untrained generator is the identity
                    b[..d.hidden].fill(1.0);
                    b[2 * d.hidden..3 * d.hidden].fill(1.0);
                }
                s.add(format!("film.dense{l}.b"), Tensor::from_vec(&[f[l + 1]], b)?);
            }
        }
        ModulatorMode::OneHot => {
            for k in 0..spec.styles {
                s.add(format!("onehot.{k}"), Tensor::zeros(&[d.experts, 1, d.hidden]));
            }
        }
        ModulatorMode::Resad => {
            for k in 0..spec.styles {
                s.add(format!("resad.{k}.a"), Tensor::zeros(&[d.hidden, d.hidden]));
                s.add(format!("resad.{k}.c"), Tensor::zeros(&[d.hidden]));
            }
        }
    }
    Ok(s)
}

/// Tape values produced by [`forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Standardised prediction `[B, output]`.
    pub output: Var,
    pub alpha: Var,
    pub embedding: Option<Var>,
}

/// Options of a tape forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub training: bool,
    /// Record gating and expert parameters as constants (fine-tuning).
    pub freeze_synthesis: bool,
}

fn leaf<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, name: &str, frozen: bool) -> Result<Var> {
    let id = pid(store, name)?;
    Ok(if frozen {
        tape.constant(store.value(id).clone())
    } else {
        tape.param(store, id)
    })
}

/// Style generator on the tape: frame-major clip in, `[1, 4h]` out.
pub fn generator_forward<T: Scalar>(
    dims: &Dims,
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    clip: &[f32],
) -> Result<Var> {
    let (f, c) = (dims.clip_frames, dims.clip_channels);
    if clip.len() != f * c {
        return Err(Error::shape(format!(
            "style clip has {} values, expected {f} x {c}",
            clip.len()
        )));
    }
    // channels become rows, time runs along columns
    let mut t = vec![0f32; f * c];
    for (i, row) in clip.chunks(c).enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[j * f + i] = *v;
        }
    }
    let mut h = tape.constant(tensor(&[c, f], &t)?);
    for l in 0..2 {
        let w = leaf(tape, store, &format!("film.conv{l}.w"), false)?;
        let b = leaf(tape, store, &format!("film.conv{l}.b"), false)?;
        h = tape.conv1d(h, w, b)?;
        h = tape.elu(h);
        h = tape.max_pool(h, dims.pool)?;
    }
    h = tape.reshape(h, &[1, dims.conv_flat()])?;
    let w = leaf(tape, store, "film.dense0.w", false)?;
    let b = leaf(tape, store, "film.dense0.b", false)?;
    h = tape.linear(h, w, b)?;
    h = tape.elu(h);
    let w = leaf(tape, store, "film.dense1.w", false)?;
    let b = leaf(tape, store, "film.dense1.b", false)?;
    tape.linear(h, w, b)
}

/// Full forward pass on standardised inputs `x [B, input]`, `phase [B, phase]`.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Scalar, R: Rng>(
    spec: &ModelSpec,
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    x: &[f32],
    phase: &[f32],
    style: StyleInput<'_>,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<ForwardVars> {
    let d = &spec.dims;
    if x.len() % d.input != 0 || phase.len() != x.len() / d.input * d.phase || x.is_empty() {
        return Err(Error::shape(format!(
            "batch of {} input and {} phase values for widths {} and {}",
            x.len(),
            phase.len(),
            d.input,
            d.phase
        )));
    }
    let batch = x.len() / d.input;
    let frozen = opts.freeze_synthesis;

    let mut a = tape.constant(tensor(&[batch, d.phase], phase)?);
    for l in 0..3 {
        let w = leaf(tape, store, &format!("gating.{l}.w"), frozen)?;
        let b = leaf(tape, store, &format!("gating.{l}.b"), frozen)?;
        a = tape.linear(a, w, b)?;
        if l < 2 {
            a = tape.elu(a);
        }
    }
    let alpha = tape.softmax(a);

    let embedding = match (spec.mode, style) {
        (ModulatorMode::Film, StyleInput::Clip(c)) => Some(generator_forward(d, store, tape, c)?),
        (ModulatorMode::Film, StyleInput::Embedding(e)) => {
            if e.len() != d.embedding_len() {
                return Err(Error::shape(format!(
                    "embedding has {} values, expected {}",
                    e.len(),
                    d.embedding_len()
                )));
            }
            Some(tape.constant(tensor(&[1, e.len()], e)?))
        }
        (ModulatorMode::Film, StyleInput::Index(_)) => {
            return Err(Error::invalid("film models take a style clip or embedding, not an index"))
        }
        (_, StyleInput::Index(k)) if k >= spec.styles => {
            return Err(Error::UnknownStyle(format!("style slot {k} of {}", spec.styles)))
        }
        (_, StyleInput::Index(_)) => None,
        (m, _) => return Err(Error::invalid(format!("{m} models take a style index"))),
    };
    let slot = match style {
        StyleInput::Index(k) => k,
        _ => 0,
    };

    let mut h = tape.constant(tensor(&[batch, d.input], x)?);
    for l in 0..2 {
        let w = leaf(tape, store, &format!("expert.{l}.w"), frozen)?;
        let b = leaf(tape, store, &format!("expert.{l}.b"), frozen)?;
        h = tape.expert_linear(h, alpha, w, b)?;
        match spec.mode {
            ModulatorMode::Film => {
                let e = embedding.expect("film embedding");
                let gamma = tape.slice_cols(e, 2 * l * d.hidden, d.hidden)?;
                let beta = tape.slice_cols(e, (2 * l + 1) * d.hidden, d.hidden)?;
                h = tape.layer_norm(h)?;
                h = tape.mul_bias(h, gamma)?;
                h = tape.add_bias(h, beta)?;
                h = tape.elu(h);
            }
            ModulatorMode::OneHot => {
                if l == 0 {
                    let ones = tape.constant(Tensor::full(&[batch, 1], T::one()));
                    let u = leaf(tape, store, &format!("onehot.{slot}"), false)?;
                    let zero = tape.constant(Tensor::zeros(&[d.experts, d.hidden]));
                    let shift = tape.expert_linear(ones, alpha, u, zero)?;
                    h = tape.add(h, shift)?;
                }
                h = tape.layer_norm(h)?;
                h = tape.elu(h);
            }
            ModulatorMode::Resad => {
                h = tape.elu(h);
                if l == 0 {
                    let am = leaf(tape, store, &format!("resad.{slot}.a"), false)?;
                    let c = leaf(tape, store, &format!("resad.{slot}.c"), false)?;
                    let r = tape.linear(h, am, c)?;
                    h = tape.add(h, r)?;
                }
            }
        }
        h = tape.dropout(h, spec.dropout, opts.training, rng)?;
    }
    let w = leaf(tape, store, "expert.2.w", frozen)?;
    let b = leaf(tape, store, "expert.2.b", frozen)?;
    let output = tape.expert_linear(h, alpha, w, b)?;
    Ok(ForwardVars {
        output,
        alpha,
        embedding,
    })
}

/// Convex combination of the expert tensors of one layer.
pub fn blend_experts(alpha: &[f32], w: &[f32], b: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let k = alpha.len();
    let (wl, bl) = (w.len() / k, b.len() / k);
    let mut wo = vec![0f32; wl];
    let mut bo = vec![0f32; bl];
    for (e, a) in alpha.iter().enumerate() {
        for (o, v) in wo.iter_mut().zip(&w[e * wl..(e + 1) * wl]) {
            *o += a * v;
        }
        for (o, v) in bo.iter_mut().zip(&b[e * bl..(e + 1) * bl]) {
            *o += a * v;
        }
    }
    (wo, bo)
}

/// `y = x W + b` for row-major `W [in, out]`.
fn matvec(x: &[f32], w: &[f32], b: &[f32], y: &mut [f32]) {
    y.copy_from_slice(b);
    let out = y.len();
    for (xi, row) in x.iter().zip(w.chunks_exact(out)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, wv) in y.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}

/// `y = sum_k alpha_k (x W_k + b_k)`, identical to evaluating the layer
/// with blended weights.
fn expert_matvec(x: &[f32], alpha: &[f32], w: &[f32], b: &[f32], y: &mut [f32]) {
    let out = y.len();
    let per = x.len() * out;
    y.fill(0.0);
    for (k, a) in alpha.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        for (o, bv) in y.iter_mut().zip(&b[k * out..(k + 1) * out]) {
            *o += a * bv;
        }
        for (xi, row) in x.iter().zip(w[k * per..(k + 1) * per].chunks_exact(out)) {
            let s = a * xi;
            if s == 0.0 {
                continue;
            }
            for (o, wv) in y.iter_mut().zip(row) {
                *o += s * wv;
            }
        }
    }
}

/// Style payload for the f32 inference path.
#[derive(Debug, Clone, Copy)]
pub enum RuntimeStyle<'a> {
    Embedding(&'a [f32]),
    Index(usize),
}

impl StyleModel {
    pub fn new(spec: ModelSpec, style_names: Vec<String>, norm: NormalizationStats, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        let m = StyleModel {
            spec,
            style_names,
            norm,
            params,
            skeleton: None,
        };
        m.check()?;
        Ok(m)
    }

    pub fn with_skeleton(mut self, skeleton: Skeleton) -> Self {
        self.skeleton = Some(skeleton);
        self
    }

    pub fn dims(&self) -> &Dims {
        &self.spec.dims
    }

    /// Consistency of names, shapes and normalisation widths.
    pub fn check(&self) -> Result<()> {
        self.spec.validate()?;
        let reference = init_params(&self.spec, 0)?;
        if reference.len() != self.params.len() {
            return Err(Error::Format(format!(
                "{} parameter tensors, architecture has {}",
                self.params.len(),
                reference.len()
            )));
        }
        for (a, b) in reference.iter().zip(self.params.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Format(format!(
                    "parameter {:?} {:?} does not match expected {:?} {:?}",
                    b.name,
                    b.value.shape(),
                    a.name,
                    a.value.shape()
                )));
            }
        }
        let d = &self.spec.dims;
        let n = &self.norm;
        if n.input_mean.len() != d.input + d.phase
            || n.output_mean.len() != d.output
            || n.clip_mean.len() != d.clip_channels
        {
            return Err(Error::shape("normalisation widths do not match the model"));
        }
        if self.spec.mode != ModulatorMode::Film && self.style_names.len() != self.spec.styles {
            return Err(Error::shape("style name table does not match the style count"));
        }
        Ok(())
    }

    pub fn style_slot(&self, name: &str) -> Result<usize> {
        self.style_names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::UnknownStyle(name.into()))
    }

    fn value(&self, name: &str) -> &[f32] {
        self.params
            .value(self.params.find(name).expect("checked parameter"))
            .data()
    }

    /// Style embedding of a raw (unstandardised) frame-major clip.
    pub fn film_generate(&self, clip: &[f32]) -> Result<Vec<f32>> {
        if self.spec.mode != ModulatorMode::Film {
            return Err(Error::invalid(format!("{} models have no style generator", self.spec.mode)));
        }
        let mut c = clip.to_vec();
        if c.len() != self.spec.dims.clip_frames * self.spec.dims.clip_channels {
            return Err(Error::shape(format!("style clip has {} values", c.len())));
        }
        self.norm.standardize_clip(&mut c);
        let mut tape = Tape::<f32>::new();
        let e = generator_forward(&self.spec.dims, &self.params, &mut tape, &c)?;
        Ok(tape.value(e).data().to_vec())
    }

    /// Gating coefficients for a standardised phase vector.
    pub fn gating(&self, phase_std: &[f32]) -> Vec<f32> {
        let d = &self.spec.dims;
        let widths = [d.phase, d.gating_hidden, d.gating_hidden, d.experts];
        let mut a = phase_std.to_vec();
        for l in 0..3 {
            let mut y = vec![0f32; widths[l + 1]];
            matvec(&a, self.value(&format!("gating.{l}.w")), self.value(&format!("gating.{l}.b")), &mut y);
            if l < 2 {
                y.iter_mut().for_each(|v| *v = elu(*v));
            }
            a = y;
        }
        softmax_in_place(&mut a);
        a
    }

    /// Inference on raw features: returns the de-standardised output and
    /// the gating coefficients.
    pub fn predict(&self, x: &[f32], phase: &[f32], style: RuntimeStyle<'_>) -> Result<(Vec<f32>, Vec<f32>)> {
        let d = self.spec.dims;
        if x.len() != d.input || phase.len() != d.phase {
            return Err(Error::shape(format!(
                "predict needs {} + {} values, got {} + {}",
                d.input,
                d.phase,
                x.len(),
                phase.len()
            )));
        }
        let mut xs = vec![0f32; d.input];
        let mut ps = vec![0f32; d.phase];
        self.norm.standardize_input(x, phase, &mut xs, &mut ps);
        let alpha = self.gating(&ps);
        let (emb, slot) = match (self.spec.mode, style) {
            (ModulatorMode::Film, RuntimeStyle::Embedding(e)) if e.len() == d.embedding_len() => (Some(e), 0),
            (ModulatorMode::Film, _) => {
                return Err(Error::invalid("film models need an embedding of the right length"))
            }
            (_, RuntimeStyle::Index(k)) if k < self.spec.styles => (None, k),
            (_, RuntimeStyle::Index(k)) => return Err(Error::UnknownStyle(format!("style slot {k}"))),
            (m, _) => return Err(Error::invalid(format!("{m} models need a style index"))),
        };
        let mut h = xs;
        for l in 0..2 {
            let mut y = vec![0f32; d.hidden];
            expert_matvec(
                &h,
                &alpha,
                self.value(&format!("expert.{l}.w")),
                self.value(&format!("expert.{l}.b")),
                &mut y,
            );
            match self.spec.mode {
                ModulatorMode::Film => {
                    let e = emb.expect("embedding");
                    let gamma = &e[2 * l * d.hidden..][..d.hidden];
                    let beta = &e[(2 * l + 1) * d.hidden..][..d.hidden];
                    layer_norm_in_place(&mut y);
                    for ((v, g), b) in y.iter_mut().zip(gamma).zip(beta) {
                        *v = elu(g * *v + b);
                    }
                }
                ModulatorMode::OneHot => {
                    if l == 0 {
                        let u = self.value(&format!("onehot.{slot}"));
                        for (k, a) in alpha.iter().enumerate() {
                            for (v, s) in y.iter_mut().zip(&u[k * d.hidden..(k + 1) * d.hidden]) {
                                *v += a * s;
                            }
                        }
                    }
                    layer_norm_in_place(&mut y);
                    y.iter_mut().for_each(|v| *v = elu(*v));
                }
                ModulatorMode::Resad => {
                    y.iter_mut().for_each(|v| *v = elu(*v));
                    if l == 0 {
                        let mut r = vec![0f32; d.hidden];
                        matvec(
                            &y,
                            self.value(&format!("resad.{slot}.a")),
                            self.value(&format!("resad.{slot}.c")),
                            &mut r,
                        );
                        y.iter_mut().zip(&r).for_each(|(v, r)| *v += r);
                    }
                }
            }
            h = y;
        }
        let mut out = vec![0f32; d.output];
        expert_matvec(&h, &alpha, self.value("expert.2.w"), self.value("expert.2.b"), &mut out);
        self.norm.destandardize_output(&mut out);
        Ok((out, alpha))
    }

    /// Ids of the generator parameters (the only ones fine-tuning updates).
    pub fn generator_ids(&self) -> Vec<ParamId> {
        self.params
            .ids()
            .filter(|id| self.params.get(*id).name.starts_with(GENERATOR_PREFIX))
            .collect()
    }
}

/// Scale and shift folded into a layer: `W' = W diag(gamma)`,
/// `b' = gamma * b + beta`, for row-major `W [in, out]`.
pub fn fold_film_layer<T: Scalar>(w: &[T], b: &[T], gamma: &[T], beta: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let out = b.len();
    if gamma.len() != out || beta.len() != out || out == 0 || w.len() % out != 0 {
        return Err(Error::shape(format!(
            "fold: weights {}, bias {}, gamma {}, beta {}",
            w.len(),
            out,
            gamma.len(),
            beta.len()
        )));
    }
    let mut wf = w.to_vec();
    for row in wf.chunks_mut(out) {
        for (v, g) in row.iter_mut().zip(gamma) {
            *v *= *g;
        }
    }
    let bf = b.iter().zip(gamma).zip(beta).map(|((b, g), s)| *g * *b + *s).collect();
    Ok((wf, bf))
}
