//! Reverse-mode differentiation over a linear record of operations.
//!
//! Every op stores what its backward pass needs (masks, argmax indices,
//! per-expert activations). Values are copied into the tape, so a tape is
//! independent of the [`ParamStore`] it was built from.

use rand::Rng;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Bone-length loss configuration: which output channels hold joint
/// positions, how to map them back to metres, and the bone list.
#[derive(Debug, Clone)]
pub struct BoneLossSpec<T> {
    pub bones: Vec<(usize, usize)>,
    pub position_offset: usize,
    /// Per position channel `metres = value * scale + shift`.
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

pub const NORM_STABILIZER: f64 = 1e-8;
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    MulBias { x: Var, scale: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Elu { x: Var },
    Softmax { x: Var },
    LayerNorm { x: Var, inv_std: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    ExpertLinear { x: Var, alpha: Var, w: Var, b: Var, expert_out: Vec<T> },
    Conv1d { x: Var, w: Var, b: Var, cols: Vec<T> },
    MaxPool { x: Var, argmax: Vec<usize> },
    Reshape { x: Var },
    SliceCols { x: Var, start: usize },
    SliceRow { x: Var, row: usize },
    Mse { pred: Var, target: Vec<T> },
    BoneLength { pred: Var, dpred: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Result of a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn expect_2d<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::shape(format!(
            "{what}: expected a 2-d tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by op #{}",
            self.nodes.len()
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is wanted (gradient checks on inputs).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = expect_2d(self.value(a), "matmul lhs")?;
        let (k2, n) = expect_2d(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            T::zero(),
            out.data_mut(),
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul { a, b }, ng))
    }

    /// Adds a per-column vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.value(x).matrix_dims();
        if self.value(bias).len() != cols {
            return Err(Error::shape(format!(
                "add_bias: input {:?}, bias {:?}",
                self.value(x).shape(),
                self.value(bias).shape()
            )));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += *bv;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddBias { x, bias }, ng))
    }

    /// Multiplies every row elementwise by a per-column vector.
    pub fn mul_bias(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (_, cols) = self.value(x).matrix_dims();
        if self.value(scale).len() != cols {
            return Err(Error::shape(format!(
                "mul_bias: input {:?}, scale {:?}",
                self.value(x).shape(),
                self.value(scale).shape()
            )));
        }
        let mut out = self.value(x).clone();
        let s = self.value(scale).data().to_vec();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, sv) in row.iter_mut().zip(&s) {
                *o *= *sv;
            }
        }
        let ng = self.ng(x) || self.ng(scale);
        Ok(self.push(out, Op::MulBias { x, scale }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        let ng = self.ng(x);
        self.push(out, Op::Scale { x, factor }, ng)
    }

    /// Affine map `x w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = elu(*v));
        let ng = self.ng(x);
        self.push(out, Op::Elu { x }, ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, cols) = self.value(x).matrix_dims();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        let ng = self.ng(x);
        self.push(out, Op::Softmax { x }, ng)
    }

    /// Row-wise normalisation to zero mean and unit variance, no affine.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).matrix_dims();
        if cols < 2 {
            return Err(Error::shape("layer_norm needs at least 2 features"));
        }
        let mut out = self.value(x).clone();
        let mut inv_std = Vec::with_capacity(rows);
        for row in out.data_mut().chunks_mut(cols) {
            inv_std.push(layer_norm_in_place(row));
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::LayerNorm { x, inv_std }, ng))
    }

    /// Inverted dropout. Identity (and no mask) when not training or rate is 0.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= *m;
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::Dropout { x, mask }, ng))
    }

    /// Gated expert layer: row `n` of the output is
    /// `sum_k alpha[n,k] * (x[n] W_k + b_k)`, which equals evaluating the
    /// layer with convexly blended weights.
    ///
    /// Shapes: `x [B, in]`, `alpha [B, K]`, `w [K, in, out]`, `b [K, out]`.
    pub fn expert_linear(&mut self, x: Var, alpha: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, fan_in) = expect_2d(self.value(x), "expert_linear input")?;
        let (batch2, experts) = expect_2d(self.value(alpha), "expert_linear alpha")?;
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if batch != batch2
            || ws.len() != 3
            || ws[0] != experts
            || ws[1] != fan_in
            || bs != [experts, ws[2]]
        {
            return Err(Error::shape(format!(
                "expert_linear: x {:?}, alpha {:?}, w {:?}, b {:?}",
                self.value(x).shape(),
                self.value(alpha).shape(),
                ws,
                bs
            )));
        }
        let fan_out = ws[2];
        let block = batch * fan_out;
        let mut expert_out = vec![T::zero(); experts * block];
        let mut out = Tensor::zeros(&[batch, fan_out]);
        {
            let xv = self.value(x).data();
            let av = self.value(alpha).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for k in 0..experts {
                let ek = &mut expert_out[k * block..(k + 1) * block];
                let bias = &bv[k * fan_out..(k + 1) * fan_out];
                for row in ek.chunks_mut(fan_out) {
                    row.copy_from_slice(bias);
                }
                T::gemm(
                    batch,
                    fan_in,
                    fan_out,
                    T::one(),
                    xv,
                    false,
                    &wv[k * fan_in * fan_out..(k + 1) * fan_in * fan_out],
                    false,
                    T::one(),
                    ek,
                );
                let od = out.data_mut();
                for n in 0..batch {
                    let a = av[n * experts + k];
                    let src = &ek[n * fan_out..(n + 1) * fan_out];
                    let dst = &mut od[n * fan_out..(n + 1) * fan_out];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += a * *s;
                    }
                }
            }
        }
        let ng = self.ng(x) || self.ng(alpha) || self.ng(w) || self.ng(b);
        Ok(self.push(
            out,
            Op::ExpertLinear {
                x,
                alpha,
                w,
                b,
                expert_out,
            },
            ng,
        ))
    }

    /// Temporal convolution with "same" zero padding.
    ///
    /// Shapes: `x [C_in, T]`, `w [C_out, C_in, K]` with odd `K`, `b [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (cin, time) = expect_2d(self.value(x), "conv1d input")?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 3 || ws[1] != cin || self.value(b).len() != ws[0] {
            return Err(Error::shape(format!(
                "conv1d: input {:?}, filters {:?}, bias {:?}",
                self.value(x).shape(),
                ws,
                self.value(b).shape()
            )));
        }
        let (cout, k) = (ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(Error::invalid(format!("conv1d kernel size {k} must be odd")));
        }
        let cols = im2col(self.value(x).data(), cin, time, k);
        let mut out = Tensor::zeros(&[cout, time]);
        {
            let bv = self.value(b).data();
            for (row, bias) in out.data_mut().chunks_mut(time).zip(bv) {
                row.iter_mut().for_each(|v| *v = *bias);
            }
        }
        T::gemm(
            cout,
            cin * k,
            time,
            T::one(),
            self.value(w).data(),
            false,
            &cols,
            false,
            T::one(),
            out.data_mut(),
        );
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(out, Op::Conv1d { x, w, b, cols }, ng))
    }

    /// Non-overlapping max pooling along time: `[C, T] -> [C, T / pool]`.
    pub fn max_pool(&mut self, x: Var, pool: usize) -> Result<Var> {
        let (ch, time) = expect_2d(self.value(x), "max_pool input")?;
        if pool == 0 || time < pool {
            return Err(Error::invalid(format!(
                "max_pool: length {time} shorter than pool {pool}"
            )));
        }
        if time % pool != 0 {
            return Err(Error::invalid(format!(
                "max_pool: pool {pool} does not divide length {time}"
            )));
        }
        let outt = time / pool;
        let mut out = Tensor::zeros(&[ch, outt]);
        let mut argmax = Vec::with_capacity(ch * outt);
        let xv = self.value(x).data();
        for c in 0..ch {
            for t in 0..outt {
                let base = c * time + t * pool;
                let mut best = base;
                for i in base + 1..base + pool {
                    if xv[i] > xv[best] {
                        best = i;
                    }
                }
                out.data_mut()[c * outt + t] = xv[best];
                argmax.push(best);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::MaxPool { x, argmax }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape { x }, ng))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = expect_2d(self.value(x), "slice_cols")?;
        if start + len > cols {
            return Err(Error::shape(format!(
                "slice_cols {start}..{} of {cols} columns",
                start + len
            )));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv[r * cols + start..r * cols + start + len]);
        }
        let out = Tensor::from_vec(&[rows, len], data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceCols { x, start }, ng))
    }

    /// Row `row` of a matrix as a `[1, cols]` matrix.
    pub fn slice_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let (rows, cols) = expect_2d(self.value(x), "slice_row")?;
        if row >= rows {
            return Err(Error::OutOfBounds(format!("row {row} of {rows}")));
        }
        let data = self.value(x).data()[row * cols..(row + 1) * cols].to_vec();
        let out = Tensor::from_vec(&[1, cols], data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceRow { x, row }, ng))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(Error::shape(format!(
                "mse: prediction has {} values, target {}",
                p.len(),
                target.len()
            )));
        }
        let n = T::from_f64(p.len() as f64);
        let loss = p
            .iter()
            .zip(target)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            / n;
        let target = target.to_vec();
        let ng = self.ng(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }, ng))
    }

    /// Mean absolute bone-length difference, averaged over rows and bones.
    /// `target` holds rows of positions already in metres.
    pub fn bone_length(&mut self, pred: Var, target: &[T], spec: &BoneLossSpec<T>) -> Result<Var> {
        let (rows, cols) = expect_2d(self.value(pred), "bone_length")?;
        let npos = spec.scale.len();
        if spec.shift.len() != npos
            || spec.position_offset + npos > cols
            || target.len() != rows * npos
        {
            return Err(Error::shape(format!(
                "bone_length: prediction {:?}, {} position channels, target {}",
                self.value(pred).shape(),
                npos,
                target.len()
            )));
        }
        if spec.bones.is_empty() {
            return Err(Error::invalid("bone_length needs at least one bone"));
        }
        let stab = T::from_f64(NORM_STABILIZER);
        let denom = T::from_f64((rows * spec.bones.len()) as f64);
        let pv = self.value(pred).data();
        let mut dpred = vec![T::zero(); rows * cols];
        let mut total = T::zero();
        for r in 0..rows {
            let row = &pv[r * cols..(r + 1) * cols];
            let pos = |j: usize, c: usize| {
                let ch = 3 * j + c;
                row[spec.position_offset + ch] * spec.scale[ch] + spec.shift[ch]
            };
            let tgt = &target[r * npos..(r + 1) * npos];
            for &(parent, child) in &spec.bones {
                let mut dp = [T::zero(); 3];
                let mut lt = stab;
                let mut lp = stab;
                for c in 0..3 {
                    dp[c] = pos(parent, c) - pos(child, c);
                    lp += dp[c] * dp[c];
                    let dt = tgt[3 * parent + c] - tgt[3 * child + c];
                    lt += dt * dt;
                }
                let lt = lt.sqrt();
                let lp = lp.sqrt();
                let diff = lt - lp;
                total += diff.abs();
                // d|lt - lp| / d lp
                let sign = if diff > T::zero() {
                    -T::one()
                } else if diff < T::zero() {
                    T::one()
                } else {
                    T::zero()
                };
                for c in 0..3 {
                    let g = sign * dp[c] / lp / denom;
                    let pc = 3 * parent + c;
                    let cc = 3 * child + c;
                    dpred[r * cols + spec.position_offset + pc] += g * spec.scale[pc];
                    dpred[r * cols + spec.position_offset + cc] -= g * spec.scale[cc];
                }
            }
        }
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::BoneLength { pred, dpred },
            ng,
        ))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradients of parameter leaves into the store.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = &grads.grads[i] {
                    store.get_mut(id).grad.add_assign(g);
                }
            }
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.value(*a).matrix_dims();
                let n = self.value(*b).matrix_dims().1;
                if self.ng(*a) {
                    let mut da = Tensor::zeros(self.value(*a).shape());
                    T::gemm(m, n, k, T::one(), gd, false, self.value(*b).data(), true, T::zero(), da.data_mut());
                    accumulate(grads, *a, da);
                }
                if self.ng(*b) {
                    let mut db = Tensor::zeros(self.value(*b).shape());
                    T::gemm(k, m, n, T::one(), self.value(*a).data(), true, gd, false, T::zero(), db.data_mut());
                    accumulate(grads, *b, db);
                }
            }
            Op::AddBias { x, bias } => {
                if self.ng(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.ng(*bias) {
                    let cols = self.value(*bias).len();
                    let mut db = Tensor::zeros(self.value(*bias).shape());
                    for row in gd.chunks(cols) {
                        for (d, v) in db.data_mut().iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::MulBias { x, scale } => {
                let cols = self.value(*scale).len();
                if self.ng(*x) {
                    let s = self.value(*scale).data();
                    let mut dx = g.clone();
                    for row in dx.data_mut().chunks_mut(cols) {
                        for (d, sv) in row.iter_mut().zip(s) {
                            *d *= *sv;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.ng(*scale) {
                    let xv = self.value(*x).data();
                    let mut ds = Tensor::zeros(self.value(*scale).shape());
                    for (grow, xrow) in gd.chunks(cols).zip(xv.chunks(cols)) {
                        for ((d, gv), xval) in ds.data_mut().iter_mut().zip(grow).zip(xrow) {
                            *d += *gv * *xval;
                        }
                    }
                    accumulate(grads, *scale, ds);
                }
            }
            Op::Add { a, b } => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Scale { x, factor } => {
                let mut dx = g.clone();
                dx.data_mut().iter_mut().for_each(|v| *v *= *factor);
                accumulate(grads, *x, dx);
            }
            Op::Elu { x } => {
                let mut dx = g.clone();
                for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    if *y <= T::zero() {
                        *d *= *y + T::one();
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Softmax { x } => {
                let cols = node.value.matrix_dims().1;
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(cols).zip(node.value.data().chunks(cols)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    for (d, y) in drow.iter_mut().zip(yrow) {
                        *d = T::from_f64(y.as_f64() * (d.as_f64() - dot));
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm { x, inv_std } => {
                let cols = node.value.matrix_dims().1;
                let n = T::from_f64(cols as f64);
                let mut dx = g.clone();
                for ((drow, yrow), inv) in dx
                    .data_mut()
                    .chunks_mut(cols)
                    .zip(node.value.data().chunks(cols))
                    .zip(inv_std)
                {
                    let mean_g: T = drow.iter().copied().sum::<T>() / n;
                    let mean_gy: T = drow.iter().zip(yrow).map(|(a, b)| *a * *b).sum::<T>() / n;
                    for (d, y) in drow.iter_mut().zip(yrow) {
                        *d = *inv * (*d - mean_g - *y * mean_gy);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Dropout { x, mask } => {
                let mut dx = g.clone();
                for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                    *d *= *m;
                }
                accumulate(grads, *x, dx);
            }
            Op::ExpertLinear {
                x,
                alpha,
                w,
                b,
                expert_out,
            } => {
                let (batch, fan_in) = self.value(*x).matrix_dims();
                let experts = self.value(*alpha).matrix_dims().1;
                let fan_out = node.value.matrix_dims().1;
                let av = self.value(*alpha).data();
                let block = batch * fan_out;
                let mut dx = self.ng(*x).then(|| Tensor::zeros(self.value(*x).shape()));
                let mut dw = self.ng(*w).then(|| Tensor::zeros(self.value(*w).shape()));
                let mut db = self.ng(*b).then(|| Tensor::zeros(self.value(*b).shape()));
                if self.ng(*alpha) {
                    let mut da = Tensor::zeros(self.value(*alpha).shape());
                    for k in 0..experts {
                        let ek = &expert_out[k * block..(k + 1) * block];
                        for n in 0..batch {
                            let dot: f64 = gd[n * fan_out..(n + 1) * fan_out]
                                .iter()
                                .zip(&ek[n * fan_out..(n + 1) * fan_out])
                                .map(|(a, b)| a.as_f64() * b.as_f64())
                                .sum();
                            da.data_mut()[n * experts + k] = T::from_f64(dot);
                        }
                    }
                    accumulate(grads, *alpha, da);
                }
                let mut gk = vec![T::zero(); block];
                let wv = self.value(*w).data();
                let wsize = fan_in * fan_out;
                for k in 0..experts {
                    for n in 0..batch {
                        let a = av[n * experts + k];
                        for o in 0..fan_out {
                            gk[n * fan_out + o] = a * gd[n * fan_out + o];
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        T::gemm(
                            fan_in,
                            batch,
                            fan_out,
                            T::one(),
                            self.value(*x).data(),
                            true,
                            &gk,
                            false,
                            T::zero(),
                            &mut dw.data_mut()[k * wsize..(k + 1) * wsize],
                        );
                    }
                    if let Some(db) = db.as_mut() {
                        let dst = &mut db.data_mut()[k * fan_out..(k + 1) * fan_out];
                        for row in gk.chunks(fan_out) {
                            for (d, v) in dst.iter_mut().zip(row) {
                                *d += *v;
                            }
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        T::gemm(
                            batch,
                            fan_out,
                            fan_in,
                            T::one(),
                            &gk,
                            false,
                            &wv[k * wsize..(k + 1) * wsize],
                            true,
                            T::one(),
                            dx.data_mut(),
                        );
                    }
                }
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, dw);
                }
                if let Some(db) = db {
                    accumulate(grads, *b, db);
                }
            }
            Op::Conv1d { x, w, b, cols } => {
                let (cin, time) = self.value(*x).matrix_dims();
                let ws = self.value(*w).shape();
                let (cout, k) = (ws[0], ws[2]);
                if self.ng(*w) {
                    let mut dw = Tensor::zeros(ws);
                    T::gemm(cout, time, cin * k, T::one(), gd, false, cols, true, T::zero(), dw.data_mut());
                    accumulate(grads, *w, dw);
                }
                if self.ng(*b) {
                    let mut db = Tensor::zeros(self.value(*b).shape());
                    for (d, row) in db.data_mut().iter_mut().zip(gd.chunks(time)) {
                        *d = row.iter().copied().sum();
                    }
                    accumulate(grads, *b, db);
                }
                if self.ng(*x) {
                    let mut dcols = vec![T::zero(); cin * k * time];
                    T::gemm(cin * k, cout, time, T::one(), self.value(*w).data(), true, gd, false, T::zero(), &mut dcols);
                    let dx = col2im(&dcols, cin, time, k);
                    accumulate(grads, *x, Tensor::from_vec(&[cin, time], dx).expect("conv1d dx shape"));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (gv, &idx) in gd.iter().zip(argmax) {
                    dx.data_mut()[idx] += *gv;
                }
                accumulate(grads, *x, dx);
            }
            Op::Reshape { x } => {
                let dx = g.clone().reshaped(self.value(*x).shape()).expect("reshape grad");
                accumulate(grads, *x, dx);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.value(*x).matrix_dims();
                let len = node.value.matrix_dims().1;
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for r in 0..rows {
                    dx.data_mut()[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                accumulate(grads, *x, dx);
            }
            Op::SliceRow { x, row } => {
                let cols = self.value(*x).matrix_dims().1;
                let mut dx = Tensor::zeros(self.value(*x).shape());
                dx.data_mut()[row * cols..(row + 1) * cols].copy_from_slice(gd);
                accumulate(grads, *x, dx);
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let scale = T::from_f64(2.0) * gd[0] / T::from_f64(p.len() as f64);
                let data = p.iter().zip(target).map(|(a, b)| scale * (*a - *b)).collect();
                let dx = Tensor::from_vec(self.value(*pred).shape(), data).expect("mse grad");
                accumulate(grads, *pred, dx);
            }
            Op::BoneLength { pred, dpred } => {
                let data = dpred.iter().map(|v| *v * gd[0]).collect();
                let dx = Tensor::from_vec(self.value(*pred).shape(), data).expect("bll grad");
                accumulate(grads, *pred, dx);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn elu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v.exp() - T::one()
    }
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Normalises `row` in place and returns `1 / sqrt(var + eps)`.
pub fn layer_norm_in_place<T: Scalar>(row: &mut [T]) -> T {
    let n = T::from_f64(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
    let inv = T::one() / (var + T::from_f64(LAYER_NORM_EPS)).sqrt();
    for v in row.iter_mut() {
        *v = (*v - mean) * inv;
    }
    inv
}

fn im2col<T: Scalar>(x: &[T], cin: usize, time: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let mut cols = vec![T::zero(); cin * k * time];
    for c in 0..cin {
        let src = &x[c * time..(c + 1) * time];
        for j in 0..k {
            let dst = &mut cols[(c * k + j) * time..(c * k + j + 1) * time];
            // output t reads input t + j - pad
            let lo = pad.saturating_sub(j);
            let hi = (time + pad).saturating_sub(j).min(time);
            if lo < hi {
                dst[lo..hi].copy_from_slice(&src[lo + j - pad..hi + j - pad]);
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], cin: usize, time: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let mut x = vec![T::zero(); cin * time];
    for c in 0..cin {
        for j in 0..k {
            let src = &cols[(c * k + j) * time..(c * k + j + 1) * time];
            let lo = pad.saturating_sub(j);
            let hi = (time + pad).saturating_sub(j).min(time);
            for t in lo..hi {
                x[c * time + t + j - pad] += src[t];
            }
        }
    }
    x
}
