use super::{ParamId, ParamStore, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Self::default()
        }
    }

    /// Bias-corrected update of every parameter, then zeroes the gradients.
    pub fn step<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let ids: Vec<ParamId> = store.ids().collect();
        self.step_only(store, &ids);
    }

    /// Updates only `ids`; gradients of all parameters are zeroed.
    pub fn step_only<T: Scalar>(&self, store: &mut ParamStore<T>, ids: &[ParamId]) {
        for &id in ids {
            let p = store.get_mut(id);
            p.step_count += 1;
            let t = p.step_count as i32;
            let b1 = T::from_f64(self.beta1);
            let b2 = T::from_f64(self.beta2);
            let one = T::one();
            let c1 = T::from_f64(1.0 - self.beta1.powi(t));
            let c2 = T::from_f64(1.0 - self.beta2.powi(t));
            let lr = T::from_f64(self.lr);
            let eps = T::from_f64(self.eps);
            let grad = p.grad.data().to_vec();
            let m = p.adam_m.data_mut();
            for (mv, g) in m.iter_mut().zip(&grad) {
                *mv = b1 * *mv + (one - b1) * *g;
            }
            let v = p.adam_v.data_mut();
            for (vv, g) in v.iter_mut().zip(&grad) {
                *vv = b2 * *vv + (one - b2) * *g * *g;
            }
            let (m, v) = (p.adam_m.data().to_vec(), p.adam_v.data().to_vec());
            for ((w, mv), vv) in p.value.data_mut().iter_mut().zip(&m).zip(&v) {
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        store.zero_grads();
    }
}
