use std::collections::HashMap;

use crate::params::{Gradients, ParamId, ParameterStore};
use crate::scalar::Scalar;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<ParamId, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParameterStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        for (id, g) in grads.iter() {
            let param = store.get_mut(id);
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            for (((p, &gi), mi), vi) in param.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = mi.as_f64() / c1;
                let vhat = vi.as_f64() / c2;
                *p -= T::of(self.lr * mhat / (vhat.sqrt() + self.eps));
            }
        }
    }
}

pub fn sgd_step<T: Scalar>(store: &mut ParameterStore<T>, grads: &Gradients<T>, lr: f64) {
    let lr = T::of(lr);
    for (id, g) in grads.iter() {
        for (p, &gi) in store.get_mut(id).data_mut().iter_mut().zip(g.data()) {
            *p -= lr * gi;
        }
    }
}
