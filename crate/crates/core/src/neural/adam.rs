//! Adam with bias correction. Frozen parameter groups receive neither
//! weight updates nor moment updates.

use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Optimizer step count (shared across groups).
    pub step: u64,
    /// First/second moments, one vector per parameter tensor in visit order.
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    fn ensure_shapes(&mut self, params: &ModelParams<T>) {
        if !self.m.is_empty() {
            return;
        }
        for (_, tensor) in params.tensors() {
            self.m.push(vec![T::zero(); tensor.len()]);
            self.v.push(vec![T::zero(); tensor.len()]);
        }
    }

    /// One update from accumulated gradients (same tensor layout as the
    /// parameters). Skips tensors whose group is frozen.
    pub fn apply(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.ensure_shapes(params);
        self.step += 1;
        let lr = T::of(self.learning_rate);
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let eps = T::of(self.epsilon);
        let bc1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let one = T::one();

        let frozen = params.frozen.clone();
        for (idx, ((group, tensor), (_, g))) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            if frozen.contains(&group) {
                continue;
            }
            let mt = &mut self.m[idx];
            let vt = &mut self.v[idx];
            for k in 0..tensor.len() {
                let gk = g[k];
                mt[k] = b1 * mt[k] + (one - b1) * gk;
                vt[k] = b2 * vt[k] + (one - b2) * gk * gk;
                let mhat = mt[k] / bc1;
                let vhat = vt[k] / bc2;
                tensor[k] = tensor[k] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
