//! Additive attention over a hidden-state sequence.
//!
//! Scores `e_t = v_a^T tanh(W_a h_t)` are softmax-normalized (with max
//! subtraction for stability) into weights `alpha_t`, and the context is
//! `c = sum_t alpha_t h_t`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Mat, NeuralError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    /// `score_dim x attended_dim` transform.
    pub w_a: Mat<T>,
    /// `score_dim` weight vector.
    pub v_a: Vec<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn zeros(score_dim: usize, attended_dim: usize) -> Self {
        Self { w_a: Mat::zeros(score_dim, attended_dim), v_a: vec![T::zero(); score_dim] }
    }

    pub fn init(score_dim: usize, attended_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(score_dim, attended_dim);
        let ws = 1.0 / (attended_dim as f64).sqrt();
        for w in p.w_a.data.iter_mut() {
            *w = T::of((rng.gen::<f64>() * 2.0 - 1.0) * ws);
        }
        let vs = 1.0 / (score_dim as f64).sqrt();
        for v in p.v_a.iter_mut() {
            *v = T::of((rng.gen::<f64>() * 2.0 - 1.0) * vs);
        }
        p
    }

    pub fn attended_dim(&self) -> usize {
        self.w_a.cols
    }

    pub fn score_dim(&self) -> usize {
        self.v_a.len()
    }
}

/// Numerically stable softmax.
pub fn softmax_stable<T: Scalar>(scores: &[T]) -> Vec<T> {
    let max = scores.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = scores.iter().map(|&e| (e - max).exp()).collect();
    let sum: T = out.iter().cloned().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttnCache<T> {
    /// `steps x score_dim` tanh-transformed states.
    pub tau: Vec<T>,
    pub alphas: Vec<T>,
    pub context: Vec<T>,
}

impl<T: Scalar> AttentionParams<T> {
    /// `hidden` is flat `steps x attended_dim`.
    pub fn forward(&self, hidden: &[T], steps: usize) -> AttnCache<T> {
        let d = self.attended_dim();
        let a = self.score_dim();
        debug_assert_eq!(hidden.len(), steps * d);
        let mut tau = vec![T::zero(); steps * a];
        let mut scores = vec![T::zero(); steps];
        let mut q = vec![T::zero(); a];
        for t in 0..steps {
            let h = &hidden[t * d..(t + 1) * d];
            self.w_a.mul_vec_into(h, &mut q);
            let mut e = T::zero();
            for (k, &qv) in q.iter().enumerate() {
                let tv = qv.tanh();
                tau[t * a + k] = tv;
                e += self.v_a[k] * tv;
            }
            scores[t] = e;
        }
        let alphas = softmax_stable(&scores);
        let mut context = vec![T::zero(); d];
        for t in 0..steps {
            let h = &hidden[t * d..(t + 1) * d];
            let w = alphas[t];
            for (c, &hv) in context.iter_mut().zip(h) {
                *c += w * hv;
            }
        }
        AttnCache { tau, alphas, context }
    }

    /// Accumulates parameter gradients into `grads` and per-step hidden
    /// gradients into `d_hidden` (flat `steps x attended_dim`).
    pub fn backward(
        &self,
        hidden: &[T],
        cache: &AttnCache<T>,
        d_context: &[T],
        grads: &mut AttentionParams<T>,
        d_hidden: &mut [T],
    ) {
        let d = self.attended_dim();
        let a = self.score_dim();
        let steps = cache.alphas.len();

        // context = sum_t alpha_t h_t
        let mut d_alpha = vec![T::zero(); steps];
        for t in 0..steps {
            let h = &hidden[t * d..(t + 1) * d];
            let mut s = T::zero();
            for (&dc, &hv) in d_context.iter().zip(h) {
                s += dc * hv;
            }
            d_alpha[t] = s;
            let w = cache.alphas[t];
            let dh = &mut d_hidden[t * d..(t + 1) * d];
            for (slot, &dc) in dh.iter_mut().zip(d_context) {
                *slot += w * dc;
            }
        }

        // softmax backward: de_t = alpha_t (d_alpha_t - sum_k alpha_k d_alpha_k)
        let mut dot = T::zero();
        for (&al, &da) in cache.alphas.iter().zip(&d_alpha) {
            dot += al * da;
        }
        let mut dq = vec![T::zero(); a];
        for t in 0..steps {
            let de = cache.alphas[t] * (d_alpha[t] - dot);
            if de == T::zero() {
                continue;
            }
            let tau = &cache.tau[t * a..(t + 1) * a];
            for k in 0..a {
                grads.v_a[k] += de * tau[k];
                dq[k] = de * self.v_a[k] * (T::one() - tau[k] * tau[k]);
            }
            let h = &hidden[t * d..(t + 1) * d];
            grads.w_a.add_outer(&dq, h);
            let dh = &mut d_hidden[t * d..(t + 1) * d];
            self.w_a.tr_mul_vec_add(&dq, dh);
        }
    }
}

/// Standalone attention operation: context vector plus weights.
pub fn attention_forward<T: Scalar>(
    hidden: &[T],
    steps: usize,
    params: &AttentionParams<T>,
) -> Result<(Vec<T>, Vec<T>), NeuralError> {
    if steps == 0 || hidden.len() != steps * params.attended_dim() {
        return Err(NeuralError::ShapeMismatch(format!(
            "attention over {} values with {} steps of dim {}",
            hidden.len(),
            steps,
            params.attended_dim()
        )));
    }
    let cache = params.forward(hidden, steps);
    Ok((cache.context, cache.alphas))
}
