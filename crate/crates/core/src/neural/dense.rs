//! Fully connected layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, Mat};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `out x in`.
    pub w: Mat<T>,
    pub b: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(out: usize, input: usize, activation: Activation) -> Self {
        Self { w: Mat::zeros(out, input), b: vec![T::zero(); out], activation }
    }

    pub fn init(out: usize, input: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let mut l = Self::zeros(out, input, activation);
        let scale = 1.0 / (input as f64).sqrt();
        for w in l.w.data.iter_mut() {
            *w = T::of((rng.gen::<f64>() * 2.0 - 1.0) * scale);
        }
        l
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut out = self.b.clone();
        for (r, slot) in out.iter_mut().enumerate() {
            let row = self.w.row(r);
            let mut s = *slot;
            for (&wv, &xv) in row.iter().zip(x) {
                s += wv * xv;
            }
            *slot = self.activation.apply(s);
        }
        out
    }

    /// `acts` is the forward output; gradients accumulate into `grads` and `d_x`.
    pub fn backward(&self, x: &[T], acts: &[T], d_acts: &[T], grads: &mut DenseLayer<T>, d_x: &mut [T]) {
        for (r, (&a, &da)) in acts.iter().zip(d_acts).enumerate() {
            let dz = da * self.activation.grad_from_output(a);
            if dz == T::zero() {
                continue;
            }
            grads.b[r] += dz;
            let grow = grads.w.row_mut(r);
            for (g, &xv) in grow.iter_mut().zip(x) {
                *g += dz * xv;
            }
            let wrow = self.w.row(r);
            for (d, &wv) in d_x.iter_mut().zip(wrow) {
                *d += dz * wv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_layer_is_affine() {
        let mut l = DenseLayer::<f64>::zeros(2, 3, Activation::Identity);
        l.w.data.copy_from_slice(&[1.0, 0.0, 2.0, -1.0, 1.0, 0.5]);
        l.b.copy_from_slice(&[0.5, -0.5]);
        let y = l.forward(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(y[0], 1.0 + 6.0 + 0.5);
        assert_relative_eq!(y[1], -1.0 + 2.0 + 1.5 - 0.5);
    }

    #[test]
    fn tanh_saturates() {
        let mut l = DenseLayer::<f64>::zeros(1, 1, Activation::Tanh);
        l.w.data[0] = 100.0;
        let y = l.forward(&[1.0]);
        assert!(y[0] > 0.999999 && y[0] <= 1.0);
    }
}
