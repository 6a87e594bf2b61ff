//! Valid (no padding) 1D convolution with stride 1.
//!
//! Sequences are flat row-major `[position][channel]` slices. Each filter
//! spans all input channels; the output at position `n` is
//! `act(b + sum_m sum_c w[f,m,c] * x[n+m,c])`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, NeuralError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    /// `filters x kernel x in_channels`, flat with `((f * kernel) + m) * in_channels + c`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub filters: usize,
    pub kernel: usize,
    pub in_channels: usize,
    pub activation: Activation,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(filters: usize, kernel: usize, in_channels: usize, activation: Activation) -> Self {
        Self {
            weights: vec![T::zero(); filters * kernel * in_channels],
            bias: vec![T::zero(); filters],
            filters,
            kernel,
            in_channels,
            activation,
        }
    }

    /// Fan-in scaled uniform init, zero biases.
    pub fn init(filters: usize, kernel: usize, in_channels: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Self::zeros(filters, kernel, in_channels, activation);
        let scale = 1.0 / ((kernel * in_channels) as f64).sqrt();
        for w in layer.weights.iter_mut() {
            *w = T::of((rng.gen::<f64>() * 2.0 - 1.0) * scale);
        }
        layer
    }

    pub fn out_len(&self, in_len: usize) -> Result<usize, NeuralError> {
        if in_len < self.kernel {
            return Err(NeuralError::SequenceTooShort { len: in_len, kernel: self.kernel });
        }
        Ok(in_len - self.kernel + 1)
    }

    /// Forward pass; returns activations, `out_len x filters` row-major.
    pub fn forward(&self, input: &[T], in_len: usize) -> Result<Vec<T>, NeuralError> {
        if input.len() != in_len * self.in_channels {
            return Err(NeuralError::ShapeMismatch(format!(
                "conv input has {} values, expected {} x {}",
                input.len(),
                in_len,
                self.in_channels
            )));
        }
        let out_len = self.out_len(in_len)?;
        let cin = self.in_channels;
        let mut out = vec![T::zero(); out_len * self.filters];
        for n in 0..out_len {
            let out_row = &mut out[n * self.filters..(n + 1) * self.filters];
            for (f, slot) in out_row.iter_mut().enumerate() {
                let mut s = self.bias[f];
                let wbase = f * self.kernel * cin;
                for m in 0..self.kernel {
                    let x = &input[(n + m) * cin..(n + m + 1) * cin];
                    let w = &self.weights[wbase + m * cin..wbase + (m + 1) * cin];
                    for (&wv, &xv) in w.iter().zip(x) {
                        s += wv * xv;
                    }
                }
                *slot = self.activation.apply(s);
            }
        }
        Ok(out)
    }

    /// Backward pass. `acts` are this layer's forward outputs, `d_acts` the
    /// gradient w.r.t. them. Parameter gradients accumulate into `grads`;
    /// the input gradient accumulates into `d_input`.
    pub fn backward(
        &self,
        input: &[T],
        acts: &[T],
        d_acts: &[T],
        grads: &mut ConvLayer<T>,
        d_input: &mut [T],
    ) {
        let cin = self.in_channels;
        let out_len = acts.len() / self.filters;
        for n in 0..out_len {
            for f in 0..self.filters {
                let a = acts[n * self.filters + f];
                let dy = d_acts[n * self.filters + f] * self.activation.grad_from_output(a);
                if dy == T::zero() {
                    continue;
                }
                grads.bias[f] += dy;
                let wbase = f * self.kernel * cin;
                for m in 0..self.kernel {
                    let x = &input[(n + m) * cin..(n + m + 1) * cin];
                    let gw = &mut grads.weights[wbase + m * cin..wbase + (m + 1) * cin];
                    for (g, &xv) in gw.iter_mut().zip(x) {
                        *g += dy * xv;
                    }
                    let w = &self.weights[wbase + m * cin..wbase + (m + 1) * cin];
                    let dx = &mut d_input[(n + m) * cin..(n + m + 1) * cin];
                    for (d, &wv) in dx.iter_mut().zip(w) {
                        *d += dy * wv;
                    }
                }
            }
        }
    }
}

/// Single-layer convolution as a standalone operation.
pub fn conv1d_forward<T: Scalar>(input: &[T], in_len: usize, params: &ConvLayer<T>) -> Result<Vec<T>, NeuralError> {
    params.forward(input, in_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: &[f64], b: f64, act: Activation) -> ConvLayer<f64> {
        let mut l = ConvLayer::zeros(1, w.len(), 1, act);
        l.weights.copy_from_slice(w);
        l.bias[0] = b;
        l
    }

    #[test]
    fn hand_convolution() {
        let l = layer(&[1.0, 0.0, -1.0], 0.0, Activation::Identity);
        let out = conv1d_forward(&[1.0, 2.0, 3.0, 4.0], 4, &l).unwrap();
        assert_eq!(out, vec![-2.0, -2.0]);
    }

    #[test]
    fn zero_weights_give_tanh_of_zero() {
        let l = layer(&[0.0, 0.0, 0.0], 0.0, Activation::Tanh);
        let out = l.forward(&[5.0, -1.0, 2.0, 0.5, 3.0], 5).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_kernel_is_identity_prefix() {
        let l = layer(&[1.0, 0.0, 0.0, 0.0], 0.0, Activation::Identity);
        let x = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0];
        let out = l.forward(&x, 7).unwrap();
        assert_eq!(out, x[..4].to_vec());
    }

    #[test]
    fn too_short_sequence_is_rejected() {
        let l = layer(&[1.0, 1.0, 1.0], 0.0, Activation::Identity);
        assert!(matches!(
            l.forward(&[1.0, 2.0], 2),
            Err(NeuralError::SequenceTooShort { len: 2, kernel: 3 })
        ));
    }

    #[test]
    fn multi_channel_shapes() {
        // 2 filters, kernel 2, 3 input channels over 4 positions -> 3 x 2 output.
        let mut rng = crate::rng::stream(3, "conv-test", 0);
        let l = ConvLayer::<f64>::init(2, 2, 3, Activation::Tanh, &mut rng);
        let x: Vec<f64> = (0..12).map(|i| (i as f64) * 0.1).collect();
        let out = l.forward(&x, 4).unwrap();
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|v| v.is_finite() && v.abs() < 1.0));
    }
}
