//! LSTM cell and backpropagation through time.
//!
//! Gate equations, with `z_t = [h_{t-1}; x_t]`:
//!
//! ```text
//! f_t = sigma(W_f z_t + b_f)        i_t = sigma(W_i z_t + b_i)
//! g_t = tanh (W_c z_t + b_c)        o_t = sigma(W_o z_t + b_o)
//! c_t = f_t * c_{t-1} + i_t * g_t   h_t = o_t * tanh(c_t)
//! ```

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Mat, NeuralError};
use crate::scalar::Scalar;

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    pub w_f: Mat<T>,
    pub w_i: Mat<T>,
    pub w_c: Mat<T>,
    pub w_o: Mat<T>,
    pub b_f: Vec<T>,
    pub b_i: Vec<T>,
    pub b_c: Vec<T>,
    pub b_o: Vec<T>,
    pub units: usize,
    pub input_size: usize,
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(units: usize, input_size: usize) -> Self {
        let z = || Mat::zeros(units, units + input_size);
        Self {
            w_f: z(),
            w_i: z(),
            w_c: z(),
            w_o: z(),
            b_f: vec![T::zero(); units],
            b_i: vec![T::zero(); units],
            b_c: vec![T::zero(); units],
            b_o: vec![T::zero(); units],
            units,
            input_size,
        }
    }

    /// Fan-in scaled uniform weights, zero biases except the forget gate
    /// bias at +1 to ease gradient flow early in training.
    pub fn init(units: usize, input_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(units, input_size);
        let scale = 1.0 / ((units + input_size) as f64).sqrt();
        for m in [&mut p.w_f, &mut p.w_i, &mut p.w_c, &mut p.w_o] {
            for w in m.data.iter_mut() {
                *w = T::of((rng.gen::<f64>() * 2.0 - 1.0) * scale);
            }
        }
        for b in p.b_f.iter_mut() {
            *b = T::one();
        }
        p
    }

    /// `W [h; x] + b` without materializing the concatenation.
    #[inline]
    fn gate_preact(&self, w: &Mat<T>, b: &[T], h: &[T], x: &[T], out: &mut [T]) {
        let u = self.units;
        for (r, slot) in out.iter_mut().enumerate() {
            let row = w.row(r);
            let mut s = b[r];
            for (&wv, &hv) in row[..u].iter().zip(h) {
                s += wv * hv;
            }
            for (&wv, &xv) in row[u..].iter().zip(x) {
                s += wv * xv;
            }
            *slot = s;
        }
    }
}

/// One cell update. Returns `(h_t, c_t)`.
pub fn lstm_step<T: Scalar>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    params: &LstmParams<T>,
) -> Result<(Vec<T>, Vec<T>), NeuralError> {
    let u = params.units;
    if x.len() != params.input_size || h_prev.len() != u || c_prev.len() != u {
        return Err(NeuralError::ShapeMismatch(format!(
            "lstm_step got x={}, h={}, c={} for units={} input={}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            u,
            params.input_size
        )));
    }
    let mut f = vec![T::zero(); u];
    let mut i = vec![T::zero(); u];
    let mut g = vec![T::zero(); u];
    let mut o = vec![T::zero(); u];
    params.gate_preact(&params.w_f, &params.b_f, h_prev, x, &mut f);
    params.gate_preact(&params.w_i, &params.b_i, h_prev, x, &mut i);
    params.gate_preact(&params.w_c, &params.b_c, h_prev, x, &mut g);
    params.gate_preact(&params.w_o, &params.b_o, h_prev, x, &mut o);
    let mut h = vec![T::zero(); u];
    let mut c = vec![T::zero(); u];
    for k in 0..u {
        let fk = sigmoid(f[k]);
        let ik = sigmoid(i[k]);
        let gk = g[k].tanh();
        let ok = sigmoid(o[k]);
        c[k] = fk * c_prev[k] + ik * gk;
        h[k] = ok * c[k].tanh();
    }
    Ok((h, c))
}

/// Everything the backward pass needs, for one sequence.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    /// `(steps + 1) x units`; row 0 is the initial zero state.
    pub h: Vec<T>,
    pub c: Vec<T>,
    pub f: Vec<T>,
    pub i: Vec<T>,
    pub g: Vec<T>,
    pub o: Vec<T>,
    pub tanh_c: Vec<T>,
    pub steps: usize,
}

impl<T: Scalar> LstmCache<T> {
    pub fn h_at(&self, t: usize) -> &[T] {
        let u = self.h.len() / (self.steps + 1);
        &self.h[t * u..(t + 1) * u]
    }

    /// The hidden sequence h_1..h_T as a flat `steps x units` slice.
    pub fn hidden_seq(&self) -> &[T] {
        let u = self.h.len() / (self.steps + 1);
        &self.h[u..]
    }

    pub fn last_h(&self) -> &[T] {
        self.h_at(self.steps)
    }
}

impl<T: Scalar> LstmParams<T> {
    /// Run the cell over `steps` inputs (`inputs` is flat `steps x input_size`),
    /// starting from zero states, caching gate activations.
    pub fn forward_seq(&self, inputs: &[T], steps: usize) -> LstmCache<T> {
        let u = self.units;
        debug_assert_eq!(inputs.len(), steps * self.input_size);
        let mut cache = LstmCache {
            h: vec![T::zero(); (steps + 1) * u],
            c: vec![T::zero(); (steps + 1) * u],
            f: vec![T::zero(); steps * u],
            i: vec![T::zero(); steps * u],
            g: vec![T::zero(); steps * u],
            o: vec![T::zero(); steps * u],
            tanh_c: vec![T::zero(); steps * u],
            steps,
        };
        let mut pre = vec![T::zero(); u];
        for t in 0..steps {
            let x = &inputs[t * self.input_size..(t + 1) * self.input_size];
            let (h_prev, h_rest) = cache.h.split_at_mut((t + 1) * u);
            let h_prev = &h_prev[t * u..];
            let h_t = &mut h_rest[..u];
            let (c_prev, c_rest) = cache.c.split_at_mut((t + 1) * u);
            let c_prev = &c_prev[t * u..];
            let c_t = &mut c_rest[..u];

            self.gate_preact(&self.w_f, &self.b_f, h_prev, x, &mut pre);
            for (slot, &p) in cache.f[t * u..(t + 1) * u].iter_mut().zip(pre.iter()) {
                *slot = sigmoid(p);
            }
            self.gate_preact(&self.w_i, &self.b_i, h_prev, x, &mut pre);
            for (slot, &p) in cache.i[t * u..(t + 1) * u].iter_mut().zip(pre.iter()) {
                *slot = sigmoid(p);
            }
            self.gate_preact(&self.w_c, &self.b_c, h_prev, x, &mut pre);
            for (slot, &p) in cache.g[t * u..(t + 1) * u].iter_mut().zip(pre.iter()) {
                *slot = p.tanh();
            }
            self.gate_preact(&self.w_o, &self.b_o, h_prev, x, &mut pre);
            for (slot, &p) in cache.o[t * u..(t + 1) * u].iter_mut().zip(pre.iter()) {
                *slot = sigmoid(p);
            }
            for k in 0..u {
                let idx = t * u + k;
                c_t[k] = cache.f[idx] * c_prev[k] + cache.i[idx] * cache.g[idx];
                cache.tanh_c[idx] = c_t[k].tanh();
                h_t[k] = cache.o[idx] * cache.tanh_c[idx];
            }
        }
        cache
    }

    /// Backpropagation through time from zero final state gradients.
    ///
    /// `d_hidden` holds per-step gradients w.r.t. h_t (flat `steps x units`,
    /// e.g. from attention); `d_h_last` is an extra gradient on h_T.
    /// Parameter gradients accumulate into `grads`; input gradients
    /// accumulate into `d_inputs` (flat `steps x input_size`).
    pub fn backward_seq(
        &self,
        inputs: &[T],
        cache: &LstmCache<T>,
        d_hidden: Option<&[T]>,
        d_h_last: Option<&[T]>,
        grads: &mut LstmParams<T>,
        d_inputs: &mut [T],
    ) {
        let u = self.units;
        let steps = cache.steps;
        let mut dh_next = vec![T::zero(); u];
        let mut dc_next = vec![T::zero(); u];
        let mut dh = vec![T::zero(); u];
        let mut af = vec![T::zero(); u];
        let mut ai = vec![T::zero(); u];
        let mut ag = vec![T::zero(); u];
        let mut ao = vec![T::zero(); u];
        if let Some(extra) = d_h_last {
            for (d, &e) in dh_next.iter_mut().zip(extra) {
                *d = e;
            }
        }
        for t in (0..steps).rev() {
            let idx = t * u;
            let x = &inputs[t * self.input_size..(t + 1) * self.input_size];
            let h_prev = cache.h_at(t);
            let c_prev = &cache.c[t * u..(t + 1) * u];
            for k in 0..u {
                dh[k] = dh_next[k];
            }
            if let Some(ds) = d_hidden {
                for k in 0..u {
                    dh[k] += ds[idx + k];
                }
            }
            for k in 0..u {
                let f = cache.f[idx + k];
                let i = cache.i[idx + k];
                let g = cache.g[idx + k];
                let o = cache.o[idx + k];
                let tc = cache.tanh_c[idx + k];
                let d_o = dh[k] * tc;
                let dc = dh[k] * o * (T::one() - tc * tc) + dc_next[k];
                let d_f = dc * c_prev[k];
                let d_i = dc * g;
                let d_g = dc * i;
                dc_next[k] = dc * f;
                af[k] = d_f * f * (T::one() - f);
                ai[k] = d_i * i * (T::one() - i);
                ag[k] = d_g * (T::one() - g * g);
                ao[k] = d_o * o * (T::one() - o);
            }
            let dx = &mut d_inputs[t * self.input_size..(t + 1) * self.input_size];
            for k in 0..u {
                dh_next[k] = T::zero();
            }
            for (w, gw, gb, a) in [
                (&self.w_f, &mut grads.w_f, &mut grads.b_f, &af),
                (&self.w_i, &mut grads.w_i, &mut grads.b_i, &ai),
                (&self.w_c, &mut grads.w_c, &mut grads.b_c, &ag),
                (&self.w_o, &mut grads.w_o, &mut grads.b_o, &ao),
            ] {
                for (r, &ar) in a.iter().enumerate() {
                    if ar == T::zero() {
                        continue;
                    }
                    gb[r] += ar;
                    let grow = gw.row_mut(r);
                    for (gslot, &hv) in grow[..u].iter_mut().zip(h_prev) {
                        *gslot += ar * hv;
                    }
                    for (gslot, &xv) in grow[u..].iter_mut().zip(x.iter()) {
                        *gslot += ar * xv;
                    }
                    let wrow = w.row(r);
                    for (d, &wv) in dh_next.iter_mut().zip(&wrow[..u]) {
                        *d += ar * wv;
                    }
                    for (d, &wv) in dx.iter_mut().zip(&wrow[u..]) {
                        *d += ar * wv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_params_halve_cell_state() {
        let p = LstmParams::<f64>::zeros(3, 2);
        let x = [0.4, -0.2];
        let h0 = [0.0; 3];
        let c0 = [0.0; 3];
        let (h, c) = lstm_step(&x, &h0, &c0, &p).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 0.0));

        let c_prev = [0.8, -0.4, 1.2];
        let (h2, c2) = lstm_step(&x, &h0, &c_prev, &p).unwrap();
        for k in 0..3 {
            assert_relative_eq!(c2[k], 0.5 * c_prev[k], max_relative = 1e-12);
            assert_relative_eq!(h2[k], 0.5 * (0.5 * c_prev[k]).tanh(), max_relative = 1e-12);
        }
    }

    #[test]
    fn gate_ranges_hold_for_random_params() {
        let mut rng = crate::rng::stream(1, "lstm-test", 0);
        let p = LstmParams::<f64>::init(5, 4, &mut rng);
        let xs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let cache = p.forward_seq(&xs, 3);
        for v in cache.f.iter().chain(&cache.i).chain(&cache.o) {
            assert!(*v > 0.0 && *v < 1.0);
        }
        for t in 1..=3 {
            for &h in cache.h_at(t) {
                assert!(h.abs() < 1.0);
            }
        }
    }

    #[test]
    fn step_matches_forward_seq() {
        let mut rng = crate::rng::stream(2, "lstm-test", 1);
        let p = LstmParams::<f64>::init(4, 3, &mut rng);
        let xs: Vec<f64> = (0..9).map(|i| (i as f64) * 0.25 - 1.0).collect();
        let cache = p.forward_seq(&xs, 3);
        let mut h = vec![0.0; 4];
        let mut c = vec![0.0; 4];
        for t in 0..3 {
            let (h2, c2) = lstm_step(&xs[t * 3..(t + 1) * 3], &h, &c, &p).unwrap();
            h = h2;
            c = c2;
        }
        for (a, b) in h.iter().zip(cache.last_h()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        for (a, b) in c.iter().zip(&cache.c[12..16]) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = LstmParams::<f64>::zeros(3, 2);
        assert!(lstm_step(&[1.0], &[0.0; 3], &[0.0; 3], &p).is_err());
        assert!(lstm_step(&[1.0, 2.0], &[0.0; 2], &[0.0; 3], &p).is_err());
    }
}
