//! Model assembly: parameter container, forward passes, backpropagation
//! and the Adam training step.
//!
//! The input is one flat `input_len` sequence per sample (a single channel).
//! A shared conv stack feeds the recurrent part, whose wiring depends on
//! [`ArchVariant`]; branch outputs are concatenated, passed through dropout
//! and two dense layers, and softmaxed into two class probabilities.
//!
//! Work is processed in fixed-size chunks. Within a chunk the parallel
//! branches may run concurrently; every reduction happens in fixed branch
//! and sample order, so concurrent and sequential execution produce
//! bit-identical results.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::AdamState;
use super::attention::{AttnCache, AttentionParams};
use super::conv::ConvLayer;
use super::dense::DenseLayer;
use super::lstm::{LstmCache, LstmParams};
use super::{Activation, ArchVariant, Combine, ModelArch, NeuralError, ParamGroup, NUM_CLASSES};
use crate::event::Label;
use crate::rng::stream;
use crate::scalar::Scalar;

const CHUNK: usize = 128;

/// Whether the parallel branches run on the thread pool or inline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchExec {
    Sequential,
    Parallel,
}

/// Full parameter set with freeze markers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ModelArch,
    pub input_len: usize,
    pub conv: Vec<ConvLayer<T>>,
    pub lstms: Vec<LstmParams<T>>,
    pub attns: Vec<AttentionParams<T>>,
    pub dense_hidden: DenseLayer<T>,
    pub dense_out: DenseLayer<T>,
    pub frozen: BTreeSet<ParamGroup>,
}

impl<T: Scalar> ModelParams<T> {
    /// Build and initialize a model for `input_len`-long input sequences.
    pub fn new(arch: ModelArch, input_len: usize, seed: u64) -> Result<Self, NeuralError> {
        arch.validate()?;
        if input_len == 0 {
            return Err(NeuralError::ShapeMismatch("input_len must be positive".into()));
        }

        let mut conv = Vec::new();
        if arch.variant != ArchVariant::LstmOnly {
            let mut len = input_len;
            for li in 0..arch.conv_depth {
                if len < arch.conv_kernel {
                    return Err(NeuralError::SequenceTooShort { len, kernel: arch.conv_kernel });
                }
                let in_ch = if li == 0 { 1 } else { arch.conv_filters };
                let mut rng = stream(seed, "init-conv", li as u64);
                conv.push(ConvLayer::init(arch.conv_filters, arch.conv_kernel, in_ch, Activation::Tanh, &mut rng));
                len = len - arch.conv_kernel + 1;
            }
        }

        let (steps, channels) = seq_shape(&arch, input_len);
        if steps == 0 {
            return Err(NeuralError::SequenceTooShort { len: input_len, kernel: arch.conv_kernel });
        }

        let mut lstms = Vec::new();
        let mut attns = Vec::new();
        match arch.variant {
            ArchVariant::ParallelAttention => {
                for j in 0..arch.branches {
                    let mut rng = stream(seed, "init-lstm", j as u64);
                    lstms.push(LstmParams::init(arch.lstm_units, channels, &mut rng));
                    let adim = if arch.attention_dim == 0 { arch.lstm_units } else { arch.attention_dim };
                    let mut rng = stream(seed, "init-attn", j as u64);
                    attns.push(AttentionParams::init(adim, arch.lstm_units, &mut rng));
                }
            }
            ArchVariant::StackedSequential => {
                for j in 0..arch.branches {
                    let input = if j == 0 { channels } else { arch.lstm_units };
                    let mut rng = stream(seed, "init-lstm", j as u64);
                    lstms.push(LstmParams::init(arch.lstm_units, input, &mut rng));
                }
                let adim = if arch.attention_dim == 0 { arch.lstm_units } else { arch.attention_dim };
                let mut rng = stream(seed, "init-attn", 0);
                attns.push(AttentionParams::init(adim, arch.lstm_units, &mut rng));
            }
            ArchVariant::LstmOnly => {
                let mut rng = stream(seed, "init-lstm", 0);
                lstms.push(LstmParams::init(arch.lstm_units, 1, &mut rng));
            }
            ArchVariant::CnnAttentionOnly => {
                let adim = if arch.attention_dim == 0 { arch.conv_filters } else { arch.attention_dim };
                let mut rng = stream(seed, "init-attn", 0);
                attns.push(AttentionParams::init(adim, arch.conv_filters, &mut rng));
            }
        }

        let head_in = head_input_dim(&arch);
        let mut rng = stream(seed, "init-dense", 0);
        let dense_hidden = DenseLayer::init(arch.dense_hidden, head_in, Activation::Tanh, &mut rng);
        let mut rng = stream(seed, "init-dense", 1);
        let dense_out = DenseLayer::init(NUM_CLASSES, arch.dense_hidden, Activation::Identity, &mut rng);

        Ok(Self { arch, input_len, conv, lstms, attns, dense_hidden, dense_out, frozen: BTreeSet::new() })
    }

    /// Zero-initialized shell with the right shapes, e.g. for checkpoint
    /// loading.
    pub fn zeros(arch: ModelArch, input_len: usize) -> Result<Self, NeuralError> {
        let mut p = Self::new(arch, input_len, 0)?;
        for (_, t) in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = T::zero();
            }
        }
        Ok(p)
    }

    /// Same shapes, all tensors zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            for v in t.iter_mut() {
                *v = T::zero();
            }
        }
        z.frozen.clear();
        z
    }

    /// All parameter tensors in a fixed order with their group tags.
    pub fn tensors(&self) -> Vec<(ParamGroup, &[T])> {
        let mut out = Vec::new();
        for l in &self.conv {
            out.push((ParamGroup::Conv, l.weights.as_slice()));
            out.push((ParamGroup::Conv, l.bias.as_slice()));
        }
        for l in &self.lstms {
            out.push((ParamGroup::Lstm, l.w_f.data.as_slice()));
            out.push((ParamGroup::Lstm, l.w_i.data.as_slice()));
            out.push((ParamGroup::Lstm, l.w_c.data.as_slice()));
            out.push((ParamGroup::Lstm, l.w_o.data.as_slice()));
            out.push((ParamGroup::Lstm, l.b_f.as_slice()));
            out.push((ParamGroup::Lstm, l.b_i.as_slice()));
            out.push((ParamGroup::Lstm, l.b_c.as_slice()));
            out.push((ParamGroup::Lstm, l.b_o.as_slice()));
        }
        for a in &self.attns {
            out.push((ParamGroup::Attention, a.w_a.data.as_slice()));
            out.push((ParamGroup::Attention, a.v_a.as_slice()));
        }
        out.push((ParamGroup::Dense, self.dense_hidden.w.data.as_slice()));
        out.push((ParamGroup::Dense, self.dense_hidden.b.as_slice()));
        out.push((ParamGroup::Dense, self.dense_out.w.data.as_slice()));
        out.push((ParamGroup::Dense, self.dense_out.b.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [T])> {
        let mut out: Vec<(ParamGroup, &mut [T])> = Vec::new();
        for l in &mut self.conv {
            out.push((ParamGroup::Conv, l.weights.as_mut_slice()));
            out.push((ParamGroup::Conv, l.bias.as_mut_slice()));
        }
        for l in &mut self.lstms {
            out.push((ParamGroup::Lstm, l.w_f.data.as_mut_slice()));
            out.push((ParamGroup::Lstm, l.w_i.data.as_mut_slice()));
            out.push((ParamGroup::Lstm, l.w_c.data.as_mut_slice()));
            out.push((ParamGroup::Lstm, l.w_o.data.as_mut_slice()));
            out.push((ParamGroup::Lstm, l.b_f.as_mut_slice()));
            out.push((ParamGroup::Lstm, l.b_i.as_mut_slice()));
            out.push((ParamGroup::Lstm, l.b_c.as_mut_slice()));
            out.push((ParamGroup::Lstm, l.b_o.as_mut_slice()));
        }
        for a in &mut self.attns {
            out.push((ParamGroup::Attention, a.w_a.data.as_mut_slice()));
            out.push((ParamGroup::Attention, a.v_a.as_mut_slice()));
        }
        out.push((ParamGroup::Dense, self.dense_hidden.w.data.as_mut_slice()));
        out.push((ParamGroup::Dense, self.dense_hidden.b.as_mut_slice()));
        out.push((ParamGroup::Dense, self.dense_out.w.data.as_mut_slice()));
        out.push((ParamGroup::Dense, self.dense_out.b.as_mut_slice()));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Sequence shape entering the recurrent/attention part.
fn seq_shape(arch: &ModelArch, input_len: usize) -> (usize, usize) {
    match arch.variant {
        ArchVariant::LstmOnly => (input_len, 1),
        _ => {
            let mut len = input_len;
            for _ in 0..arch.conv_depth {
                len = len.saturating_sub(arch.conv_kernel - 1);
            }
            (len, arch.conv_filters)
        }
    }
}

fn branch_out_dim(arch: &ModelArch) -> usize {
    let base = match arch.variant {
        ArchVariant::CnnAttentionOnly => arch.conv_filters,
        _ => arch.lstm_units,
    };
    match (arch.variant, arch.combine) {
        (ArchVariant::LstmOnly, _) => base,
        (_, Combine::ContextAndLast) => 2 * base,
        (_, Combine::ContextOnly) => base,
    }
}

fn head_input_dim(arch: &ModelArch) -> usize {
    match arch.variant {
        ArchVariant::ParallelAttention => arch.branches * branch_out_dim(arch),
        _ => branch_out_dim(arch),
    }
}

/// Mark groups excluded from optimizer updates. The markers persist through
/// checkpointing.
pub fn set_frozen<T: Scalar>(params: &mut ModelParams<T>, groups: BTreeSet<ParamGroup>) {
    params.frozen = groups;
}

/// 0 / scale inverted-dropout mask; empty when the rate is zero.
fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    if rate <= 0.0 {
        return Vec::new();
    }
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect()
}

fn apply_mask<T: Scalar>(x: &[T], mask: &[T]) -> Vec<T> {
    if mask.is_empty() {
        x.to_vec()
    } else {
        x.iter().zip(mask).map(|(&v, &m)| v * m).collect()
    }
}

/// Per-chunk forward state.
struct ChunkFwd<T> {
    /// `[sample][conv layer]` activations.
    conv_acts: Vec<Vec<Vec<T>>>,
    /// `[branch or layer][sample]`.
    lstm: Vec<Vec<LstmCache<T>>>,
    /// `[attention site][sample]`.
    attn: Vec<Vec<AttnCache<T>>>,
    /// Head input per sample.
    flatten: Vec<Vec<T>>,
    mask1: Vec<Vec<T>>,
    hidden: Vec<Vec<T>>,
    mask2: Vec<Vec<T>>,
    logits: Vec<Vec<T>>,
}

fn concat_branch_out<T: Scalar>(ctx: &[T], last_h: &[T], combine: Combine) -> Vec<T> {
    match combine {
        Combine::ContextAndLast => {
            let mut out = Vec::with_capacity(ctx.len() + last_h.len());
            out.extend_from_slice(ctx);
            out.extend_from_slice(last_h);
            out
        }
        Combine::ContextOnly => ctx.to_vec(),
    }
}

/// One branch over every sample of a chunk; returns caches and outputs.
fn run_branch<T: Scalar>(
    lstm: &LstmParams<T>,
    attn: &AttentionParams<T>,
    seqs: &[&[T]],
    steps: usize,
    combine: Combine,
) -> (Vec<LstmCache<T>>, Vec<AttnCache<T>>, Vec<Vec<T>>) {
    let mut lcaches = Vec::with_capacity(seqs.len());
    let mut acaches = Vec::with_capacity(seqs.len());
    let mut outs = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let lc = lstm.forward_seq(seq, steps);
        let ac = attn.forward(lc.hidden_seq(), steps);
        outs.push(concat_branch_out(&ac.context, lc.last_h(), combine));
        lcaches.push(lc);
        acaches.push(ac);
    }
    (lcaches, acaches, outs)
}

fn forward_chunk<T: Scalar>(
    params: &ModelParams<T>,
    xs: &[&[T]],
    mut train_rng: Option<&mut ChaCha8Rng>,
    exec: BranchExec,
) -> Result<ChunkFwd<T>, NeuralError> {
    let n = xs.len();
    let arch = &params.arch;
    let (steps, _channels) = seq_shape(arch, params.input_len);

    for x in xs {
        if x.len() != params.input_len {
            return Err(NeuralError::ShapeMismatch(format!(
                "sample of length {}, model expects {}",
                x.len(),
                params.input_len
            )));
        }
    }

    // conv stack
    let mut conv_acts: Vec<Vec<Vec<T>>> = Vec::with_capacity(n);
    for x in xs {
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(params.conv.len());
        let mut len = params.input_len;
        for (li, layer) in params.conv.iter().enumerate() {
            let input: &[T] = if li == 0 { x } else { &acts[li - 1] };
            acts.push(layer.forward(input, len)?);
            len = layer.out_len(len)?;
        }
        conv_acts.push(acts);
    }

    let seq_of = |s: usize| -> &[T] {
        if params.conv.is_empty() {
            xs[s]
        } else {
            conv_acts[s].last().expect("conv stack non-empty").as_slice()
        }
    };

    let mut lstm: Vec<Vec<LstmCache<T>>> = Vec::new();
    let mut attn: Vec<Vec<AttnCache<T>>> = Vec::new();
    let mut flatten: Vec<Vec<T>> = Vec::with_capacity(n);

    match arch.variant {
        ArchVariant::ParallelAttention => {
            let seqs: Vec<&[T]> = (0..n).map(seq_of).collect();
            let results: Vec<(Vec<LstmCache<T>>, Vec<AttnCache<T>>, Vec<Vec<T>>)> = match exec {
                BranchExec::Parallel if arch.branches > 1 => params
                    .lstms
                    .par_iter()
                    .zip(params.attns.par_iter())
                    .map(|(lp, ap)| run_branch(lp, ap, &seqs, steps, arch.combine))
                    .collect(),
                _ => params
                    .lstms
                    .iter()
                    .zip(params.attns.iter())
                    .map(|(lp, ap)| run_branch(lp, ap, &seqs, steps, arch.combine))
                    .collect(),
            };
            let mut outs: Vec<Vec<Vec<T>>> = Vec::with_capacity(results.len());
            for (lc, ac, os) in results {
                lstm.push(lc);
                attn.push(ac);
                outs.push(os);
            }
            for s in 0..n {
                let mut flat = Vec::with_capacity(head_input_dim(arch));
                for branch_outs in &outs {
                    flat.extend_from_slice(&branch_outs[s]);
                }
                flatten.push(flat);
            }
        }
        ArchVariant::StackedSequential => {
            for l in 0..arch.branches {
                let mut layer_caches = Vec::with_capacity(n);
                for s in 0..n {
                    let input: &[T] = if l == 0 { seq_of(s) } else { lstm[l - 1][s].hidden_seq() };
                    layer_caches.push(params.lstms[l].forward_seq(input, steps));
                }
                lstm.push(layer_caches);
            }
            let last = arch.branches - 1;
            let mut acaches = Vec::with_capacity(n);
            for s in 0..n {
                let lc = &lstm[last][s];
                let ac = params.attns[0].forward(lc.hidden_seq(), steps);
                flatten.push(concat_branch_out(&ac.context, lc.last_h(), arch.combine));
                acaches.push(ac);
            }
            attn.push(acaches);
        }
        ArchVariant::LstmOnly => {
            let mut caches = Vec::with_capacity(n);
            for x in xs {
                let lc = params.lstms[0].forward_seq(x, params.input_len);
                flatten.push(lc.last_h().to_vec());
                caches.push(lc);
            }
            lstm.push(caches);
        }
        ArchVariant::CnnAttentionOnly => {
            let ch = arch.conv_filters;
            let mut acaches = Vec::with_capacity(n);
            for s in 0..n {
                let seq = seq_of(s);
                let ac = params.attns[0].forward(seq, steps);
                let last_row = &seq[(steps - 1) * ch..];
                flatten.push(concat_branch_out(&ac.context, last_row, arch.combine));
                acaches.push(ac);
            }
            attn.push(acaches);
        }
    }

    // head with optional dropout, sample order fixed
    let mut mask1 = Vec::with_capacity(n);
    let mut hidden = Vec::with_capacity(n);
    let mut mask2 = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    for s in 0..n {
        let (m1, m2) = match train_rng.as_deref_mut() {
            Some(rng) => (
                dropout_mask(flatten[s].len(), arch.dropout_lstm, rng),
                dropout_mask(arch.dense_hidden, arch.dropout_dense, rng),
            ),
            None => (Vec::new(), Vec::new()),
        };
        let flat_d = apply_mask(&flatten[s], &m1);
        let hid = params.dense_hidden.forward(&flat_d);
        let hid_d = apply_mask(&hid, &m2);
        logits.push(params.dense_out.forward(&hid_d));
        hidden.push(hid);
        mask1.push(m1);
        mask2.push(m2);
    }

    Ok(ChunkFwd { conv_acts, lstm, attn, flatten, mask1, hidden, mask2, logits })
}

/// Attention + BPTT for one branch over a chunk; returns the gradient on
/// the branch's input sequence per sample.
#[allow(clippy::too_many_arguments)]
fn branch_backward<T: Scalar>(
    lstm: &LstmParams<T>,
    attn: &AttentionParams<T>,
    lstm_grads: &mut LstmParams<T>,
    attn_grads: &mut AttentionParams<T>,
    lcaches: &[LstmCache<T>],
    acaches: &[AttnCache<T>],
    seqs: &[&[T]],
    d_outs: &[&[T]],
    steps: usize,
    combine: Combine,
) -> Vec<Vec<T>> {
    let u = lstm.units;
    let mut d_seqs = Vec::with_capacity(seqs.len());
    let mut d_hidden_seq = vec![T::zero(); steps * u];
    for s in 0..seqs.len() {
        for v in d_hidden_seq.iter_mut() {
            *v = T::zero();
        }
        let d_out = d_outs[s];
        let (d_ctx, d_last) = match combine {
            Combine::ContextAndLast => (&d_out[..u], Some(&d_out[u..])),
            Combine::ContextOnly => (d_out, None),
        };
        attn.backward(lcaches[s].hidden_seq(), &acaches[s], d_ctx, attn_grads, &mut d_hidden_seq);
        let mut d_seq = vec![T::zero(); seqs[s].len()];
        lstm.backward_seq(seqs[s], &lcaches[s], Some(&d_hidden_seq), d_last, lstm_grads, &mut d_seq);
        d_seqs.push(d_seq);
    }
    d_seqs
}

/// Loss (sum over the chunk) plus gradient accumulation into `grads`.
fn backward_chunk<T: Scalar>(
    params: &ModelParams<T>,
    xs: &[&[T]],
    fwd: &ChunkFwd<T>,
    ys: &[Label],
    grads: &mut ModelParams<T>,
    exec: BranchExec,
) -> T {
    let n = xs.len();
    let arch = &params.arch;
    let (steps, channels) = seq_shape(arch, params.input_len);
    let minpos = T::min_positive_value();

    // head backward
    let mut loss_sum = T::zero();
    let mut d_flatten: Vec<Vec<T>> = Vec::with_capacity(n);
    for s in 0..n {
        let probs = super::softmax_stable(&fwd.logits[s]);
        let y = match ys[s] {
            Label::Benign => 0,
            Label::Ransomware => 1,
        };
        loss_sum += -(probs[y].max(minpos)).ln();

        let mut d_logits = probs;
        d_logits[y] -= T::one();

        let hid_d = apply_mask(&fwd.hidden[s], &fwd.mask2[s]);
        let mut d_hid_d = vec![T::zero(); hid_d.len()];
        params
            .dense_out
            .backward(&hid_d, &fwd.logits[s], &d_logits, &mut grads.dense_out, &mut d_hid_d);
        let d_hid = apply_mask(&d_hid_d, &fwd.mask2[s]);

        let flat_d = apply_mask(&fwd.flatten[s], &fwd.mask1[s]);
        let mut d_flat_d = vec![T::zero(); flat_d.len()];
        params
            .dense_hidden
            .backward(&flat_d, &fwd.hidden[s], &d_hid, &mut grads.dense_hidden, &mut d_flat_d);
        d_flatten.push(apply_mask(&d_flat_d, &fwd.mask1[s]));
    }

    // recurrent / attention backward
    let seq_of = |s: usize| -> &[T] {
        if params.conv.is_empty() {
            xs[s]
        } else {
            fwd.conv_acts[s].last().expect("conv stack non-empty").as_slice()
        }
    };
    let mut d_seq: Vec<Vec<T>> = (0..n).map(|s| vec![T::zero(); seq_of(s).len()]).collect();

    match arch.variant {
        ArchVariant::ParallelAttention => {
            let seqs: Vec<&[T]> = (0..n).map(seq_of).collect();
            let bod = branch_out_dim(arch);
            let per_branch: Vec<Vec<Vec<T>>> = {
                let run = |j: usize, lg: &mut LstmParams<T>, ag: &mut AttentionParams<T>| {
                    let d_outs: Vec<&[T]> = (0..n).map(|s| &d_flatten[s][j * bod..(j + 1) * bod]).collect();
                    branch_backward(
                        &params.lstms[j],
                        &params.attns[j],
                        lg,
                        ag,
                        &fwd.lstm[j],
                        &fwd.attn[j],
                        &seqs,
                        &d_outs,
                        steps,
                        arch.combine,
                    )
                };
                match exec {
                    BranchExec::Parallel if arch.branches > 1 => grads
                        .lstms
                        .par_iter_mut()
                        .zip(grads.attns.par_iter_mut())
                        .enumerate()
                        .map(|(j, (lg, ag))| run(j, lg, ag))
                        .collect(),
                    _ => grads
                        .lstms
                        .iter_mut()
                        .zip(grads.attns.iter_mut())
                        .enumerate()
                        .map(|(j, (lg, ag))| run(j, lg, ag))
                        .collect(),
                }
            };
            // combine branch contributions in branch order
            for contributions in &per_branch {
                for (acc, contrib) in d_seq.iter_mut().zip(contributions) {
                    for (a, &c) in acc.iter_mut().zip(contrib) {
                        *a += c;
                    }
                }
            }
        }
        ArchVariant::StackedSequential => {
            let last = arch.branches - 1;
            let u = arch.lstm_units;
            // attention over the last layer
            let mut d_hidden_last = vec![vec![T::zero(); steps * u]; n];
            for s in 0..n {
                let d_out = &d_flatten[s];
                let (d_ctx, d_last) = match arch.combine {
                    Combine::ContextAndLast => (&d_out[..u], Some(&d_out[u..])),
                    Combine::ContextOnly => (&d_out[..], None),
                };
                params.attns[0].backward(
                    fwd.lstm[last][s].hidden_seq(),
                    &fwd.attn[0][s],
                    d_ctx,
                    &mut grads.attns[0],
                    &mut d_hidden_last[s],
                );
                if let Some(extra) = d_last {
                    let tail = &mut d_hidden_last[s][(steps - 1) * u..];
                    for (t, &e) in tail.iter_mut().zip(extra) {
                        *t += e;
                    }
                }
            }
            // walk the stack downwards
            let mut d_upper = d_hidden_last;
            for l in (0..=last).rev() {
                let mut d_lower: Vec<Vec<T>> = if l == 0 {
                    std::mem::take(&mut d_seq)
                } else {
                    (0..n).map(|_| vec![T::zero(); steps * u]).collect()
                };
                for s in 0..n {
                    let input: &[T] = if l == 0 { seq_of(s) } else { fwd.lstm[l - 1][s].hidden_seq() };
                    params.lstms[l].backward_seq(
                        input,
                        &fwd.lstm[l][s],
                        Some(&d_upper[s]),
                        None,
                        &mut grads.lstms[l],
                        &mut d_lower[s],
                    );
                }
                if l == 0 {
                    d_seq = d_lower;
                } else {
                    d_upper = d_lower;
                }
            }
        }
        ArchVariant::LstmOnly => {
            let mut sink = vec![T::zero(); params.input_len];
            for s in 0..n {
                for v in sink.iter_mut() {
                    *v = T::zero();
                }
                params.lstms[0].backward_seq(
                    xs[s],
                    &fwd.lstm[0][s],
                    None,
                    Some(&d_flatten[s]),
                    &mut grads.lstms[0],
                    &mut sink,
                );
            }
        }
        ArchVariant::CnnAttentionOnly => {
            let ch = channels;
            for s in 0..n {
                let d_out = &d_flatten[s];
                let (d_ctx, d_last) = match arch.combine {
                    Combine::ContextAndLast => (&d_out[..ch], Some(&d_out[ch..])),
                    Combine::ContextOnly => (&d_out[..], None),
                };
                params.attns[0].backward(seq_of(s), &fwd.attn[0][s], d_ctx, &mut grads.attns[0], &mut d_seq[s]);
                if let Some(extra) = d_last {
                    let tail = &mut d_seq[s][(steps - 1) * ch..];
                    for (t, &e) in tail.iter_mut().zip(extra) {
                        *t += e;
                    }
                }
            }
        }
    }

    // conv backward
    if !params.conv.is_empty() {
        for s in 0..n {
            let mut d_cur = std::mem::take(&mut d_seq[s]);
            for li in (0..params.conv.len()).rev() {
                let input: &[T] = if li == 0 { xs[s] } else { &fwd.conv_acts[s][li - 1] };
                let mut d_input = vec![T::zero(); input.len()];
                params.conv[li].backward(input, &fwd.conv_acts[s][li], &d_cur, &mut grads.conv[li], &mut d_input);
                d_cur = d_input;
            }
        }
    }

    loss_sum
}

/// Class probabilities for a batch (inference mode, no dropout).
pub fn eval_probs<T: Scalar>(
    params: &ModelParams<T>,
    xs: &[Vec<T>],
    exec: BranchExec,
) -> Result<Vec<Vec<T>>, NeuralError> {
    let mut out = Vec::with_capacity(xs.len());
    for chunk in xs.chunks(CHUNK) {
        let refs: Vec<&[T]> = chunk.iter().map(|v| v.as_slice()).collect();
        let fwd = forward_chunk(params, &refs, None, exec)?;
        for logits in &fwd.logits {
            out.push(super::softmax_stable(logits));
        }
    }
    Ok(out)
}

/// Probabilities for one sample.
pub fn forward_probs<T: Scalar>(params: &ModelParams<T>, x: &[T], exec: BranchExec) -> Result<Vec<T>, NeuralError> {
    let fwd = forward_chunk(params, &[x], None, exec)?;
    Ok(super::softmax_stable(&fwd.logits[0]))
}

/// Threshold rule: ransomware iff `P(ransomware) >= threshold`.
pub fn predict<T: Scalar>(
    params: &ModelParams<T>,
    x: &[T],
    threshold: f64,
    exec: BranchExec,
) -> Result<Label, NeuralError> {
    let probs = forward_probs(params, x, exec)?;
    Ok(if probs[1].as_f64() >= threshold { Label::Ransomware } else { Label::Benign })
}

/// Mean cross-entropy loss plus its gradient for every parameter tensor.
/// With `dropout_rng = None` the loss is the deterministic inference-mode
/// objective, which is what gradient validation differentiates.
pub fn loss_and_grads<T: Scalar>(
    params: &ModelParams<T>,
    xs: &[Vec<T>],
    ys: &[Label],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    exec: BranchExec,
) -> Result<(T, ModelParams<T>), NeuralError> {
    if xs.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    if xs.len() != ys.len() {
        return Err(NeuralError::ShapeMismatch(format!("{} samples vs {} labels", xs.len(), ys.len())));
    }
    let mut grads = params.zeros_like();
    let mut loss_sum = T::zero();
    for (cx, cy) in xs.chunks(CHUNK).zip(ys.chunks(CHUNK)) {
        let refs: Vec<&[T]> = cx.iter().map(|v| v.as_slice()).collect();
        let fwd = forward_chunk(params, &refs, dropout_rng.as_deref_mut(), exec)?;
        loss_sum += backward_chunk(params, &refs, &fwd, cy, &mut grads, exec);
    }
    let inv_n = T::one() / T::of(xs.len() as f64);
    for (_, t) in grads.tensors_mut() {
        for g in t.iter_mut() {
            *g *= inv_n;
        }
    }
    Ok((loss_sum * inv_n, grads))
}

/// Mean inference-mode loss only (the objective `loss_and_grads` differentiates).
pub fn batch_loss<T: Scalar>(params: &ModelParams<T>, xs: &[Vec<T>], ys: &[Label], exec: BranchExec) -> Result<T, NeuralError> {
    let minpos = T::min_positive_value();
    let probs = eval_probs(params, xs, exec)?;
    let mut loss = T::zero();
    for (p, &y) in probs.iter().zip(ys) {
        let idx = match y {
            Label::Benign => 0,
            Label::Ransomware => 1,
        };
        loss += -(p[idx].max(minpos)).ln();
    }
    Ok(loss / T::of(xs.len() as f64))
}

/// One SGD step over a mini-batch: softmax cross-entropy loss, full
/// backpropagation, one Adam update. Frozen groups are left untouched.
/// On a non-finite loss the parameters are not modified.
pub fn train_minibatch<T: Scalar>(
    params: &mut ModelParams<T>,
    opt: &mut AdamState<T>,
    xs: &[Vec<T>],
    ys: &[Label],
    rng: &mut ChaCha8Rng,
    exec: BranchExec,
) -> Result<T, NeuralError> {
    let (loss, grads) = loss_and_grads(params, xs, ys, Some(rng), exec)?;
    if !loss.is_finite() {
        return Err(NeuralError::NonFiniteLoss);
    }
    for (_, t) in grads.tensors() {
        if t.iter().any(|g| !g.is_finite()) {
            return Err(NeuralError::NonFiniteLoss);
        }
    }
    opt.apply(params, &grads);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_arch() -> ModelArch {
        ModelArch {
            variant: ArchVariant::ParallelAttention,
            branches: 2,
            conv_depth: 2,
            conv_filters: 2,
            conv_kernel: 3,
            lstm_units: 3,
            attention_dim: 0,
            dense_hidden: 5,
            dropout_lstm: 0.0,
            dropout_dense: 0.0,
            combine: Combine::ContextAndLast,
        }
    }

    fn sample_inputs(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::Rng;
        let mut rng = stream(seed, "model-test-x", 0);
        (0..n).map(|_| (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).collect()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let params = ModelParams::<f64>::new(tiny_arch(), 12, 7).unwrap();
        for x in sample_inputs(5, 12, 1) {
            let p = forward_probs(&params, &x, BranchExec::Sequential).unwrap();
            assert_eq!(p.len(), 2);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zeroed_output_layer_gives_uniform_probs() {
        let mut params = ModelParams::<f64>::new(tiny_arch(), 12, 7).unwrap();
        for w in params.dense_out.w.data.iter_mut() {
            *w = 0.0;
        }
        for b in params.dense_out.b.iter_mut() {
            *b = 0.0;
        }
        let x = sample_inputs(1, 12, 2).pop().unwrap();
        let p = forward_probs(&params, &x, BranchExec::Sequential).unwrap();
        assert_relative_eq!(p[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(p[1], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn parallel_and_sequential_branches_agree_bitwise() {
        let params = ModelParams::<f32>::new(tiny_arch(), 12, 3).unwrap();
        let xs = sample_inputs(9, 12, 4)
            .into_iter()
            .map(|v| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>())
            .collect::<Vec<_>>();
        let a = eval_probs(&params, &xs, BranchExec::Sequential).unwrap();
        let b = eval_probs(&params, &xs, BranchExec::Parallel).unwrap();
        assert_eq!(a, b);

        // training trajectories stay identical too
        let ys: Vec<Label> = (0..9).map(|i| if i % 2 == 0 { Label::Benign } else { Label::Ransomware }).collect();
        let mut p1 = params.clone();
        let mut p2 = params.clone();
        let mut o1 = AdamState::new(0.01);
        let mut o2 = AdamState::new(0.01);
        let mut r1 = stream(5, "train", 0);
        let mut r2 = stream(5, "train", 0);
        for _ in 0..3 {
            train_minibatch(&mut p1, &mut o1, &xs, &ys, &mut r1, BranchExec::Sequential).unwrap();
            train_minibatch(&mut p2, &mut o2, &xs, &ys, &mut r2, BranchExec::Parallel).unwrap();
        }
        assert_eq!(p1, p2);
    }

    #[test]
    fn stacked_single_layer_equals_single_branch_parallel() {
        let mut arch_pa = tiny_arch();
        arch_pa.branches = 1;
        let mut arch_ss = arch_pa;
        arch_ss.variant = ArchVariant::StackedSequential;
        let pa = ModelParams::<f64>::new(arch_pa, 12, 11).unwrap();
        let ss = ModelParams::<f64>::new(arch_ss, 12, 11).unwrap();
        for x in sample_inputs(4, 12, 6) {
            let a = forward_probs(&pa, &x, BranchExec::Sequential).unwrap();
            let b = forward_probs(&ss, &x, BranchExec::Sequential).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn freezing_keeps_groups_bit_identical() {
        let mut params = ModelParams::<f64>::new(tiny_arch(), 12, 9).unwrap();
        let xs = sample_inputs(6, 12, 8);
        let ys: Vec<Label> = (0..6).map(|i| if i < 3 { Label::Benign } else { Label::Ransomware }).collect();
        set_frozen(&mut params, [ParamGroup::Conv].into_iter().collect());
        let conv_before = params.conv.clone();
        let lstm_before = params.lstms.clone();
        let mut opt = AdamState::new(0.01);
        let mut rng = stream(1, "freeze", 0);
        train_minibatch(&mut params, &mut opt, &xs, &ys, &mut rng, BranchExec::Sequential).unwrap();
        assert_eq!(params.conv, conv_before);
        assert_ne!(params.lstms, lstm_before);

        // freeze everything: training is a no-op on parameters
        set_frozen(&mut params, ParamGroup::ALL.into_iter().collect());
        let snapshot = params.clone();
        train_minibatch(&mut params, &mut opt, &xs, &ys, &mut rng, BranchExec::Sequential).unwrap();
        assert_eq!(params, snapshot);
    }

    #[test]
    fn dropout_zeroes_expected_fraction() {
        let mut rng = stream(3, "dropout", 0);
        let rate = 0.3;
        let n = 100_000;
        let mask = dropout_mask::<f64>(n, rate, &mut rng);
        let zeros = mask.iter().filter(|&&m| m == 0.0).count();
        let frac = zeros as f64 / n as f64;
        assert!((frac - rate).abs() < 0.02, "zero fraction {frac}");
        // inverted scaling keeps the expected activation constant
        let mean: f64 = mask.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mask mean {mean}");
        // inference path applies no mask at all
        assert!(dropout_mask::<f64>(10, 0.0, &mut rng).is_empty());
    }

    #[test]
    fn converges_on_separable_toy_data() {
        // kernel-1 conv so 2-feature inputs survive the stack
        let arch = ModelArch {
            variant: ArchVariant::ParallelAttention,
            branches: 1,
            conv_depth: 1,
            conv_filters: 2,
            conv_kernel: 1,
            lstm_units: 3,
            attention_dim: 0,
            dense_hidden: 4,
            dropout_lstm: 0.0,
            dropout_dense: 0.0,
            combine: Combine::ContextAndLast,
        };
        let mut params = ModelParams::<f64>::new(arch, 2, 13).unwrap();
        let mut opt = AdamState::new(0.02);
        use rand::Rng;
        let mut data_rng = stream(17, "toy-data", 0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..40 {
            let a = data_rng.gen::<f64>() * 2.0 - 1.0;
            let b = data_rng.gen::<f64>() * 2.0 - 1.0;
            let y = if a + b > 0.0 { Label::Ransomware } else { Label::Benign };
            // margin keeps the toy set cleanly separable
            if (a + b).abs() < 0.2 {
                continue;
            }
            xs.push(vec![a, b]);
            ys.push(y);
        }
        let mut rng = stream(17, "toy-train", 0);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let loss = train_minibatch(&mut params, &mut opt, &xs, &ys, &mut rng, BranchExec::Sequential).unwrap();
            losses.push(loss);
        }
        let ma: Vec<f64> = losses.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
        for pair in ma.windows(2) {
            assert!(pair[1] < pair[0], "moving average not strictly decreasing: {} -> {}", pair[0], pair[1]);
        }
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| predict(&params, x, 0.5, BranchExec::Sequential).unwrap() == y)
            .count();
        assert_eq!(correct, xs.len(), "final accuracy must be 1.0");
    }

    #[test]
    fn prediction_threshold_is_inclusive() {
        // force P(ransomware) = 0.5 exactly with a zeroed output layer
        let mut params = ModelParams::<f64>::new(tiny_arch(), 12, 7).unwrap();
        for w in params.dense_out.w.data.iter_mut() {
            *w = 0.0;
        }
        for b in params.dense_out.b.iter_mut() {
            *b = 0.0;
        }
        let x = sample_inputs(1, 12, 3).pop().unwrap();
        assert_eq!(predict(&params, &x, 0.5, BranchExec::Sequential).unwrap(), Label::Ransomware);
        assert_eq!(predict(&params, &x, 0.500001, BranchExec::Sequential).unwrap(), Label::Benign);
        // threshold near zero flags everything
        assert_eq!(predict(&params, &x, 1e-9, BranchExec::Sequential).unwrap(), Label::Ransomware);
    }

    #[test]
    fn variant_geometries_build_and_run() {
        for variant in [
            ArchVariant::ParallelAttention,
            ArchVariant::StackedSequential,
            ArchVariant::LstmOnly,
            ArchVariant::CnnAttentionOnly,
        ] {
            let mut arch = tiny_arch();
            arch.variant = variant;
            let params = ModelParams::<f64>::new(arch, 12, 21).unwrap();
            let x = sample_inputs(1, 12, 5).pop().unwrap();
            let p = forward_probs(&params, &x, BranchExec::Sequential).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-9, "{variant:?}");

            let xs = sample_inputs(4, 12, 9);
            let ys = vec![Label::Benign, Label::Ransomware, Label::Benign, Label::Ransomware];
            let mut params = params;
            let mut opt = AdamState::new(0.01);
            let mut rng = stream(2, "variant-train", 0);
            let loss = train_minibatch(&mut params, &mut opt, &xs, &ys, &mut rng, BranchExec::Sequential).unwrap();
            assert!(loss.is_finite());
        }
    }

    #[test]
    fn geometry_errors_are_reported() {
        let mut arch = tiny_arch();
        arch.conv_kernel = 9;
        // 12 -> 4 after one layer; the second layer cannot fit
        assert!(matches!(
            ModelParams::<f64>::new(arch, 12, 0),
            Err(NeuralError::SequenceTooShort { .. })
        ));
    }
}
