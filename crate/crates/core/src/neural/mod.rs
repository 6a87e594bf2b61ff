//! From-scratch numerical core: 1D convolution, LSTM, attention, dense
//! head, dropout, softmax cross-entropy, Adam, and the parallel
//! CNN-LSTM-attention classifier assembled from those pieces.

pub mod adam;
pub mod attention;
pub mod conv;
pub mod dense;
pub mod lstm;
pub mod model;

pub use adam::AdamState;
pub use attention::{attention_forward, softmax_stable, AttentionParams};
pub use conv::{conv1d_forward, ConvLayer};
pub use dense::DenseLayer;
pub use lstm::{lstm_step, LstmParams};
pub use model::{
    batch_loss, eval_probs, forward_probs, loss_and_grads, predict, set_frozen, train_minibatch, BranchExec,
    ModelParams,
};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Two-class output everywhere: index 0 benign, index 1 ransomware.
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence of length {len} shorter than kernel {kernel}")]
    SequenceTooShort { len: usize, kernel: usize },
    #[error("non-finite loss; batch aborted")]
    NonFiniteLoss,
    #[error("unknown parameter group {0}")]
    UnknownGroup(String),
    #[error("empty batch")]
    EmptyBatch,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// out = W x
    pub fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut s = T::zero();
            for (&w, &v) in row.iter().zip(x) {
                s += w * v;
            }
            *o = s;
        }
    }

    /// out += W^T y
    pub fn tr_mul_vec_add(&self, y: &[T], out: &mut [T]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            let row = self.row(r);
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
    }

    /// W += y ⊗ x
    pub fn add_outer(&mut self, y: &[T], x: &[T]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            let row = self.row_mut(r);
            for (w, &xv) in row.iter_mut().zip(x) {
                *w += yr * xv;
            }
        }
    }
}

/// Elementwise activation used by conv and dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    pub fn grad_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Identity => T::one(),
        }
    }
}

/// Freezable parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Conv,
    Lstm,
    Attention,
    Dense,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [ParamGroup::Conv, ParamGroup::Lstm, ParamGroup::Attention, ParamGroup::Dense];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Conv => "conv",
            ParamGroup::Lstm => "lstm",
            ParamGroup::Attention => "attention",
            ParamGroup::Dense => "dense",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = NeuralError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conv" => Ok(ParamGroup::Conv),
            "lstm" => Ok(ParamGroup::Lstm),
            "attention" => Ok(ParamGroup::Attention),
            "dense" => Ok(ParamGroup::Dense),
            other => Err(NeuralError::UnknownGroup(other.to_string())),
        }
    }
}

/// Parse a comma-separated freeze list; `all` and `none` are accepted.
pub fn parse_freeze_list(s: &str) -> Result<BTreeSet<ParamGroup>, NeuralError> {
    let mut out = BTreeSet::new();
    let t = s.trim();
    if t.is_empty() || t == "none" {
        return Ok(out);
    }
    if t == "all" {
        out.extend(ParamGroup::ALL);
        return Ok(out);
    }
    for part in t.split(',') {
        out.insert(part.trim().parse()?);
    }
    Ok(out)
}

/// Network wiring variants used by the architecture comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchVariant {
    /// Shared conv stack feeding K parallel LSTM+attention branches.
    ParallelAttention,
    /// Conv stack feeding K sequentially stacked LSTM layers, one attention.
    StackedSequential,
    /// Single LSTM over the raw input sequence, no conv, no attention.
    LstmOnly,
    /// Conv stack with attention directly over its output sequence.
    CnnAttentionOnly,
}

impl ArchVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ParallelAttention => "parallel_attention",
            Self::StackedSequential => "stacked_sequential",
            Self::LstmOnly => "lstm_only",
            Self::CnnAttentionOnly => "cnn_attention_only",
        }
    }
}

impl FromStr for ArchVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel_attention" => Ok(Self::ParallelAttention),
            "stacked_sequential" => Ok(Self::StackedSequential),
            "lstm_only" => Ok(Self::LstmOnly),
            "cnn_attention_only" => Ok(Self::CnnAttentionOnly),
            other => Err(format!("unknown architecture variant {other}")),
        }
    }
}

/// How the attention context is combined with the final hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// `[context; h_T]`, the default.
    ContextAndLast,
    ContextOnly,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelArch {
    pub variant: ArchVariant,
    /// Parallel branches (or stacked layers for the sequential variant).
    pub branches: usize,
    pub conv_depth: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub lstm_units: usize,
    /// Attention score dimension; 0 means "same as the attended dimension".
    pub attention_dim: usize,
    pub dense_hidden: usize,
    /// Dropout rate on the flattened branch concatenation.
    pub dropout_lstm: f64,
    /// Dropout rate after the hidden dense layer.
    pub dropout_dense: f64,
    pub combine: Combine,
}

impl Default for ModelArch {
    fn default() -> Self {
        Self {
            variant: ArchVariant::ParallelAttention,
            branches: 2,
            conv_depth: 2,
            conv_filters: 32,
            conv_kernel: 9,
            lstm_units: 384,
            attention_dim: 0,
            dense_hidden: 80,
            dropout_lstm: 0.10326648213511579,
            dropout_dense: 0.4057318990206279,
            combine: Combine::ContextAndLast,
        }
    }
}

impl ModelArch {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.branches == 0 {
            return Err(NeuralError::ShapeMismatch("at least one branch required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_lstm) || !(0.0..1.0).contains(&self.dropout_dense) {
            return Err(NeuralError::ShapeMismatch("dropout rates must be in [0, 1)".into()));
        }
        if self.variant != ArchVariant::LstmOnly
            && (self.conv_depth == 0 || self.conv_filters == 0 || self.conv_kernel == 0)
        {
            return Err(NeuralError::ShapeMismatch("conv stack needs depth, filters and kernel".into()));
        }
        if self.variant != ArchVariant::CnnAttentionOnly && self.lstm_units == 0 {
            return Err(NeuralError::ShapeMismatch("lstm_units must be positive".into()));
        }
        if self.dense_hidden == 0 {
            return Err(NeuralError::ShapeMismatch("dense_hidden must be positive".into()));
        }
        Ok(())
    }
}
