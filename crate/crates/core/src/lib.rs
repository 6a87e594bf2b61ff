//! Batch-incremental ransomware detection over Sysmon-style event streams.
//!
//! The pipeline parses JSONL security events, embeds string features with
//! hashed character n-grams, selects features by Pearson correlation,
//! rebalances with SMOTE, and classifies with a CNN-LSTM-attention network
//! that is fine-tuned on successive windows of the stream instead of being
//! rebuilt from scratch.
//!
//! All numeric kernels are generic over the scalar type via [`Scalar`];
//! the streaming engine and CLI run at `f32` (the checkpoint format stores
//! 32-bit parameters) while tests validate gradients at `f64`.

pub mod embed;
pub mod engine;
pub mod event;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod prep;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use scalar::Scalar;

/// Default precision used by the streaming engine and the CLI.
pub type Real = f32;

/// N-gram embedding table at default precision.
pub type NgramTable32 = embed::NgramTable<f32>;
