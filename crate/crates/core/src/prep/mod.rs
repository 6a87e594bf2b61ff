//! Per-batch preprocessing: standardization, correlation-based feature
//! selection, and minority oversampling.

mod scaler;
mod select;
mod smote;

pub use scaler::{apply_scaler, apply_scaler_row, fit_scaler, ScalerParams};
pub use select::{pcc, pcc_heatmap, scalarize, select_features, FeatureRanking, PccValue, RankMode, Scalarization};
pub use smote::{smote, SmoteConfig, SmoteOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { got: usize, need: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inputs shorter than 2 or mismatched lengths")]
    DegenerateInput,
    #[error("batch contains a single class; ranking skipped")]
    SingleClassBatch,
    #[error("minority class has {count} rows, need at least 2")]
    TooFewMinority { count: usize },
}
