//! The loan-decision classifier: schema and encoding, the 1D-CNN, training
//! and evaluation.

pub mod data;
pub mod net;
pub mod train;

pub use data::{Attribute, Dataset, Decision, DecisionDistribution, LoanApplication, Sample, Schema};
pub use net::{ConvSpec, Hyperparams, Layer, ModelConfig, Trace};
pub use train::{auc, cross_validate, stratified_folds, train, CvResult, TrainOptions};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown category {value:?} for attribute {attribute}")]
    UnknownCategory { attribute: String, value: String },
    #[error("application has {got} attributes, schema has {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("expected length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("both classes must be present")]
    SingleClass,
    #[error("each class needs at least {folds} samples")]
    TooFewSamples { folds: usize },
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
}
