//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("loss must be positive and finite, got {0}")]
    InvalidLoss(f64),

    #[error("meta-model needs at least one history entry")]
    InsufficientHistory,

    #[error("candidate grid is empty")]
    EmptyGrid,

    #[error("no architecture with input {input_dim} and {class_count} classes reaches {target} parameters")]
    InfeasibleSize {
        target: u64,
        input_dim: usize,
        class_count: usize,
    },

    #[error("chain stage {stage} failed: {source}")]
    ChainStage { stage: usize, source: Box<Error> },

    #[error("storage error at {path}: {source}")]
    Storage {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("corrupt cache entry {digest}: {reason}")]
    CorruptEntry { digest: String, reason: String },

    #[error("task {task_id} ({kind}) failed: {reason}")]
    Task {
        task_id: usize,
        kind: String,
        reason: String,
    },

    #[error("noise rate must lie in [0, 1], got {0}")]
    InvalidRate(f64),

    #[error("imbalance ratio {ratio} reduces class {class} below one sample")]
    InfeasibleRatio { ratio: f64, class: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("stratified split impossible: {0}")]
    Stratification(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("retention undefined: teacher accuracy is zero")]
    UndefinedRetention,

    #[error("silhouette undefined: need at least two non-empty clusters")]
    UndefinedSilhouette,

    #[error("experiment file: {0}")]
    Experiment(String),

    #[error("unknown suite '{0}'")]
    UnknownSuite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
