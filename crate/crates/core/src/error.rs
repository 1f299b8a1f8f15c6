use thiserror::Error;

use crate::model::{ClusterId, SampleId};

/// Errors raised by the clustering model, the engine and the metrics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OgmcError {
    #[error("vector norm is zero or below 1e-12")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("sample {0} is already present")]
    DuplicateSample(SampleId),
    #[error("cannot fuse robust clusters {0} and {1}")]
    RobustPairFusion(ClusterId, ClusterId),
    #[error("clusters {0} and {1} share member samples")]
    DuplicateMembership(ClusterId, ClusterId),
    #[error("cannot merge cluster {0} with itself")]
    SelfMerge(ClusterId),
    #[error("unknown cluster {0}")]
    UnknownCluster(ClusterId),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("sample {0} has no truth label")]
    MissingTruthLabel(SampleId),
    #[error("sample {0} has no predicted identity")]
    MissingPrediction(SampleId),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid tuning configuration: {0}")]
    InvalidTuneConfig(String),
}

pub type Result<T> = std::result::Result<T, OgmcError>;
