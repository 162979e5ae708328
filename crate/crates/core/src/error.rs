use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{cols} columns cannot be split into {groups} categorical groups")]
    BadGroups { cols: usize, groups: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("concatenation of zero inputs")]
    EmptyConcat,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("observation has {got} values, model expects {expected}")]
    ObservationSize { expected: usize, got: usize },
    #[error("observation contains non-finite values")]
    NonFiniteObservation,
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("invalid model dimensions: {0}")]
    Dims(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeOver,
    #[error("action {action} out of range for {count} actions")]
    BadAction { action: usize, count: usize },
    #[error("observability can only change before the first step")]
    ObservabilityLocked,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite loss on batch {batch_id}")]
    NonFiniteLoss { batch_id: u64 },
    #[error("replay buffer holds no samplable data")]
    EmptyBuffer,
}

impl From<GraphError> for TrainError {
    fn from(e: GraphError) -> Self {
        TrainError::Model(ModelError::Graph(e))
    }
}
