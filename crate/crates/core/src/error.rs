use thiserror::Error;

use crate::model::{ItemId, QueryId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid term weight {weight} for term {term:?}")]
    InvalidWeight { term: String, weight: f64 },

    #[error("invalid score configuration: {0}")]
    InvalidConfig(String),

    #[error("query {0:?} is already registered")]
    DuplicateQuery(QueryId),

    #[error("item {0:?} is already indexed")]
    DuplicateItem(ItemId),

    #[error("expected dense id {expected}, got {got}")]
    NonSequentialId { expected: usize, got: usize },

    #[error("unknown item {0:?}")]
    UnknownItem(ItemId),

    #[error("unknown query {0:?}")]
    UnknownQuery(QueryId),

    #[error("event score {0} is outside [0, 1]")]
    InvalidEventScore(f64),

    #[error("timestamp {got} precedes previous timestamp {previous}")]
    TimestampRegression { previous: f64, got: f64 },

    #[error("qmin of {query:?} would decrease from {previous} to {new}")]
    QminDecrease { query: QueryId, previous: f64, new: f64 },

    #[error("query {0:?} is already a candidate in this list")]
    DuplicateCandidate(QueryId),

    #[error("threshold strategy needs per-item maximum dynamic score for {0:?}")]
    MissingThetaMax(ItemId),

    #[error("cost model: {0}")]
    CostModel(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("workload parameters: {0}")]
    Workload(String),

    #[error("stream exceeds oracle cap: {0}")]
    OracleCap(String),

    #[error("configuration conflict: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
