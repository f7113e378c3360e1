pub mod candidate;
pub mod engine;
pub mod error;
pub mod index;
pub mod model;
pub mod oracle;
pub mod planner;
pub mod stream;
pub mod harness;

pub use candidate::{CandidateEntry, CandidateList, IndexVariant};
pub use engine::{Delta, Engine, EngineMetrics, EngineOptions, Mode, RefreshRule};
pub use error::{Error, Result};
pub use model::{Event, Item, ItemId, Query, QueryId, Record, ResultEntry, ScoreConfig, TermId, Threshold, Timestamp};
pub use oracle::OracleState;
pub use planner::{CostConstants, ThetaStrategy};
pub use stream::{Interner, StreamRecord, StreamStats, WorkloadParams};
