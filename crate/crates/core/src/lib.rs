//! Multi-path grounded video question answering.
//!
//! Three reasoning paths (ground-then-answer, answer-then-ground, joint GQA)
//! run over pluggable agent backends. Each path's candidate spans are checked
//! by a verifier and re-scored as a product of experts, then the paths are
//! fused by weighted answer voting and weighted k-means over span endpoints.
//! The [`eval`] module computes IoU/IoP recalls and grounded-QA accuracy.

pub mod agents;
pub mod config;
pub mod error;
pub mod eval;
pub mod fuse;
pub mod harness;
pub mod paths;
pub mod pipeline;
pub mod records;
pub mod reflect;
pub mod span;

pub use agents::{AgentBackend, AgentSuite, AnswerChoice, Role, Session};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{MetricReport, SampleScore, Thresholds};
pub use fuse::{fuse, FusionParams, FusionResult, KMeansParams, SpanPoint, VotingMode};
pub use paths::{PathId, PathOutput, QaItem, TaskKind};
pub use records::{DatasetRecord, Prediction, TranscriptRecord};
pub use reflect::{VerifiedPathOutput, VerifiedSpan};
pub use span::{ScoredSpan, TimeSpan, VideoMeta};
