use thiserror::Error;

use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("empty vector")]
    Empty,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("negative probability {value} at index {index}")]
    NegativeProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModulationError {
    #[error("invalid alpha policy: {0}")]
    InvalidPolicy(String),
    #[error("alpha must be finite, got {0}")]
    NonFiniteAlpha(f64),
    #[error("combined logits overflowed at index {index}")]
    Overflow { index: usize },
    #[error(transparent)]
    Math(#[from] MathError),
}

/// Failure reported by a logit source for a single query.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("source `{source_id}`: {message}")]
pub struct SourceError {
    pub source_id: String,
    pub message: String,
}

impl SourceError {
    pub fn new(source_id: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            source_id: source_id.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("source vocabulary size {source_size} does not match engine vocabulary size {engine}")]
    VocabMismatch { engine: usize, source_size: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("token {0} outside vocabulary")]
    TokenOutOfRange(TokenId),
    #[error(transparent)]
    Modulation(#[from] ModulationError),
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("token id {0} is not an object token")]
    NotAnObject(TokenId),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid smoothing constant {0}; must be > 0")]
    InvalidSmoothing(f64),
    #[error("vocabulary of size {0} is too large for the oracle (max {max})", max = crate::synthetic::ORACLE_MAX_VOCAB)]
    VocabTooLarge(usize),
    #[error("invalid scene `{scene_id}`: {reason}")]
    InvalidScene { scene_id: String, reason: String },
    #[error("suite generation infeasible: {0}")]
    Infeasible(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty suite")]
    EmptySuite,
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("trace lacks a text-only stream; mutual information needs dual-stream decoding")]
    SingleStreamTrace,
    #[error("no traces")]
    NoTraces,
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("report parse error at line {line}: {message}")]
    ReportParse { line: usize, message: String },
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("source unavailable: {0}")]
    SourceUnavailable(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("connection closed by peer")]
    Closed,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("adapter error: {0}")]
    Remote(String),
    #[error("vocab mismatch: adapter reports {adapter}, engine expects {expected}")]
    VocabMismatch { expected: usize, adapter: usize },
    #[error("connection is closed after an earlier failure")]
    Broken,
}
