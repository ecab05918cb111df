use std::path::PathBuf;

use thiserror::Error;

use crate::provider::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Validation failures while reading or constructing a trace.
///
/// Row numbers are 1-based and count data rows only (header lines excluded).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("missing field `{field}` at row {row}")]
    MissingField { row: usize, field: &'static str },
    #[error("non-contiguous index at row {row}: expected {expected}, found {found}")]
    NonContiguousIndex { row: usize, expected: usize, found: usize },
    #[error("negative value in field `{field}` at row {row}")]
    NegativeValue { row: usize, field: &'static str },
    #[error("invalid number in field `{field}` at row {row}: {reason}")]
    InvalidNumber { row: usize, field: &'static str, reason: String },
    #[error("correct ({correct}) exceeds batch_size ({batch_size}) at row {row}")]
    CorrectExceedsBatch { row: usize, correct: u32, batch_size: u32 },
    #[error("batch_size must be positive at row {row}")]
    ZeroBatchSize { row: usize },
    #[error("batch_size {found} at row {row} differs from {expected} (relaxed sizes not enabled)")]
    NonUniformBatchSize { row: usize, expected: u32, found: u32 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("malformed row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("header declares n={declared} but {found} rows were read")]
    CountMismatch { declared: usize, found: usize },
    #[error("lambda must be positive")]
    NonPositiveLambda,
    #[error("trace has no batches")]
    Empty,
    #[error("frozen run with cutoff {cutoff} must cover indices {expected_first}..={expected_last}, found {found_first}..={found_last}")]
    FrozenCoverage { cutoff: usize, expected_first: usize, expected_last: usize, found_first: usize, found_last: usize },
    #[error("frozen run cutoff {cutoff} outside 0..={n}")]
    FrozenCutoffRange { cutoff: usize, n: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("sample set is empty")]
    EmptySamples,
    #[error("no records to aggregate")]
    EmptyRecords,
    #[error("utilisation must be positive, got {0}")]
    InvalidRho(f64),
    #[error("inter-arrival time must be positive")]
    InvalidGamma,
    #[error("threshold {threshold_ms} ms must exceed lambda {lambda_ms} ms")]
    InvalidThreshold { threshold_ms: String, lambda_ms: String },
    #[error("k_sigma must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("schedule covers {schedule} batches but trace has {trace}")]
    LengthMismatch { schedule: usize, trace: usize },
    #[error("frozen phase unresolvable: cutoff m={cutoff} < N={n} and no frozen run or constant supplied")]
    FrozenUnresolvable { cutoff: usize, n: usize },
    #[error("unknown preset `{name}`; available: {}", available.join(", "))]
    UnknownPreset { name: String, available: Vec<String> },
    #[error("ranking needs at least 2 entries, got {0}")]
    TooFewToRank(usize),
    #[error("rank vectors cover different methods")]
    MethodMismatch,
    #[error("rank vector has zero variance; correlation undefined")]
    DegenerateRanks,
    #[error("factor must lie in (0, 1], got {0}")]
    InvalidFactor(f64),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("oracle tick {tick_ns} ns does not divide input time {value_ns} ns")]
    TickMisaligned { tick_ns: u64, value_ns: u64 },
    #[error("oracle tick must be at least 1 ns")]
    ZeroTick,
    #[error("invalid matrix: {0}")]
    Matrix(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl Error {
    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Error {
        Error::File { path: path.into(), source: Box::new(self) }
    }
}
