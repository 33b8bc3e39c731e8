//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // Model database.
    #[error("duplicate model id `{0}`")]
    DuplicateId(String),
    #[error("invalid model id `{id}`: {reason}")]
    InvalidId { id: String, reason: String },
    #[error("cannot read `{path}`: {detail}")]
    FileUnreadable { path: PathBuf, detail: String },
    #[error("corrupt manifest at `{path}`: {detail}")]
    CorruptManifest { path: PathBuf, detail: String },
    #[error("unknown candidate `{0}`")]
    UnknownCandidate(String),

    // File parsing.
    #[error("parse error in `{path}`: {detail}")]
    ParseError { path: PathBuf, detail: String },
    #[error("empty file `{path}`")]
    EmptyFile { path: PathBuf },
    #[error("non-finite value at row {row}, column {col} of `{path}`")]
    NonFiniteValue { path: PathBuf, row: usize, col: usize },

    // Shapes and arguments.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("sample rate must be in (0, 1], got {0}")]
    InvalidRate(f64),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("candidate set is empty")]
    EmptyCandidateSet,

    // Numeric failures.
    #[error("non-finite input at index {0}")]
    NonFiniteInput(usize),
    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTemperature(f64),
    #[error("row {row} is not a probability vector (sum {sum})")]
    NotNormalized { row: usize, sum: f64 },
    #[error("cluster {label} has a single sample; cannot fit a covariance")]
    SingletonCluster { label: usize },
    #[error("need at least {need} points to fit a gaussian, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("covariance is not positive definite (leading minor {minor})")]
    NotPositiveDefinite { minor: usize },
    #[error("regression separation needs at least 2 bins")]
    SingleBin,
    #[error("need at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("distribution supports differ: {0} vs {1}")]
    SupportMismatch(usize, usize),
    #[error("divergence is infinite: q[{index}] = 0 but p[{index}] > 0")]
    InfiniteDivergence { index: usize },
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("x and y lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("trendline needs at least two distinct x values")]
    DegenerateX,
    #[error("no accuracy for ranked candidate `{0}`")]
    MissingAccuracy(String),

    // Pipeline wrapper: remembers which candidate and stage failed.
    #[error("candidate `{id}` failed at stage {stage}: {source}")]
    Candidate {
        id: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the candidate and pipeline stage it came from.
    pub fn for_candidate(self, id: &str, stage: &'static str) -> Error {
        Error::Candidate {
            id: id.to_string(),
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for input/parse/config errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteInput(_)
            | Error::NonPositiveTemperature(_)
            | Error::NotNormalized { .. }
            | Error::SingletonCluster { .. }
            | Error::TooFewPoints { .. }
            | Error::TooFewSamples { .. }
            | Error::DegenerateLabels(_)
            | Error::NotPositiveDefinite { .. }
            | Error::SingleBin
            | Error::TooFewClusters(_)
            | Error::InfiniteDivergence { .. }
            | Error::ZeroVariance(_)
            | Error::DegenerateX
            | Error::MissingAccuracy(_) => 3,
            Error::Candidate { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
