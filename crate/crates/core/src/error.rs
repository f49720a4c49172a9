use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit. Variants group into the three failure classes the CLI
/// maps to exit codes: configuration, data and numeric divergence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cycle detected in taxonomy involving `{0}`")]
    Cycle(String),

    #[error("duplicate concept id `{0}`")]
    DuplicateId(String),

    #[error("edge {parent} -> {child} references unknown concept `{missing}`")]
    DanglingEdge {
        parent: String,
        child: String,
        missing: String,
    },

    #[error("taxonomy must have exactly one root, found {}: {}", .0.len(), .0.join(", "))]
    MultipleRoots(Vec<String>),

    #[error("unknown concept id `{0}`")]
    UnknownId(String),

    #[error("class `{0}` sits at depth 0 and has zero self-similarity")]
    DegenerateAnchor(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("batch too small: {0} views, need at least 4")]
    BatchTooSmall(usize),

    #[error("temperature must be positive, got {0}")]
    Temperature(f64),

    #[error("anchor {0} has no positive in the batch")]
    NoPositive(usize),

    #[error("anchor {anchor} has an empty denominator")]
    EmptyDenominator { anchor: usize },

    #[error("no class center for label {0}")]
    MissingCenter(usize),

    #[error("label {0} is not present in the similarity table")]
    UnknownLabel(usize),

    #[error("probability {value} at ({row}, {col}) is outside [0, 1]")]
    Probability { row: usize, col: usize, value: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("realm sets differ: {0}")]
    RealmMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

/// Coarse failure class, used to pick a process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Temperature(_) => ErrorClass::Config,
            Error::Diverged { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Stable snake_case identifier of the variant, for machine-readable reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Cycle(_) => "cycle",
            Error::DuplicateId(_) => "duplicate_id",
            Error::DanglingEdge { .. } => "dangling_edge",
            Error::MultipleRoots(_) => "multiple_roots",
            Error::UnknownId(_) => "unknown_id",
            Error::DegenerateAnchor(_) => "degenerate_anchor",
            Error::Shape(_) => "shape",
            Error::BatchTooSmall(_) => "batch_too_small",
            Error::Temperature(_) => "temperature",
            Error::NoPositive(_) => "no_positive",
            Error::EmptyDenominator { .. } => "empty_denominator",
            Error::MissingCenter(_) => "missing_center",
            Error::UnknownLabel(_) => "unknown_label",
            Error::Probability { .. } => "probability",
            Error::Degenerate(_) => "degenerate",
            Error::StepOutOfRange { .. } => "step_out_of_range",
            Error::Diverged { .. } => "diverged",
            Error::Empty(_) => "empty",
            Error::RealmMismatch(_) => "realm_mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::Csv(_) => "csv",
            Error::Image { .. } => "image",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
