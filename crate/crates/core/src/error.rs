use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("recording has fewer than 2 samples")]
    EmptyRecording,

    #[error("timestamps are not strictly increasing at index {index}")]
    NonMonotonicTimestamps { index: usize },

    #[error("window of {window} samples is not divisible into sub-windows of {sub} samples")]
    NonDivisibleWindow { window: usize, sub: usize },

    #[error("non-finite value in channel {channel} at index {index}")]
    NonFiniteValue { channel: usize, index: usize },

    #[error("invalid window configuration: {0}")]
    InvalidWindow(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("backward called without a recorded forward pass: {0}")]
    GraphNotRecorded(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    DivergenceDetected {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("cannot evaluate an empty prediction set")]
    EmptyEvaluation,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u8, expected: u8 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("{path}: line {line}, column {column}: {message}")]
    ParseError {
        path: String,
        line: u64,
        column: String,
        message: String,
    },

    #[error("unknown label `{label}` (vocabulary: {vocabulary})")]
    UnknownLabel { label: String, vocabulary: String },

    #[error("spec parse error at `{key}`: {message}")]
    SpecParseError { key: String, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyRecording => "EmptyRecording",
            Error::NonMonotonicTimestamps { .. } => "NonMonotonicTimestamps",
            Error::NonDivisibleWindow { .. } => "NonDivisibleWindow",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::InvalidWindow(_) => "InvalidWindow",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::GraphNotRecorded(_) => "GraphNotRecorded",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::InfeasibleSplit(_) => "InfeasibleSplit",
            Error::EmptyEvaluation => "EmptyEvaluation",
            Error::DegenerateData(_) => "DegenerateData",
            Error::FormatVersionMismatch { .. } => "FormatVersionMismatch",
            Error::CorruptCheckpoint(_) => "CorruptCheckpoint",
            Error::ParseError { .. } => "ParseError",
            Error::UnknownLabel { .. } => "UnknownLabel",
            Error::SpecParseError { .. } => "SpecParseError",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
