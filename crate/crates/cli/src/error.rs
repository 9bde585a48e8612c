use std::path::Path;

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hierhar::Error),

    #[error("missing frozen encoder: {0}")]
    MissingEncoder(String),

    #[error("invalid run config {path}: {message}")]
    Config { path: String, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::MissingEncoder(_) => "MissingFrozenEncoder",
            CliError::Config { .. } => "InvalidRunConfig",
            CliError::Usage(_) => "Usage",
            CliError::Io { .. } => "Io",
        }
    }

    /// One-line machine-readable form for stderr.
    pub fn to_json(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Core(hierhar::Error::SpecParseError { key, .. }) = self {
            v["key"] = json!(key);
        }
        if let CliError::Core(hierhar::Error::ParseError {
            path, line, column, ..
        }) = self
        {
            v["path"] = json!(path);
            v["line"] = json!(line);
            v["column"] = json!(column);
        }
        v.to_string()
    }
}
