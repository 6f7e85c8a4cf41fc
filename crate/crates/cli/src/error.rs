use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] orderlab::Error),

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse { message: String, line: usize, column: usize },

    #[error("missing {artifact}; run `orderlab {command}` first")]
    Dependency { artifact: String, command: String },

    #[error("{artifact} was produced by config {found}, current config is {expected}; rerun the stage or pass --force")]
    DigestMismatch { artifact: String, expected: String, found: String },

    #[error("{0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Machine-readable failure line written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requires: Option<String>,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::ConfigParse { .. } => "config",
            CliError::Dependency { .. } => "dependency",
            CliError::DigestMismatch { .. } => "digest_mismatch",
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        let (line, column) = match self {
            CliError::ConfigParse { line, column, .. } => (Some(*line), Some(*column)),
            _ => (None, None),
        };
        ErrorRecord {
            error: self.kind(),
            message: self.to_string(),
            line,
            column,
            requires: match self {
                CliError::Dependency { command, .. } => Some(command.clone()),
                _ => None,
            },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::ConfigParse { .. } => 2,
            _ => 1,
        }
    }
}
