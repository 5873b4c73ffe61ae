use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("{}{field}: {message}", line.map(|l| format!("line {l}, ")).unwrap_or_default())]
    Invalid { line: Option<usize>, field: String, message: String },

    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// Process-level failures of `run`.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}
