use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate flow: Jacobian determinant {det:e} at {at:?}")]
    DegenerateFlow { det: f64, at: Vec<f64> },

    #[error("point {at:?} outside the sampled domain")]
    OutOfDomain { at: Vec<f64> },

    #[error("trajectory from label {label:?} left the bounding box at t = {t}")]
    BlowUp { label: Vec<f64>, t: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("expression error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
