use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("factor kinds do not match ({0})")]
    KindMismatch(&'static str),

    #[error("factor is not normalizable at coordinate {coordinate} (precision {precision})")]
    NonNormalizable { coordinate: usize, precision: f64 },

    #[error("gamma factor is not normalizable (shape {shape}, rate {rate})")]
    GammaNonNormalizable { shape: f64, rate: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("projection skipped: {0}")]
    Skip(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

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

pub type Result<T> = std::result::Result<T, Error>;
