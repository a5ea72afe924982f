use crate::solver::ContractionReport;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("DomainError: {0}")]
    Domain(String),

    /// The requested value overflows f64 on the log scale; the payload is
    /// the log-scale magnitude that could not be exponentiated.
    #[error("OverflowError: log-scale magnitude {log_value} exceeds the representable range")]
    Overflow { log_value: f64 },

    #[error("IndexError: {0}")]
    Index(String),

    /// Series convergence could not be certified at the configured horizon.
    #[error("TailError: {0}")]
    Tail(String),

    /// A model hypothesis (p > 0, F >= 0, q >= 0, Lipschitz bound) was
    /// violated at an evaluated point.
    #[error("ModelError: {0}")]
    Model(String),

    #[error("NoContractionError: contraction constant {} + tail {} >= 1", .0.constant, .0.tail_bound)]
    NoContraction(ContractionReport),

    #[error("MaxIterError: no convergence within {iterations} iterations (last defect {final_defect})")]
    MaxIter { iterations: usize, final_defect: f64 },

    #[error("ParseError: line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ValidationError: key `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short class name, printed first on stderr by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Domain(_) => "DomainError",
            Error::Overflow { .. } => "OverflowError",
            Error::Index(_) => "IndexError",
            Error::Tail(_) => "TailError",
            Error::Model(_) => "ModelError",
            Error::NoContraction(_) => "NoContractionError",
            Error::MaxIter { .. } => "MaxIterError",
            Error::Parse { .. } => "ParseError",
            Error::Validation { .. } => "ValidationError",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
