use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("perturbation angle list has {got} entries, receiver has {expected} photodiodes")]
    AngleListMismatch { expected: usize, got: usize },

    #[error("{count} elements cannot be laid out on a square grid")]
    LayoutUnsupported { count: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("bad current range: lower {lower} mA must be positive and below upper {upper} mA")]
    BadRange { lower: f64, upper: f64 },

    #[error("cannot select {requested} vectors from a universe of {available}")]
    SubsetInfeasible { requested: usize, available: usize },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used in the CLI's error document.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::AngleListMismatch { .. } => "AngleListMismatch",
            Error::LayoutUnsupported { .. } => "LayoutUnsupported",
            Error::Domain(_) => "DomainError",
            Error::DegenerateGeometry(_) => "DegenerateGeometry",
            Error::BadRange { .. } => "BadRange",
            Error::SubsetInfeasible { .. } => "SubsetInfeasible",
            Error::SingularSystem(_) => "SingularSystem",
            Error::ConfigMismatch(_) => "ConfigMismatch",
            Error::InvalidCodebook(_) => "InvalidCodebook",
            Error::Parse { .. } => "ParseError",
            Error::Validation { .. } => "ValidationError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
