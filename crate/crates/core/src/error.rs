use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input index {index} out of range for {n_inputs} inputs")]
    IndexOutOfRange { index: usize, n_inputs: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("division by a jet whose value is zero")]
    SingularOperand,

    #[error("tape handle is stale or belongs to a different tape")]
    ForeignTape,

    #[error("invalid variance reduction factor {0} (must be >= 1)")]
    InvalidFactor(f64),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("graft width mismatch: {0}")]
    GraftMismatch(String),

    #[error("{what} = {value} is outside the domain [{min}, {max}]")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("denominator of the exact solution vanished")]
    SingularDenominator,

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("stratum {stratum} of dimension {dim} lies entirely inside the cylinder")]
    StratificationInfeasible { dim: usize, stratum: usize },

    #[error("segment {segment} does not exist on a {geometry} geometry")]
    UnknownSegment {
        segment: &'static str,
        geometry: &'static str,
    },

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("point set has no labels")]
    MissingLabels,

    #[error("point set is incompatible with the loss: {0}")]
    IncompatibleSegments(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("checkpoint: bad magic string")]
    BadMagic,

    #[error("checkpoint: unsupported format version {0}")]
    VersionMismatch(u32),

    #[error("checkpoint: corrupt payload ({0})")]
    CorruptPayload(String),

    #[error("architecture mismatch: checkpoint has {found}, expected {expected}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
