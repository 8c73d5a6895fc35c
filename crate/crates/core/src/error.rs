use thiserror::Error;

/// Errors raised by mesh construction, local operators and the time-stepping solver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("distortion {0} is outside [0, 0.45)")]
    Distortion(f64),

    #[error("degenerate cell {cell}: zero or negative area")]
    DegenerateCell { cell: usize },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("rank deficiency in {what}: expected kernel dimension {expected}, found {found}")]
    RankDeficient {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("incompatible data: {0}")]
    Incompatible(String),

    #[error("mesh too large for dense computation ({dofs} dofs > cap {cap})")]
    TooLarge { dofs: usize, cap: usize },

    #[error("sparse factorisation failed: {0}")]
    Factorisation(String),

    #[error("non-finite value in solution at step {step}")]
    NonFinite { step: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{scheme} k = {k}, n = {n}: {source}")]
    Study {
        scheme: &'static str,
        k: usize,
        n: usize,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable short name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMesh(_) => "invalid-mesh",
            Error::Distortion(_) => "distortion",
            Error::DegenerateCell { .. } => "degenerate-cell",
            Error::Singular(_) => "singular",
            Error::RankDeficient { .. } => "rank-deficient",
            Error::Unsupported(_) => "unsupported",
            Error::Incompatible(_) => "incompatible",
            Error::TooLarge { .. } => "too-large",
            Error::Factorisation(_) => "factorisation",
            Error::NonFinite { .. } => "non-finite",
            Error::Parse { .. } => "parse",
            Error::Study { source, .. } => source.kind(),
            Error::Io(_) => "io",
        }
    }
}
