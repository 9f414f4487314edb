use thiserror::Error;

/// Errors produced by the estimation pipeline and its helpers.
#[derive(Debug, Error)]
pub enum MldsError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("tensor is not symmetric (relative violation {violation:.3e})")]
    Asymmetric { violation: f64 },

    #[error("power update produced a zero vector")]
    ZeroUpdate,

    #[error("tensor decomposition failed in round {round}: every restart degenerated")]
    DecompositionFailure { round: usize },

    #[error("degenerate mixture: K-th eigenvalue of the second moment is {sigma_k:.3e}")]
    DegenerateMixture { sigma_k: f64 },

    #[error("trajectory length {t} is shorter than the horizon {l}")]
    InsufficientLength { t: usize, l: usize },

    #[error("horizon {l} is too short for an order-{n} realization (need at least {})", 2 * n + 1)]
    InsufficientHorizon { l: usize, n: usize },

    #[error("system is not strictly stable (spectral radius {radius})")]
    Unstable { radius: f64 },

    #[error("energy series did not converge within {terms} terms")]
    NonConvergence { terms: usize },

    #[error("could not draw a non-nilpotent state matrix after {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("dataset carries no component labels")]
    MissingLabels,

    #[error("{k} components exceeds the brute-force matching limit of {max}")]
    TooManyComponents { k: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MldsError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(MldsError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
