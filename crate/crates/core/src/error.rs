use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("infeasible sampling density: {0}")]
    Infeasible(String),

    #[error("observation has zero probability under the ensemble")]
    ZeroProbability,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("training diverged at epoch {epoch}: loss {loss:.3e} exceeds 1e6 x initial {initial:.3e}")]
    Divergence { epoch: usize, loss: f64, initial: f64 },

    #[error("non-finite gradient at epoch {epoch}, step {step}")]
    NonFiniteGradient { epoch: usize, step: usize },

    #[error("regime/model mismatch: {0}")]
    RegimeMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }

    /// True for errors caused by bad configuration or inputs, as opposed to
    /// runtime failures such as divergence or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::ShapeMismatch { .. }
                | Error::NonFinite(_)
                | Error::Infeasible(_)
                | Error::Precondition(_)
                | Error::RegimeMismatch(_)
                | Error::ZeroProbability
        )
    }
}
