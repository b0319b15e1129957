use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("field has {found} values but the mesh has {expected} nodes")]
    MeshMismatch { expected: usize, found: usize },

    #[error("singular bordered system: {0}")]
    Singular(String),

    #[error("right-hand side violates the compatibility condition (defect {defect:.3e})")]
    Incompatible { defect: f64 },

    #[error("Newton iteration stalled after {iterations} steps at residual {residual:.3e}")]
    NewtonStalled { iterations: usize, residual: f64 },

    #[error("potential out of representable range (max |V| = {max_abs:.1} > 700)")]
    PotentialOverflow { max_abs: f64 },

    #[error("{solver} did not converge within {iterations} iterations (last update {last:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("inadmissible doping profile: {0}")]
    Inadmissible(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("no descent step found after {halvings} step-size halvings")]
    NoDescentStep { halvings: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
