use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("Cholesky factorization failed for active set {active:?}")]
    CholeskyFailed { active: Vec<usize> },

    #[error("block inversion failed for template of size {size}")]
    BlockInversionFailed { size: usize },

    #[error("lasso did not converge after {sweeps} sweeps")]
    LassoNotConverged { sweeps: usize },

    #[error("design restricted to the target model is rank deficient")]
    RankDeficient,

    #[error("the trace never visits the target model; run a longer chain")]
    NoTargetVisits,

    #[error("exact enumeration refused for p = {0} (limit is 20)")]
    EnumerationTooLarge(usize),

    #[error("column {0} is constant")]
    ConstantColumn(usize),

    #[error("node {node} failed: {source}")]
    NodeFailed {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("kernel failure: {0}")]
    Kernel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (factorizations, convergence,
    /// degenerate data) as opposed to bad inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite(_)
            | Error::CholeskyFailed { .. }
            | Error::BlockInversionFailed { .. }
            | Error::LassoNotConverged { .. }
            | Error::RankDeficient
            | Error::NoTargetVisits
            | Error::ConstantColumn(_)
            | Error::Kernel(_)
            | Error::NonFinite(_) => true,
            Error::NodeFailed { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
