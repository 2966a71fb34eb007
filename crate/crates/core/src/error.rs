use thiserror::Error;

use crate::circuit::Violation;

#[derive(Debug, Error)]
pub enum EicsError {
    #[error("invalid circuit: {}", join_violations(.0))]
    InvalidCircuit(Vec<Violation>),

    #[error("cycle detected through edge {src} -> {dst}")]
    Cycle { src: String, dst: String },

    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("shape mismatch on {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("activation state does not match circuit: {0}")]
    Activations(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state dimension {dim} exceeds the dense guard {guard}; use the operator form")]
    DimensionGuard { dim: usize, guard: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("spectral gap is zero; pass a regularization beta > 0")]
    ZeroSpectralGap,

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl EicsError {
    /// Input errors map to CLI exit code 2, numeric ones to 3.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            EicsError::Numeric(_) | EicsError::ZeroSpectralGap | EicsError::NotSymmetric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, EicsError>;
