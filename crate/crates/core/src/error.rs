use thiserror::Error;

/// Errors raised by the spectral EOT engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EotError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is empty")]
    Empty,

    #[error("matrix contains a non-finite entry")]
    NonFinite,

    #[error("matrix is not symmetric: asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NonSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("symmetric eigensolver did not converge")]
    EigenFailure,

    #[error("singular value decomposition did not converge")]
    SvdFailure,

    #[error("eigenvalue {value:e} is below the admissible floor {floor:e}")]
    NegativeEigenvalue { value: f64, floor: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {value:e} below {floor:e}")]
    NotPsd { value: f64, floor: f64 },

    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),

    #[error("alignment failed: {0}")]
    AlignmentResidual(String),

    #[error("B is not reachable from A: rank(A) = {rank_a} < rank(B) = {rank_b}; swap the marginals (one of A -> B or B -> A always holds)")]
    NotReachable { rank_a: usize, rank_b: usize },

    #[error("no admissible Monge factor: null space of dimension {available} cannot carry a Schur complement of rank {needed}")]
    MongeConstructionFailure { available: usize, needed: usize },

    #[error("the Schur complement B/A does not vanish (norm {0:e}); the optimal map is not unique")]
    SchurNotZero(f64),

    #[error("correlation has a singular value {0} >= 1; the coupling is singular")]
    SingularCoupling(f64),

    #[error("Q has eigenvalue {min:e} below -1e-8 * {max:e}")]
    IndefiniteQ { min: f64, max: f64 },

    #[error("the path was not built from a canonical pair")]
    NotCanonical,

    #[error("decay exponent must exceed 1, got {0}")]
    AlphaOutOfRange(f64),

    #[error("invalid process order: {0}")]
    InvalidOrder(String),

    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },

    #[error("relative covariance has eigenvalue {0:e} of I + T at or below tolerance")]
    SingularRegime(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl EotError {
    /// Whether the error stems from invalid input or configuration rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            EotError::NotSquare { .. }
                | EotError::DimensionMismatch { .. }
                | EotError::Empty
                | EotError::NonFinite
                | EotError::NonSymmetric { .. }
                | EotError::NotPsd { .. }
                | EotError::InvalidEpsilon(_)
                | EotError::InvalidTolerance(_)
                | EotError::AlphaOutOfRange(_)
                | EotError::InvalidOrder(_)
                | EotError::InvalidConfig(_)
                | EotError::Parse(_)
                | EotError::Io(_)
        )
    }
}

impl From<std::io::Error> for EotError {
    fn from(e: std::io::Error) -> Self {
        EotError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EotError>;
