use thiserror::Error;

/// Error type shared by all core operations.
#[derive(Debug, Error)]
pub enum FraError {
    /// An input contained NaN or infinity where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Operand dimensions do not line up.
    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    /// A parameter violates its documented domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// An index lies outside its grid.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
}

pub type Result<T> = std::result::Result<T, FraError>;

/// Non-fatal events recorded while an operation proceeds under a
/// documented fallback policy (degenerate rows, vanishing gradients, ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// A zero-norm feature row was replaced by a uniform unit vector.
    ZeroNormRow { side: &'static str, row: usize },
    /// A previous-iteration loss of zero forced the improvement ratio to 1.
    ZeroPreviousLoss { encoder: usize },
    /// The filtered gradient vanished; momentum and perturbation were left unchanged.
    VanishingGradient { iter: usize },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::ZeroNormRow { side, row } => {
                write!(
                    f,
                    "zero-norm {side} row {row} replaced by uniform unit vector"
                )
            }
            Warning::ZeroPreviousLoss { encoder } => {
                write!(
                    f,
                    "previous loss of encoder {encoder} was zero; ratio set to 1"
                )
            }
            Warning::VanishingGradient { iter } => {
                write!(
                    f,
                    "filtered gradient vanished at iteration {iter}; state unchanged"
                )
            }
        }
    }
}
