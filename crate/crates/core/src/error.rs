use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field has nonzero mean {value:e} where a mean-zero field is required")]
    NonzeroMean { value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integration blew up at t = {time}: {reason} (last finite mass {last_mass:e}, energy {last_energy:e})")]
    BlowUp {
        time: f64,
        reason: String,
        last_mass: f64,
        last_energy: f64,
    },

    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular linear system in {context} (condition estimate {condition:e})")]
    Singular { context: &'static str, condition: f64 },

    #[error("orbit collapsed to equilibrium (amplitude {amplitude:e})")]
    OrbitCollapsed { amplitude: f64 },

    #[error("period collapsed to {period:e}")]
    PeriodCollapse { period: f64 },

    #[error("doubled orbit reconverged to the doubled cover of the original orbit (difference {difference:e})")]
    DoubledCover { difference: f64 },

    #[error("eigen decomposition failed: {0}")]
    Eigen(String),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
