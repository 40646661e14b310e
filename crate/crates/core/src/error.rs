use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("equilibrium did not converge after {iterations} iterations (residual max-norm {residual:.6e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian at Newton iteration {iteration} (residual max-norm {residual:.6e})")]
    SingularJacobian { iteration: usize, residual: f64 },

    #[error("equilibrium residual {residual:.3e} is above tolerance {tol:.1e}")]
    NotConverged { residual: f64, tol: f64 },

    #[error("eigenvalue solver did not converge")]
    EigenSolver,

    #[error("origin is not strictly stable (margin {margin:?}); choose a different origin")]
    UnstableOrigin { margin: Option<f64> },

    #[error("region dimension {0} is not supported (1 to 6 axes)")]
    DimensionGuard(usize),

    #[error("acceptance ratio {ratio:.2e} after {draws} draws is below 1e-3; the sampling box probably does not match the region")]
    LowAcceptance { ratio: f64, draws: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("point lies outside the region")]
    OutsideRegion,

    #[error("parameter spaces differ")]
    SpaceMismatch,

    #[error("invalid CSI weights ({w_m}, {w_s}, {w_d}): each must be in [0, 1] and they must sum to 1")]
    InvalidWeights { w_m: f64, w_s: f64, w_d: f64 },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("singular integrator solve during transfer: {0}")]
    TransferSolve(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by user input rather than by numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Config(_)
                | Error::Parse(_)
                | Error::DimensionGuard(_)
                | Error::InvalidWeights { .. }
                | Error::SpaceMismatch
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
