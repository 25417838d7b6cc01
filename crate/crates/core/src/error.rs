use thiserror::Error;

/// Errors produced by the simulation, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The lever triangle collapsed (A(q, th1) = 0); spring torque is undefined.
    #[error("degenerate actuator geometry: lever triangle collapsed")]
    SingularGeometry,

    #[error("solver diverged: regularization exceeded {0:.1e}")]
    SolverDiverged(f64),

    #[error("invalid policy encoding: expected dimension {expected}, got {got}")]
    InvalidEncoding { expected: usize, got: usize },

    #[error("time {t:.6} outside segment [0, {duration:.6}]")]
    Extrapolation { t: f64, duration: f64 },

    #[error("infeasible timing: derived last duration {got:.4} s below minimum {min:.4} s")]
    InfeasibleTiming { got: f64, min: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
