use crate::ode::OdeError;

/// Errors raised by the geometric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AhxError {
    #[error("invalid metric family: {0}")]
    InvalidFamily(String),
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("singular boundary metric at rho = {rho}")]
    SingularMetric { rho: f64 },
    #[error("trapped or slow geodesic: hyperbolic length {length:.3} exceeds t_max = {t_max}")]
    TrappedOrSlow { length: f64, t_max: f64 },
    #[error("trajectory left the affine chart at y = {y:?}")]
    ChartExit { y: Vec<f64> },
    #[error("integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("trajectory does not reach the outgoing boundary")]
    IncompleteTrajectory,
    #[error("Newton iteration failed after {iters} iterations (residual {residual:e})")]
    NewtonFailure { iters: usize, residual: f64 },
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("rank-{rank} tensor of weight {weight} is not admissible (need weight >= {min})")]
    InadmissibleWeight { rank: usize, weight: i32, min: i32 },
    #[error("not supported: {0}")]
    Unsupported(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("residual {residual:e} above tolerance {tol:e}: {what}")]
    ResidualTooLarge { what: String, residual: f64, tol: f64 },
    #[error("support leakage: boundary-node contribution {0:e}")]
    SupportLeakage(f64),
}

pub type Result<T> = std::result::Result<T, AhxError>;
