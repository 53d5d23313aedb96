use thiserror::Error;

/// Errors raised by the theory, quadrature, and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("activation has Gaussian variance {0:e}; a constant cannot be standardized")]
    ConstantActivation(f64),

    #[error("cannot parse activation `{0}` (expected relu, tanh, identity or hermite:[c1,c2,...])")]
    ActivationSyntax(String),

    #[error("degenerate activation: {0}")]
    DegenerateActivation(&'static str),

    #[error("pole in the self-consistent equations: {0}")]
    Pole(&'static str),

    #[error("solver did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("unstable finite difference for {what}: {coarse} (step h) vs {fine} (step h/2)")]
    DerivativeUnstable { what: &'static str, coarse: f64, fine: f64 },

    #[error("free-energy derivative mismatch: finite difference {fd} vs envelope {envelope}")]
    EnvelopeMismatch { fd: f64, envelope: f64 },

    #[error("inner quadrature failed at v = {v}, y = {y}")]
    Quadrature { v: f64, y: f64 },

    #[error("matrix is not positive definite: pivot {pivot:e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("memory budget exceeded: need {need} bytes, budget is {budget} bytes")]
    MemoryBudget { need: u64, budget: u64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
