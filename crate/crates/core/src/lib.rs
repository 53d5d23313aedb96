pub mod activation;
pub mod curves;
pub mod error;
pub mod glm;
pub mod model;
pub mod quadrature;
pub mod sim;
pub mod solver;

pub use activation::{standardize, ActivationProfile, Nonlinearity};
pub use error::{Error, Result};
pub use model::ModelPoint;
pub use solver::{k_derivatives, k_value, residuals, solve_zetas, KDerivatives, KappaSet, Zetas};
