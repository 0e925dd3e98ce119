//! Penalized spline smoothing with an ODE-fidelity penalty.
//!
//! The trajectory is a cubic B-spline `x(t) = Σ c_j B_j(t)` fitted jointly
//! with drift parameters `θ` by minimizing
//! `−Σ log f(y_i | x(t_i)) + λ ∫ (x'(t) − μ(x(t), θ))² dt`,
//! optionally with the residual scaled by `1/σ(x(t), θ)`.

mod basis;
mod fit;
mod objective;

pub use basis::BasisConfig;
pub use fit::{collocation_fit, CollocationFit, CollocationOptions};
pub use objective::{
    collocation_gradient, collocation_objective, lambda_for_sigma, map_equivalent_sigma, CollocationState, PenaltySpec,
    Problem, WeightMode,
};

use crate::sde::SdeError;
use crate::statespace::StateSpaceError;

#[derive(Debug, thiserror::Error)]
pub enum CollocationError {
    #[error(transparent)]
    Model(#[from] SdeError),
    #[error(transparent)]
    Observation(#[from] StateSpaceError),
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("diffusion coefficient vanishes at t = {t} (x = {x}); the weighted penalty is undefined")]
    WeightSingularity { t: f64, x: f64 },
    #[error("objective is not finite")]
    NonFinite,
}
