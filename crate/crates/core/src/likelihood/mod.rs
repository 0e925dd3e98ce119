//! Likelihood-based and estimating-equation inference for exactly observed
//! diffusions.
//!
//! The log-likelihood of observations `x_{t_0}, …, x_{t_n}` conditions on the
//! first value and sums transition log-densities over consecutive pairs.
//! Densities come in several flavours, all behind [`TransitionDensity`]:
//! closed forms for GBM and OU, the Euler Gaussian approximation, a
//! Crank–Nicolson Fokker–Planck solver, and an importance-sampled bridge
//! estimator over a fine latent grid.

mod bridge;
mod density;
mod estimating;
mod fit;
mod fokker_planck;
mod observations;

pub use bridge::{bridge_loglikelihood, bridge_pair_density, bridge_pair_logdensity, BridgeSettings};
pub use density::{
    discrete_loglikelihood, euler_transition_logdensity, gbm_transition_logdensity, ou_transition_logdensity,
    DensityKind, TransitionDensity,
};
pub use estimating::{
    ee_solve, mc_conditional_expectation, Centering, EeOptions, EstimatingFunction, McExpectation, PsiFn,
};
pub use fit::{mle_fit, FitResult, MleOptions};
pub use fokker_planck::{fokker_planck_transition_density, FokkerPlanckSettings, FpSolution};
pub use observations::ObservationSet;

use crate::sde::SdeError;

#[derive(Debug, thiserror::Error)]
pub enum LikelihoodError {
    #[error(transparent)]
    Model(#[from] SdeError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate density: {0}")]
    DegenerateDensity(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite log-density term for observation pair {pair}")]
    NonFiniteTerm { pair: usize },
    #[error("objective is not finite at the initial parameter vector")]
    InvalidStart,
    #[error("Monte Carlo estimation failed: all {j} replicate paths diverged")]
    EstimationFailed { j: usize },
    #[error("importance weights are all zero or non-finite for observation pair {pair}")]
    DegenerateImportance { pair: usize },
    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

impl From<crate::table::TableError> for LikelihoodError {
    fn from(e: crate::table::TableError) -> Self {
        Self::Model(SdeError::Table(e))
    }
}
