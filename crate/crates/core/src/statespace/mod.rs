//! Partially and noisily observed diffusions.
//!
//! Observations `Y_i` depend only on the state at `t_i` through an
//! [`ObservationModel`]. The bootstrap [`particle_filter`] estimates both the
//! likelihood and the filtered path; [`kalman_loglik`] gives exact answers for
//! linear-Gaussian models and serves as its oracle.

mod kalman;
mod observation;
mod particle;
mod preset;

pub use kalman::{kalman_loglik, ou_to_ssm, KalmanOutput, LinearGaussianSSM, TransitionBlock};
pub use observation::{Link, NoiseKind, NoisyObservationSet, ObservationModel};
pub use particle::{
    particle_filter, profile_loglik, systematic_resample, FilterOptions, FilterOutput, InitialState, ParticleCloud,
    StateModel, TransitionKernel,
};
pub use preset::{preset_integrated_rw_t, IntegratedRandomWalk};

use crate::sde::SdeError;

#[derive(Debug, thiserror::Error)]
pub enum StateSpaceError {
    #[error(transparent)]
    Model(#[from] SdeError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "particle filter degenerated at observation {step}: every particle has zero weight \
         (increase the observation scale or the number of particles)"
    )]
    FilterDegenerate { step: usize },
    #[error("numerical singularity at observation {step}: innovation covariance is not positive definite")]
    NumericalSingularity { step: usize },
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
}
