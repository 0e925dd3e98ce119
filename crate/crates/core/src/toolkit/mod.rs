//! Run configuration, synthetic-data adequacy checks and the acceptance
//! suite.

pub mod acceptance;
mod adequacy;
mod config;

pub use acceptance::{run_acceptance, run_acceptance_with, AcceptanceOptions, AcceptanceReport, CriterionOutcome};
pub use adequacy::{
    envelope_check, synthetic_replicates, AdequacyReport, Band, ModelContext, Replicate, Simulator, StatisticCheck,
    StatisticFn, StatisticSet, Verdict,
};
pub use config::{key_kind, ConfigError, RunConfig, ValueKind, KEYS, SECTIONS};

use crate::collocation::CollocationError;
use crate::likelihood::LikelihoodError;
use crate::sde::SdeError;
use crate::statespace::StateSpaceError;

#[derive(Debug, thiserror::Error)]
pub enum ToolkitError {
    #[error(transparent)]
    Model(#[from] SdeError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    StateSpace(#[from] StateSpaceError),
    #[error(transparent)]
    Collocation(#[from] CollocationError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("incomplete model context: {0}")]
    IncompleteContext(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
}
