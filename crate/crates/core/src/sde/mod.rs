//! Diffusion models and their simulators.
//!
//! Models have the form `dX_t = μ(X_t, θ) dt + σ(X_t, θ) dB_t` with scalar or
//! diagonal diffusion. Besides the generic Euler–Maruyama scheme there are
//! exact simulators for geometric Brownian motion and the Ornstein–Uhlenbeck
//! process, and the growth model whose rate follows an OU process.

mod lamperti;
mod model;
mod path;
mod simulate;

pub use lamperti::{lamperti_transform, LampertiTransform};
pub use model::{DiffusionSpec, GbmParams, OuParams, VectorField};
pub use path::{quadratic_variation, Path, TimeGrid};
pub use simulate::{
    euler_path_from_normals, euler_step, gbm_exact_from_normals, simulate_euler, simulate_gbm_exact, simulate_ou,
    simulate_tv_growth,
};

#[derive(Debug, thiserror::Error)]
pub enum SdeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("simulation diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
    #[error("Lamperti transform undefined: diffusion coefficient is {value} at x = {x}")]
    TransformUndefined { x: f64, value: f64 },
    #[error("unsupported state dimension {0}: only scalar models are supported here")]
    UnsupportedDimension(usize),
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
}
