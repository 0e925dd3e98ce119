//! Simulation and statistical inference for stochastic differential
//! equation models that are observed exactly at discrete times, partially,
//! or with measurement noise.
//!
//! The crate is organised by task:
//!
//! - [`sde`]: model definitions, exact and Euler–Maruyama simulators, the
//!   time-varying-parameter growth system and the Lamperti transform.
//! - [`likelihood`]: transition densities (closed form, Euler, Fokker–Planck,
//!   bridge importance sampling), maximum likelihood and Monte Carlo
//!   martingale estimating functions.
//! - [`statespace`]: observation models, the bootstrap particle filter, the
//!   Kalman filter used as its oracle, and the integrated random walk preset.
//! - [`collocation`]: penalized spline smoothing of ODE-like trajectories
//!   with joint parameter estimation.
//! - [`toolkit`]: run configuration, synthetic-data adequacy checks and the
//!   acceptance suite.
//!
//! Every stochastic routine takes an explicit `u64` seed and derives its
//! random numbers from [`rng::stream`], so results never depend on the
//! number of worker threads.

pub mod collocation;
pub mod likelihood;
pub mod optim;
pub mod parallel;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod statespace;
pub mod table;
pub mod toolkit;
