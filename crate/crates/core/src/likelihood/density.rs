use std::f64::consts::PI;

use super::bridge::{bridge_pair_logdensity, BridgeSettings};
use super::fokker_planck::{fokker_planck_log_density_at, FokkerPlanckSettings};
use super::{LikelihoodError, ObservationSet};
use crate::parallel::map_indexed;
use crate::sde::{DiffusionSpec, GbmParams, OuParams};

fn gaussian_logpdf(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (y - mean) * (y - mean) / (2.0 * var)
}

fn check_dt(dt: f64) -> Result<(), LikelihoodError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(LikelihoodError::InvalidArgument(format!("time gap must be positive, got {dt}")))
    }
}

/// Log of the lognormal GBM transition density of `y` given `x` after `dt`.
pub fn gbm_transition_logdensity(p: &GbmParams, dt: f64, x: f64, y: f64) -> Result<f64, LikelihoodError> {
    check_dt(dt)?;
    if p.sigma <= 0.0 {
        return Err(LikelihoodError::DegenerateDensity("GBM density needs sigma > 0".into()));
    }
    if !(x > 0.0 && y > 0.0) {
        return Err(LikelihoodError::InvalidArgument(format!("GBM states must be positive, got x={x}, y={y}")));
    }
    let var = p.sigma * p.sigma * dt;
    let mean = (p.beta - 0.5 * p.sigma * p.sigma) * dt;
    Ok(gaussian_logpdf((y / x).ln(), mean, var) - y.ln())
}

/// Log of the exact Gaussian OU transition density.
pub fn ou_transition_logdensity(p: &OuParams, dt: f64, x: f64, y: f64) -> Result<f64, LikelihoodError> {
    check_dt(dt)?;
    if p.sigma <= 0.0 {
        return Err(LikelihoodError::DegenerateDensity("OU density needs sigma > 0".into()));
    }
    let (mean, var) = p.transition_moments(dt, x);
    Ok(gaussian_logpdf(y, mean, var))
}

/// Euler (one-step Gaussian) approximation: `y ~ N(x + μ(x)dt, σ(x)²dt)`,
/// coordinatewise for diagonal models.
pub fn euler_transition_logdensity(spec: &DiffusionSpec, dt: f64, x: &[f64], y: &[f64]) -> Result<f64, LikelihoodError> {
    check_dt(dt)?;
    let d = spec.state_dim();
    if x.len() != d || y.len() != d {
        return Err(LikelihoodError::InvalidArgument(format!("states must have dimension {d}")));
    }
    let mut mu = vec![0.0; d];
    let mut sig = vec![0.0; d];
    spec.drift_into(x, &mut mu);
    spec.diffusion_into(x, &mut sig);
    let mut total = 0.0;
    for i in 0..d {
        if !(sig[i] > 0.0) {
            return Err(LikelihoodError::DegenerateDensity(format!("diffusion coefficient is {} at x={x:?}", sig[i])));
        }
        total += gaussian_logpdf(y[i], x[i] + mu[i] * dt, sig[i] * sig[i] * dt);
    }
    Ok(total)
}

/// Which approximation a [`TransitionDensity`] uses.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    ClosedFormGbm,
    ClosedFormOu,
    Euler,
    FokkerPlanck(FokkerPlanckSettings),
    BridgeMc(BridgeSettings),
}

impl DensityKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ClosedFormGbm => "closed_form_gbm",
            Self::ClosedFormOu => "closed_form_ou",
            Self::Euler => "euler",
            Self::FokkerPlanck(_) => "fokker_planck",
            Self::BridgeMc(_) => "bridge_mc",
        }
    }
}

/// A parametric family of transition densities `p_θ(dt, x, y)`.
///
/// The family is represented by a [`DiffusionSpec`] whose parameter vector is
/// the free θ; closed-form kinds use the GBM `(β, σ)` or OU `(γ, β̄, σ)`
/// layouts of [`DiffusionSpec::gbm`] and [`DiffusionSpec::ou`].
#[derive(Debug, Clone)]
pub struct TransitionDensity {
    kind: DensityKind,
    model: DiffusionSpec,
}

impl TransitionDensity {
    pub fn gbm(p: GbmParams) -> Result<Self, LikelihoodError> {
        p.validate()?;
        Ok(Self { kind: DensityKind::ClosedFormGbm, model: p.spec() })
    }

    pub fn ou(p: OuParams) -> Result<Self, LikelihoodError> {
        p.validate()?;
        Ok(Self { kind: DensityKind::ClosedFormOu, model: p.spec() })
    }

    pub fn euler(spec: DiffusionSpec) -> Self {
        Self { kind: DensityKind::Euler, model: spec }
    }

    pub fn fokker_planck(spec: DiffusionSpec, settings: FokkerPlanckSettings) -> Result<Self, LikelihoodError> {
        spec.require_scalar()?;
        Ok(Self { kind: DensityKind::FokkerPlanck(settings), model: spec })
    }

    pub fn bridge(spec: DiffusionSpec, settings: BridgeSettings) -> Result<Self, LikelihoodError> {
        spec.require_scalar()?;
        settings.validate()?;
        Ok(Self { kind: DensityKind::BridgeMc(settings), model: spec })
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn model(&self) -> &DiffusionSpec {
        &self.model
    }

    pub fn theta(&self) -> &[f64] {
        self.model.theta()
    }

    pub fn positive_mask(&self) -> &[bool] {
        self.model.positive_mask()
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self, LikelihoodError> {
        Ok(Self { kind: self.kind.clone(), model: self.model.with_theta(theta)? })
    }

    /// Seed of the Monte Carlo streams, if the kind uses any.
    pub fn seed(&self) -> Option<u64> {
        match &self.kind {
            DensityKind::BridgeMc(s) => Some(s.seed),
            _ => None,
        }
    }

    fn gbm_params(&self) -> GbmParams {
        let th = self.model.theta();
        GbmParams { beta: th[0], sigma: th[1], x0: 1.0 }
    }

    fn ou_params(&self) -> OuParams {
        let th = self.model.theta();
        OuParams { gamma: th[0], beta_bar: th[1], sigma: th[2], b0: 0.0 }
    }

    /// `log p_θ(dt, x, y)`; `pair` keys the random streams of Monte Carlo kinds.
    pub fn log_density(&self, pair: usize, dt: f64, x: &[f64], y: &[f64]) -> Result<f64, LikelihoodError> {
        match &self.kind {
            DensityKind::ClosedFormGbm => gbm_transition_logdensity(&self.gbm_params(), dt, x[0], y[0]),
            DensityKind::ClosedFormOu => {
                let p = self.ou_params();
                if !(p.gamma > 0.0) {
                    return Err(LikelihoodError::InvalidArgument("OU gamma must be positive".into()));
                }
                ou_transition_logdensity(&p, dt, x[0], y[0])
            }
            DensityKind::Euler => euler_transition_logdensity(&self.model, dt, x, y),
            DensityKind::FokkerPlanck(s) => fokker_planck_log_density_at(&self.model, dt, x[0], y[0], s),
            DensityKind::BridgeMc(s) => bridge_pair_logdensity(&self.model, pair, dt, x[0], y[0], s),
        }
    }

    fn is_expensive(&self) -> bool {
        matches!(self.kind, DensityKind::FokkerPlanck(_) | DensityKind::BridgeMc(_))
    }
}

/// `Σ_i log p_θ(t_{i+1} − t_i, x_{t_i}, x_{t_{i+1}})`, conditioning on the first observation.
pub fn discrete_loglikelihood(td: &TransitionDensity, obs: &ObservationSet) -> Result<f64, LikelihoodError> {
    if obs.len() < 2 {
        return Err(LikelihoodError::InsufficientData { needed: 2, got: obs.len() });
    }
    let term = |i: usize| -> Result<f64, LikelihoodError> {
        let (dt, x, y) = obs.pair(i);
        match td.log_density(i, dt, x, y) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(LikelihoodError::NonFiniteTerm { pair: i }),
            Err(e) => Err(e),
        }
    };
    let terms: Vec<Result<f64, LikelihoodError>> = if td.is_expensive() {
        map_indexed(obs.n_pairs(), term)
    } else {
        (0..obs.n_pairs()).map(term).collect()
    };
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total)
}
