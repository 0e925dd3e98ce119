use std::fmt;
use std::sync::Arc;

use super::SdeError;

/// Coefficient function `(state, θ, out)`; writes one value per state coordinate.
pub type VectorField = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// A diffusion model: drift, diagonal diffusion, parameters and initial state.
///
/// Coefficient functions are shared behind `Arc`, so cloning a spec or
/// swapping its parameter vector with [`DiffusionSpec::with_theta`] is cheap.
#[derive(Clone)]
pub struct DiffusionSpec {
    name: String,
    state_dim: usize,
    drift: Arc<VectorField>,
    diffusion: Arc<VectorField>,
    theta: Vec<f64>,
    param_names: Vec<String>,
    positive: Vec<bool>,
    x0: Vec<f64>,
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("theta", &self.theta)
            .field("x0", &self.x0)
            .finish_non_exhaustive()
    }
}

impl DiffusionSpec {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        drift: Arc<VectorField>,
        diffusion: Arc<VectorField>,
        theta: Vec<f64>,
        x0: Vec<f64>,
    ) -> Result<Self, SdeError> {
        if state_dim == 0 {
            return Err(SdeError::InvalidParameter("state dimension must be positive".into()));
        }
        if x0.len() != state_dim {
            return Err(SdeError::InvalidParameter(format!(
                "initial state has {} entries, state dimension is {state_dim}",
                x0.len()
            )));
        }
        if x0.iter().chain(&theta).any(|v| !v.is_finite()) {
            return Err(SdeError::InvalidParameter("initial state and parameters must be finite".into()));
        }
        let n = theta.len();
        Ok(Self {
            name: name.into(),
            state_dim,
            drift,
            diffusion,
            param_names: (0..n).map(|i| format!("theta{i}")).collect(),
            positive: vec![false; n],
            theta,
            x0,
        })
    }

    /// Scalar model from plain `f(x, θ)` coefficient functions.
    pub fn scalar<D, S>(name: impl Into<String>, drift: D, diffusion: S, theta: Vec<f64>, x0: f64) -> Result<Self, SdeError>
    where
        D: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        S: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            name,
            1,
            Arc::new(move |x: &[f64], th: &[f64], out: &mut [f64]| out[0] = drift(x[0], th)),
            Arc::new(move |x: &[f64], th: &[f64], out: &mut [f64]| out[0] = diffusion(x[0], th)),
            theta,
            vec![x0],
        )
    }

    /// Geometric Brownian motion, θ = (β, σ).
    pub fn gbm(beta: f64, sigma: f64, x0: f64) -> Result<Self, SdeError> {
        Ok(Self::scalar("gbm", |x, th| th[0] * x, |x, th| th[1] * x.abs(), vec![beta, sigma], x0)?
            .with_param_names(&["beta", "sigma"])
            .with_positive(&[false, true]))
    }

    /// Ornstein–Uhlenbeck process `dX = −γ(X − β̄)dt + σ dB`, θ = (γ, β̄, σ).
    pub fn ou(gamma: f64, beta_bar: f64, sigma: f64, x0: f64) -> Result<Self, SdeError> {
        Ok(Self::scalar("ou", |x, th| -th[0] * (x - th[1]), |_, th| th[2], vec![gamma, beta_bar, sigma], x0)?
            .with_param_names(&["gamma", "beta_bar", "sigma"])
            .with_positive(&[true, false, true]))
    }

    /// Brownian motion with drift, θ = (μ, σ).
    pub fn brownian(mu: f64, sigma: f64, x0: f64) -> Result<Self, SdeError> {
        Ok(Self::scalar("brownian", |_, th| th[0], |_, th| th[1], vec![mu, sigma], x0)?
            .with_param_names(&["mu", "sigma"])
            .with_positive(&[false, true]))
    }

    /// Marks which parameters must stay strictly positive during estimation.
    pub fn with_positive(mut self, mask: &[bool]) -> Self {
        self.positive = self.theta.iter().enumerate().map(|(i, _)| mask.get(i).copied().unwrap_or(false)).collect();
        self
    }

    pub fn with_param_names(mut self, names: &[&str]) -> Self {
        for (slot, n) in self.param_names.iter_mut().zip(names) {
            *slot = (*n).to_string();
        }
        self
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self, SdeError> {
        if theta.len() != self.theta.len() {
            return Err(SdeError::InvalidParameter(format!(
                "expected {} parameters, got {}",
                self.theta.len(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::InvalidParameter("parameters must be finite".into()));
        }
        let mut out = self.clone();
        out.theta = theta.to_vec();
        Ok(out)
    }

    pub fn with_x0(&self, x0: &[f64]) -> Result<Self, SdeError> {
        if x0.len() != self.state_dim || x0.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::InvalidParameter("initial state has wrong length or is not finite".into()));
        }
        let mut out = self.clone();
        out.x0 = x0.to_vec();
        Ok(out)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn positive_mask(&self) -> &[bool] {
        &self.positive
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn is_scalar(&self) -> bool {
        self.state_dim == 1
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, &self.theta, out)
    }

    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, &self.theta, out)
    }

    pub fn drift_with(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (self.drift)(x, theta, out)
    }

    pub fn diffusion_with(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, theta, out)
    }

    /// Drift of a scalar model at `x`.
    pub fn drift1(&self, x: f64) -> f64 {
        self.drift1_with(x, &self.theta)
    }

    pub fn diffusion1(&self, x: f64) -> f64 {
        self.diffusion1_with(x, &self.theta)
    }

    pub fn drift1_with(&self, x: f64, theta: &[f64]) -> f64 {
        let mut out = [0.0];
        (self.drift)(&[x], theta, &mut out);
        out[0]
    }

    pub fn diffusion1_with(&self, x: f64, theta: &[f64]) -> f64 {
        let mut out = [0.0];
        (self.diffusion)(&[x], theta, &mut out);
        out[0]
    }

    pub(crate) fn require_scalar(&self) -> Result<(), SdeError> {
        if self.state_dim == 1 {
            Ok(())
        } else {
            Err(SdeError::UnsupportedDimension(self.state_dim))
        }
    }
}

/// Parameters of `dX = βX dt + σX dB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmParams {
    pub beta: f64,
    pub sigma: f64,
    pub x0: f64,
}

impl GbmParams {
    pub fn new(beta: f64, sigma: f64, x0: f64) -> Result<Self, SdeError> {
        let p = Self { beta, sigma, x0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.beta.is_finite() && self.sigma.is_finite() && self.x0.is_finite()) {
            return Err(SdeError::InvalidParameter("GBM parameters must be finite".into()));
        }
        if self.x0 <= 0.0 {
            return Err(SdeError::InvalidParameter(format!("GBM x0 must be positive, got {}", self.x0)));
        }
        if self.sigma < 0.0 {
            return Err(SdeError::InvalidParameter(format!("GBM sigma must be nonnegative, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn spec(&self) -> DiffusionSpec {
        DiffusionSpec::gbm(self.beta, self.sigma, self.x0).expect("validated GBM parameters")
    }

    /// `E[X_{s+dt} | X_s = x]`.
    pub fn conditional_mean(&self, dt: f64, x: f64) -> f64 {
        x * (self.beta * dt).exp()
    }
}

/// Parameters of `dβ = −γ(β − β̄)dt + σ dB` started at `b0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub gamma: f64,
    pub beta_bar: f64,
    pub sigma: f64,
    pub b0: f64,
}

impl OuParams {
    pub fn new(gamma: f64, beta_bar: f64, sigma: f64, b0: f64) -> Result<Self, SdeError> {
        let p = Self { gamma, beta_bar, sigma, b0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        if ![self.gamma, self.beta_bar, self.sigma, self.b0].iter().all(|v| v.is_finite()) {
            return Err(SdeError::InvalidParameter("OU parameters must be finite".into()));
        }
        if self.gamma <= 0.0 {
            return Err(SdeError::InvalidParameter(format!("OU gamma must be positive, got {}", self.gamma)));
        }
        if self.sigma < 0.0 {
            return Err(SdeError::InvalidParameter(format!("OU sigma must be nonnegative, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn spec(&self) -> DiffusionSpec {
        DiffusionSpec::ou(self.gamma, self.beta_bar, self.sigma, self.b0).expect("validated OU parameters")
    }

    /// Mean and variance of the exact transition over a gap `dt` from `x`.
    pub fn transition_moments(&self, dt: f64, x: f64) -> (f64, f64) {
        let decay = (-self.gamma * dt).exp();
        let mean = self.beta_bar + (x - self.beta_bar) * decay;
        // 1 - e^{-2γΔ} via expm1 keeps precision for small gaps
        let var = self.sigma * self.sigma * -(-2.0 * self.gamma * dt).exp_m1() / (2.0 * self.gamma);
        (mean, var)
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_coefficients() {
        let g = DiffusionSpec::gbm(0.1, 0.3, 2.0).unwrap();
        assert_eq!(g.drift1(2.0), 0.2);
        assert!((g.diffusion1(2.0) - 0.6).abs() < 1e-15);
        assert_eq!(g.param_names(), ["beta", "sigma"]);
        assert_eq!(g.positive_mask(), [false, true]);
        let o = DiffusionSpec::ou(2.0, 0.5, 0.1, 0.0).unwrap();
        assert_eq!(o.drift1(1.5), -2.0);
        assert_eq!(o.diffusion1(-3.0), 0.1);
    }

    #[test]
    fn with_theta_checks_length() {
        let g = DiffusionSpec::gbm(0.1, 0.3, 1.0).unwrap();
        assert!(g.with_theta(&[0.1]).is_err());
        let h = g.with_theta(&[0.2, 0.4]).unwrap();
        assert_eq!(h.drift1(1.0), 0.2);
        assert_eq!(g.drift1(1.0), 0.1);
    }

    #[test]
    fn parameter_validation() {
        assert!(GbmParams::new(0.1, 0.2, 0.0).is_err());
        assert!(GbmParams::new(0.1, -0.2, 1.0).is_err());
        assert!(OuParams::new(0.0, 0.0, 1.0, 0.0).is_err());
        assert!(OuParams::new(1.0, 0.0, -1.0, 0.0).is_err());
        assert!(OuParams::new(1.0, 0.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn ou_moments_limits() {
        let p = OuParams::new(1.5, 0.2, 0.4, 0.0).unwrap();
        let (m, v) = p.transition_moments(100.0, 3.0);
        assert!((m - 0.2).abs() < 1e-12);
        assert!((v - p.stationary_variance()).abs() < 1e-12);
        let (m, v) = p.transition_moments(0.0, 3.0);
        assert_eq!(m, 3.0);
        assert_eq!(v, 0.0);
    }
}
