use std::f64::consts::PI;

use super::{discrete_loglikelihood, LikelihoodError, ObservationSet, TransitionDensity};
use crate::rng;
use crate::sde::DiffusionSpec;

/// Settings of the importance-sampled bridge density estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSettings {
    /// Number of Euler substeps per observation interval (`m_sub − 1` latent points).
    pub m_sub: usize,
    /// Importance samples per observation pair.
    pub j_samples: usize,
    pub seed: u64,
}

impl BridgeSettings {
    pub fn new(m_sub: usize, j_samples: usize, seed: u64) -> Result<Self, LikelihoodError> {
        let s = Self { m_sub, j_samples, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), LikelihoodError> {
        if self.m_sub < 2 {
            return Err(LikelihoodError::InvalidArgument(format!("m_sub must be at least 2, got {}", self.m_sub)));
        }
        if self.j_samples == 0 {
            return Err(LikelihoodError::InvalidArgument("j_samples must be positive".into()));
        }
        Ok(())
    }
}

fn log_normal_pdf(v: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (v - mean) * (v - mean) / (2.0 * var)
}

/// Log-weight of one latent path: Euler density of the full fine path over
/// the bridge proposal density of its interior points.
fn bridge_log_weight(spec: &DiffusionSpec, dt: f64, x: f64, y: f64, m: usize, z: &[f64]) -> f64 {
    let delta = dt / m as f64;
    let mut xk = x;
    let mut logw = 0.0;
    for (k, &zk) in z.iter().enumerate().take(m - 1) {
        let remaining = (m - k) as f64;
        let sig = spec.diffusion1(xk);
        let mu = spec.drift1(xk);
        if !(sig > 0.0 && sig.is_finite() && mu.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let mean = xk + (y - xk) / remaining;
        let var = sig * sig * delta * (remaining - 1.0) / remaining;
        let next = mean + var.sqrt() * zk;
        logw += log_normal_pdf(next, xk + mu * delta, sig * sig * delta) - log_normal_pdf(next, mean, var);
        xk = next;
    }
    let sig = spec.diffusion1(xk);
    let mu = spec.drift1(xk);
    if !(sig > 0.0 && sig.is_finite() && mu.is_finite()) {
        return f64::NEG_INFINITY;
    }
    logw + log_normal_pdf(y, xk + mu * delta, sig * sig * delta)
}

/// Log of the importance-sampling estimate `(1/J) Σ_j w_j` of the transition
/// density from `x` to `y` over `dt`.
///
/// Latent values on `m_sub − 1` interior points are drawn from the modified
/// diffusion bridge: from `x_k` with `r` time remaining, the next point is
/// normal with mean `x_k + (y − x_k)δ/r` and variance `σ(x_k)²δ(1 − δ/r)`.
/// The underlying normals are keyed by `(seed, pair, sample)`, so the estimate
/// is a deterministic, smooth function of θ.
pub fn bridge_pair_logdensity(
    spec: &DiffusionSpec,
    pair: usize,
    dt: f64,
    x: f64,
    y: f64,
    settings: &BridgeSettings,
) -> Result<f64, LikelihoodError> {
    settings.validate()?;
    spec.require_scalar()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LikelihoodError::InvalidArgument(format!("time gap must be positive, got {dt}")));
    }
    let m = settings.m_sub;
    let logw: Vec<f64> = (0..settings.j_samples)
        .map(|j| {
            let z = rng::normals(settings.seed, &[pair as u64, j as u64], m - 1);
            bridge_log_weight(spec, dt, x, y, m, &z)
        })
        .map(|w| if w.is_nan() { f64::NEG_INFINITY } else { w })
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(LikelihoodError::DegenerateImportance { pair });
    }
    let sum: f64 = logw.iter().map(|w| (w - max).exp()).sum();
    Ok(max + sum.ln() - (settings.j_samples as f64).ln())
}

/// Simulated log-likelihood `Σ_i log((1/J) Σ_j w_ij)` of exact observations.
pub fn bridge_loglikelihood(
    spec: &DiffusionSpec,
    obs: &ObservationSet,
    m_sub: usize,
    j_samples: usize,
    seed: u64,
) -> Result<f64, LikelihoodError> {
    let td = TransitionDensity::bridge(spec.clone(), BridgeSettings::new(m_sub, j_samples, seed)?)?;
    discrete_loglikelihood(&td, obs)
}

/// Density (not log) estimate for one pair.
pub fn bridge_pair_density(
    spec: &DiffusionSpec,
    pair: usize,
    dt: f64,
    x: f64,
    y: f64,
    settings: &BridgeSettings,
) -> Result<f64, LikelihoodError> {
    bridge_pair_logdensity(spec, pair, dt, x, y, settings).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::gbm_transition_logdensity;
    use crate::sde::GbmParams;

    #[test]
    fn brownian_bridge_is_exact() {
        let spec = DiffusionSpec::brownian(0.0, 0.7, 0.0).unwrap();
        let s = BridgeSettings::new(2, 10_000, 3).unwrap();
        let (dt, x, y) = (0.8, 0.2, -0.5);
        let est = bridge_pair_density(&spec, 0, dt, x, y, &s).unwrap();
        let var: f64 = 0.49 * dt;
        let exact = (-(y - x).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
        assert!((est / exact - 1.0).abs() < 0.01, "{est} vs {exact}");
    }

    #[test]
    fn gbm_pair_estimates_within_five_percent() {
        let p = GbmParams::new(0.1, 0.2, 1.0).unwrap();
        let s = BridgeSettings::new(8, 200, 17).unwrap();
        let cases = [(1.0, 1.05), (1.0, 0.9), (1.3, 1.5), (0.8, 0.7), (1.1, 1.1)];
        let mean_rel: f64 = cases
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let est = bridge_pair_density(&p.spec(), i, 0.5, x, y, &s).unwrap();
                let exact = gbm_transition_logdensity(&p, 0.5, x, y).unwrap().exp();
                (est / exact - 1.0).abs()
            })
            .sum::<f64>()
            / cases.len() as f64;
        assert!(mean_rel < 0.05, "mean relative error {mean_rel}");
    }

    #[test]
    fn refinement_moves_toward_exact() {
        let p = GbmParams::new(0.1, 0.4, 1.0).unwrap();
        let exact = gbm_transition_logdensity(&p, 1.0, 1.0, 1.3).unwrap().exp();
        let errs: Vec<f64> = [2, 4, 8, 16]
            .iter()
            .map(|&m| {
                let s = BridgeSettings::new(m, 20_000, 5).unwrap();
                (bridge_pair_density(&p.spec(), 0, 1.0, 1.0, 1.3, &s).unwrap() - exact).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn deterministic_and_validated() {
        let spec = DiffusionSpec::gbm(0.1, 0.3, 1.0).unwrap();
        let obs = ObservationSet::new(vec![0.0, 0.5, 1.0], vec![1.0, 1.1, 0.95]).unwrap();
        let a = bridge_loglikelihood(&spec, &obs, 4, 50, 9).unwrap();
        let b = bridge_loglikelihood(&spec, &obs, 4, 50, 9).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(bridge_loglikelihood(&spec, &obs, 1, 50, 9).is_err());
        assert!(bridge_loglikelihood(&spec, &obs, 4, 0, 9).is_err());
    }

    #[test]
    fn degenerate_weights_name_the_pair() {
        let spec = DiffusionSpec::scalar("dead", |_, _| 0.0, |x, _| if x > 0.7 { 0.0 } else { 1.0 }, vec![], 0.0)
            .unwrap();
        let obs = ObservationSet::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 6.0]).unwrap();
        match bridge_loglikelihood(&spec, &obs, 2, 10, 1) {
            Err(LikelihoodError::DegenerateImportance { pair }) => assert_eq!(pair, 1),
            other => panic!("{other:?}"),
        }
    }
}
