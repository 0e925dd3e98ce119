use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{discrete_loglikelihood, LikelihoodError, ObservationSet, TransitionDensity};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Outcome of an estimation routine.
///
/// Serialises with the keys `theta_hat`, `objective`, `converged`,
/// `iterations`, `seed`, `stderr` and `diagnostics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    #[serde(rename = "objective")]
    pub objective_value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
    /// Standard errors per parameter; held parameters report 0.
    #[serde(rename = "stderr")]
    pub standard_errors: Option<Vec<f64>>,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
}

impl FitResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit results serialise")
    }
}

/// Options for [`mle_fit`].
#[derive(Debug, Clone)]
pub struct MleOptions {
    /// `true` entries are held at their initial value.
    pub fixed: Vec<bool>,
    pub simplex: NelderMeadOptions,
    /// Newton refinement steps after the simplex search.
    pub polish_steps: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { fixed: Vec::new(), simplex: NelderMeadOptions::default(), polish_steps: 8 }
    }
}

/// Maps between the free natural parameters and the unconstrained search
/// space (log scale for positive parameters).
pub(crate) struct Reparam {
    pub full: Vec<f64>,
    pub free: Vec<usize>,
    pub positive: Vec<bool>,
}

impl Reparam {
    pub fn new(init: &[f64], fixed: &[bool], positive: &[bool]) -> Result<Self, LikelihoodError> {
        if init.iter().any(|v| !v.is_finite()) {
            return Err(LikelihoodError::InvalidStart);
        }
        let free: Vec<usize> = (0..init.len()).filter(|&i| !fixed.get(i).copied().unwrap_or(false)).collect();
        let positive: Vec<bool> = free.iter().map(|&i| positive.get(i).copied().unwrap_or(false)).collect();
        for (k, &i) in free.iter().enumerate() {
            if positive[k] && init[i] <= 0.0 {
                return Err(LikelihoodError::InvalidArgument(format!(
                    "parameter {i} must start positive, got {}",
                    init[i]
                )));
            }
        }
        Ok(Self { full: init.to_vec(), free, positive })
    }

    pub fn to_search(&self, theta: &[f64]) -> Vec<f64> {
        self.free.iter().zip(&self.positive).map(|(&i, &p)| if p { theta[i].ln() } else { theta[i] }).collect()
    }

    pub fn to_theta(&self, z: &[f64]) -> Vec<f64> {
        let mut th = self.full.clone();
        for ((&i, &p), &v) in self.free.iter().zip(&self.positive).zip(z) {
            th[i] = if p { v.exp() } else { v };
        }
        th
    }

    pub fn free_values(&self, theta: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| theta[i]).collect()
    }

    pub fn with_free(&self, theta: &[f64], free_vals: &[f64]) -> Vec<f64> {
        let mut th = theta.to_vec();
        for (&i, &v) in self.free.iter().zip(free_vals) {
            th[i] = v;
        }
        th
    }
}

/// Central-difference Hessian of `f` at `x` with per-coordinate steps `h`.
pub(crate) fn numerical_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let mut hess = DMatrix::zeros(n, n);
    let mut pt = x.to_vec();
    for i in 0..n {
        pt[i] = x[i] + h[i];
        let fp = f(&pt);
        pt[i] = x[i] - h[i];
        let fm = f(&pt);
        pt[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                pt[i] = x[i] + si * h[i];
                pt[j] = x[j] + sj * h[j];
                let v = f(&pt);
                pt[i] = x[i];
                pt[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

fn gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut pt = x.to_vec();
    (0..x.len())
        .map(|i| {
            pt[i] = x[i] + h[i];
            let fp = f(&pt);
            pt[i] = x[i] - h[i];
            let fm = f(&pt);
            pt[i] = x[i];
            (fp - fm) / (2.0 * h[i])
        })
        .collect()
}

fn step_sizes(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1e-4 * v.abs().max(1e-2)).collect()
}

/// Maximum likelihood over the free parameters of `td`.
///
/// A Nelder–Mead search (with restarts) on the negative log-likelihood, with
/// positive parameters on log scale, is followed by a few safeguarded Newton
/// steps that sharpen the optimum beyond the simplex tolerance. Standard
/// errors come from the inverse observed information at the optimum.
pub fn mle_fit(
    td: &TransitionDensity,
    obs: &ObservationSet,
    init_theta: &[f64],
    opts: &MleOptions,
) -> Result<FitResult, LikelihoodError> {
    if init_theta.len() != td.theta().len() {
        return Err(LikelihoodError::InvalidArgument(format!(
            "expected {} initial parameters, got {}",
            td.theta().len(),
            init_theta.len()
        )));
    }
    let rp = Reparam::new(init_theta, &opts.fixed, td.positive_mask())?;
    let loglik = |theta: &[f64]| -> f64 {
        td.with_theta(theta)
            .and_then(|d| discrete_loglikelihood(&d, obs))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let start = loglik(init_theta);
    if !start.is_finite() {
        return Err(LikelihoodError::InvalidStart);
    }
    let search = |z: &[f64]| -loglik(&rp.to_theta(z));
    let min = nelder_mead(search, &rp.to_search(init_theta), &opts.simplex);
    let mut theta = rp.to_theta(&min.x);
    let mut best = loglik(&theta);

    // Newton polish in natural coordinates of the free parameters
    let mut polished = 0;
    for _ in 0..opts.polish_steps {
        let x = rp.free_values(&theta);
        if x.is_empty() {
            break;
        }
        let h = step_sizes(&x);
        let nf = |v: &[f64]| -loglik(&rp.with_free(&theta, v));
        let g = gradient(nf, &x, &h);
        let hess = numerical_hessian(|v: &[f64]| -loglik(&rp.with_free(&theta, v)), &x, &h);
        let Some(chol) = hess.clone().cholesky() else { break };
        let step = chol.solve(&nalgebra::DVector::from_column_slice(&g));
        let mut alpha = 1.0;
        let mut improved = false;
        while alpha > 1e-4 {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - alpha * s).collect();
            let th = rp.with_free(&theta, &cand);
            let positive_ok = rp.free.iter().zip(&rp.positive).all(|(&i, &p)| !p || th[i] > 0.0);
            let v = if positive_ok { loglik(&th) } else { f64::NEG_INFINITY };
            if v >= best {
                let gain = v - best;
                theta = th;
                best = v;
                improved = gain > 0.0;
                break;
            }
            alpha *= 0.5;
        }
        polished += 1;
        if !improved {
            break;
        }
    }

    let x = rp.free_values(&theta);
    let hess = numerical_hessian(|v: &[f64]| -loglik(&rp.with_free(&theta, v)), &x, &step_sizes(&x));
    let standard_errors = hess.try_inverse().and_then(|inv| {
        let mut se = vec![0.0; theta.len()];
        for (k, &i) in rp.free.iter().enumerate() {
            let v = inv[(k, k)];
            if !(v > 0.0 && v.is_finite()) {
                return None;
            }
            se[i] = v.sqrt();
        }
        Some(se)
    });

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("density".into(), td.kind().name().into());
    diagnostics.insert("evaluations".into(), min.evaluations.into());
    diagnostics.insert("newton_steps".into(), polished.into());
    diagnostics.insert("initial_loglik".into(), start.into());
    Ok(FitResult {
        theta_hat: theta,
        objective_value: best,
        converged: min.converged,
        iterations: min.iterations,
        seed: td.seed().unwrap_or(0),
        standard_errors,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate_gbm_exact, GbmParams, TimeGrid};

    fn gbm_data(seed: u64, n: usize, dt: f64) -> ObservationSet {
        let p = GbmParams::new(0.1, 0.3, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, dt * n as f64, n).unwrap();
        ObservationSet::from_path(simulate_gbm_exact(&p, &grid, seed).unwrap())
    }

    #[test]
    fn matches_closed_form_beta_with_sigma_known() {
        let obs = gbm_data(4, 500, 0.1);
        let sigma = 0.3;
        let td = TransitionDensity::gbm(GbmParams::new(0.0, sigma, 1.0).unwrap()).unwrap();
        let opts = MleOptions { fixed: vec![false, true], ..Default::default() };
        let fit = mle_fit(&td, &obs, &[0.0, sigma], &opts).unwrap();
        let n = obs.n_pairs() as f64;
        let mean_log_inc = (obs.scalar(obs.len() - 1) / obs.scalar(0)).ln() / n;
        let beta_closed = mean_log_inc / 0.1 + sigma * sigma / 2.0;
        assert!(fit.converged);
        assert!((fit.theta_hat[0] - beta_closed).abs() < 1e-6, "{} vs {beta_closed}", fit.theta_hat[0]);
        assert_eq!(fit.theta_hat[1], sigma);
        let se = fit.standard_errors.unwrap();
        assert!((se[0] - sigma / (n * 0.1).sqrt()).abs() < 1e-3);
        assert_eq!(se[1], 0.0);
    }

    #[test]
    fn start_at_optimum_converges_quickly() {
        let obs = gbm_data(8, 300, 0.1);
        let td = TransitionDensity::gbm(GbmParams::new(0.1, 0.3, 1.0).unwrap()).unwrap();
        let first = mle_fit(&td, &obs, &[0.0, 0.5], &MleOptions::default()).unwrap();
        let again = mle_fit(&td, &obs, &first.theta_hat, &MleOptions::default()).unwrap();
        assert!(again.converged);
        assert!(again.iterations < first.iterations);
        for (a, b) in again.theta_hat.iter().zip(&first.theta_hat) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn invalid_start_is_an_error() {
        let obs = gbm_data(1, 20, 0.1);
        let td = TransitionDensity::gbm(GbmParams::new(0.1, 0.3, 1.0).unwrap()).unwrap();
        assert!(matches!(mle_fit(&td, &obs, &[f64::NAN, 0.3], &MleOptions::default()), Err(LikelihoodError::InvalidStart)));
        assert!(mle_fit(&td, &obs, &[0.1, -0.3], &MleOptions::default()).is_err());
    }

    #[test]
    fn json_keys() {
        let fit = FitResult {
            theta_hat: vec![0.1],
            objective_value: -3.0,
            converged: true,
            iterations: 4,
            seed: 9,
            standard_errors: None,
            diagnostics: BTreeMap::new(),
        };
        let v: serde_json::Value = serde_json::from_str(&fit.to_json()).unwrap();
        for key in ["theta_hat", "objective", "converged", "iterations", "seed", "stderr", "diagnostics"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["stderr"].is_null());
    }
}
