use std::collections::BTreeMap;
use std::sync::Arc;

use super::fit::Reparam;
use super::{FitResult, LikelihoodError, ObservationSet};
use crate::optim::{broyden, RootOptions};
use crate::parallel::map_indexed;
use crate::rng;
use crate::sde::{euler_step, DiffusionSpec};

/// `ψ(x_s, x_t, θ)` written into `out` (length = dimension of ψ).
pub type PsiFn = dyn Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync;

/// Analytic `E_θ[ψ(x, X_{s+dt}, θ) | X_s = x]` as `(x, dt, θ, out)`.
pub type ExpectationFn = dyn Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync;

/// How the conditional expectation that centres ψ is obtained.
#[derive(Clone)]
pub enum Centering {
    /// Average over `J` Euler paths on a fine grid.
    MonteCarlo,
    /// Exact expectation supplied by the caller.
    ClosedForm(Arc<ExpectationFn>),
}

/// An estimating function `ψ` together with its centring.
#[derive(Clone)]
pub struct EstimatingFunction {
    psi: Arc<PsiFn>,
    dim: usize,
    /// Monte Carlo replicates per conditional expectation.
    pub j: usize,
    /// Euler substeps per observation interval (at least 20).
    pub substeps: usize,
    pub centering: Centering,
}

impl std::fmt::Debug for EstimatingFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EstimatingFunction")
            .field("dim", &self.dim)
            .field("j", &self.j)
            .field("substeps", &self.substeps)
            .field("closed_form", &matches!(self.centering, Centering::ClosedForm(_)))
            .finish()
    }
}

const MIN_SUBSTEPS: usize = 20;

impl EstimatingFunction {
    pub fn new<F>(dim: usize, j: usize, psi: F) -> Self
    where
        F: Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { psi: Arc::new(psi), dim, j, substeps: MIN_SUBSTEPS, centering: Centering::MonteCarlo }
    }

    /// `ψ(x, y, θ) = y`.
    pub fn first_moment(j: usize) -> Self {
        Self::new(1, j, |_, y, _, out| out[0] = y)
    }

    /// `ψ(x, y, θ) = (y, y²)`.
    pub fn two_moments(j: usize) -> Self {
        Self::new(2, j, |_, y, _, out| {
            out[0] = y;
            out[1] = y * y;
        })
    }

    /// `ψ(x, y, θ) = (y, (y − x)²)`; the second component is sensitive to σ
    /// almost independently of the drift.
    pub fn increment_moments(j: usize) -> Self {
        Self::new(2, j, |x, y, _, out| {
            out[0] = y;
            out[1] = (y - x) * (y - x);
        })
    }

    pub fn with_closed_form<F>(mut self, expectation: F) -> Self
    where
        F: Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.centering = Centering::ClosedForm(Arc::new(expectation));
        self
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(MIN_SUBSTEPS);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: f64, y: f64, theta: &[f64], out: &mut [f64]) {
        (self.psi)(x, y, theta, out)
    }
}

/// Monte Carlo conditional expectation and its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct McExpectation {
    pub mean: Vec<f64>,
    /// Standard error of each component of `mean` (zero when fewer than two paths survive).
    pub std_error: Vec<f64>,
    pub used: usize,
    pub diverged: usize,
}

fn mc_from_normals(
    spec: &DiffusionSpec,
    ef: &EstimatingFunction,
    dt: f64,
    x: f64,
    normals: &[f64],
) -> McExpectation {
    let n_sub = ef.substeps.max(MIN_SUBSTEPS);
    let delta = dt / n_sub as f64;
    let d = ef.dim;
    let mut sum = vec![0.0; d];
    let mut sumsq = vec![0.0; d];
    let mut psi = vec![0.0; d];
    let mut scratch = Vec::with_capacity(2);
    let mut used = 0;
    let mut diverged = 0;
    for j in 0..ef.j {
        let z = &normals[j * n_sub..(j + 1) * n_sub];
        let mut state = [x];
        let ok = z.iter().all(|zk| euler_step(spec, &mut state, delta, std::slice::from_ref(zk), &mut scratch).is_ok());
        if ok {
            ef.eval(x, state[0], spec.theta(), &mut psi);
        }
        if !ok || psi.iter().any(|v| !v.is_finite()) {
            diverged += 1;
            continue;
        }
        used += 1;
        for k in 0..d {
            sum[k] += psi[k];
            sumsq[k] += psi[k] * psi[k];
        }
    }
    let n = used as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_error = if used > 1 {
        sumsq.iter().zip(&mean).map(|(sq, m)| ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()).collect()
    } else {
        vec![0.0; d]
    };
    McExpectation { mean, std_error, used, diverged }
}

fn check_ef(spec: &DiffusionSpec, ef: &EstimatingFunction) -> Result<(), LikelihoodError> {
    spec.require_scalar()?;
    if ef.j == 0 {
        return Err(LikelihoodError::InvalidArgument("J must be at least 1".into()));
    }
    Ok(())
}

/// Estimates `E_θ[ψ(x, X_t, θ) | X_s = x]` from `J` Euler paths over `[s, t]`
/// with at least 20 substeps. Divergent paths are dropped and counted.
pub fn mc_conditional_expectation(
    spec: &DiffusionSpec,
    ef: &EstimatingFunction,
    s: f64,
    t: f64,
    x: f64,
    seed: u64,
) -> Result<McExpectation, LikelihoodError> {
    check_ef(spec, ef)?;
    if !(t > s) {
        return Err(LikelihoodError::InvalidArgument(format!("need t > s, got s={s}, t={t}")));
    }
    let n_sub = ef.substeps.max(MIN_SUBSTEPS);
    let normals = rng::normals(seed, &[0], ef.j * n_sub);
    let est = mc_from_normals(spec, ef, t - s, x, &normals);
    if est.used == 0 {
        return Err(LikelihoodError::EstimationFailed { j: ef.j });
    }
    Ok(est)
}

/// Options for [`ee_solve`].
#[derive(Debug, Clone, Default)]
pub struct EeOptions {
    /// `true` entries are held at their initial value.
    pub fixed: Vec<bool>,
    pub root: RootOptions,
}

/// Solves the martingale estimating equation
/// `Σ_i [ψ(x_i, x_{i+1}, θ) − E_θ[ψ(x_i, X, θ) | x_i]] = 0` over the free parameters.
///
/// With Monte Carlo centring the normals driving the `J` paths of pair `i`
/// are drawn once from `(seed, i)` and reused for every θ, so the residual is
/// a deterministic smooth function of θ and a damped Broyden iteration can
/// drive its norm below `opts.root.tol`.
pub fn ee_solve(
    spec: &DiffusionSpec,
    ef: &EstimatingFunction,
    obs: &ObservationSet,
    init_theta: &[f64],
    seed: u64,
    opts: &EeOptions,
) -> Result<FitResult, LikelihoodError> {
    check_ef(spec, ef)?;
    if obs.len() < 2 {
        return Err(LikelihoodError::InsufficientData { needed: 2, got: obs.len() });
    }
    if obs.dim() != 1 {
        return Err(LikelihoodError::InvalidArgument("estimating functions need scalar observations".into()));
    }
    if init_theta.len() != spec.theta().len() {
        return Err(LikelihoodError::InvalidArgument(format!(
            "expected {} initial parameters, got {}",
            spec.theta().len(),
            init_theta.len()
        )));
    }
    let rp = Reparam::new(init_theta, &opts.fixed, spec.positive_mask())?;
    if ef.dim != rp.free.len() {
        return Err(LikelihoodError::InvalidArgument(format!(
            "ψ has dimension {} but there are {} free parameters",
            ef.dim,
            rp.free.len()
        )));
    }
    let n_sub = ef.substeps.max(MIN_SUBSTEPS);
    let normals: Vec<Vec<f64>> = match ef.centering {
        Centering::MonteCarlo => map_indexed(obs.n_pairs(), |i| rng::normals(seed, &[i as u64], ef.j * n_sub)),
        Centering::ClosedForm(_) => Vec::new(),
    };

    // (residual, diverged paths) at θ
    let evaluate = |theta: &[f64]| -> Option<(Vec<f64>, usize)> {
        let model = spec.with_theta(theta).ok()?;
        let terms = map_indexed(obs.n_pairs(), |i| {
            let (dt, x, y) = obs.pair(i);
            let mut psi = vec![0.0; ef.dim];
            ef.eval(x[0], y[0], theta, &mut psi);
            let (centre, diverged) = match &ef.centering {
                Centering::MonteCarlo => {
                    let est = mc_from_normals(&model, ef, dt, x[0], &normals[i]);
                    if est.used == 0 {
                        return None;
                    }
                    (est.mean, est.diverged)
                }
                Centering::ClosedForm(f) => {
                    let mut out = vec![0.0; ef.dim];
                    f(x[0], dt, theta, &mut out);
                    (out, 0)
                }
            };
            Some((psi.iter().zip(&centre).map(|(a, b)| a - b).collect::<Vec<f64>>(), diverged))
        });
        let mut total = vec![0.0; ef.dim];
        let mut diverged = 0;
        for term in terms {
            let (r, d) = term?;
            for (t, v) in total.iter_mut().zip(&r) {
                *t += v;
            }
            diverged += d;
        }
        total.iter().all(|v| v.is_finite()).then_some((total, diverged))
    };

    let root = broyden(|z: &[f64]| evaluate(&rp.to_theta(z)).map(|(r, _)| r), &rp.to_search(init_theta), &opts.root)
        .ok_or(LikelihoodError::InvalidStart)?;
    let theta = rp.to_theta(&root.x);
    let diverged = evaluate(&theta).map_or(0, |(_, d)| d);

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("diverged_paths".into(), diverged.into());
    diagnostics.insert("residual".into(), root.residual.clone().into());
    diagnostics.insert(
        "centering".into(),
        match ef.centering {
            Centering::MonteCarlo => "monte_carlo",
            Centering::ClosedForm(_) => "closed_form",
        }
        .into(),
    );
    diagnostics.insert("j".into(), ef.j.into());
    Ok(FitResult {
        theta_hat: theta,
        objective_value: root.residual_norm,
        converged: root.converged,
        iterations: root.iterations,
        seed,
        standard_errors: None,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate_gbm_exact, GbmParams, TimeGrid};

    #[test]
    fn constant_psi_has_unit_expectation() {
        let spec = DiffusionSpec::gbm(0.1, 0.3, 1.0).unwrap();
        let ef = EstimatingFunction::new(1, 7, |_, _, _, out| out[0] = 1.0);
        let est = mc_conditional_expectation(&spec, &ef, 0.0, 0.5, 1.2, 3).unwrap();
        assert_eq!(est.mean, vec![1.0]);
    }

    #[test]
    fn gbm_conditional_mean() {
        let (beta, x, span) = (0.2, 1.5, 0.8);
        let spec = DiffusionSpec::gbm(beta, 0.3, 1.0).unwrap();
        let ef = EstimatingFunction::first_moment(10_000);
        let est = mc_conditional_expectation(&spec, &ef, 0.0, span, x, 11).unwrap();
        let exact = x * f64::exp(beta * span);
        assert!((est.mean[0] - exact).abs() < 3.0 * est.std_error[0], "{} vs {exact} ± {}", est.mean[0], est.std_error[0]);
    }

    #[test]
    fn variance_shrinks_with_j() {
        let spec = DiffusionSpec::gbm(0.1, 0.3, 1.0).unwrap();
        let var_of = |j: usize| {
            let ef = EstimatingFunction::first_moment(j);
            let v: Vec<f64> = (0..1000)
                .map(|s| mc_conditional_expectation(&spec, &ef, 0.0, 1.0, 1.0, s).unwrap().mean[0])
                .collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let ratio = var_of(1) / var_of(100);
        assert!((75.0..=130.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn all_divergent_paths_fail() {
        let spec = DiffusionSpec::scalar("nan", |_, _| f64::NAN, |_, _| 1.0, vec![], 0.0).unwrap();
        let ef = EstimatingFunction::first_moment(5);
        assert!(matches!(
            mc_conditional_expectation(&spec, &ef, 0.0, 1.0, 0.0, 1),
            Err(LikelihoodError::EstimationFailed { j: 5 })
        ));
    }

    fn gbm_obs(seed: u64) -> ObservationSet {
        let p = GbmParams::new(0.1, 0.3, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 20.0, 200).unwrap();
        ObservationSet::from_path(simulate_gbm_exact(&p, &grid, seed).unwrap())
    }

    #[test]
    fn closed_form_centring_recovers_moment_estimator() {
        let obs = gbm_obs(2);
        let spec = DiffusionSpec::gbm(0.0, 0.3, 1.0).unwrap();
        let ef = EstimatingFunction::first_moment(1)
            .with_closed_form(|x, dt, th, out| out[0] = x * (th[0] * dt).exp());
        let opts = EeOptions { fixed: vec![false, true], ..Default::default() };
        let fit = ee_solve(&spec, &ef, &obs, &[0.0, 0.3], 0, &opts).unwrap();
        // analytic root of Σ (y_i − x_i e^{βΔ}) = 0
        let (mut sx, mut sy) = (0.0, 0.0);
        for i in 0..obs.n_pairs() {
            sx += obs.scalar(i);
            sy += obs.scalar(i + 1);
        }
        let beta = (sy / sx).ln() / 0.1;
        assert!(fit.converged);
        assert!((fit.theta_hat[0] - beta).abs() < 1e-6, "{} vs {beta}", fit.theta_hat[0]);
    }

    #[test]
    fn monte_carlo_solve_is_deterministic() {
        let obs = gbm_obs(3);
        let spec = DiffusionSpec::gbm(0.0, 0.3, 1.0).unwrap();
        let ef = EstimatingFunction::first_moment(8);
        let opts = EeOptions { fixed: vec![false, true], ..Default::default() };
        let a = ee_solve(&spec, &ef, &obs, &[0.0, 0.3], 5, &opts).unwrap();
        let b = ee_solve(&spec, &ef, &obs, &[0.0, 0.3], 5, &opts).unwrap();
        assert!(a.converged);
        assert_eq!(a, b);
        assert!(a.objective_value < 1e-6);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let obs = gbm_obs(1);
        let spec = DiffusionSpec::gbm(0.0, 0.3, 1.0).unwrap();
        let ef = EstimatingFunction::first_moment(2);
        assert!(ee_solve(&spec, &ef, &obs, &[0.0, 0.3], 5, &EeOptions::default()).is_err());
    }

    #[test]
    fn two_moment_function_fits_both_parameters() {
        let p = GbmParams::new(0.02, 0.3, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 100.0, 1000).unwrap();
        let obs = ObservationSet::from_path(simulate_gbm_exact(&p, &grid, 21).unwrap());
        let spec = DiffusionSpec::gbm(0.0, 0.2, 1.0).unwrap();
        let ef = EstimatingFunction::increment_moments(4).with_closed_form(|x, dt, th, out| {
            let m = x * (th[0] * dt).exp();
            out[0] = m;
            out[1] = m * m * (th[1] * th[1] * dt).exp() - 2.0 * x * m + x * x;
        });
        let fit = ee_solve(&spec, &ef, &obs, &[0.0, 0.2], 0, &EeOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.theta_hat[1] - 0.3).abs() < 0.05, "{:?}", fit.theta_hat);
        let mc = EstimatingFunction::increment_moments(4);
        let fit_mc = ee_solve(&spec, &mc, &obs, &[0.0, 0.2], 0, &EeOptions::default()).unwrap();
        assert!(fit_mc.converged);
        assert!((fit_mc.theta_hat[1] - 0.3).abs() < 0.05, "{:?}", fit_mc.theta_hat);
    }
}
