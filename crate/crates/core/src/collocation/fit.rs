use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use super::basis::BasisConfig;
use super::objective::{CollocationState, PenaltySpec, Problem};
use super::CollocationError;
use crate::likelihood::FitResult;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::sde::{DiffusionSpec, Path};
use crate::statespace::{NoisyObservationSet, ObservationModel};
use crate::table;

#[derive(Debug, Clone)]
pub struct CollocationOptions {
    pub max_outer: usize,
    /// Stop alternating once the objective falls by less than this
    /// (relative, floored at 1).
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// `true` entries of θ are held. Parameters that do not enter the drift
    /// are always held.
    pub fixed: Vec<bool>,
    /// Joint refinement over `(c, θ)` after the alternating phase.
    pub polish: bool,
    pub report_points: usize,
}

impl Default for CollocationOptions {
    fn default() -> Self {
        Self {
            max_outer: 200,
            outer_tol: 1e-9,
            inner_tol: 1e-8,
            inner_max_iter: 200,
            fixed: Vec::new(),
            polish: true,
            report_points: 201,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CollocationFit {
    pub state: CollocationState,
    pub result: FitResult,
    pub lambda: f64,
    pub weight_mode: &'static str,
    /// Fitted trajectory on the reporting grid.
    pub path: Path,
    pub derivative: Vec<f64>,
}

impl CollocationFit {
    pub fn to_json_value(&self) -> Value {
        let mut v = serde_json::to_value(&self.result).expect("fit results serialise");
        let obj = v.as_object_mut().expect("object");
        obj.insert("lambda".into(), json!(self.lambda));
        obj.insert("weight_mode".into(), json!(self.weight_mode));
        obj.insert("data_term".into(), json!(self.state.data_term));
        obj.insert("penalty_term".into(), json!(self.state.penalty_term));
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("json")
    }

    /// CSV with header `t,x_fit,dxdt_fit`.
    pub fn trajectory_csv(&self) -> Result<String, CollocationError> {
        let header: Vec<String> = ["t", "x_fit", "dxdt_fit"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<f64>> = (0..self.path.len())
            .map(|i| vec![self.path.times()[i], self.path.scalar(i), self.derivative[i]])
            .collect();
        table::table_to_string(&header, &rows).map_err(|e| CollocationError::InvalidArgument(e.to_string()))
    }
}

struct LmOutcome {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Levenberg–Marquardt on a problem exposing value, gradient and a
/// Gauss–Newton Hessian.
fn levenberg_marquardt<F, G>(
    mut value: F,
    mut derivs: G,
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<LmOutcome, CollocationError>
where
    F: FnMut(&[f64]) -> Result<f64, CollocationError>,
    G: FnMut(&[f64]) -> Result<(DVector<f64>, DMatrix<f64>), CollocationError>,
{
    let mut x = x0;
    let mut f = value(&x)?;
    let mut mu = 1e-8;
    let n = x.len();
    for it in 0..max_iter {
        let (g, h) = derivs(&x)?;
        let dmax = h.diagonal().iter().copied().fold(0.0, f64::max).max(1e-300);
        let mut improved = false;
        while mu < 1e16 {
            let mut a = h.clone();
            for i in 0..n {
                a[(i, i)] += mu * (h[(i, i)] + 1e-12 * dmax) + 1e-300;
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    mu *= 4.0;
                    continue;
                }
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            match value(&trial) {
                Ok(ft) if ft < f => {
                    let drop = f - ft;
                    x = trial;
                    f = ft;
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    if drop <= tol * f.abs().max(1.0) {
                        return Ok(LmOutcome { x, iterations: it + 1, converged: true });
                    }
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        if !improved {
            // no descent at any damping: stationary up to rounding
            return Ok(LmOutcome { x, iterations: it + 1, converged: true });
        }
    }
    Ok(LmOutcome { x, iterations: max_iter, converged: false })
}

/// Parameters whose value changes the drift somewhere along the trajectory.
fn drift_sensitive(spec: &DiffusionSpec, theta: &[f64], xs: &[f64]) -> Vec<bool> {
    (0..theta.len())
        .map(|k| {
            let mut th = theta.to_vec();
            th[k] += 1e-3 * theta[k].abs().max(1.0);
            xs.iter().any(|&x| spec.drift1_with(x, &th) != spec.drift1_with(x, theta))
        })
        .collect()
}

/// Joint fit of spline coefficients and drift parameters.
///
/// Alternates an inner Levenberg–Marquardt solve over the coefficients with
/// a simplex search over the free parameters, then refines both jointly.
pub fn collocation_fit(
    obs: &NoisyObservationSet,
    om: &ObservationModel,
    spec: &DiffusionSpec,
    basis: &BasisConfig,
    pen: &PenaltySpec,
    init: Option<&CollocationState>,
    opts: &CollocationOptions,
) -> Result<CollocationFit, CollocationError> {
    let problem = Problem::new(basis, obs, om, spec, pen)?;
    let nb = basis.n_basis();
    let mut theta = init.map(|s| s.theta.clone()).unwrap_or_else(|| spec.theta().to_vec());
    if theta.len() != spec.theta().len() {
        return Err(CollocationError::InvalidArgument("parameter vector has the wrong length".into()));
    }
    let mut c = match init {
        Some(s) if !s.coeffs.is_empty() => s.coeffs.clone(),
        _ => basis.least_squares(obs.times(), obs.values()),
    };
    problem.terms(&c, &theta)?;

    let probe: Vec<f64> = (0..=20)
        .map(|k| {
            let (a, b) = basis.domain();
            basis.value(&c, a + (b - a) * k as f64 / 20.0).0
        })
        .collect();
    let sensitive = drift_sensitive(spec, &theta, &probe);
    let free: Vec<usize> = (0..theta.len())
        .filter(|&k| sensitive[k] && !opts.fixed.get(k).copied().unwrap_or(false) && pen.lambda > 0.0)
        .collect();

    let inner = |c0: Vec<f64>, th: &[f64]| {
        levenberg_marquardt(
            |cc| problem.terms(cc, th).map(|(a, b)| a + b),
            |cc| problem.assemble(cc, th, false).map(|a| (a.grad, a.hess)),
            c0,
            opts.inner_tol,
            opts.inner_max_iter,
        )
    };

    let mut prev = f64::INFINITY;
    let mut outer_converged = false;
    let mut outer_iters = 0;
    let simplex = NelderMeadOptions { ftol: 1e-12, max_iter: 400, initial_step: 0.05, max_restarts: 1 };
    for it in 0..opts.max_outer {
        outer_iters = it + 1;
        c = inner(c, &theta)?.x;
        if !free.is_empty() {
            let start: Vec<f64> = free.iter().map(|&k| theta[k]).collect();
            let base = theta.clone();
            let cc = &c;
            let m = nelder_mead(
                |z: &[f64]| {
                    let mut th = base.clone();
                    for (&k, &v) in free.iter().zip(z) {
                        th[k] = v;
                    }
                    problem.terms(cc, &th).map(|t| t.1).unwrap_or(f64::INFINITY)
                },
                &start,
                &simplex,
            );
            for (&k, &v) in free.iter().zip(&m.x) {
                theta[k] = v;
            }
        }
        let (d, p) = problem.terms(&c, &theta)?;
        let f = d + p;
        if prev - f < opts.outer_tol * f.abs().max(1.0) {
            outer_converged = true;
            break;
        }
        prev = f;
    }

    let mut polish_converged = false;
    let mut polish_iters = 0;
    if opts.polish {
        let pack = |cc: &[f64], th: &[f64]| -> Vec<f64> {
            cc.iter().copied().chain(free.iter().map(|&k| th[k])).collect()
        };
        let unpack = |z: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut th = theta.clone();
            for (j, &k) in free.iter().enumerate() {
                th[k] = z[nb + j];
            }
            (z[..nb].to_vec(), th)
        };
        let idx: Vec<usize> = (0..nb).chain(free.iter().map(|&k| nb + k)).collect();
        let out = levenberg_marquardt(
            |z| {
                let (cc, th) = unpack(z);
                problem.terms(&cc, &th).map(|(a, b)| a + b)
            },
            |z| {
                let (cc, th) = unpack(z);
                let a = problem.assemble(&cc, &th, true)?;
                let g = DVector::from_iterator(idx.len(), idx.iter().map(|&i| a.grad[i]));
                let h = DMatrix::from_fn(idx.len(), idx.len(), |r, s| a.hess[(idx[r], idx[s])]);
                Ok((g, h))
            },
            pack(&c, &theta),
            1e-14,
            opts.inner_max_iter,
        )?;
        let (cc, th) = unpack(&out.x);
        c = cc;
        theta = th;
        polish_converged = out.converged;
        polish_iters = out.iterations;
    }

    let (data_term, penalty_term) = problem.terms(&c, &theta)?;
    let converged = outer_converged || polish_converged;
    let state = CollocationState { coeffs: c, theta: theta.clone(), data_term, penalty_term };

    let (a, b) = basis.domain();
    let m = opts.report_points.max(2);
    let times: Vec<f64> = (0..m).map(|k| a + (b - a) * k as f64 / (m - 1) as f64).collect();
    let (xs, dxs): (Vec<f64>, Vec<f64>) = times.iter().map(|&t| basis.value(&state.coeffs, t)).unzip();
    let path = Path::from_scalar(times, xs)?;

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("outer_iterations".to_string(), json!(outer_iters));
    diagnostics.insert("polish_iterations".to_string(), json!(polish_iters));
    diagnostics.insert("n_basis".to_string(), json!(nb));
    diagnostics.insert("free_parameters".to_string(), json!(free));
    let result = FitResult {
        theta_hat: theta,
        objective_value: state.objective(),
        converged,
        iterations: outer_iters,
        seed: 0,
        standard_errors: None,
        diagnostics,
    };
    Ok(CollocationFit {
        state,
        result,
        lambda: pen.lambda,
        weight_mode: pen.weight_mode.name(),
        path,
        derivative: dxs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocation::map_equivalent_sigma;

    fn exp_data(n: usize, beta: f64, noise: f64, seed: u64) -> NoisyObservationSet {
        use rand_distr::{Distribution, StandardNormal};
        let mut r = crate::rng::stream(seed, &[]);
        let times: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect();
        let y = times
            .iter()
            .map(|t| {
                let z: f64 = StandardNormal.sample(&mut r);
                (beta * t).exp() + noise * z
            })
            .collect();
        NoisyObservationSet::scalar(times, y).unwrap()
    }

    fn growth(beta: f64) -> DiffusionSpec {
        DiffusionSpec::scalar("growth", |x, th| th[0] * x, |_, _| 1.0, vec![beta], 1.0).unwrap()
    }

    #[test]
    fn recovers_growth_rate_from_exact_data() {
        let obs = exp_data(50, 0.3, 0.0, 0);
        let basis = BasisConfig::at_times(obs.times()).unwrap();
        let om = ObservationModel::gaussian(1e-6).unwrap();
        let fit = collocation_fit(&obs, &om, &growth(0.1), &basis, &PenaltySpec::new(1e4), None, &Default::default())
            .unwrap();
        let b = fit.result.theta_hat[0];
        assert!(((b - 0.3) / 0.3).abs() < 0.01, "{b}");
        assert!(fit.result.converged);
        assert!((fit.state.objective() - fit.state.data_term - fit.state.penalty_term).abs() <= 1e-12);
    }

    #[test]
    fn penalty_non_increasing_in_lambda() {
        let obs = exp_data(25, 0.3, 0.05, 1);
        let basis = BasisConfig::at_times(obs.times()).unwrap();
        let om = ObservationModel::gaussian(0.05).unwrap();
        let spec = growth(0.2);
        let pens: Vec<f64> = [1e-2, 1.0, 1e2, 1e4]
            .iter()
            .map(|&l| {
                collocation_fit(&obs, &om, &spec, &basis, &PenaltySpec::new(l), None, &Default::default())
                    .unwrap()
                    .state
                    .penalty_term
                    / l
            })
            .collect();
        for w in pens.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6) + 1e-12, "{pens:?}");
        }
    }

    #[test]
    fn data_term_bounded_by_unpenalized_fit() {
        let obs = exp_data(25, 0.3, 0.05, 2);
        let basis = BasisConfig::at_times(obs.times()).unwrap();
        let om = ObservationModel::gaussian(0.05).unwrap();
        let spec = growth(0.2);
        let free = collocation_fit(&obs, &om, &spec, &basis, &PenaltySpec::new(0.0), None, &Default::default()).unwrap();
        for &l in &[1e-2, 1.0, 1e3] {
            let fit = collocation_fit(&obs, &om, &spec, &basis, &PenaltySpec::new(l), None, &Default::default()).unwrap();
            assert!(fit.state.data_term >= free.state.data_term - 1e-6);
        }
    }

    #[test]
    fn knot_insertion_does_not_hurt() {
        let obs = exp_data(15, 0.3, 0.05, 3);
        let basis = BasisConfig::at_times(obs.times()).unwrap();
        let finer = basis.with_knot(0.07).unwrap();
        let om = ObservationModel::gaussian(0.05).unwrap();
        let spec = growth(0.2);
        let pen = PenaltySpec::new(10.0);
        let a = collocation_fit(&obs, &om, &spec, &basis, &pen, None, &Default::default()).unwrap();
        let b = collocation_fit(&obs, &om, &spec, &finer, &pen, None, &Default::default()).unwrap();
        // quadrature nodes differ between the two bases; allow for that
        assert!(b.state.objective() <= a.state.objective() + 1e-4, "{} vs {}", b.state.objective(), a.state.objective());
    }

    #[test]
    fn weighted_and_rescaled_unweighted_agree() {
        let obs = exp_data(20, 0.3, 0.05, 4);
        let basis = BasisConfig::at_times(obs.times()).unwrap();
        let om = ObservationModel::gaussian(0.05).unwrap();
        let sig = 0.2;
        let spec = DiffusionSpec::scalar("growth", |x, th| th[0] * x, move |_, _| sig, vec![0.2], 1.0).unwrap();
        let w = collocation_fit(&obs, &om, &spec, &basis, &PenaltySpec::new(3.0).weighted(), None, &Default::default())
            .unwrap();
        let u = collocation_fit(&obs, &om, &spec, &basis, &PenaltySpec::new(3.0 / (sig * sig)), None, &Default::default())
            .unwrap();
        assert!((w.result.theta_hat[0] - u.result.theta_hat[0]).abs() < 1e-6);
        for (a, b) in w.state.coeffs.iter().zip(&u.state.coeffs) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((map_equivalent_sigma(0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn outputs() {
        let obs = exp_data(10, 0.3, 0.01, 5);
        let basis = BasisConfig::at_times(obs.times()).unwrap();
        let om = ObservationModel::gaussian(0.01).unwrap();
        let opts = CollocationOptions { report_points: 11, ..Default::default() };
        let fit = collocation_fit(&obs, &om, &growth(0.2), &basis, &PenaltySpec::new(10.0), None, &opts).unwrap();
        let csv = fit.trajectory_csv().unwrap();
        assert!(csv.starts_with("t,x_fit,dxdt_fit\n"));
        assert_eq!(csv.lines().count(), 12);
        let v = fit.to_json_value();
        for k in ["lambda", "weight_mode", "data_term", "penalty_term", "theta_hat", "converged"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
