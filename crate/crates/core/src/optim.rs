//! Derivative-free minimisation and damped quasi-Newton root finding.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Convergence tolerance on the spread of objective values over the simplex.
    pub ftol: f64,
    /// Total iteration budget across restarts.
    pub max_iter: usize,
    /// Initial simplex edge, relative to `max(|x_i|, 1)`.
    pub initial_step: f64,
    pub max_restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { ftol: 1e-8, max_iter: 2000, initial_step: 0.1, max_restarts: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimises `f` by the Nelder–Mead simplex method, restarting from the best
/// vertex after each convergence until a restart no longer improves the
/// objective. Non-finite objective values are treated as `+∞`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if n == 0 {
        let v = eval(x0);
        return Minimum { x: vec![], value: v, iterations: 0, evaluations: 1, converged: true };
    }

    let mut best = x0.to_vec();
    let mut best_val = eval(&best);
    let mut iterations = 0usize;
    let mut converged = false;
    for restart in 0..=opts.max_restarts {
        let step_scale = opts.initial_step / (1usize << restart.min(6)) as f64;
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        let mut values = vec![best_val];
        for i in 0..n {
            let mut v = best.clone();
            v[i] += step_scale * best[i].abs().max(1.0);
            values.push(eval(&v));
            simplex.push(v);
        }
        let start_val = best_val;
        let mut local_converged = false;
        while iterations < opts.max_iter {
            iterations += 1;
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = (values[n] - values[0]).abs();
            if values[0].is_finite() && spread <= opts.ftol * (values[0].abs() + opts.ftol) {
                local_converged = true;
                break;
            }
            let centroid: Vec<f64> =
                (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect()
            };
            let xr = along(-1.0);
            let fr = eval(&xr);
            if fr < values[0] {
                let xe = along(-2.0);
                let fe = eval(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
            } else {
                let (xc, fc) = if fr < values[n] {
                    let xc = along(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                if fc < values[n].min(fr) {
                    simplex[n] = xc;
                    values[n] = fc;
                } else {
                    for i in 1..=n {
                        let shrunk: Vec<f64> =
                            simplex[0].iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
                        values[i] = eval(&shrunk);
                        simplex[i] = shrunk;
                    }
                }
            }
        }
        let (imin, _) = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty simplex");
        if values[imin] <= best_val {
            best = simplex[imin].clone();
            best_val = values[imin];
        }
        if !local_converged {
            break;
        }
        let improvement = start_val - best_val;
        if restart > 0 && improvement <= opts.ftol * (best_val.abs() + opts.ftol) {
            converged = true;
            break;
        }
        converged = true;
    }
    Minimum { x: best, value: best_val, iterations, evaluations, converged }
}

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Convergence tolerance on the Euclidean norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct Root {
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn fd_jacobian<F>(f: &mut F, x: &[f64], fx: &[f64]) -> Option<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let m = fx.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Some(jac)
}

/// Solves `F(x) = 0` with Broyden updates, a finite-difference starting
/// Jacobian and backtracking on `‖F‖`. `F` returning `None` marks a point as
/// infeasible.
pub fn broyden<F>(mut f: F, x0: &[f64], opts: &RootOptions) -> Option<Root>
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let mut x = x0.to_vec();
    let mut fx = f(&x)?;
    if fx.len() != x.len() || fx.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut fnorm = norm(&fx);
    let mut jac = fd_jacobian(&mut f, &x, &fx)?;
    let mut fresh = true;
    let mut iterations = 0;
    while iterations < opts.max_iter && fnorm > opts.tol {
        iterations += 1;
        let rhs = -DVector::from_column_slice(&fx);
        let step = match jac.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ if !fresh => {
                jac = fd_jacobian(&mut f, &x, &fx)?;
                fresh = true;
                continue;
            }
            _ => break,
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1e-6 {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            if let Some(fc) = f(&cand) {
                if fc.iter().all(|v| v.is_finite()) && norm(&fc) < fnorm {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                let dx = DVector::from_iterator(x.len(), cand.iter().zip(&x).map(|(a, b)| a - b));
                let df = DVector::from_iterator(fx.len(), fc.iter().zip(&fx).map(|(a, b)| a - b));
                let denom = dx.dot(&dx);
                if denom > 0.0 {
                    let corr = (&df - &jac * &dx) / denom;
                    jac += corr * dx.transpose();
                }
                x = cand;
                fx = fc;
                fnorm = norm(&fx);
                fresh = false;
            }
            None if !fresh => {
                jac = fd_jacobian(&mut f, &x, &fx)?;
                fresh = true;
            }
            None => break,
        }
    }
    Some(Root { converged: fnorm <= opts.tol, residual_norm: fnorm, residual: fx, x, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { ftol: 1e-14, max_iter: 5000, ..Default::default() };
        let m = nelder_mead(rosen, &[-1.2, 1.0], &opts);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn nelder_mead_handles_infeasible_region() {
        let f = |x: &[f64]| if x[0] <= 0.0 { f64::NAN } else { (x[0].ln() - 1.0).powi(2) };
        let m = nelder_mead(f, &[0.5], &NelderMeadOptions { ftol: 1e-16, ..Default::default() });
        assert!((m.x[0] - 1f64.exp()).abs() < 1e-5);
    }

    #[test]
    fn nelder_mead_reports_budget_exhaustion() {
        let f = |x: &[f64]| x.iter().map(|v| (v - 3.0).powi(2)).sum::<f64>();
        let m = nelder_mead(f, &[0.0; 4], &NelderMeadOptions { max_iter: 5, ..Default::default() });
        assert!(!m.converged);
    }

    #[test]
    fn broyden_solves_nonlinear_system() {
        let f = |x: &[f64]| Some(vec![x[0] * x[0] + x[1] * x[1] - 4.0, x[0] - x[1]]);
        let r = broyden(f, &[1.0, 0.5], &RootOptions { tol: 1e-12, max_iter: 100 }).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 2f64.sqrt()).abs() < 1e-10);
        assert!((r.x[1] - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn broyden_scalar_monotone() {
        let f = |x: &[f64]| Some(vec![x[0].exp() - 3.0]);
        let r = broyden(f, &[0.0], &RootOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 3f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn broyden_flags_unsolvable() {
        let f = |x: &[f64]| Some(vec![x[0] * x[0] + 1.0]);
        let r = broyden(f, &[0.3], &RootOptions { tol: 1e-8, max_iter: 30 }).unwrap();
        assert!(!r.converged);
    }
}
