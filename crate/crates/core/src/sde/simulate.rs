use super::model::{DiffusionSpec, GbmParams, OuParams};
use super::path::{Path, TimeGrid};
use super::SdeError;
use crate::rng;

/// One Euler–Maruyama step `x ← x + μ(x)dt + σ(x)√dt·z` in place.
///
/// `scratch` is resized as needed; pass the same buffer across steps to
/// avoid allocation. On failure the state is left untouched.
pub fn euler_step(
    spec: &DiffusionSpec,
    x: &mut [f64],
    dt: f64,
    z: &[f64],
    scratch: &mut Vec<f64>,
) -> Result<(), &'static str> {
    let d = x.len();
    scratch.resize(2 * d, 0.0);
    let (mu, sig) = scratch.split_at_mut(d);
    spec.drift_into(x, mu);
    spec.diffusion_into(x, sig);
    if mu.iter().chain(sig.iter()).any(|v| !v.is_finite()) {
        return Err("non-finite drift or diffusion");
    }
    if sig.iter().any(|&s| s < 0.0) {
        return Err("negative diffusion coefficient");
    }
    let sq = dt.sqrt();
    for i in 0..d {
        let next = x[i] + mu[i] * dt + sig[i] * sq * z[i];
        if !next.is_finite() {
            return Err("state overflow");
        }
        mu[i] = next;
    }
    x.copy_from_slice(mu);
    Ok(())
}

/// Euler–Maruyama path driven by the given standard normals
/// (`grid.n_steps * state_dim` of them, step-major).
pub fn euler_path_from_normals(spec: &DiffusionSpec, grid: &TimeGrid, normals: &[f64]) -> Result<Path, SdeError> {
    grid.validate()?;
    let d = spec.state_dim();
    if normals.len() < grid.n_steps * d {
        return Err(SdeError::InvalidParameter(format!(
            "need {} normals, got {}",
            grid.n_steps * d,
            normals.len()
        )));
    }
    let dt = grid.dt();
    let mut data = Vec::with_capacity((grid.n_steps + 1) * d);
    data.extend_from_slice(spec.x0());
    let mut x = spec.x0().to_vec();
    let mut scratch = Vec::new();
    for k in 0..grid.n_steps {
        euler_step(spec, &mut x, dt, &normals[k * d..(k + 1) * d], &mut scratch)
            .map_err(|reason| SdeError::Diverged { step: k, reason: reason.to_string() })?;
        data.extend_from_slice(&x);
    }
    Path::new(grid.times(), d, data)
}

/// Euler–Maruyama simulation; bit-identical for identical `(spec, grid, seed)`.
pub fn simulate_euler(spec: &DiffusionSpec, grid: &TimeGrid, seed: u64) -> Result<Path, SdeError> {
    grid.validate()?;
    let normals = rng::normals(seed, &[], grid.n_steps * spec.state_dim());
    euler_path_from_normals(spec, grid, &normals)
}

/// Exact GBM solution driven by the given standard normals (one per step).
pub fn gbm_exact_from_normals(p: &GbmParams, grid: &TimeGrid, normals: &[f64]) -> Result<Path, SdeError> {
    p.validate()?;
    grid.validate()?;
    if normals.len() < grid.n_steps {
        return Err(SdeError::InvalidParameter(format!("need {} normals, got {}", grid.n_steps, normals.len())));
    }
    let times = grid.times();
    let drift = p.beta - 0.5 * p.sigma * p.sigma;
    let mut b = 0.0;
    let mut values = Vec::with_capacity(times.len());
    values.push(p.x0);
    for k in 1..times.len() {
        b += (times[k] - times[k - 1]).sqrt() * normals[k - 1];
        let x = p.x0 * (drift * (times[k] - grid.t_start) + p.sigma * b).exp();
        if !(x.is_finite() && x > 0.0) {
            return Err(SdeError::Diverged { step: k - 1, reason: "GBM value left (0, ∞)".into() });
        }
        values.push(x);
    }
    Path::from_scalar(times, values)
}

/// Exact GBM simulation `X_t = x0·exp((β − σ²/2)t + σB_t)`.
///
/// Uses the same normal stream as [`simulate_euler`] for the same seed, so the
/// two can be compared path by path.
pub fn simulate_gbm_exact(p: &GbmParams, grid: &TimeGrid, seed: u64) -> Result<Path, SdeError> {
    grid.validate()?;
    let normals = rng::normals(seed, &[], grid.n_steps);
    gbm_exact_from_normals(p, grid, &normals)
}

/// Ornstein–Uhlenbeck simulation by its exact Gaussian transition.
pub fn simulate_ou(p: &OuParams, grid: &TimeGrid, seed: u64) -> Result<Path, SdeError> {
    p.validate()?;
    grid.validate()?;
    let normals = rng::normals(seed, &[], grid.n_steps);
    let times = grid.times();
    let mut values = Vec::with_capacity(times.len());
    let mut b = p.b0;
    values.push(b);
    for k in 1..times.len() {
        let (mean, var) = p.transition_moments(times[k] - times[k - 1], b);
        b = mean + var.sqrt() * normals[k - 1];
        values.push(b);
    }
    Path::from_scalar(times, values)
}

/// The growth system `dβ = −γ(β − β̄)dt + σ dB`, `dX = β X dt`.
///
/// β follows exact OU transitions; X is advanced with β frozen over each
/// step, `x_{k+1} = x_k·exp(β_k Δ)`, which keeps X positive. Negative β
/// values are allowed.
pub fn simulate_tv_growth(ou: &OuParams, x0: f64, grid: &TimeGrid, seed: u64) -> Result<(Path, Path), SdeError> {
    if !(x0.is_finite() && x0 > 0.0) {
        return Err(SdeError::InvalidParameter(format!("x0 must be positive, got {x0}")));
    }
    let beta = simulate_ou(ou, grid, seed)?;
    let times = beta.times();
    let mut values = Vec::with_capacity(times.len());
    let mut x = x0;
    values.push(x);
    for k in 1..times.len() {
        x *= (beta.scalar(k - 1) * (times[k] - times[k - 1])).exp();
        if !x.is_finite() || x <= 0.0 {
            return Err(SdeError::Diverged { step: k - 1, reason: "growth state overflowed".into() });
        }
        values.push(x);
    }
    let xs = Path::from_scalar(times.to_vec(), values)?;
    Ok((beta, xs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_euler_recursion() {
        let spec = DiffusionSpec::gbm(0.1, 0.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let p = simulate_euler(&spec, &grid, 3).unwrap();
        assert_eq!(p.len(), 11);
        assert_eq!(p.scalar(0), 1.0);
        assert!((p.scalar(10) - 1.01f64.powi(10)).abs() < 1e-13);
        assert!((p.scalar(10) - 1.104_622_125_411_204_3).abs() < 1e-13);
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let spec = DiffusionSpec::ou(1.0, 0.0, 0.5, 0.2).unwrap();
        let grid = TimeGrid::new(0.0, 2.0, 50).unwrap();
        assert_eq!(simulate_euler(&spec, &grid, 11).unwrap(), simulate_euler(&spec, &grid, 11).unwrap());
        assert_ne!(simulate_euler(&spec, &grid, 11).unwrap(), simulate_euler(&spec, &grid, 12).unwrap());
        let ou = OuParams::new(1.0, 0.0, 0.5, 0.2).unwrap();
        assert_eq!(simulate_ou(&ou, &grid, 5).unwrap(), simulate_ou(&ou, &grid, 5).unwrap());
    }

    #[test]
    fn euler_reports_divergence_step() {
        let spec = DiffusionSpec::scalar("blowup", |x, _| x * x, |_, _| 0.0, vec![], 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 10.0, 100).unwrap();
        match simulate_euler(&spec, &grid, 0) {
            Err(SdeError::Diverged { step, .. }) => assert!(step > 0 && step < 100),
            other => panic!("expected divergence, got {other:?}"),
        }
        let nan = DiffusionSpec::scalar("nan", |x, _| if x > 1.55 { f64::NAN } else { 1.0 }, |_, _| 0.0, vec![], 1.0)
            .unwrap();
        assert!(matches!(simulate_euler(&nan, &grid, 0), Err(SdeError::Diverged { step: 6, .. })));
    }

    #[test]
    fn gbm_exact_noise_free() {
        let p = GbmParams::new(0.3, 0.0, 2.0).unwrap();
        let grid = TimeGrid::new(0.0, 2.0, 8).unwrap();
        let path = simulate_gbm_exact(&p, &grid, 1).unwrap();
        for (k, t) in path.times().iter().enumerate() {
            assert!((path.scalar(k) - 2.0 * (0.3 * t).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn ou_noise_free_relaxation() {
        let grid = TimeGrid::new(0.0, 3.0, 30).unwrap();
        let flat = simulate_ou(&OuParams::new(2.0, 0.4, 0.0, 0.4).unwrap(), &grid, 9).unwrap();
        assert!(flat.data().iter().all(|&v| v == 0.4));
        let relax = simulate_ou(&OuParams::new(2.0, 0.4, 0.0, 1.4).unwrap(), &grid, 9).unwrap();
        for (k, t) in relax.times().iter().enumerate() {
            assert!((relax.scalar(k) - (0.4 + (-2.0 * t).exp())).abs() < 1e-13);
        }
    }

    #[test]
    fn tv_growth_noise_free_and_positive() {
        let grid = TimeGrid::new(0.0, 5.0, 100).unwrap();
        let ou = OuParams::new(1.0, 0.2, 0.0, 0.2).unwrap();
        let (b, x) = simulate_tv_growth(&ou, 1.5, &grid, 4).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.2));
        for (k, t) in x.times().iter().enumerate() {
            assert!((x.scalar(k) - 1.5 * (0.2 * t).exp()).abs() < 1e-12);
        }
        let noisy = OuParams::new(0.5, -0.5, 2.0, 0.0).unwrap();
        for seed in 0..20 {
            let (b, x) = simulate_tv_growth(&noisy, 1.0, &grid, seed).unwrap();
            assert!(x.data().iter().all(|&v| v > 0.0));
            assert_eq!(b.times(), x.times());
        }
        assert!(simulate_tv_growth(&noisy, 0.0, &grid, 0).is_err());
    }
}
