use super::LikelihoodError;
use crate::quad::trapezoid;
use crate::sde::DiffusionSpec;

/// Numerical settings for the Crank–Nicolson Fokker–Planck solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FokkerPlanckSettings {
    pub n_time_steps: usize,
    /// Spatial cells used when a density is requested at a single point.
    pub n_cells: usize,
    /// Half-width of the automatic spatial grid, in local standard deviations.
    pub half_width_sds: f64,
}

impl Default for FokkerPlanckSettings {
    fn default() -> Self {
        Self { n_time_steps: 200, n_cells: 400, half_width_sds: 10.0 }
    }
}

/// Transition density on a spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FpSolution {
    pub y: Vec<f64>,
    /// Density values, negative round-off clipped to zero.
    pub density: Vec<f64>,
    /// Smallest unclipped value produced by the solver.
    pub min_raw: f64,
    /// Trapezoid integral of `density` over `y`.
    pub mass: f64,
    pub warnings: Vec<String>,
}

const MIN_CELLS: usize = 50;
const BOUNDARY_DENSITY_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-3;

/// Solves `∂p/∂t = −∂(μp)/∂y + ½∂²(σ²p)/∂y²` for `p(dt, x, ·)` by
/// Crank–Nicolson with absorbing boundaries.
///
/// The solver works on a uniform grid spanning `y_grid` with the same number
/// of cells and interpolates linearly onto `y_grid` when that grid is not
/// uniform. The initial condition is a Gaussian one cell wide centred near
/// `x`: the short-time Euler density at the time `τ = (h/σ(x))²` it takes the
/// process to spread over one cell, after which the PDE is integrated over
/// the remaining `dt − τ`.
pub fn fokker_planck_transition_density(
    spec: &DiffusionSpec,
    dt: f64,
    x: f64,
    y_grid: &[f64],
    settings: &FokkerPlanckSettings,
) -> Result<FpSolution, LikelihoodError> {
    spec.require_scalar()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LikelihoodError::InvalidArgument(format!("time gap must be positive, got {dt}")));
    }
    if y_grid.len() < MIN_CELLS + 1 {
        return Err(LikelihoodError::InvalidGrid(format!(
            "need at least {MIN_CELLS} cells, got {}",
            y_grid.len().saturating_sub(1)
        )));
    }
    if y_grid.windows(2).any(|w| !(w[1] > w[0])) || y_grid.iter().any(|v| !v.is_finite()) {
        return Err(LikelihoodError::InvalidGrid("spatial grid must be finite and strictly increasing".into()));
    }
    if settings.n_time_steps == 0 {
        return Err(LikelihoodError::InvalidArgument("n_time_steps must be positive".into()));
    }

    let n = y_grid.len() - 1;
    let (lo, hi) = (y_grid[0], y_grid[n]);
    let h = (hi - lo) / n as f64;
    let nodes: Vec<f64> = (0..=n).map(|i| if i == n { hi } else { lo + h * i as f64 }).collect();

    let sig_x = spec.diffusion1(x);
    let mu_x = spec.drift1(x);
    if !(sig_x.is_finite() && mu_x.is_finite()) {
        return Err(LikelihoodError::DegenerateDensity(format!("coefficients not finite at x={x}")));
    }
    let (tau, sd0) = if sig_x > 0.0 {
        let tau = (h / sig_x).powi(2).min(0.5 * dt);
        (tau, sig_x * tau.sqrt())
    } else {
        (0.0, h)
    };
    let m0 = x + mu_x * tau;
    let mut p: Vec<f64> = nodes
        .iter()
        .map(|&y| (-(y - m0).powi(2) / (2.0 * sd0 * sd0)).exp() / (sd0 * (2.0 * std::f64::consts::PI).sqrt()))
        .collect();
    p[0] = 0.0;
    p[n] = 0.0;

    // tridiagonal generator: (Lp)_i = a_i p_{i-1} + b_i p_i + c_i p_{i+1}
    let mu: Vec<f64> = nodes.iter().map(|&y| spec.drift1(y)).collect();
    let diff: Vec<f64> = nodes.iter().map(|&y| 0.5 * spec.diffusion1(y).powi(2)).collect();
    if mu.iter().chain(&diff).any(|v| !v.is_finite()) {
        return Err(LikelihoodError::DegenerateDensity("coefficients not finite on the spatial grid".into()));
    }
    let h2 = h * h;
    let mut a = vec![0.0; n + 1];
    let mut b = vec![0.0; n + 1];
    let mut c = vec![0.0; n + 1];
    for i in 1..n {
        a[i] = diff[i - 1] / h2 + mu[i - 1] / (2.0 * h);
        b[i] = -2.0 * diff[i] / h2;
        c[i] = diff[i + 1] / h2 - mu[i + 1] / (2.0 * h);
    }

    let k = (dt - tau) / settings.n_time_steps as f64;
    let half = 0.5 * k;
    // implicit side (I − k/2 L), constant across steps
    let lower: Vec<f64> = a.iter().map(|v| -half * v).collect();
    let diag: Vec<f64> = b.iter().map(|v| 1.0 - half * v).collect();
    let upper: Vec<f64> = c.iter().map(|v| -half * v).collect();
    let mut rhs = vec![0.0; n + 1];
    let mut scratch_c = vec![0.0; n + 1];
    let mut scratch_d = vec![0.0; n + 1];
    for _ in 0..settings.n_time_steps {
        for i in 1..n {
            rhs[i] = p[i] + half * (a[i] * p[i - 1] + b[i] * p[i] + c[i] * p[i + 1]);
        }
        thomas_interior(&lower, &diag, &upper, &rhs, &mut p, &mut scratch_c, &mut scratch_d, n);
    }

    let raw: Vec<f64> = if uniform(y_grid, h) {
        p
    } else {
        y_grid.iter().map(|&y| interpolate(&nodes, &p, y)).collect()
    };
    let min_raw = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let density: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let mass = trapezoid(y_grid, &density);
    let mut warnings = Vec::new();
    let edge = density[1].max(density[density.len() - 2]);
    if edge > BOUNDARY_DENSITY_TOL {
        warnings.push(format!("density near the grid boundary is {edge:.3e}; widen the spatial grid"));
    }
    if (mass - 1.0).abs() > MASS_TOL {
        warnings.push(format!("boundary truncation: integrated mass is {mass:.6}"));
    }
    Ok(FpSolution { y: y_grid.to_vec(), density, min_raw, mass, warnings })
}

fn uniform(y: &[f64], h: f64) -> bool {
    let lo = y[0];
    y.iter().enumerate().all(|(i, &v)| (v - (lo + h * i as f64)).abs() <= 1e-9 * h.max(v.abs()))
}

fn interpolate(nodes: &[f64], p: &[f64], y: f64) -> f64 {
    let n = nodes.len() - 1;
    if y <= nodes[0] {
        return p[0];
    }
    if y >= nodes[n] {
        return p[n];
    }
    let h = (nodes[n] - nodes[0]) / n as f64;
    let i = (((y - nodes[0]) / h).floor() as usize).min(n - 1);
    let w = (y - nodes[i]) / (nodes[i + 1] - nodes[i]);
    (1.0 - w) * p[i] + w * p[i + 1]
}

/// Solves the tridiagonal system on interior nodes `1..n` with zero
/// Dirichlet values at `0` and `n`, writing into `out`.
#[allow(clippy::too_many_arguments)]
fn thomas_interior(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    out: &mut [f64],
    cp: &mut [f64],
    dp: &mut [f64],
    n: usize,
) {
    cp[1] = upper[1] / diag[1];
    dp[1] = rhs[1] / diag[1];
    for i in 2..n {
        let m = diag[i] - lower[i] * cp[i - 1];
        cp[i] = upper[i] / m;
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / m;
    }
    out[n - 1] = dp[n - 1];
    for i in (1..n - 1).rev() {
        out[i] = dp[i] - cp[i] * out[i + 1];
    }
    out[0] = 0.0;
    out[n] = 0.0;
}

/// Density at a single point `y`, solving on an automatic grid centred at the
/// Euler mean with half-width `half_width_sds` local standard deviations
/// (widened to contain `y`).
pub(crate) fn fokker_planck_log_density_at(
    spec: &DiffusionSpec,
    dt: f64,
    x: f64,
    y: f64,
    settings: &FokkerPlanckSettings,
) -> Result<f64, LikelihoodError> {
    let sd = spec.diffusion1(x) * dt.sqrt();
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(LikelihoodError::DegenerateDensity(format!("diffusion coefficient vanishes at x={x}")));
    }
    let centre = x + spec.drift1(x) * dt;
    let half = settings.half_width_sds * sd;
    let lo = (centre - half).min(y - 0.1 * half);
    let hi = (centre + half).max(y + 0.1 * half);
    let n = settings.n_cells.max(MIN_CELLS);
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let sol = fokker_planck_transition_density(spec, dt, x, &grid, settings)?;
    Ok(interpolate(&grid, &sol.density, y).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::gbm_transition_logdensity;
    use crate::sde::GbmParams;

    fn grid(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
        (0..=cells).map(|i| lo + (hi - lo) * i as f64 / cells as f64).collect()
    }

    #[test]
    fn heat_kernel() {
        let spec = DiffusionSpec::brownian(0.0, 1.0, 0.0).unwrap();
        let y = grid(-6.0, 6.0, 400);
        let sol = fokker_planck_transition_density(&spec, 0.5, 0.0, &y, &FokkerPlanckSettings::default()).unwrap();
        let err = y
            .iter()
            .zip(&sol.density)
            .map(|(&v, &p)| (p - (-v * v).exp() / std::f64::consts::PI.sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "max error {err}");
        assert!((sol.mass - 1.0).abs() < 1e-3);
        assert!(sol.min_raw >= -1e-9);
        assert!(sol.warnings.is_empty(), "{:?}", sol.warnings);
    }

    #[test]
    fn gbm_matches_closed_form() {
        let p = GbmParams::new(0.1, 0.2, 1.0).unwrap();
        let y = grid(0.2, 3.0, 400);
        let sol = fokker_planck_transition_density(&p.spec(), 0.5, 1.0, &y, &FokkerPlanckSettings::default()).unwrap();
        let err = y
            .iter()
            .zip(&sol.density)
            .map(|(&v, &d)| (d - gbm_transition_logdensity(&p, 0.5, 1.0, v).unwrap().exp()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "max error {err}");
        assert!((sol.mass - 1.0).abs() < 1e-3);
    }

    #[test]
    fn non_uniform_grid_is_interpolated() {
        let spec = DiffusionSpec::brownian(0.0, 1.0, 0.0).unwrap();
        let y: Vec<f64> = (0..=300).map(|i| -5.0 + 10.0 * (i as f64 / 300.0).powf(1.05)).collect();
        let sol = fokker_planck_transition_density(&spec, 0.5, 0.0, &y, &FokkerPlanckSettings::default()).unwrap();
        let err = y
            .iter()
            .zip(&sol.density)
            .map(|(&v, &p)| (p - (-v * v).exp() / std::f64::consts::PI.sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(err < 2e-3, "max error {err}");
    }

    #[test]
    fn coarse_grid_rejected() {
        let spec = DiffusionSpec::brownian(0.0, 1.0, 0.0).unwrap();
        let y = grid(-5.0, 5.0, 49);
        assert!(matches!(
            fokker_planck_transition_density(&spec, 0.5, 0.0, &y, &FokkerPlanckSettings::default()),
            Err(LikelihoodError::InvalidGrid(_))
        ));
    }

    #[test]
    fn truncated_grid_warns() {
        let spec = DiffusionSpec::brownian(0.0, 1.0, 0.0).unwrap();
        let y = grid(-1.0, 1.0, 200);
        let sol = fokker_planck_transition_density(&spec, 0.5, 0.0, &y, &FokkerPlanckSettings::default()).unwrap();
        assert!(sol.warnings.iter().any(|w| w.contains("truncation")));
    }

    #[test]
    fn point_density_matches_closed_form() {
        let p = GbmParams::new(0.1, 0.2, 1.0).unwrap();
        for &yv in &[0.8, 1.0, 1.3] {
            let fp = fokker_planck_log_density_at(&p.spec(), 0.5, 1.0, yv, &FokkerPlanckSettings::default()).unwrap();
            let exact = gbm_transition_logdensity(&p, 0.5, 1.0, yv).unwrap();
            assert!((fp.exp() - exact.exp()).abs() < 2e-3, "y={yv}: {} vs {}", fp.exp(), exact.exp());
        }
    }
}
