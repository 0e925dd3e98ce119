use nalgebra::{DMatrix, DVector};

use super::basis::BasisConfig;
use super::CollocationError;
use crate::sde::DiffusionSpec;
use crate::statespace::{Link, NoiseKind, NoisyObservationSet, ObservationModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Unweighted,
    /// Residuals divided by the diffusion coefficient.
    SigmaWeighted,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Unweighted => "unweighted",
            Self::SigmaWeighted => "sigma_weighted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unweighted" => Some(Self::Unweighted),
            "sigma_weighted" => Some(Self::SigmaWeighted),
            _ => None,
        }
    }
}

/// Weight and form of the ODE-fidelity penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub lambda: f64,
    pub weight_mode: WeightMode,
    /// Integration range; the basis domain when `None`.
    pub horizon: Option<(f64, f64)>,
    /// Simpson subintervals per knot interval (even).
    pub nodes_per_interval: usize,
}

impl PenaltySpec {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, weight_mode: WeightMode::Unweighted, horizon: None, nodes_per_interval: 10 }
    }

    pub fn weighted(mut self) -> Self {
        self.weight_mode = WeightMode::SigmaWeighted;
        self
    }

    pub fn with_nodes(mut self, n: usize) -> Self {
        self.nodes_per_interval = n;
        self
    }

    pub fn validate(&self) -> Result<(), CollocationError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CollocationError::InvalidArgument(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.nodes_per_interval < 2 || self.nodes_per_interval % 2 != 0 {
            return Err(CollocationError::InvalidArgument("quadrature needs an even number of subintervals".into()));
        }
        if let Some((a, b)) = self.horizon {
            if !(b > a) {
                return Err(CollocationError::InvalidArgument("empty penalty horizon".into()));
            }
        }
        Ok(())
    }
}

/// Diffusion coefficient of the SDE whose MAP path estimate coincides with
/// the unweighted penalized fit at weight `lambda`.
pub fn map_equivalent_sigma(lambda: f64) -> f64 {
    1.0 / (2.0 * lambda).sqrt()
}

/// Inverse of [`map_equivalent_sigma`].
pub fn lambda_for_sigma(sigma: f64) -> f64 {
    1.0 / (2.0 * sigma * sigma)
}

/// Coefficients, parameters and the two objective components.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationState {
    pub coeffs: Vec<f64>,
    pub theta: Vec<f64>,
    pub data_term: f64,
    pub penalty_term: f64,
}

impl CollocationState {
    pub fn objective(&self) -> f64 {
        self.data_term + self.penalty_term
    }
}

struct Node {
    t: f64,
    w: f64,
    i0: usize,
    b: [f64; 4],
    db: [f64; 4],
}

pub(crate) struct Assembly {
    pub grad: DVector<f64>,
    /// Gauss–Newton approximation.
    pub hess: DMatrix<f64>,
}

/// Precomputed basis evaluations for one data set and penalty.
pub struct Problem<'a> {
    pub(crate) basis: &'a BasisConfig,
    pub(crate) om: &'a ObservationModel,
    pub(crate) spec: &'a DiffusionSpec,
    pub(crate) pen: &'a PenaltySpec,
    y: Vec<f64>,
    rows: Vec<(usize, [f64; 4])>,
    nodes: Vec<Node>,
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

impl<'a> Problem<'a> {
    pub fn new(
        basis: &'a BasisConfig,
        obs: &NoisyObservationSet,
        om: &'a ObservationModel,
        spec: &'a DiffusionSpec,
        pen: &'a PenaltySpec,
    ) -> Result<Self, CollocationError> {
        pen.validate()?;
        om.validate()?;
        spec.require_scalar()?;
        if obs.dim() != 1 || !matches!(om.link, Link::Identity) {
            return Err(CollocationError::InvalidArgument("scalar observations with identity link required".into()));
        }
        let (a, b) = basis.domain();
        if obs.times().iter().any(|&t| t < a || t > b) {
            return Err(CollocationError::InvalidBasis("observation times outside the basis domain".into()));
        }
        let (ha, hb) = pen.horizon.unwrap_or((a, b));
        if ha < a || hb > b {
            return Err(CollocationError::InvalidBasis("penalty horizon exceeds the basis domain".into()));
        }
        let rows = obs.times().iter().map(|&t| {
            let (i0, v, _) = basis.eval(t);
            (i0, v)
        });
        let rows = rows.collect();
        let mut nodes = Vec::new();
        let m = pen.nodes_per_interval;
        for w in basis.breakpoints().windows(2) {
            let (lo, hi) = (w[0].max(ha), w[1].min(hb));
            if hi <= lo {
                continue;
            }
            let h = (hi - lo) / m as f64;
            for k in 0..=m {
                let t = lo + h * k as f64;
                let coef = if k == 0 || k == m {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let (i0, b, db) = basis.eval(t);
                nodes.push(Node { t, w: coef * h / 3.0, i0, b, db });
            }
        }
        Ok(Self { basis, om, spec, pen, y: obs.values().to_vec(), rows, nodes })
    }

    pub fn n_basis(&self) -> usize {
        self.basis.n_basis()
    }

    pub fn n_theta(&self) -> usize {
        self.spec.theta().len()
    }

    /// Negative log-likelihood, derivative in `x` and curvature weight
    /// for one observation residual.
    fn data_point(&self, y: f64, x: f64) -> (f64, f64, f64) {
        let s = self.om.scale;
        let z = (y - x) / s;
        let value = -self.om.log_density(&[y], &[x]);
        match self.om.kind {
            NoiseKind::Gaussian => (value, -z / s, 1.0 / (s * s)),
            NoiseKind::StudentT { dof } => {
                let w = (dof + 1.0) / (dof + z * z);
                (value, -w * z / s, w / (s * s))
            }
        }
    }

    fn sigma_at(&self, x: f64, theta: &[f64], t: f64) -> Result<f64, CollocationError> {
        match self.pen.weight_mode {
            WeightMode::Unweighted => Ok(1.0),
            WeightMode::SigmaWeighted => {
                let s = self.spec.diffusion1_with(x, theta);
                if s == 0.0 || !s.is_finite() {
                    return Err(CollocationError::WeightSingularity { t, x });
                }
                Ok(s)
            }
        }
    }

    fn state(&self, c: &[f64]) -> Result<(), CollocationError> {
        if c.len() != self.n_basis() {
            return Err(CollocationError::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                self.n_basis(),
                c.len()
            )));
        }
        Ok(())
    }

    /// `(data term, penalty term)`.
    pub fn terms(&self, c: &[f64], theta: &[f64]) -> Result<(f64, f64), CollocationError> {
        self.state(c)?;
        let mut data = 0.0;
        for ((i0, b), &y) in self.rows.iter().zip(&self.y) {
            let x: f64 = (0..4).map(|j| c[i0 + j] * b[j]).sum();
            data += self.data_point(y, x).0;
        }
        let mut pen = 0.0;
        if self.pen.lambda > 0.0 {
            for n in &self.nodes {
                let x: f64 = (0..4).map(|j| c[n.i0 + j] * n.b[j]).sum();
                let dx: f64 = (0..4).map(|j| c[n.i0 + j] * n.db[j]).sum();
                let s = self.sigma_at(x, theta, n.t)?;
                let r = (dx - self.spec.drift1_with(x, theta)) / s;
                pen += n.w * r * r;
            }
            pen *= self.pen.lambda;
        }
        if !(data.is_finite() && pen.is_finite()) {
            return Err(CollocationError::NonFinite);
        }
        Ok((data, pen))
    }

    /// Value, exact gradient and Gauss–Newton Hessian in `c`, or in
    /// `(c, θ)` when `with_theta` is set.
    pub(crate) fn assemble(&self, c: &[f64], theta: &[f64], with_theta: bool) -> Result<Assembly, CollocationError> {
        self.state(c)?;
        let nb = self.n_basis();
        let np = if with_theta { self.n_theta() } else { 0 };
        let dim = nb + np;
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        let mut data = 0.0;
        for ((i0, b), &y) in self.rows.iter().zip(&self.y) {
            let x: f64 = (0..4).map(|j| c[i0 + j] * b[j]).sum();
            let (v, g, h) = self.data_point(y, x);
            data += v;
            for p in 0..4 {
                grad[i0 + p] += g * b[p];
                for q in 0..4 {
                    hess[(i0 + p, i0 + q)] += h * b[p] * b[q];
                }
            }
        }
        let mut pen = 0.0;
        let lam = self.pen.lambda;
        if lam > 0.0 {
            let mut jt = vec![0.0; np];
            let mut th = theta.to_vec();
            for n in &self.nodes {
                let x: f64 = (0..4).map(|j| c[n.i0 + j] * n.b[j]).sum();
                let dx: f64 = (0..4).map(|j| c[n.i0 + j] * n.db[j]).sum();
                let s = self.sigma_at(x, theta, n.t)?;
                let mu = self.spec.drift1_with(x, theta);
                let rho = (dx - mu) / s;
                let h = fd_step(x);
                let dmu = (self.spec.drift1_with(x + h, theta) - self.spec.drift1_with(x - h, theta)) / (2.0 * h);
                let ds = match self.pen.weight_mode {
                    WeightMode::Unweighted => 0.0,
                    WeightMode::SigmaWeighted => {
                        (self.spec.diffusion1_with(x + h, theta) - self.spec.diffusion1_with(x - h, theta)) / (2.0 * h)
                    }
                };
                let wt = lam * n.w;
                pen += wt * rho * rho;
                let jc: [f64; 4] = std::array::from_fn(|j| (n.db[j] - dmu * n.b[j]) / s - rho * ds / s * n.b[j]);
                for (k, jk) in jt.iter_mut().enumerate() {
                    let hk = fd_step(theta[k]);
                    th[k] = theta[k] + hk;
                    let (mp, sp) = (self.spec.drift1_with(x, &th), self.sigma_at(x, &th, n.t)?);
                    th[k] = theta[k] - hk;
                    let (mm, sm) = (self.spec.drift1_with(x, &th), self.sigma_at(x, &th, n.t)?);
                    th[k] = theta[k];
                    *jk = -((mp - mm) / (2.0 * hk)) / s - rho * ((sp - sm) / (2.0 * hk)) / s;
                }
                for p in 0..4 {
                    grad[n.i0 + p] += 2.0 * wt * rho * jc[p];
                    for q in 0..4 {
                        hess[(n.i0 + p, n.i0 + q)] += 2.0 * wt * jc[p] * jc[q];
                    }
                    for (k, jk) in jt.iter().enumerate() {
                        hess[(n.i0 + p, nb + k)] += 2.0 * wt * jc[p] * jk;
                        hess[(nb + k, n.i0 + p)] += 2.0 * wt * jc[p] * jk;
                    }
                }
                for (k, jk) in jt.iter().enumerate() {
                    grad[nb + k] += 2.0 * wt * rho * jk;
                    for (l, jl) in jt.iter().enumerate() {
                        hess[(nb + k, nb + l)] += 2.0 * wt * jk * jl;
                    }
                }
            }
        }
        if !(data.is_finite() && pen.is_finite() && grad.iter().all(|g| g.is_finite())) {
            return Err(CollocationError::NonFinite);
        }
        Ok(Assembly { grad, hess })
    }
}

/// Data term plus penalty term at `(c, θ)`.
pub fn collocation_objective(
    c: &[f64],
    theta: &[f64],
    basis: &BasisConfig,
    obs: &NoisyObservationSet,
    om: &ObservationModel,
    spec: &DiffusionSpec,
    pen: &PenaltySpec,
) -> Result<f64, CollocationError> {
    let (d, p) = Problem::new(basis, obs, om, spec, pen)?.terms(c, theta)?;
    Ok(d + p)
}

/// Gradient of [`collocation_objective`] in the coefficients, as used by the
/// inner solver.
pub fn collocation_gradient(
    c: &[f64],
    theta: &[f64],
    basis: &BasisConfig,
    obs: &NoisyObservationSet,
    om: &ObservationModel,
    spec: &DiffusionSpec,
    pen: &PenaltySpec,
) -> Result<Vec<f64>, CollocationError> {
    let a = Problem::new(basis, obs, om, spec, pen)?.assemble(c, theta, false)?;
    Ok(a.grad.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn setup() -> (BasisConfig, NoisyObservationSet, DiffusionSpec) {
        let times: Vec<f64> = (0..11).map(|i| 0.2 * i as f64).collect();
        let y = times.iter().map(|t| (0.3 * t).exp() + 0.01 * (7.0 * t).sin()).collect();
        let obs = NoisyObservationSet::scalar(times.clone(), y).unwrap();
        (BasisConfig::at_times(&times).unwrap(), obs, DiffusionSpec::gbm(0.3, 0.2, 1.0).unwrap())
    }

    #[test]
    fn zero_residual_for_exact_linear_solution() {
        // x' = 2 is solved exactly by a straight line, which the basis holds
        let (basis, obs, _) = setup();
        let spec = DiffusionSpec::brownian(2.0, 1.0, 0.0).unwrap();
        let ts: Vec<f64> = (0..50).map(|i| 2.0 * i as f64 / 49.0).collect();
        let c = basis.least_squares(&ts, &ts.iter().map(|t| 1.0 + 2.0 * t).collect::<Vec<_>>());
        let om = ObservationModel::gaussian(1.0).unwrap();
        let pen = PenaltySpec::new(5.0);
        let p = Problem::new(&basis, &obs, &om, &spec, &pen).unwrap();
        assert!(p.terms(&c, spec.theta()).unwrap().1 <= 1e-10);
    }

    #[test]
    fn lambda_zero_is_negative_loglik() {
        let (basis, obs, spec) = setup();
        let om = ObservationModel::gaussian(0.1).unwrap();
        let c: Vec<f64> = (0..basis.n_basis()).map(|i| 1.0 + 0.05 * i as f64).collect();
        let v = collocation_objective(&c, spec.theta(), &basis, &obs, &om, &spec, &PenaltySpec::new(0.0)).unwrap();
        let nll: f64 =
            (0..obs.len()).map(|i| -om.log_density(obs.y(i), &[basis.value(&c, obs.times()[i]).0])).sum();
        assert!((v - nll).abs() < 1e-12);
    }

    #[test]
    fn weighted_penalty_algebra() {
        let (basis, obs, _) = setup();
        let om = ObservationModel::gaussian(0.1).unwrap();
        let c: Vec<f64> = (0..basis.n_basis()).map(|i| (i as f64 * 0.4).cos()).collect();
        for &lp in &[0.5, 2.0, 37.0] {
            let sig = map_equivalent_sigma(lp);
            let spec = DiffusionSpec::scalar("lin", |x, th| th[0] * x, move |_, _| sig, vec![0.3], 1.0).unwrap();
            let (pw_spec, pu_spec) = (PenaltySpec::new(1.0).weighted(), PenaltySpec::new(1.0));
            let w = Problem::new(&basis, &obs, &om, &spec, &pw_spec).unwrap();
            let u = Problem::new(&basis, &obs, &om, &spec, &pu_spec).unwrap();
            let (pw, pu) = (w.terms(&c, &[0.3]).unwrap().1, u.terms(&c, &[0.3]).unwrap().1);
            assert!((pw - 2.0 * lp * pu).abs() <= 1e-12 * pw.abs().max(1.0), "{pw} vs {}", 2.0 * lp * pu);
        }
    }

    #[test]
    fn map_sigma_values() {
        assert_eq!(map_equivalent_sigma(0.5), 1.0);
        assert_eq!(map_equivalent_sigma(2.0), 0.5);
        for &l in &[1e-3, 0.5, 3.7, 1e4] {
            assert!((lambda_for_sigma(map_equivalent_sigma(l)) - l).abs() <= 1e-15 * l.max(1.0));
        }
    }

    #[test]
    fn weight_singularity() {
        let (basis, obs, _) = setup();
        let spec = DiffusionSpec::gbm(0.3, 0.2, 1.0).unwrap();
        let om = ObservationModel::gaussian(0.1).unwrap();
        let mut c = vec![1.0; basis.n_basis()];
        c[3] = 0.0;
        c[4] = 0.0;
        c[5] = 0.0;
        c[6] = 0.0;
        let r = collocation_objective(&c, spec.theta(), &basis, &obs, &om, &spec, &PenaltySpec::new(1.0).weighted());
        assert!(matches!(r, Err(CollocationError::WeightSingularity { .. })), "{r:?}");
    }

    #[test]
    fn quadrature_converges() {
        let (basis, obs, spec) = setup();
        let om = ObservationModel::gaussian(0.1).unwrap();
        let ts: Vec<f64> = (0..100).map(|i| 2.0 * i as f64 / 99.0).collect();
        let c = basis.least_squares(&ts, &ts.iter().map(|t| (0.25 * t).exp() + 0.1 * t.sin()).collect::<Vec<_>>());
        let pen = |n| {
            let ps = PenaltySpec::new(3.0).with_nodes(n);
            Problem::new(&basis, &obs, &om, &spec, &ps).unwrap().terms(&c, &[0.3, 0.2]).unwrap().1
        };
        assert!((pen(10) - pen(20)).abs() < 1e-8, "{} vs {}", pen(10), pen(20));
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            c in proptest::collection::vec(0.5f64..2.0, 13),
            beta in -1.0f64..1.0,
            weighted in proptest::bool::ANY,
            heavy in proptest::bool::ANY,
        ) {
            let (basis, obs, _) = setup();
            let spec = DiffusionSpec::scalar("nl", |x, th| th[0] * x - 0.2 * x * x, |x, _| 0.3 + 0.1 * x * x, vec![beta], 1.0).unwrap();
            let om = if heavy { ObservationModel::student_t(0.1, 4.0).unwrap() } else { ObservationModel::gaussian(0.1).unwrap() };
            let mut pen = PenaltySpec::new(2.5);
            if weighted { pen = pen.weighted(); }
            let p = Problem::new(&basis, &obs, &om, &spec, &pen).unwrap();
            let g = p.assemble(&c, &[beta], true).unwrap().grad;
            let f = |cc: &[f64], th: &[f64]| { let (a, b) = p.terms(cc, th).unwrap(); a + b };
            for i in 0..c.len() + 1 {
                let fd = if i < c.len() {
                    let h = 1e-6;
                    let mut cp = c.clone(); cp[i] += h;
                    let mut cm = c.clone(); cm[i] -= h;
                    (f(&cp, &[beta]) - f(&cm, &[beta])) / (2.0 * h)
                } else {
                    let h = 1e-6;
                    (f(&c, &[beta + h]) - f(&c, &[beta - h])) / (2.0 * h)
                };
                let scale = g[i].abs().max(fd.abs()).max(1e-2);
                prop_assert!((g[i] - fd).abs() / scale < 1e-4, "i={} analytic {} fd {}", i, g[i], fd);
            }
        }
    }
}
