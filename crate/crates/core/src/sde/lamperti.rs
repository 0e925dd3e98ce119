use std::sync::Arc;

use super::model::DiffusionSpec;
use super::path::Path;
use super::SdeError;
use crate::quad::adaptive_simpson;

const QUAD_TOL: f64 = 1e-10;

/// The map `η(x) = ∫_ref^x du / σ(u, θ)` for a scalar model, under which the
/// model has unit diffusion and drift `μ/σ − ½ ∂σ/∂x`.
///
/// The transform is bound to the parameter vector of the spec it was built from.
#[derive(Clone, Debug)]
pub struct LampertiTransform {
    spec: DiffusionSpec,
    reference: f64,
}

/// Builds the transform of a scalar model, anchored at the model's initial state.
pub fn lamperti_transform(spec: &DiffusionSpec) -> Result<LampertiTransform, SdeError> {
    LampertiTransform::with_reference(spec, spec.x0()[0])
}

impl LampertiTransform {
    pub fn with_reference(spec: &DiffusionSpec, reference: f64) -> Result<Self, SdeError> {
        spec.require_scalar()?;
        let t = Self { spec: spec.clone(), reference };
        t.inv_sigma(reference)?;
        Ok(t)
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    fn inv_sigma(&self, x: f64) -> Result<f64, SdeError> {
        let s = self.spec.diffusion1(x);
        if s > 0.0 && s.is_finite() {
            Ok(1.0 / s)
        } else {
            Err(SdeError::TransformUndefined { x, value: s })
        }
    }

    fn integral(&self, a: f64, b: f64) -> Result<f64, SdeError> {
        adaptive_simpson(|u| self.inv_sigma(u), a, b, QUAD_TOL)
    }

    /// `η(x)`.
    pub fn forward(&self, x: f64) -> Result<f64, SdeError> {
        self.integral(self.reference, x)
    }

    /// Solves `η(x) = eta` by safeguarded Newton steps, accumulating `η`
    /// incrementally between iterates.
    pub fn inverse(&self, eta: f64) -> Result<f64, SdeError> {
        let mut x = self.reference;
        let mut current = 0.0;
        for _ in 0..200 {
            let resid = eta - current;
            if resid.abs() <= 1e-14 * eta.abs().max(1.0) {
                return Ok(x);
            }
            let mut step = self.spec.diffusion1(x) * resid;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = x + step;
                let ok = cand.is_finite() && self.spec.diffusion1(cand) > 0.0;
                if ok {
                    if let Ok(inc) = self.integral(x, cand) {
                        let next = current + inc;
                        // monotone map: accept if we did not overshoot by more than we started with
                        if (eta - next).abs() < resid.abs() {
                            x = cand;
                            current = next;
                            accepted = true;
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                return Ok(x);
            }
        }
        Ok(x)
    }

    /// `∂σ/∂x` by central difference with step `max(1e-6, 1e-6|x|)`.
    pub fn sigma_slope(&self, x: f64) -> f64 {
        let h = (1e-6 * x.abs()).max(1e-6);
        (self.spec.diffusion1(x + h) - self.spec.diffusion1(x - h)) / (2.0 * h)
    }

    /// Drift of the transformed process expressed at the original state `x`.
    pub fn transformed_drift_at(&self, x: f64) -> Result<f64, SdeError> {
        let inv = self.inv_sigma(x)?;
        Ok(self.spec.drift1(x) * inv - 0.5 * self.sigma_slope(x))
    }

    /// The model in `η` coordinates, with unit diffusion.
    ///
    /// Its drift maps `η` back through [`Self::inverse`]; failures surface as
    /// non-finite drift values, which the simulators report as divergence.
    pub fn transformed_spec(&self) -> Result<DiffusionSpec, SdeError> {
        let me = Arc::new(self.clone());
        let eta0 = self.forward(self.spec.x0()[0])?;
        let spec = DiffusionSpec::scalar(
            format!("lamperti({})", self.spec.name()),
            move |eta, _| me.inverse(eta).and_then(|x| me.transformed_drift_at(x)).unwrap_or(f64::NAN),
            |_, _| 1.0,
            self.spec.theta().to_vec(),
            eta0,
        )?;
        Ok(spec)
    }

    /// Maps every value of a scalar path through `η`, integrating between
    /// consecutive states.
    pub fn map_path(&self, path: &Path) -> Result<Path, SdeError> {
        if path.dim() != 1 {
            return Err(SdeError::UnsupportedDimension(path.dim()));
        }
        let mut out = Vec::with_capacity(path.len());
        let mut prev_x = self.reference;
        let mut prev_eta = 0.0;
        for k in 0..path.len() {
            let x = path.scalar(k);
            prev_eta += self.integral(prev_x, x)?;
            prev_x = x;
            out.push(prev_eta);
        }
        Path::from_scalar(path.times().to_vec(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{quadratic_variation, simulate_gbm_exact, GbmParams, TimeGrid};

    #[test]
    fn gbm_log_transform() {
        let (beta, sigma) = (0.1, 0.3);
        let spec = DiffusionSpec::gbm(beta, sigma, 1.0).unwrap();
        let t = lamperti_transform(&spec).unwrap();
        for &x in &[0.2, 0.7, 1.0, 1.9, 4.5] {
            let eta = t.forward(x).unwrap();
            assert!((eta - f64::ln(x) / sigma).abs() < 1e-6, "x={x}");
            let drift = t.transformed_drift_at(x).unwrap();
            assert!((drift - (beta / sigma - sigma / 2.0)).abs() < 1e-6);
        }
        let ts = t.transformed_spec().unwrap();
        assert_eq!(ts.diffusion1(0.3), 1.0);
        assert!((ts.drift1(0.5) - (beta / sigma - sigma / 2.0)).abs() < 1e-6);
    }

    #[test]
    fn constant_sigma_is_affine() {
        let spec = DiffusionSpec::scalar("c", |x, _| 1.0 - 2.0 * x, |_, _| 0.5, vec![], 0.25).unwrap();
        let t = lamperti_transform(&spec).unwrap();
        for &x in &[-3.0, -0.5, 0.25, 2.0] {
            assert!((t.forward(x).unwrap() - (x - 0.25) / 0.5).abs() < 1e-10);
            assert!((t.transformed_drift_at(x).unwrap() - (1.0 - 2.0 * x) / 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn forward_inverse_round_trip() {
        let spec = DiffusionSpec::scalar("sqrt", |x, _| 1.0 - x, |x, _| 0.4 * x.sqrt(), vec![], 1.0).unwrap();
        let t = lamperti_transform(&spec).unwrap();
        for &x in &[0.05, 0.3, 1.0, 2.2, 9.0] {
            let back = t.inverse(t.forward(x).unwrap()).unwrap();
            assert!((back - x).abs() < 1e-8, "x={x} back={back}");
        }
    }

    #[test]
    fn undefined_where_sigma_vanishes() {
        let spec = DiffusionSpec::gbm(0.1, 0.3, 1.0).unwrap();
        let t = lamperti_transform(&spec).unwrap();
        assert!(matches!(t.forward(-1.0), Err(SdeError::TransformUndefined { .. })));
        let flat = DiffusionSpec::scalar("z", |_, _| 0.0, |_, _| 0.0, vec![], 1.0).unwrap();
        assert!(lamperti_transform(&flat).is_err());
    }

    #[test]
    fn rejects_vector_models() {
        let spec = DiffusionSpec::new(
            "v",
            2,
            Arc::new(|_: &[f64], _: &[f64], o: &mut [f64]| o.fill(0.0)),
            Arc::new(|_: &[f64], _: &[f64], o: &mut [f64]| o.fill(1.0)),
            vec![],
            vec![0.0, 0.0],
        )
        .unwrap();
        assert!(matches!(lamperti_transform(&spec), Err(SdeError::UnsupportedDimension(2))));
    }

    #[test]
    fn transformed_gbm_path_has_unit_quadratic_variation() {
        let p = GbmParams::new(0.1, 0.3, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10_000).unwrap();
        let path = simulate_gbm_exact(&p, &grid, 2024).unwrap();
        let t = lamperti_transform(&p.spec()).unwrap();
        let eta = t.map_path(&path).unwrap();
        let qv = quadratic_variation(&eta).unwrap();
        assert!((qv - 1.0).abs() < 0.05, "qv={qv}");
    }
}
