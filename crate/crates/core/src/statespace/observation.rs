use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use statrs::function::gamma::ln_gamma;

use super::StateSpaceError;
use crate::table;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian,
    StudentT { dof: f64 },
}

/// Maps a state vector to the mean of the observation.
#[derive(Clone)]
pub enum Link {
    Identity,
    /// Observes the listed state coordinates.
    Coordinates(Vec<usize>),
    /// `(state, out)` with an explicit observation dimension.
    Custom { dim: usize, f: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync> },
}

impl std::fmt::Debug for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Identity => write!(f, "Identity"),
            Self::Coordinates(c) => f.debug_tuple("Coordinates").field(c).finish(),
            Self::Custom { dim, .. } => write!(f, "Custom {{ dim: {dim} }}"),
        }
    }
}

/// `Y | X = x` with independent location-scale noise around `link(x)` in each
/// observed coordinate.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub kind: NoiseKind,
    pub scale: f64,
    pub link: Link,
}

impl ObservationModel {
    pub fn gaussian(scale: f64) -> Result<Self, StateSpaceError> {
        let m = Self { kind: NoiseKind::Gaussian, scale, link: Link::Identity };
        m.validate()?;
        Ok(m)
    }

    pub fn student_t(scale: f64, dof: f64) -> Result<Self, StateSpaceError> {
        let m = Self { kind: NoiseKind::StudentT { dof }, scale, link: Link::Identity };
        m.validate()?;
        Ok(m)
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn validate(&self) -> Result<(), StateSpaceError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(StateSpaceError::InvalidArgument(format!("observation scale must be positive, got {}", self.scale)));
        }
        if let NoiseKind::StudentT { dof } = self.kind {
            if !(dof > 0.0) {
                return Err(StateSpaceError::InvalidArgument(format!("degrees of freedom must be positive, got {dof}")));
            }
        }
        Ok(())
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, NoiseKind::Gaussian)
    }

    pub fn obs_dim(&self, state_dim: usize) -> usize {
        match &self.link {
            Link::Identity => state_dim,
            Link::Coordinates(c) => c.len(),
            Link::Custom { dim, .. } => *dim,
        }
    }

    pub fn mean_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.link {
            Link::Identity => out.copy_from_slice(&x[..out.len()]),
            Link::Coordinates(c) => {
                for (o, &i) in out.iter_mut().zip(c) {
                    *o = x[i];
                }
            }
            Link::Custom { f, .. } => f(x, out),
        }
    }

    fn log_density_1(&self, resid: f64) -> f64 {
        let z = resid / self.scale;
        match self.kind {
            NoiseKind::Gaussian => -0.5 * (2.0 * PI).ln() - self.scale.ln() - 0.5 * z * z,
            NoiseKind::StudentT { dof } => {
                ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof) - 0.5 * (dof * PI).ln() - self.scale.ln()
                    - 0.5 * (dof + 1.0) * (z * z / dof).ln_1p()
            }
        }
    }

    /// `log f(y | x)`; `mean` is scratch space of the observation dimension.
    pub fn log_density_with(&self, y: &[f64], x: &[f64], mean: &mut [f64]) -> f64 {
        self.mean_into(x, mean);
        y.iter().zip(mean.iter()).map(|(&yi, &mi)| self.log_density_1(yi - mi)).sum()
    }

    pub fn log_density(&self, y: &[f64], x: &[f64]) -> f64 {
        let mut mean = vec![0.0; y.len()];
        self.log_density_with(y, x, &mut mean)
    }

    /// Draws an observation given the state.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], obs_dim: usize, rng: &mut R) -> Vec<f64> {
        let mut mean = vec![0.0; obs_dim];
        self.mean_into(x, &mut mean);
        mean.iter()
            .map(|m| {
                let e: f64 = match self.kind {
                    NoiseKind::Gaussian => StandardNormal.sample(rng),
                    NoiseKind::StudentT { dof } => StudentT::new(dof).expect("validated dof").sample(rng),
                };
                m + self.scale * e
            })
            .collect()
    }
}

/// Noisy observations `y_i` at strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyObservationSet {
    times: Vec<f64>,
    dim: usize,
    y: Vec<f64>,
}

impl NoisyObservationSet {
    pub fn new(times: Vec<f64>, dim: usize, y: Vec<f64>) -> Result<Self, StateSpaceError> {
        if dim == 0 || y.len() != times.len() * dim {
            return Err(StateSpaceError::InvalidArgument("observation values do not match times".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(StateSpaceError::InvalidArgument("observation times must be strictly increasing".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(StateSpaceError::InvalidArgument("observations must be finite".into()));
        }
        Ok(Self { times, dim, y })
    }

    pub fn scalar(times: Vec<f64>, y: Vec<f64>) -> Result<Self, StateSpaceError> {
        Self::new(times, 1, y)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.y[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    /// Copy with observation `i` replaced.
    pub fn with_value(&self, i: usize, y: &[f64]) -> Self {
        let mut out = self.clone();
        out.y[i * self.dim..(i + 1) * self.dim].copy_from_slice(y);
        out
    }

    /// CSV with header `t,y1[,y2,…]`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), StateSpaceError> {
        let header: Vec<String> =
            std::iter::once("t".to_string()).chain((1..=self.dim).map(|i| format!("y{i}"))).collect();
        let rows: Vec<Vec<f64>> = (0..self.len())
            .map(|i| std::iter::once(self.times[i]).chain(self.y(i).iter().copied()).collect())
            .collect();
        table::write_table_to(w, &header, &rows)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, StateSpaceError> {
        let t = table::read_table_from(r)?;
        if t.header.len() < 2 || t.header[0] != "t" {
            return Err(StateSpaceError::InvalidArgument(format!("expected header `t,y1[,y2]`, found {:?}", t.header)));
        }
        let dim = t.header.len() - 1;
        let times = t.column(0);
        let y = t.rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
        Self::new(times, dim, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_simpson;
    use std::convert::Infallible;

    #[test]
    fn densities_normalize() {
        for om in [ObservationModel::gaussian(0.7).unwrap(), ObservationModel::student_t(0.7, 3.0).unwrap()] {
            let f = |y: f64| Ok::<_, Infallible>(om.log_density(&[y], &[0.4]).exp());
            let mass = adaptive_simpson(f, -400.0, 400.0, 1e-10).unwrap();
            assert!((mass - 1.0).abs() < 1e-4, "{mass}");
        }
    }

    #[test]
    fn student_t_matches_statrs() {
        let om = ObservationModel::student_t(2.0, 4.5).unwrap();
        let reference = statrs::distribution::StudentsT::new(1.0, 2.0, 4.5).unwrap();
        for &y in &[-3.0, 0.0, 1.0, 7.5] {
            let r = statrs::distribution::Continuous::ln_pdf(&reference, y);
            assert!((om.log_density(&[y], &[1.0]) - r).abs() < 1e-10);
        }
    }

    #[test]
    fn coordinate_link() {
        let om = ObservationModel::gaussian(1.0).unwrap().with_link(Link::Coordinates(vec![0, 2]));
        assert_eq!(om.obs_dim(4), 2);
        let a = om.log_density(&[1.0, 2.0], &[1.0, 99.0, 2.0, -5.0]);
        assert!((a + (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn validation() {
        assert!(ObservationModel::gaussian(0.0).is_err());
        assert!(ObservationModel::student_t(1.0, 0.0).is_err());
        assert!(NoisyObservationSet::scalar(vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let obs = NoisyObservationSet::new(vec![0.0, 1.0], 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,y1,y2\n"));
        assert_eq!(NoisyObservationSet::read_csv(buf.as_slice()).unwrap(), obs);
    }
}
