use rand_distr::{Distribution, StandardNormal};

use super::observation::{Link, ObservationModel};
use super::particle::TransitionKernel;
use super::StateSpaceError;
use crate::rng::StreamRng;

/// Integrated random walk: each coordinate carries a (position, velocity)
/// pair, stored interleaved. Over a gap `dt` the velocity receives a
/// `N(0, step_sd² dt)` increment and the position moves by
/// `(velocity + drift) * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedRandomWalk {
    pub coords: usize,
    pub step_sd: f64,
    /// Mean velocity added to each coordinate; zeros by default.
    pub drift: Vec<f64>,
    pub initial: Vec<f64>,
}

impl IntegratedRandomWalk {
    pub fn new(coords: usize, step_sd: f64) -> Result<Self, StateSpaceError> {
        if coords == 0 || !(step_sd >= 0.0 && step_sd.is_finite()) {
            return Err(StateSpaceError::InvalidArgument("need coords ≥ 1 and a finite step_sd ≥ 0".into()));
        }
        Ok(Self { coords, step_sd, drift: vec![0.0; coords], initial: vec![0.0; 2 * coords] })
    }

    pub fn with_drift(mut self, drift: Vec<f64>) -> Self {
        assert_eq!(drift.len(), self.coords);
        self.drift = drift;
        self
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Self {
        assert_eq!(initial.len(), 2 * self.coords);
        self.initial = initial;
        self
    }

    /// Link observing the position of every coordinate.
    pub fn position_link(&self) -> Link {
        Link::Coordinates((0..self.coords).map(|c| 2 * c).collect())
    }
}

impl TransitionKernel for IntegratedRandomWalk {
    fn state_dim(&self) -> usize {
        2 * self.coords
    }

    fn default_initial(&self) -> Vec<f64> {
        self.initial.clone()
    }

    fn propagate(&self, state: &mut [f64], dt: f64, rng: &mut StreamRng) {
        let sd = self.step_sd * dt.sqrt();
        for c in 0..self.coords {
            let z: f64 = StandardNormal.sample(rng);
            state[2 * c + 1] += sd * z;
            state[2 * c] += (state[2 * c + 1] + self.drift[c]) * dt;
        }
    }
}

/// Planar integrated random walk observed through Student-t position errors.
pub fn preset_integrated_rw_t(
    step_sd: f64,
    t_scale: f64,
    t_dof: f64,
) -> Result<(IntegratedRandomWalk, ObservationModel), StateSpaceError> {
    let model = IntegratedRandomWalk::new(2, step_sd)?;
    let om = ObservationModel::student_t(t_scale, t_dof)?.with_link(model.position_link());
    Ok((model, om))
}
