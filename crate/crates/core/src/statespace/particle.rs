use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde_json::{json, Value};

use super::observation::{NoisyObservationSet, ObservationModel};
use super::StateSpaceError;
use crate::rng::{self, StreamRng};
use crate::sde::{euler_step, DiffusionSpec, Path};

/// Discrete-time state transition used instead of a diffusion.
pub trait TransitionKernel: Send + Sync {
    fn state_dim(&self) -> usize;
    /// Initial state when none is supplied.
    fn default_initial(&self) -> Vec<f64>;
    /// Advances `state` over a gap `dt` in place.
    fn propagate(&self, state: &mut [f64], dt: f64, rng: &mut StreamRng);
}

#[derive(Clone)]
pub enum StateModel {
    /// Euler–Maruyama with `substeps` steps per observation gap.
    Diffusion { spec: DiffusionSpec, substeps: usize },
    Kernel(Arc<dyn TransitionKernel>),
}

impl StateModel {
    pub fn diffusion(spec: DiffusionSpec, substeps: usize) -> Self {
        Self::Diffusion { spec, substeps }
    }

    pub fn kernel<K: TransitionKernel + 'static>(k: K) -> Self {
        Self::Kernel(Arc::new(k))
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Self::Diffusion { spec, .. } => spec.state_dim(),
            Self::Kernel(k) => k.state_dim(),
        }
    }

    fn default_initial(&self) -> Vec<f64> {
        match self {
            Self::Diffusion { spec, .. } => spec.x0().to_vec(),
            Self::Kernel(k) => k.default_initial(),
        }
    }

    /// Returns false if the particle diverged.
    fn propagate(&self, x: &mut [f64], dt: f64, rng: &mut StreamRng, scratch: &mut Vec<f64>) -> bool {
        match self {
            Self::Diffusion { spec, substeps } => {
                let h = dt / *substeps as f64;
                let mut z = vec![0.0; x.len()];
                for _ in 0..*substeps {
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(rng);
                    }
                    if euler_step(spec, x, h, &z, scratch).is_err() {
                        return false;
                    }
                }
                true
            }
            Self::Kernel(k) => {
                k.propagate(x, dt, rng);
                x.iter().all(|v| v.is_finite())
            }
        }
    }
}

/// Distribution of the state at the first observation time.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Point(Vec<f64>),
    /// Independent normal coordinates.
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            Self::Point(p) => p.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn mean(&self) -> &[f64] {
        match self {
            Self::Point(p) => p,
            Self::Gaussian { mean, .. } => mean,
        }
    }

    fn sample_into(&self, out: &mut [f64], rng: &mut StreamRng) {
        match self {
            Self::Point(p) => out.copy_from_slice(p),
            Self::Gaussian { mean, sd } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(sd) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterOptions {
    pub n_particles: usize,
    pub seed: u64,
    /// Resample when ESS falls below this fraction of the particle count.
    pub resample_fraction: f64,
    pub initial: Option<InitialState>,
}

impl FilterOptions {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self { n_particles, seed, resample_fraction: 0.5, initial: None }
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = Some(initial);
        self
    }
}

/// Weighted particle set, states stored row-major.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub dim: usize,
    pub states: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Normalized weights and the log of their unnormalized sum;
    /// `None` if every weight is zero or any is NaN.
    pub fn normalized_weights(&self) -> Option<(Vec<f64>, f64)> {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || self.log_weights.iter().any(|w| w.is_nan()) {
            return None;
        }
        let w: Vec<f64> = self.log_weights.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = w.iter().sum();
        Some((w.iter().map(|v| v / s).collect(), max + s.ln()))
    }

    pub fn ess(&self) -> f64 {
        match self.normalized_weights() {
            Some((w, _)) => 1.0 / w.iter().map(|v| v * v).sum::<f64>(),
            None => 0.0,
        }
    }

    pub fn weighted_mean(&self, weights: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (k, w) in weights.iter().enumerate() {
            for (mi, xi) in m.iter_mut().zip(self.state(k)) {
                *mi += w * xi;
            }
        }
        m
    }
}

/// Systematic resampling: ancestor indices for positions `(k + u) / N`.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for k in 0..n {
        let pos = (k as f64 + u) / n as f64;
        while pos > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub loglik: f64,
    pub filtered_means: Path,
    /// ESS after any resampling at each observation.
    pub ess_trace: Vec<f64>,
    pub ess_before_resampling: Vec<f64>,
    pub resample_steps: Vec<usize>,
    pub seed: u64,
    pub n_particles: usize,
}

impl FilterOutput {
    pub fn to_json(&self) -> Value {
        let means: Vec<Value> = (0..self.filtered_means.len())
            .map(|i| json!({ "t": self.filtered_means.times()[i], "mean": self.filtered_means.value(i) }))
            .collect();
        json!({
            "loglik": self.loglik,
            "ess_trace": self.ess_trace,
            "ess_before_resampling": self.ess_before_resampling,
            "filtered_means": means,
            "resample_steps": self.resample_steps,
            "seed": self.seed,
            "n_particles": self.n_particles,
        })
    }
}

/// Below this every observation weight would be exactly zero as an `f64`.
const UNDERFLOW_LOG: f64 = -745.2;

/// Bootstrap particle filter.
///
/// Particles start at the first observation time. Particle `k` at observation
/// `i` draws from the stream keyed `(seed, i, k)`, so results do not depend on
/// the thread count.
pub fn particle_filter(
    model: &StateModel,
    om: &ObservationModel,
    obs: &NoisyObservationSet,
    opts: &FilterOptions,
) -> Result<FilterOutput, StateSpaceError> {
    om.validate()?;
    let n = opts.n_particles;
    if n < 2 {
        return Err(StateSpaceError::InvalidArgument("need at least two particles".into()));
    }
    if let StateModel::Diffusion { substeps: 0, .. } = model {
        return Err(StateSpaceError::InvalidArgument("need at least one substep".into()));
    }
    if obs.is_empty() {
        return Err(StateSpaceError::InvalidArgument("no observations".into()));
    }
    if !(opts.resample_fraction >= 0.0 && opts.resample_fraction <= 1.0) {
        return Err(StateSpaceError::InvalidArgument("resample fraction must lie in [0, 1]".into()));
    }
    let d = model.state_dim();
    if om.obs_dim(d) != obs.dim() {
        return Err(StateSpaceError::InvalidArgument(format!(
            "observation model yields dimension {}, data has {}",
            om.obs_dim(d),
            obs.dim()
        )));
    }
    let initial = opts.initial.clone().unwrap_or_else(|| InitialState::Point(model.default_initial()));
    if initial.dim() != d {
        return Err(StateSpaceError::InvalidArgument("initial state dimension mismatch".into()));
    }

    let times = obs.times();
    let mut cloud = ParticleCloud { dim: d, states: vec![0.0; n * d], log_weights: vec![0.0; n] };
    // log of normalized weights carried from the previous step
    let mut log_prev = vec![-(n as f64).ln(); n];
    let mut loglik = 0.0;
    let mut means = Vec::with_capacity(obs.len() * d);
    let mut ess_trace = Vec::with_capacity(obs.len());
    let mut ess_before = Vec::with_capacity(obs.len());
    let mut resample_steps = Vec::new();
    let seed = opts.seed;

    for i in 0..obs.len() {
        let y = obs.y(i);
        let dt = if i > 0 { times[i] - times[i - 1] } else { 0.0 };
        cloud
            .states
            .par_chunks_mut(d)
            .zip(cloud.log_weights.par_iter_mut())
            .enumerate()
            .for_each(|(k, (x, lw))| {
                let mut r = rng::stream(seed, &[i as u64, k as u64]);
                let alive = if i == 0 {
                    initial.sample_into(x, &mut r);
                    true
                } else {
                    let mut scratch = Vec::new();
                    model.propagate(x, dt, &mut r, &mut scratch)
                };
                let mut mean = vec![0.0; y.len()];
                let l = if alive { om.log_density_with(y, x, &mut mean) } else { f64::NEG_INFINITY };
                *lw = if l.is_nan() { f64::NEG_INFINITY } else { l };
            });
        let best = cloud.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(best >= UNDERFLOW_LOG) {
            return Err(StateSpaceError::FilterDegenerate { step: i });
        }
        for (lw, lp) in cloud.log_weights.iter_mut().zip(&log_prev) {
            *lw += lp;
        }
        let (w, log_sum) = cloud.normalized_weights().ok_or(StateSpaceError::FilterDegenerate { step: i })?;
        loglik += log_sum;
        means.extend(cloud.weighted_mean(&w));
        let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
        ess_before.push(ess);
        if ess < opts.resample_fraction * n as f64 {
            let u: f64 = rng::stream(seed, &[i as u64, u64::MAX]).random();
            let idx = systematic_resample(&w, u);
            let mut next = Vec::with_capacity(n * d);
            for &a in &idx {
                next.extend_from_slice(cloud.state(a));
            }
            cloud.states = next;
            log_prev.fill(-(n as f64).ln());
            resample_steps.push(i);
            ess_trace.push(n as f64);
        } else {
            for (lp, wk) in log_prev.iter_mut().zip(&w) {
                *lp = wk.ln();
            }
            ess_trace.push(ess);
        }
    }

    Ok(FilterOutput {
        loglik,
        filtered_means: Path::new(times.to_vec(), d, means)?,
        ess_trace,
        ess_before_resampling: ess_before,
        resample_steps,
        seed,
        n_particles: n,
    })
}

/// Particle log-likelihood over a grid of values of one parameter, every
/// point using the same seed.
pub fn profile_loglik<F>(
    build: F,
    om: &ObservationModel,
    obs: &NoisyObservationSet,
    grid: &[f64],
    opts: &FilterOptions,
) -> Result<Vec<(f64, f64)>, StateSpaceError>
where
    F: Fn(f64) -> Result<StateModel, StateSpaceError>,
{
    grid.iter()
        .map(|&v| {
            let m = build(v)?;
            Ok((v, particle_filter(&m, om, obs, opts)?.loglik))
        })
        .collect()
}
