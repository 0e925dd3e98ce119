use std::sync::Arc;

use serde::Serialize;

use super::ToolkitError;
use crate::parallel::map_indexed;
use crate::rng;
use crate::sde::{euler_step, DiffusionSpec, GbmParams, OuParams, Path};
use crate::statespace::{NoisyObservationSet, ObservationModel};

use rand_distr::{Distribution, StandardNormal};

/// How replicate paths are generated between design times.
#[derive(Clone)]
pub enum Simulator {
    ExactGbm(GbmParams),
    ExactOu(OuParams),
    Euler { spec: DiffusionSpec, substeps: usize },
}

impl Simulator {
    /// Exact sampling for the GBM and OU families, Euler otherwise.
    pub fn for_spec(spec: &DiffusionSpec, substeps: usize) -> Result<Self, ToolkitError> {
        let th = spec.theta();
        Ok(match spec.name() {
            "gbm" => Self::ExactGbm(GbmParams::new(th[0], th[1], spec.x0()[0])?),
            "ou" => Self::ExactOu(OuParams::new(th[0], th[1], th[2], spec.x0()[0])?),
            _ => Self::Euler { spec: spec.clone(), substeps: substeps.max(1) },
        })
    }

    fn dim(&self) -> usize {
        match self {
            Self::Euler { spec, .. } => spec.state_dim(),
            _ => 1,
        }
    }

    fn advance(&self, x: &mut [f64], dt: f64, r: &mut rng::StreamRng) -> Result<(), ToolkitError> {
        match self {
            Self::ExactGbm(p) => {
                let z: f64 = StandardNormal.sample(r);
                x[0] *= ((p.beta - 0.5 * p.sigma * p.sigma) * dt + p.sigma * dt.sqrt() * z).exp();
            }
            Self::ExactOu(p) => {
                let z: f64 = StandardNormal.sample(r);
                let (m, v) = p.transition_moments(dt, x[0]);
                x[0] = m + v.sqrt() * z;
            }
            Self::Euler { spec, substeps } => {
                let h = dt / *substeps as f64;
                let mut z = vec![0.0; x.len()];
                let mut scratch = Vec::new();
                for _ in 0..*substeps {
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(r);
                    }
                    euler_step(spec, x, h, &z, &mut scratch)
                        .map_err(|reason| ToolkitError::Simulation(reason.to_string()))?;
                }
            }
        }
        Ok(())
    }
}

/// A fitted model together with the design it was fitted on.
#[derive(Clone)]
pub struct ModelContext {
    pub simulator: Option<Simulator>,
    pub times: Vec<f64>,
    pub x0: Vec<f64>,
    pub observation: Option<ObservationModel>,
    /// Replicates must include observation noise.
    pub noisy: bool,
}

impl ModelContext {
    pub fn new(simulator: Simulator, times: Vec<f64>, x0: Vec<f64>) -> Self {
        Self { simulator: Some(simulator), times, x0, observation: None, noisy: false }
    }

    pub fn with_observation(mut self, om: ObservationModel) -> Self {
        self.observation = Some(om);
        self.noisy = true;
        self
    }
}

/// One synthetic data set: the latent path and, for noisy designs, the
/// observations drawn around it.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub path: Path,
    pub observed: Option<NoisyObservationSet>,
}

impl Replicate {
    /// Series used by the adequacy statistics: the first observed
    /// coordinate if present, else the first state coordinate.
    pub fn series(&self) -> Vec<f64> {
        match &self.observed {
            Some(o) => (0..o.len()).map(|i| o.y(i)[0]).collect(),
            None => self.path.component(0),
        }
    }
}

/// `k` data sets from the fitted model at the observed design; replicate
/// `r` uses the stream keyed `(seed, r)`.
pub fn synthetic_replicates(ctx: &ModelContext, k: usize, seed: u64) -> Result<Vec<Replicate>, ToolkitError> {
    let sim = ctx
        .simulator
        .as_ref()
        .ok_or_else(|| ToolkitError::IncompleteContext("no fitted model to simulate from".into()))?;
    if ctx.noisy && ctx.observation.is_none() {
        return Err(ToolkitError::IncompleteContext("noisy design needs an observation model".into()));
    }
    if ctx.times.windows(2).any(|w| !(w[1] > w[0])) || ctx.times.is_empty() {
        return Err(ToolkitError::InvalidArgument("design times must be strictly increasing".into()));
    }
    if ctx.x0.len() != sim.dim() {
        return Err(ToolkitError::InvalidArgument("initial state has the wrong dimension".into()));
    }
    let out = map_indexed(k, |r| -> Result<Replicate, ToolkitError> {
        let mut stream = rng::stream(seed, &[r as u64]);
        let d = ctx.x0.len();
        let mut x = ctx.x0.clone();
        let mut data = Vec::with_capacity(ctx.times.len() * d);
        data.extend_from_slice(&x);
        for w in ctx.times.windows(2) {
            sim.advance(&mut x, w[1] - w[0], &mut stream)?;
            data.extend_from_slice(&x);
        }
        let path = Path::new(ctx.times.clone(), d, data)?;
        let observed = match (&ctx.observation, ctx.noisy) {
            (Some(om), true) => {
                let od = om.obs_dim(d);
                let y = (0..path.len()).flat_map(|i| om.sample(path.value(i), od, &mut stream)).collect();
                Some(NoisyObservationSet::new(ctx.times.clone(), od, y)?)
            }
            _ => None,
        };
        Ok(Replicate { path, observed })
    });
    out.into_iter().collect()
}

pub type StatisticFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Named summary statistics of a scalar series.
#[derive(Clone)]
pub struct StatisticSet {
    stats: Vec<(String, StatisticFn)>,
}

fn increments(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[1] - w[0]).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn lag1(v: &[f64]) -> f64 {
    let m = mean(v);
    let den: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    let num: f64 = v.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    num / den
}

impl Default for StatisticSet {
    /// Mean, standard deviation and lag-1 autocorrelation of the increments,
    /// then the minimum and maximum of the series.
    fn default() -> Self {
        let mut s = Self { stats: Vec::new() };
        s.register("mean_increment", |v| mean(&increments(v)));
        s.register("increment_sd", |v| sd(&increments(v)));
        s.register("increment_lag1_acf", |v| lag1(&increments(v)));
        s.register("min", |v| v.iter().copied().fold(f64::INFINITY, f64::min));
        s.register("max", |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        s
    }
}

impl StatisticSet {
    pub fn empty() -> Self {
        Self { stats: Vec::new() }
    }

    pub fn register<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(&mut self, name: &str, f: F) {
        self.stats.retain(|(n, _)| n != name);
        self.stats.push((name.to_string(), Arc::new(f)));
    }

    pub fn names(&self) -> Vec<String> {
        self.stats.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn eval(&self, series: &[f64]) -> Vec<f64> {
        self.stats.iter().map(|(_, f)| f(series)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    /// 5%–95% quantiles; needs at least 20 replicates.
    Quantile,
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Inside,
    Outside,
    /// Statistic is constant across replicates.
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatisticCheck {
    pub name: String,
    pub observed: f64,
    pub min: f64,
    pub max: f64,
    pub q05: f64,
    pub q95: f64,
    pub verdict: Verdict,
    /// `None` when indeterminate.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdequacyReport {
    pub band: Band,
    pub replicates: usize,
    pub statistics: Vec<StatisticCheck>,
}

impl AdequacyReport {
    pub fn flagged(&self) -> Vec<&str> {
        self.statistics.iter().filter(|s| s.verdict == Verdict::Outside).map(|s| s.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&StatisticCheck> {
        self.statistics.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Compares statistics of the observed series with their spread across
/// synthetic series.
pub fn envelope_check(
    observed: &[f64],
    synthetic: &[Vec<f64>],
    stats: &StatisticSet,
    band: Band,
) -> Result<AdequacyReport, ToolkitError> {
    if band == Band::Quantile && synthetic.len() < 20 {
        return Err(ToolkitError::InvalidArgument(format!(
            "quantile envelopes need at least 20 replicates, got {}",
            synthetic.len()
        )));
    }
    if synthetic.is_empty() {
        return Err(ToolkitError::InvalidArgument("no synthetic replicates".into()));
    }
    if observed.len() < 3 || synthetic.iter().any(|s| s.len() < 3) {
        return Err(ToolkitError::InvalidArgument("series need at least three values".into()));
    }
    let obs_vals = stats.eval(observed);
    let syn_vals: Vec<Vec<f64>> = synthetic.iter().map(|s| stats.eval(s)).collect();
    let statistics = stats
        .names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let mut col: Vec<f64> = syn_vals.iter().map(|v| v[i]).collect();
            col.sort_by(f64::total_cmp);
            let (min, max) = (col[0], col[col.len() - 1]);
            let (q05, q95) = (quantile(&col, 0.05), quantile(&col, 0.95));
            let o = obs_vals[i];
            let verdict = if !(max > min) || !o.is_finite() {
                Verdict::Indeterminate
            } else {
                let (lo, hi) = match band {
                    Band::Quantile => (q05, q95),
                    Band::MinMax => (min, max),
                };
                if o >= lo && o <= hi {
                    Verdict::Inside
                } else {
                    Verdict::Outside
                }
            };
            StatisticCheck { name, observed: o, min, max, q05, q95, verdict, pass: (verdict != Verdict::Indeterminate).then_some(verdict == Verdict::Inside) }
        })
        .collect();
    Ok(AdequacyReport { band, replicates: synthetic.len(), statistics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gbm_ctx(sigma: f64) -> ModelContext {
        let p = GbmParams::new(0.1, sigma, 1.0).unwrap();
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        ModelContext::new(Simulator::ExactGbm(p), times, vec![1.0])
    }

    #[test]
    fn replicate_basics() {
        let ctx = gbm_ctx(0.2);
        assert!(synthetic_replicates(&ctx, 0, 1).unwrap().is_empty());
        assert_eq!(synthetic_replicates(&ctx, 2, 5).unwrap(), synthetic_replicates(&ctx, 2, 5).unwrap());
        let mut noisy = ctx.clone();
        noisy.noisy = true;
        assert!(matches!(synthetic_replicates(&noisy, 1, 0), Err(ToolkitError::IncompleteContext(_))));
        let with_om = ctx.with_observation(ObservationModel::gaussian(0.1).unwrap());
        let r = synthetic_replicates(&with_om, 1, 0).unwrap();
        assert_eq!(r[0].observed.as_ref().unwrap().len(), 101);
    }

    #[test]
    fn endpoint_mean_matches_closed_form() {
        let ctx = gbm_ctx(0.2);
        let reps = synthetic_replicates(&ctx, 500, 3).unwrap();
        let ends: Vec<f64> = reps.iter().map(|r| r.path.last()[0]).collect();
        let se = sd(&ends) / (ends.len() as f64).sqrt();
        assert!((mean(&ends) - 0.1f64.exp()).abs() < 3.0 * se);
    }

    #[test]
    fn observed_replicate_inside_minmax() {
        let reps = synthetic_replicates(&gbm_ctx(0.2), 30, 4).unwrap();
        let series: Vec<Vec<f64>> = reps.iter().map(Replicate::series).collect();
        let rep = envelope_check(&series[7], &series, &StatisticSet::default(), Band::MinMax).unwrap();
        assert!(rep.statistics.iter().all(|s| s.verdict == Verdict::Inside));
        assert_eq!(rep.statistics.len(), 5);
    }

    #[test]
    fn nominal_coverage() {
        let syn: Vec<Vec<f64>> = synthetic_replicates(&gbm_ctx(0.2), 200, 5).unwrap().iter().map(Replicate::series).collect();
        let fresh = synthetic_replicates(&gbm_ctx(0.2), 1, 999).unwrap()[0].series();
        let rep = envelope_check(&fresh, &syn, &StatisticSet::default(), Band::Quantile).unwrap();
        assert!(rep.flagged().len() <= 2, "{:?}", rep.flagged());
    }

    #[test]
    fn doubled_volatility_is_flagged() {
        let syn: Vec<Vec<f64>> = synthetic_replicates(&gbm_ctx(0.2), 50, 6).unwrap().iter().map(Replicate::series).collect();
        let hits = (0..100)
            .filter(|&t| {
                let obs = synthetic_replicates(&gbm_ctx(0.4), 1, 10_000 + t).unwrap()[0].series();
                let rep = envelope_check(&obs, &syn, &StatisticSet::default(), Band::Quantile).unwrap();
                rep.get("increment_sd").unwrap().verdict == Verdict::Outside
            })
            .count();
        assert!(hits >= 95, "{hits}");
    }

    #[test]
    fn constant_statistic_is_indeterminate() {
        let syn: Vec<Vec<f64>> = (0..25).map(|i| vec![0.0, 1.0, 2.0, 3.0 + i as f64]).collect();
        let mut set = StatisticSet::empty();
        set.register("first", |v| v[0]);
        let rep = envelope_check(&[5.0, 1.0, 2.0], &syn, &set, Band::Quantile).unwrap();
        assert_eq!(rep.statistics[0].verdict, Verdict::Indeterminate);
        assert_eq!(rep.statistics[0].pass, None);
        assert!(envelope_check(&[0.0, 1.0, 2.0], &syn[..5], &set, Band::Quantile).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.05), 5.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }
}
