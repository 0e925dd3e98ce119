use std::path::Path as FsPath;

use anyhow::Context;
use driftlab::collocation::{collocation_fit, BasisConfig, CollocationOptions, PenaltySpec, WeightMode};
use driftlab::likelihood::{
    ee_solve, mle_fit, BridgeSettings, EeOptions, EstimatingFunction, FitResult, MleOptions, ObservationSet,
    TransitionDensity,
};
use driftlab::rng;
use driftlab::sde::{
    simulate_euler, simulate_gbm_exact, simulate_ou, simulate_tv_growth, DiffusionSpec, GbmParams, OuParams, Path,
    TimeGrid,
};
use driftlab::statespace::{
    particle_filter, profile_loglik, FilterOptions, IntegratedRandomWalk, NoisyObservationSet, ObservationModel,
    StateModel,
};
use driftlab::table;
use driftlab::toolkit::{
    envelope_check, run_acceptance_with, synthetic_replicates, AcceptanceOptions, Band, ModelContext, RunConfig,
    Simulator, StatisticSet,
};
use serde_json::json;

use crate::settings::View;
use crate::{Invalid, Status};

const DEFAULT_SUBSTEPS: usize = 10;

fn write_output(path: &FsPath, bytes: &[u8]) -> anyhow::Result<()> {
    table::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn invalid<E: std::fmt::Display>(e: E) -> anyhow::Error {
    Invalid(e.to_string()).into()
}

/// Model spec from the `model` key and its parameters; unset parameters
/// take the family defaults.
fn build_spec(v: &View) -> anyhow::Result<DiffusionSpec> {
    let sigma = |d| v.f64_or("sigma", d);
    let spec = match v.require("model")? {
        "gbm" => DiffusionSpec::gbm(v.f64_or("beta", 0.1), sigma(0.3), v.f64_or("x0", 1.0)),
        "ou" => DiffusionSpec::ou(v.f64_or("gamma", 1.0), v.f64_or("beta_bar", 0.0), sigma(0.5), v.f64_or("x0", 0.0)),
        "brownian" => DiffusionSpec::brownian(v.f64_or("mu", 0.0), sigma(1.0), v.f64_or("x0", 0.0)),
        other => return Err(invalid(format!("unknown model `{other}` (expected gbm, ou or brownian)"))),
    };
    spec.map_err(invalid)
}

fn fixed_mask(v: &View, spec: &DiffusionSpec) -> anyhow::Result<Vec<bool>> {
    let names = spec.param_names();
    let mut mask = vec![false; names.len()];
    for name in v.cfg.get_list(v.section, "fixed").unwrap_or_default() {
        let i = names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| invalid(format!("`{name}` is not a parameter of {} ({})", spec.name(), names.join(", "))))?;
        mask[i] = true;
    }
    Ok(mask)
}

fn observation_model(v: &View) -> anyhow::Result<ObservationModel> {
    let scale = v.f64_or("obs_scale", 1.0);
    let om = match v.text("obs_kind").unwrap_or("gaussian") {
        "gaussian" => ObservationModel::gaussian(scale),
        "student-t" | "student_t" => ObservationModel::student_t(scale, v.f64_or("dof", 4.0)),
        other => return Err(invalid(format!("unknown obs_kind `{other}` (expected gaussian or student-t)"))),
    };
    om.map_err(invalid)
}

fn read_exact(v: &View) -> anyhow::Result<ObservationSet> {
    ObservationSet::read_csv(v.input("data")?).map_err(invalid)
}

fn read_noisy(v: &View) -> anyhow::Result<NoisyObservationSet> {
    NoisyObservationSet::read_csv(v.input("data")?).map_err(invalid)
}

fn status_of(fit: &FitResult) -> Status {
    if fit.converged {
        Status::Done
    } else {
        Status::NotConverged
    }
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<Status> {
    let v = View { cfg, section: "simulate" };
    let out = v.path("out")?;
    let grid = TimeGrid::new(v.f64_or("t_start", 0.0), v.f64_or("t_end", 1.0), v.usize_or("steps", 100))
        .map_err(invalid)?;
    let seed = v.seed();
    let path = match v.require("model")? {
        "tv-growth" => {
            let ou = OuParams::new(v.f64_or("gamma", 1.0), v.f64_or("beta_bar", 0.0), v.f64_or("sigma", 0.5), v.f64_or("beta", 0.0))
                .map_err(invalid)?;
            let (beta, x) = simulate_tv_growth(&ou, v.f64_or("x0", 1.0), &grid, seed)?;
            let data = (0..x.len()).flat_map(|k| [x.scalar(k), beta.scalar(k)]).collect();
            Path::new(x.times().to_vec(), 2, data)?
        }
        _ => {
            let spec = build_spec(&v)?;
            let th = spec.theta();
            match spec.name() {
                "gbm" => simulate_gbm_exact(&GbmParams::new(th[0], th[1], spec.x0()[0])?, &grid, seed)?,
                "ou" => simulate_ou(&OuParams::new(th[0], th[1], th[2], spec.x0()[0])?, &grid, seed)?,
                _ => simulate_euler(&spec, &grid, seed)?,
            }
        }
    };
    let mut bytes = Vec::new();
    if v.text("obs_kind").is_some() || v.text("obs_scale").is_some() {
        let om = observation_model(&v)?;
        let d = om.obs_dim(path.dim());
        let y = (0..path.len())
            .flat_map(|k| om.sample(path.value(k), d, &mut rng::stream(seed, &[u64::MAX, k as u64])))
            .collect();
        NoisyObservationSet::new(path.times().to_vec(), d, y)?.write_csv(&mut bytes)?;
        if let Some(p) = v.text("trajectory_out") {
            write_output(FsPath::new(p), path.to_csv_string()?.as_bytes())?;
        }
    } else if path.dim() == 1 {
        ObservationSet::from_path(path).write_csv(&mut bytes)?;
    } else {
        path.write_csv(&mut bytes)?;
    }
    write_output(&out, &bytes)?;
    Ok(Status::Done)
}

pub fn fit(cfg: &RunConfig) -> anyhow::Result<Status> {
    let v = View { cfg, section: "fit" };
    let out = v.path("out")?;
    let seed = v.seed();
    let method = v.text("method").unwrap_or("mle");
    let result = match method {
        "mle" | "bridge-mle" => {
            let obs = read_exact(&v)?;
            let spec = build_spec(&v)?.with_x0(obs.value(0)).map_err(invalid)?;
            let fixed = fixed_mask(&v, &spec)?;
            let th = spec.theta().to_vec();
            let td = if method == "bridge-mle" {
                let settings =
                    BridgeSettings::new(v.usize_or("m_sub", 8), v.usize_or("j", 200), seed).map_err(invalid)?;
                TransitionDensity::bridge(spec, settings)?
            } else {
                match spec.name() {
                    "gbm" => TransitionDensity::gbm(GbmParams::new(th[0], th[1], spec.x0()[0])?)?,
                    "ou" => TransitionDensity::ou(OuParams::new(th[0], th[1], th[2], spec.x0()[0])?)?,
                    _ => TransitionDensity::euler(spec),
                }
            };
            let opts = MleOptions { fixed, ..MleOptions::default() };
            let mut fit = mle_fit(&td, &obs, &th, &opts)?;
            fit.seed = seed;
            fit
        }
        "ee" => {
            let obs = read_exact(&v)?;
            let spec = build_spec(&v)?.with_x0(obs.value(0)).map_err(invalid)?;
            let fixed = fixed_mask(&v, &spec)?;
            let n_free = fixed.iter().filter(|f| !**f).count();
            let j = v.usize_or("j", 200);
            let psi = v.text("psi").unwrap_or(if n_free == 1 { "first" } else { "increment" });
            let ef = match psi {
                "first" => EstimatingFunction::first_moment(j),
                "two" => EstimatingFunction::two_moments(j),
                "increment" => EstimatingFunction::increment_moments(j),
                other => return Err(invalid(format!("unknown psi `{other}` (expected first, two or increment)"))),
            };
            if ef.dim() != n_free {
                return Err(invalid(format!("psi `{psi}` has {} components but {n_free} parameters are free", ef.dim())));
            }
            let ef = match v.cfg.get_usize(v.section, "substeps") {
                Some(s) => ef.with_substeps(s),
                None => ef,
            };
            ee_solve(&spec, &ef, &obs, spec.theta(), seed, &EeOptions { fixed, ..EeOptions::default() })?
        }
        "pf" => profile_fit(&v, seed)?,
        other => return Err(invalid(format!("unknown method `{other}` (expected mle, ee, bridge-mle or pf)"))),
    };
    write_output(&out, result.to_json().as_bytes())?;
    Ok(status_of(&result))
}

fn profile_fit(v: &View, seed: u64) -> anyhow::Result<FitResult> {
    let obs = read_noisy(v)?;
    let om = observation_model(v)?;
    let spec = build_spec(v)?.with_x0(obs.y(0)).map_err(invalid)?;
    let name = v.require("param")?;
    let idx = spec
        .param_names()
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| invalid(format!("`{name}` is not a parameter of {}", spec.name())))?;
    let grid = v.cfg.get_f64_list(v.section, "grid").ok_or_else(|| invalid("missing `grid` (flag --grid)"))?;
    if grid.is_empty() {
        return Err(invalid("empty profile grid"));
    }
    let substeps = v.usize_or("substeps", DEFAULT_SUBSTEPS);
    let opts = FilterOptions::new(v.usize_or("n_particles", 1000), seed);
    let build = |value: f64| {
        let mut th = spec.theta().to_vec();
        th[idx] = value;
        Ok(StateModel::diffusion(spec.with_theta(&th)?, substeps))
    };
    let profile = profile_loglik(build, &om, &obs, &grid, &opts)?;
    let (best, best_ll) = profile
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
    let mut theta_hat = spec.theta().to_vec();
    theta_hat[idx] = best;
    let mut diagnostics = std::collections::BTreeMap::new();
    diagnostics.insert("param".to_string(), json!(name));
    diagnostics.insert(
        "profile".to_string(),
        json!(profile.iter().map(|(v, ll)| json!({ "value": v, "loglik": ll })).collect::<Vec<_>>()),
    );
    diagnostics.insert("n_particles".to_string(), json!(opts.n_particles));
    Ok(FitResult {
        theta_hat,
        objective_value: -best_ll,
        converged: best_ll.is_finite(),
        iterations: grid.len(),
        seed,
        standard_errors: None,
        diagnostics,
    })
}

pub fn filter(cfg: &RunConfig) -> anyhow::Result<Status> {
    let v = View { cfg, section: "filter" };
    let out = v.path("out")?;
    let obs = read_noisy(&v)?;
    let mut om = observation_model(&v)?;
    let model = if v.require("model")? == "irw" {
        let d = obs.dim();
        let initial = (0..d).flat_map(|c| [obs.y(0)[c], 0.0]).collect();
        let m = IntegratedRandomWalk::new(d, v.f64_or("step_sd", 1.0)).map_err(invalid)?.with_initial(initial);
        om = om.with_link(m.position_link());
        StateModel::kernel(m)
    } else {
        let spec = build_spec(&v)?.with_x0(obs.y(0)).map_err(invalid)?;
        StateModel::diffusion(spec, v.usize_or("substeps", DEFAULT_SUBSTEPS))
    };
    let opts = FilterOptions::new(v.usize_or("n_particles", 1000), v.seed());
    let result = particle_filter(&model, &om, &obs, &opts)?;
    if let Some(p) = v.text("trajectory_out") {
        write_output(FsPath::new(p), result.filtered_means.to_csv_string()?.as_bytes())?;
    }
    let text = serde_json::to_string_pretty(&result.to_json())?;
    write_output(&out, text.as_bytes())?;
    Ok(Status::Done)
}

pub fn collocate(cfg: &RunConfig) -> anyhow::Result<Status> {
    let v = View { cfg, section: "collocate" };
    let out = v.path("out")?;
    let obs = read_noisy(&v)?;
    let om = observation_model(&v)?;
    let spec = build_spec(&v)?.with_x0(obs.y(0)).map_err(invalid)?;
    let lambda = v
        .cfg
        .get_f64(v.section, "lambda")
        .ok_or_else(|| invalid("missing `lambda` (flag --lambda)"))?;
    let mut pen = PenaltySpec::new(lambda);
    match v.text("weight_mode").map(WeightMode::parse) {
        None | Some(Some(WeightMode::Unweighted)) => {}
        Some(Some(WeightMode::SigmaWeighted)) => pen = pen.weighted(),
        Some(None) => return Err(invalid("weight_mode must be unweighted or sigma_weighted")),
    }
    let basis = BasisConfig::at_times(obs.times()).map_err(invalid)?;
    let opts = CollocationOptions {
        fixed: fixed_mask(&v, &spec)?,
        report_points: v.usize_or("report_points", 201),
        ..CollocationOptions::default()
    };
    let fit = collocation_fit(&obs, &om, &spec, &basis, &pen, None, &opts)?;
    if let Some(p) = v.text("trajectory_out") {
        write_output(FsPath::new(p), fit.trajectory_csv()?.as_bytes())?;
    }
    write_output(&out, fit.to_json().as_bytes())?;
    Ok(status_of(&fit.result))
}

pub fn diagnose(cfg: &RunConfig) -> anyhow::Result<Status> {
    let v = View { cfg, section: "diagnose" };
    let out = v.path("out")?;
    let fit_text = std::fs::read_to_string(v.path("fit")?).map_err(|e| invalid(format!("reading fit: {e}")))?;
    let fitted: FitResult = serde_json::from_str(&fit_text).map_err(|e| invalid(format!("parsing fit: {e}")))?;
    let noisy = v.flag("noisy")?;
    let (times, observed, x0) = if noisy {
        let obs = read_noisy(&v)?;
        let series: Vec<f64> = (0..obs.len()).map(|i| obs.y(i)[0]).collect();
        (obs.times().to_vec(), series, obs.y(0).to_vec())
    } else {
        let obs = read_exact(&v)?;
        (obs.times().to_vec(), obs.path().component(0), obs.value(0).to_vec())
    };
    let spec = build_spec(&v)?;
    if fitted.theta_hat.len() != spec.theta().len() {
        return Err(invalid(format!(
            "fit has {} parameters, model {} takes {}",
            fitted.theta_hat.len(),
            spec.name(),
            spec.theta().len()
        )));
    }
    let spec = spec.with_theta(&fitted.theta_hat).and_then(|s| s.with_x0(&x0)).map_err(invalid)?;
    let simulator = Simulator::for_spec(&spec, v.usize_or("substeps", DEFAULT_SUBSTEPS))?;
    let mut ctx = ModelContext::new(simulator, times, x0);
    if noisy {
        ctx = ctx.with_observation(observation_model(&v)?);
    }
    let band = match v.text("band").unwrap_or("quantile") {
        "quantile" => Band::Quantile,
        "minmax" => Band::MinMax,
        other => return Err(invalid(format!("unknown band `{other}` (expected quantile or minmax)"))),
    };
    let k = v.usize_or("k", 50);
    let replicates = synthetic_replicates(&ctx, k, v.seed())?;
    let synthetic: Vec<Vec<f64>> = replicates.iter().map(|r| r.series()).collect();
    let report = envelope_check(&observed, &synthetic, &StatisticSet::default(), band).map_err(invalid)?;
    let flagged = report.flagged();
    if flagged.is_empty() {
        println!("all statistics inside the synthetic envelope ({k} replicates)");
    } else {
        println!("outside the synthetic envelope: {}", flagged.join(", "));
    }
    write_output(&out, report.to_json().as_bytes())?;
    Ok(Status::Done)
}

pub fn accept(cfg: &RunConfig, only: Vec<u32>) -> anyhow::Result<Status> {
    let v = View { cfg, section: "accept" };
    let seed = v.cfg.get_u64(v.section, "seed").unwrap_or(AcceptanceOptions::default().seed);
    let opts = AcceptanceOptions { seed, only };
    let report = run_acceptance_with(&opts, |c| println!("{}", c.line()));
    let passed = report.criteria.iter().filter(|c| c.passed && c.within_time()).count();
    println!("{passed}/{} criteria passed", report.criteria.len());
    if let Some(p) = v.text("out") {
        write_output(FsPath::new(p), report.to_json().as_bytes())?;
    }
    Ok(if report.all_passed() { Status::Done } else { Status::Failed })
}
