use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use driftlab::toolkit::RunConfig;

use crate::Invalid;

/// Settings shared by every subcommand. Each flag overrides the key of the
/// same name (dashes become underscores) in the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Settings {
    /// Model: gbm, ou, brownian; tv-growth (simulate only); irw (filter only).
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<String>,
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta_bar: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub t_start: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub t_end: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Input data CSV.
    #[arg(long)]
    pub data: Option<String>,
    /// Output path.
    #[arg(long)]
    pub out: Option<String>,
    /// Secondary CSV output (fitted or filtered trajectory).
    #[arg(long)]
    pub trajectory_out: Option<String>,
    /// Fit JSON to diagnose.
    #[arg(long)]
    pub fit: Option<String>,
    /// Fit method: mle, ee, bridge-mle, pf.
    #[arg(long)]
    pub method: Option<String>,
    /// Monte Carlo samples per observation pair.
    #[arg(long)]
    pub j: Option<String>,
    /// Euler substeps per interval of the bridge sampler.
    #[arg(long)]
    pub m_sub: Option<String>,
    #[arg(long)]
    pub substeps: Option<String>,
    #[arg(long)]
    pub n_particles: Option<String>,
    /// Synthetic replicate count.
    #[arg(long)]
    pub k: Option<String>,
    /// Estimating function: first, two, increment.
    #[arg(long)]
    pub psi: Option<String>,
    /// Comma-separated parameter names held at their initial values.
    #[arg(long)]
    pub fixed: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    /// unweighted or sigma_weighted.
    #[arg(long)]
    pub weight_mode: Option<String>,
    #[arg(long)]
    pub report_points: Option<String>,
    /// gaussian or student-t.
    #[arg(long)]
    pub obs_kind: Option<String>,
    #[arg(long)]
    pub obs_scale: Option<String>,
    #[arg(long)]
    pub dof: Option<String>,
    #[arg(long)]
    pub step_sd: Option<String>,
    /// Parameter profiled by `fit --method pf`.
    #[arg(long)]
    pub param: Option<String>,
    /// Comma-separated profile grid.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// quantile or minmax.
    #[arg(long)]
    pub band: Option<String>,
    /// true when diagnosing noisy observations.
    #[arg(long)]
    pub noisy: Option<String>,
}

impl Settings {
    fn pairs(&self) -> [(&'static str, &Option<String>); 34] {
        [
            ("model", &self.model),
            ("beta", &self.beta),
            ("sigma", &self.sigma),
            ("x0", &self.x0),
            ("gamma", &self.gamma),
            ("beta_bar", &self.beta_bar),
            ("mu", &self.mu),
            ("t_start", &self.t_start),
            ("t_end", &self.t_end),
            ("steps", &self.steps),
            ("seed", &self.seed),
            ("data", &self.data),
            ("out", &self.out),
            ("trajectory_out", &self.trajectory_out),
            ("fit", &self.fit),
            ("method", &self.method),
            ("j", &self.j),
            ("m_sub", &self.m_sub),
            ("substeps", &self.substeps),
            ("n_particles", &self.n_particles),
            ("k", &self.k),
            ("psi", &self.psi),
            ("fixed", &self.fixed),
            ("lambda", &self.lambda),
            ("weight_mode", &self.weight_mode),
            ("report_points", &self.report_points),
            ("obs_kind", &self.obs_kind),
            ("obs_scale", &self.obs_scale),
            ("dof", &self.dof),
            ("step_sd", &self.step_sd),
            ("param", &self.param),
            ("grid", &self.grid),
            ("band", &self.band),
            ("noisy", &self.noisy),
        ]
    }
}

/// Config file (if any) with the flags applied on top, under `section`.
pub fn load(config: Option<&Path>, section: &str, flags: &Settings) -> anyhow::Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Invalid(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::parse(&text).map_err(|e| Invalid(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::new(),
    };
    for (key, value) in flags.pairs() {
        if let Some(v) = value {
            cfg.set(Some(section), key, v).map_err(|e| Invalid(e.to_string()))?;
        }
    }
    Ok(cfg)
}

/// Typed view of one section of a [`RunConfig`].
pub struct View<'a> {
    pub cfg: &'a RunConfig,
    pub section: &'a str,
}

impl View<'_> {
    pub fn text(&self, key: &str) -> Option<&str> {
        self.cfg.get(self.section, key)
    }

    pub fn require(&self, key: &str) -> anyhow::Result<&str> {
        self.text(key)
            .ok_or_else(|| Invalid(format!("missing `{key}` (flag --{})", key.replace('_', "-"))).into())
    }

    pub fn f64_or(&self, key: &str, default: f64) -> f64 {
        self.cfg.get_f64(self.section, key).unwrap_or(default)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> usize {
        self.cfg.get_usize(self.section, key).unwrap_or(default)
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed(self.section)
    }

    pub fn path(&self, key: &str) -> anyhow::Result<PathBuf> {
        Ok(PathBuf::from(self.require(key)?))
    }

    pub fn input(&self, key: &str) -> anyhow::Result<std::fs::File> {
        let p = self.path(key)?;
        std::fs::File::open(&p)
            .with_context(|| format!("opening {}", p.display()))
            .map_err(|e| Invalid(format!("{e:#}")).into())
    }

    pub fn flag(&self, key: &str) -> anyhow::Result<bool> {
        match self.text(key) {
            None => Ok(false),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(Invalid(format!("`{key}` must be true or false, got {v:?}")).into()),
        }
    }
}
