//! Plain-text run configuration.
//!
//! ```text
//! # global settings
//! model = gbm
//! seed = 7
//!
//! [fit]
//! method = mle
//! fixed = sigma
//! ```
//!
//! Keys before the first section header apply to every command; a section
//! named after a command overrides them for that command.

use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("invalid value for `{key}`: {value:?} ({expected})")]
    InvalidValue { key: String, value: String, expected: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Float,
    UInt,
    Text,
    FloatList,
    TextList,
}

impl ValueKind {
    fn expected(self) -> &'static str {
        match self {
            Self::Float => "a real number",
            Self::UInt => "a non-negative integer",
            Self::Text => "text",
            Self::FloatList => "comma-separated real numbers",
            Self::TextList => "comma-separated names",
        }
    }

    fn check(self, v: &str) -> bool {
        match self {
            Self::Float => v.parse::<f64>().is_ok_and(f64::is_finite),
            Self::UInt => v.parse::<u64>().is_ok(),
            Self::Text => !v.is_empty(),
            Self::FloatList => split_list(v).all(|s| s.parse::<f64>().is_ok_and(f64::is_finite)),
            Self::TextList => split_list(v).all(|s| !s.is_empty()),
        }
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim)
}

pub const SECTIONS: &[&str] = &["simulate", "fit", "filter", "collocate", "diagnose", "accept"];

/// Every accepted key and the kind of value it takes.
pub const KEYS: &[(&str, ValueKind)] = &[
    ("model", ValueKind::Text),
    ("beta", ValueKind::Float),
    ("sigma", ValueKind::Float),
    ("x0", ValueKind::Float),
    ("gamma", ValueKind::Float),
    ("beta_bar", ValueKind::Float),
    ("mu", ValueKind::Float),
    ("t_start", ValueKind::Float),
    ("t_end", ValueKind::Float),
    ("steps", ValueKind::UInt),
    ("seed", ValueKind::UInt),
    ("data", ValueKind::Text),
    ("out", ValueKind::Text),
    ("trajectory_out", ValueKind::Text),
    ("fit", ValueKind::Text),
    ("method", ValueKind::Text),
    ("j", ValueKind::UInt),
    ("m_sub", ValueKind::UInt),
    ("substeps", ValueKind::UInt),
    ("n_particles", ValueKind::UInt),
    ("k", ValueKind::UInt),
    ("psi", ValueKind::Text),
    ("fixed", ValueKind::TextList),
    ("lambda", ValueKind::Float),
    ("weight_mode", ValueKind::Text),
    ("report_points", ValueKind::UInt),
    ("obs_kind", ValueKind::Text),
    ("obs_scale", ValueKind::Float),
    ("dof", ValueKind::Float),
    ("step_sd", ValueKind::Float),
    ("param", ValueKind::Text),
    ("grid", ValueKind::FloatList),
    ("band", ValueKind::Text),
    ("noisy", ValueKind::Text),
];

pub fn key_kind(key: &str) -> Option<ValueKind> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

/// Validated key–value settings, global and per command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    global: BTreeMap<String, String>,
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::new();
        let mut section: Option<String> = None;
        let mut unknown = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line: idx + 1, msg: "unterminated section header".into() })?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::UnknownSection(name.to_string()));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: idx + 1, msg: "expected `key = value`".into() })?;
            let (k, v) = (k.trim(), v.trim());
            if key_kind(k).is_none() {
                let name = match &section {
                    Some(s) => format!("{s}.{k}"),
                    None => k.to_string(),
                };
                unknown.push(name);
                continue;
            }
            cfg.set(section.as_deref(), k, v)?;
        }
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.global {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (s, kv) in &self.sections {
            if kv.is_empty() {
                continue;
            }
            let _ = writeln!(out, "\n[{s}]");
            for (k, v) in kv {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// Sets a key globally (`section = None`) or for one command.
    pub fn set(&mut self, section: Option<&str>, key: &str, value: &str) -> Result<(), ConfigError> {
        let kind = key_kind(key).ok_or_else(|| ConfigError::UnknownKeys(vec![key.to_string()]))?;
        let value = value.trim();
        if value.contains('\n') || !kind.check(value) {
            return Err(ConfigError::InvalidValue {
                key: key.to_string(),
                value: value.to_string(),
                expected: kind.expected(),
            });
        }
        let map = match section {
            None => &mut self.global,
            Some(s) => {
                if !SECTIONS.contains(&s) {
                    return Err(ConfigError::UnknownSection(s.to_string()));
                }
                self.sections.entry(s.to_string()).or_default()
            }
        };
        map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Value for `key` under `section`, falling back to the global value.
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|m| m.get(key))
            .or_else(|| self.global.get(key))
            .map(String::as_str)
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Option<f64> {
        self.get(section, key).and_then(|v| v.parse().ok())
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Option<u64> {
        self.get(section, key).and_then(|v| v.parse().ok())
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Option<usize> {
        self.get_u64(section, key).map(|v| v as usize)
    }

    pub fn get_f64_list(&self, section: &str, key: &str) -> Option<Vec<f64>> {
        self.get(section, key).map(|v| split_list(v).filter_map(|s| s.parse().ok()).collect())
    }

    pub fn get_list(&self, section: &str, key: &str) -> Option<Vec<String>> {
        self.get(section, key).map(|v| split_list(v).map(str::to_string).collect())
    }

    pub fn seed(&self, section: &str) -> u64 {
        self.get_u64(section, "seed").unwrap_or(0)
    }
}
