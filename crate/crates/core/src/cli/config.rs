//! Run configuration: JSON text with every optional field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariance::Family;
use crate::error::{Error, Result};
use crate::inference::{Parameterization, SamplerConfig};
use crate::model::{Distribution, LatentSpec, Loading, PriorSpec, SupportKind, TruncatedNormal, Variance};

/// Nearest neighbors per location.
pub const DEFAULT_NEIGHBORS: usize = 5;
/// Sampling points per area.
pub const DEFAULT_SAMPLING_POINTS: usize = 5;

fn default_neighbors() -> usize {
    DEFAULT_NEIGHBORS
}

fn default_sampling_points() -> usize {
    DEFAULT_SAMPLING_POINTS
}

fn default_true() -> bool {
    true
}

fn default_processes() -> Vec<LatentSpec> {
    vec![LatentSpec {
        family: Family::Exponential,
        nu: 0.5,
        sigma2: Variance::Sampled,
        phi_prior: TruncatedNormal::new(1.0, 3.0),
    }]
}

/// One response data file and how to model it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseDecl {
    pub name: String,
    pub support: SupportKind,
    /// Point CSV, area GeoJSON / WKT CSV, or grid CSV; relative paths are
    /// resolved against the config file's directory.
    pub path: PathBuf,
    pub distribution: Distribution,
    #[serde(default = "default_true")]
    pub intercept: bool,
    /// Extra columns (or GeoJSON properties) used as covariates; `None`
    /// takes every column after the fixed ones.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    /// Gaussian noise variance.
    #[serde(default = "default_sampled")]
    pub tau2: Variance,
}

fn default_sampled() -> Variance {
    Variance::Sampled
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness for the run (sampling points, chains).
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
    #[serde(default = "default_sampling_points")]
    pub sampling_points: usize,
    /// Chain settings; its `seed` always mirrors the top-level one.
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// Coordinates the sampler uses for the latent blocks.
    #[serde(default)]
    pub parameterization: Parameterization,
    #[serde(default)]
    pub responses: Vec<ResponseDecl>,
    #[serde(default = "default_processes")]
    pub processes: Vec<LatentSpec>,
    /// Loadings `Z`, one row per response; defaults to all ones fixed.
    #[serde(default)]
    pub design: Option<Vec<Vec<Loading>>>,
    #[serde(default)]
    pub priors: PriorSpec,
    /// Optional JSON file with true parameter values for recovery reports.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

fn default_seed() -> u64 {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            neighbors: DEFAULT_NEIGHBORS,
            sampling_points: DEFAULT_SAMPLING_POINTS,
            sampler: SamplerConfig::default(),
            parameterization: Parameterization::default(),
            responses: Vec::new(),
            processes: default_processes(),
            design: None,
            priors: PriorSpec::default(),
            truth: None,
        }
    }
}

fn config_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { key: key.into(), message: message.into() }
}

impl RunConfig {
    /// Parses JSON text; unknown keys and type mismatches are reported
    /// with the path of the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| config_err("(root)", format!("invalid JSON: {e}")))?;
        if let Some(seed) = value.get("sampler").and_then(|s| s.get("seed")) {
            if value.get("seed") != Some(seed) {
                return Err(config_err("sampler.seed", "set the top-level `seed` instead"));
            }
        }
        let mut cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let key = if path.is_empty() || path == "." { "(root)".to_string() } else { path };
            config_err(key, e.into_inner().to_string())
        })?;
        cfg.sampler.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate().map_err(|e| match e {
            Error::Config { key, message } => config_err(format!("sampler.{key}"), message),
            other => other,
        })?;
        if self.sampler.seed != self.seed {
            return Err(config_err("sampler.seed", "must equal the top-level seed"));
        }
        if self.neighbors < 1 {
            return Err(config_err("neighbors", "expected an integer >= 1"));
        }
        if self.sampling_points < 1 {
            return Err(config_err("sampling_points", "expected an integer >= 1"));
        }
        if self.processes.is_empty() {
            return Err(config_err("processes", "expected at least one latent process"));
        }
        for (k, p) in self.processes.iter().enumerate() {
            p.covariance(1.0, 1.0)
                .validate()
                .and_then(|_| p.phi_prior.validate())
                .map_err(|e| config_err(format!("processes[{k}]"), e.to_string()))?;
        }
        if let Some(rows) = &self.design {
            if !self.responses.is_empty() && rows.len() != self.responses.len() {
                return Err(config_err("design", format!("expected {} rows, one per response", self.responses.len())));
            }
            if let Some(i) = rows.iter().position(|r| r.len() != self.processes.len()) {
                return Err(config_err(format!("design[{i}]"), format!("expected {} loadings", self.processes.len())));
            }
        }
        for (j, r) in self.responses.iter().enumerate() {
            match (r.support, r.distribution) {
                (SupportKind::Pointpattern, Distribution::Gaussian) => {
                    return Err(config_err(format!("responses[{j}].distribution"), "point patterns are Poisson counts"))
                }
                (_, Distribution::Poisson) if r.tau2 != Variance::Sampled => {
                    return Err(config_err(format!("responses[{j}].tau2"), "only Gaussian responses have a noise variance"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Loading rows, falling back to all ones fixed.
    pub fn design_rows(&self) -> Vec<Vec<Loading>> {
        self.design
            .clone()
            .unwrap_or_else(|| vec![vec![Loading::Fixed(1.0); self.processes.len()]; self.responses.len()])
    }

    /// Rewrites relative data paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for r in &mut self.responses {
            if r.path.is_relative() {
                r.path = base.join(&r.path);
            }
        }
        if let Some(t) = &mut self.truth {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
    }
}

/// Reads and validates a config file; data paths come back resolved
/// against the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = RunConfig::from_json(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
