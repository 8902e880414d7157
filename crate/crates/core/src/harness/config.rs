use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controllers::{ControllerKind, InitialGain};
use crate::error::{config, Error, Result};
use crate::estimation::NaturalOutputSetting;
use crate::lds_sim::{DisturbanceConfig, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// `h`, `eta`, `N`, `sigma` taken from the config.
    #[default]
    Experiments,
    /// Unset `h`, `eta`, `N`, `sigma` derived from the horizon and `Gamma_T`.
    Theory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostConfig {
    /// Fresh `Q`, `R` per episode: random PSD scaled to unit spectral norm.
    RandomQuadratic,
    Quadratic { q: Vec<Vec<f64>>, r: Vec<Vec<f64>> },
    /// `alpha' [y; u]` with the same coefficients at every step.
    Linear { alpha: Vec<f64> },
}

/// Policy-class and learning parameters shared by every controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    pub kappa_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n_core: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Overrides the computed confidence radius used by change-point detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_setting")]
    pub setting: NaturalOutputSetting,
    /// Number of system changes assumed known in theory mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_t: Option<f64>,
}

fn default_lambda() -> f64 {
    1e-3
}

fn default_delta() -> f64 {
    0.1
}

fn default_setting() -> NaturalOutputSetting {
    NaturalOutputSetting::S2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerEntry {
    pub kind: ControllerKind,
    /// Label used for output files; defaults to the kind name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_gain: Option<InitialGain>,
    /// Exploration prefix for `olc-ti`; defaults to `ceil(T^(2/3))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore_steps: Option<usize>,
}

impl ControllerEntry {
    pub fn of(kind: ControllerKind) -> Self {
        Self { kind, name: None, eta: None, initial_gain: None, explore_steps: None }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparatorConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_starts")]
    pub starts: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_iters() -> usize {
    10_000
}

fn default_starts() -> usize {
    5
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        Self { tol: default_tol(), max_iters: default_iters(), starts: default_starts() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: RunMode,
    pub horizon: usize,
    /// Horizons for scaling sweeps.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub horizons: Vec<usize>,
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub system: SystemConfig,
    pub disturbance: DisturbanceConfig,
    pub cost: CostConfig,
    pub policy: PolicyConfig,
    pub controllers: Vec<ControllerEntry>,
    #[serde(default)]
    pub comparator: ComparatorConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let cfg = Self::from_json(&text, path)?;
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(config("runs must be at least 1"));
        }
        if self.horizon < 1 {
            return Err(config("horizon must be at least 1"));
        }
        if self.horizons.iter().any(|&t| t < 1) {
            return Err(config("horizons must all be at least 1"));
        }
        self.system.validate()?;
        self.disturbance.validate()?;
        match &self.cost {
            CostConfig::RandomQuadratic => {}
            CostConfig::Quadratic { q, r } => {
                check_square("cost.q", q, self.system.p)?;
                check_square("cost.r", r, self.system.m)?;
            }
            CostConfig::Linear { alpha } => {
                if alpha.len() != self.system.p + self.system.m {
                    return Err(config(format!("cost.alpha must have p + m = {} entries", self.system.p + self.system.m)));
                }
            }
        }
        let p = &self.policy;
        if !(p.kappa_m >= 0.0 && p.kappa_m.is_finite()) {
            return Err(config("policy.kappa_m must be finite and nonnegative"));
        }
        if !(p.lambda > 0.0) {
            return Err(config("policy.lambda must be positive"));
        }
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return Err(config("policy.delta must lie in (0, 1)"));
        }
        if p.h == Some(0) {
            return Err(config("policy.h must be at least 1"));
        }
        if p.n_core == Some(0) {
            return Err(config("policy.N must be at least 1"));
        }
        if let Some(eta) = p.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(config("policy.eta must be positive"));
            }
        }
        if let Some(sigma) = p.sigma {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(config("policy.sigma must be finite and nonnegative"));
            }
        }
        if let Some(beta) = p.beta {
            if !(beta > 0.0) {
                return Err(config("policy.beta must be positive"));
            }
        }
        match self.mode {
            RunMode::Experiments => {
                for (field, missing) in [("h", p.h.is_none()), ("eta", p.eta.is_none()), ("N", p.n_core.is_none()), ("sigma", p.sigma.is_none())] {
                    if missing {
                        return Err(config(format!("policy.{field} is required in experiments mode")));
                    }
                }
            }
            RunMode::Theory => match p.gamma_t {
                Some(g) if g >= 1.0 => {}
                _ => return Err(config("policy.gamma_t >= 1 is required in theory mode")),
            },
        }
        if self.controllers.is_empty() {
            return Err(config("controllers must list at least one controller"));
        }
        let mut labels = std::collections::BTreeSet::new();
        for (i, c) in self.controllers.iter().enumerate() {
            if !labels.insert(c.label()) {
                return Err(config(format!("controllers[{i}]: duplicate name {}", c.label())));
            }
            if let Some(eta) = c.eta {
                if !(eta > 0.0 && eta.is_finite()) {
                    return Err(config(format!("controllers[{i}].eta must be positive")));
                }
            }
            if c.label().is_empty() || c.label().contains(['/', '\\']) {
                return Err(config(format!("controllers[{i}].name must be a plain file name")));
            }
        }
        let c = &self.comparator;
        if !(c.tol > 0.0) || c.max_iters == 0 || c.starts == 0 {
            return Err(config("comparator.tol, max_iters and starts must be positive"));
        }
        Ok(())
    }
}

fn check_square(field: &str, rows: &[Vec<f64>], dim: usize) -> Result<()> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(config(format!("{field} must be {dim} x {dim}")));
    }
    Ok(())
}
