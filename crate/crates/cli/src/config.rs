//! JSON experiment configuration.
//!
//! Every optional field left out of the file is filled from the model
//! registry by [`crate::registry::prepare`]; the resolved configuration is
//! what gets echoed to `config.json`, so re-reading the echo reproduces the
//! run exactly.

use std::path::{Path, PathBuf};

use anyhow::Context;
use dqbrm_core::adp::StepRule;
use dqbrm_core::rds::BasisSet;
use dqbrm_core::QbrmSpec;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config_err;

pub const CONFIG_SCHEMA: &str = "dqbrm-config/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema")]
    pub schema: String,
    pub model: ModelConfig,
    /// Defaults to the model's own risk measure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<QbrmSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub rds: RdsSection,
    #[serde(default)]
    pub saa: SaaConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub trace: TraceConfig,
    /// Mean-CVaR weights swept by `benchmark` and `compare-rds`; empty means
    /// the weight of `risk` alone.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambdas: Vec<f64>,
    /// Iteration counts at which `compare-rds` evaluates policies; empty means
    /// the final iteration only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<u64>,
    /// `Q*` table (as written by `benchmark`) for error traces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    /// Tables files whose greedy policies `benchmark` evaluates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicyFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityConfig>,
}

fn schema() -> String {
    CONFIG_SCHEMA.to_string()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    /// Field overrides applied on top of the registry preset.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub overrides: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<StepRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<StepRule>,
    /// Symmetric box half-widths `B_t`, one per stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_bounds: Option<Vec<f64>>,
}

fn default_iterations() -> u64 {
    10_000
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            epsilon: None,
            gamma: None,
            eta: None,
            box_bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdsSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<StepRule>,
    #[serde(default = "yes")]
    pub beta_relative: bool,
    #[serde(default = "default_l_max")]
    pub l_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_theta: Option<Vec<f64>>,
    #[serde(default = "default_gram_points")]
    pub gram_points: usize,
}

fn yes() -> bool {
    true
}

fn default_l_max() -> f64 {
    dqbrm_core::rds::DEFAULT_L_MAX
}

fn default_gram_points() -> usize {
    200
}

impl Default for RdsSection {
    fn default() -> Self {
        Self {
            enabled: false,
            basis: None,
            beta: None,
            beta_relative: true,
            l_max: default_l_max(),
            initial_theta: None,
            gram_points: default_gram_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaaConfig {
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_scenarios() -> usize {
    5000
}

impl Default for SaaConfig {
    fn default() -> Self {
        Self {
            scenarios: default_scenarios(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    /// Record every `every` iterations; absent means every `⌈N/1000⌉` plus
    /// `n ∈ {1, 10, 100}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<u64>,
    /// `[t, state, action]` entries whose `Q̄`/`ū` values are traced.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub watch: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub name: String,
    pub tables: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub t: usize,
    pub state: usize,
    pub action: usize,
    #[serde(default = "default_per_dim")]
    pub per_dim: usize,
}

fn default_per_dim() -> usize {
    60
}

/// Command-line overrides of configuration fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub model: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub iterations: Option<u64>,
    pub rds: Option<bool>,
}

impl ExperimentConfig {
    /// A configuration with every optional field left to the registry.
    pub fn for_model(name: &str) -> Self {
        Self {
            schema: schema(),
            model: ModelConfig {
                name: name.to_string(),
                overrides: Map::new(),
            },
            risk: None,
            solver: SolverConfig::default(),
            rds: RdsSection::default(),
            saa: SaaConfig::default(),
            seeds: default_seeds(),
            out: default_out(),
            trace: TraceConfig::default(),
            lambdas: Vec::new(),
            checkpoints: Vec::new(),
            reference: None,
            policies: Vec::new(),
            density: None,
        }
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(format!("config: {e}")))?;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(config_err(format!(
                "schema: expected \"{CONFIG_SCHEMA}\", found \"{}\"",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> anyhow::Result<String> {
        serde_json::to_string_pretty(self).context("serializing config")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = &o.model {
            if *m != self.model.name {
                self.model = ModelConfig {
                    name: m.clone(),
                    overrides: Map::new(),
                };
            }
        }
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(n) = o.iterations {
            self.solver.iterations = n;
        }
        if let Some(r) = o.rds {
            self.rds.enabled = r;
        }
    }

    /// Checks that do not need the model.
    pub fn validate_shape(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds: at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(config_err("seeds: duplicate seeds"));
        }
        if self.saa.scenarios == 0 {
            return Err(config_err("saa.scenarios: must be positive"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(config_err(format!("lambdas: {l} outside [0, 1]")));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) || self.checkpoints.first() == Some(&0) {
            return Err(config_err("checkpoints: must be positive and strictly increasing"));
        }
        if self.checkpoints.last().is_some_and(|&c| c > self.solver.iterations) {
            return Err(config_err("checkpoints: beyond solver.iterations"));
        }
        if self.trace.every == Some(0) {
            return Err(config_err("trace.every: must be positive"));
        }
        if let Some(d) = &self.density {
            if d.per_dim == 0 {
                return Err(config_err("density.per_dim: must be positive"));
            }
        }
        Ok(())
    }

    /// The checkpoints `compare-rds` evaluates.
    pub fn effective_checkpoints(&self) -> Vec<u64> {
        if self.checkpoints.is_empty() {
            vec![self.solver.iterations]
        } else {
            self.checkpoints.clone()
        }
    }
}
