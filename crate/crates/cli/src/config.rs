//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [simulate]
//! export_scenario = true
//! [simulate.experiment]
//! kind = "heatmap"
//! h_values = [1.0, 40.0]
//! s_sizes = [1, 15]
//! reps = 20
//! [simulate.setup.scenario]
//! beta_scenario = 2
//!
//! [fit]
//! method = "tlflr"
//! curves = "scenario_curves.csv"
//! responses = "scenario_responses.csv"
//! ```
//!
//! Every table rejects unknown keys. The top-level `seed` is the only seed:
//! it replaces `simulate.setup.scenario.seed`.

use std::fs;
use std::path::{Path, PathBuf};

use fdtl::aggregate::{AggregationMethod, DEFAULT_TRUNCATION};
use fdtl::risk::{ExperimentSetup, Method};
use fdtl::{KernelSpec, LambdaRule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Output directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub fit: Option<FitConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub setup: ExperimentSetup,
    /// Also write replication 0 of the configured scenario as CSV.
    #[serde(default)]
    pub export_scenario: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// TL-FLR over OFLR on an `h × |S|` grid.
    Heatmap { h_values: Vec<f64>, s_sizes: Vec<usize>, reps: usize },
    /// Methods compared over random transferable sets of each size.
    Mixture {
        s_sizes: Vec<usize>,
        methods: Vec<MethodName>,
        reps: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    /// No experiment; only the scenario export.
    Scenario,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Oflr,
    Tlflr,
    Pooled,
    Naive,
    AtlflrStar,
    AtlflrEw,
}

impl MethodName {
    pub fn to_method(self, temperature: f64) -> Method {
        match self {
            MethodName::Oflr => Method::Oflr,
            MethodName::Tlflr => Method::TlFlr,
            MethodName::Pooled => Method::PooledTl,
            MethodName::Naive => Method::NaiveTl,
            MethodName::AtlflrStar => Method::AtlFlr { aggregation: AggregationMethod::SparseStar },
            MethodName::AtlflrEw => Method::AtlFlr { aggregation: AggregationMethod::ExpWeights { temperature } },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub method: MethodName,
    /// Long-form curves CSV (`curve_id,t,x`); relative to the config file.
    pub curves: PathBuf,
    /// Responses CSV (`curve_id,y,task_id`); relative to the config file.
    pub responses: PathBuf,
    /// Defaults to the first task in the responses file.
    #[serde(default)]
    pub target_task: Option<String>,
    /// Sources for `tlflr`, `pooled` and the aggregation methods; defaults to
    /// every other task. `naive` always uses every other task.
    #[serde(default)]
    pub sources: Option<Vec<String>>,
    #[serde(default = "KernelSpec::eigen_expansion_default")]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub lambda_rule: LambdaRule,
    #[serde(default = "default_truncation")]
    pub truncation_m: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Share of target rows held out per replication; 0 fits on everything.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Random train/test splits; forced to 1 when `test_fraction` is 0.
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Uniform evaluation grid size; defaults to the target's own grid when
    /// all target curves share one, else 201 points.
    #[serde(default)]
    pub eval_points: Option<usize>,
}

fn default_temperature() -> f64 {
    10.0
}

fn default_truncation() -> usize {
    DEFAULT_TRUNCATION
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_replications() -> usize {
    100
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    /// Parses a config file; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(fit) = cfg.fit.as_mut() {
            fit.curves = base.join(&fit.curves);
            fit.responses = base.join(&fit.responses);
        }
        Ok(cfg)
    }

    /// Command-line flags take precedence over the file.
    pub fn apply(&mut self, seed: Option<u64>, out: Option<PathBuf>, threads: Option<usize>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if out.is_some() {
            self.out = out;
        }
        if threads.is_some() {
            self.threads = threads;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(CliError::config("threads must be at least 1"));
        }
        if let Some(sim) = &self.simulate {
            sim.setup.scenario.validate()?;
            sim.setup.kernel.validate()?;
            sim.setup.lambda_rule.validate()?;
            if sim.setup.n_mc == 0 {
                return Err(CliError::config("simulate.setup.n_mc must be at least 1"));
            }
            match &sim.experiment {
                Experiment::Heatmap { h_values, s_sizes, reps } => {
                    if *reps == 0 || h_values.is_empty() || s_sizes.is_empty() {
                        return Err(CliError::config("heatmap needs reps ≥ 1 and nonempty h_values and s_sizes"));
                    }
                }
                Experiment::Mixture { s_sizes, methods, reps, temperature } => {
                    if *reps == 0 || s_sizes.is_empty() || methods.is_empty() {
                        return Err(CliError::config("mixture needs reps ≥ 1 and nonempty s_sizes and methods"));
                    }
                    check_temperature(*temperature)?;
                }
                Experiment::Scenario => {
                    if !sim.export_scenario {
                        return Err(CliError::config("kind = \"scenario\" needs export_scenario = true"));
                    }
                }
            }
        }
        if let Some(fit) = &self.fit {
            fit.kernel.validate()?;
            fit.lambda_rule.validate()?;
            check_temperature(fit.temperature)?;
            if !(0.0..1.0).contains(&fit.test_fraction) {
                return Err(CliError::config(format!("test_fraction must lie in [0, 1), got {}", fit.test_fraction)));
            }
            if fit.replications == 0 {
                return Err(CliError::config("replications must be at least 1"));
            }
            if fit.truncation_m == 0 {
                return Err(CliError::config("truncation_m must be at least 1"));
            }
            if fit.eval_points.is_some_and(|n| n < 2) {
                return Err(CliError::config("eval_points must be at least 2"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring output location and
    /// thread count.
    pub fn hash(&self) -> String {
        let mut view = self.clone();
        view.out = None;
        view.threads = None;
        if let Some(sim) = view.simulate.as_mut() {
            sim.setup.threads = 1;
        }
        hash_json(&view)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(format!("temperature must be positive, got {t}")))
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("config serializes").as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
