//! JSON report layouts. Bump [`SCHEMA_VERSION`] on any breaking change.

use serde::{Deserialize, Serialize};

use crate::config::MethodName;
use fdtl::risk::ExperimentRow;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub method: MethodName,
    pub target_task: String,
    pub source_tasks: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub intercept: f64,
    pub eval_grid: Vec<f64>,
    pub slope: Vec<f64>,
    pub lambdas: Lambdas,
    /// Two-step methods only.
    pub components: Option<TransferComponents>,
    /// Aggregation methods only.
    pub aggregation: Option<AggregationReport>,
    pub train_mse: f64,
    pub test: Option<TestErrors>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    /// Single-task fits.
    pub lambda: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
}

/// The slope is `transfer_slope + debias_slope`; the debias part is
/// identically zero for `pooled`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferComponents {
    pub transfer_intercept: f64,
    pub transfer_slope: Vec<f64>,
    pub debias_intercept: f64,
    pub debias_slope: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationReport {
    pub labels: Vec<String>,
    /// Source task ids behind each dictionary entry.
    pub candidate_sets: Vec<Vec<String>>,
    pub weights: Vec<f64>,
    pub support: Vec<usize>,
    pub member_holdout_risks: Vec<f64>,
    pub holdout_risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestErrors {
    pub fraction: f64,
    pub replications: usize,
    pub mean_mse: f64,
    pub se: f64,
    pub per_replication: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub experiment: String,
    pub rows: Vec<ExperimentRow>,
    /// Files written next to this report.
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorSummary {
    pub sector: String,
    /// Row order of the sector's task.
    pub tickers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub month1: String,
    pub month2: String,
    pub sectors: Vec<SectorSummary>,
    pub skipped: usize,
    pub skipped_tickers: Vec<String>,
    pub files: Vec<String>,
}
