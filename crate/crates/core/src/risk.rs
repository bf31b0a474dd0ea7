//! Excess risk of a fitted predictor against the true target model, and the
//! replicated experiment grids built on it.

use std::io::Write;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregate::{fit_atlflr, AggregationMethod, DEFAULT_TRUNCATION};
use crate::error::{Error, Result};
use crate::fda::{quad_weights, TaskDataset};
use crate::flr::{fit_oflr, resolve_oflr_lambda, BetaEstimate, FitOptions, LambdaRule};
use crate::kernels::KernelSpec;
use crate::linalg::cholesky_with_jitter;
use crate::simgen::{generate_scenario, stream_rng, GeneratedScenario, MeanFunction, ScenarioConfig, RISK_STREAM, SUBSET_STREAM};
use crate::transfer::{fit_tlflr_with_rule, TransferMode};

/// Distribution of a fresh predictor curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorLaw {
    pub mean: MeanFunction,
    pub cov: KernelSpec,
}

fn deltas(est_beta: &BetaEstimate, true_beta: &BetaEstimate) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = &true_beta.grid;
    let w = quad_weights(grid)?;
    let est = est_beta.at_grid(grid);
    let wd = est.iter().zip(&true_beta.values).zip(&w).map(|((e, t), w)| w * (e - t)).collect();
    Ok((w, wd))
}

/// `E[(Δα + ⟨X, Δβ⟩)²]` averaged over `n_mc` predictor draws, with
/// `Δ = estimate − truth` and inner products by trapezoid quadrature on the
/// grid of `true_beta` (the estimate is interpolated onto it if needed).
pub fn excess_risk_mc(
    est_beta: &BetaEstimate,
    est_alpha: f64,
    true_beta: &BetaEstimate,
    true_alpha: f64,
    law: &PredictorLaw,
    n_mc: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::arg("n_mc must be at least 1"));
    }
    let grid = &true_beta.grid;
    let (_, wd) = deltas(est_beta, true_beta)?;
    let cov = law.cov.gram_cross(grid, grid)?;
    let max_diag = cov.diagonal().max();
    let (chol, _) = cholesky_with_jitter(&cov, max_diag, 1e-10, 1e-6)?;
    // ⟨μ + Lz, Δβ⟩_W = ⟨μ, Δβ⟩_W + zᵀ(LᵀWΔβ)
    let wd = DVector::from_vec(wd);
    let proj = chol.l().transpose() * &wd;
    let shift = est_alpha - true_alpha + grid.iter().zip(wd.iter()).map(|(&t, d)| law.mean.eval(t) * d).sum::<f64>();
    let d = grid.len();
    let mut total = 0.0;
    for _ in 0..n_mc {
        let mut s = shift;
        for j in 0..d {
            s += rng.sample::<f64, _>(StandardNormal) * proj[j];
        }
        total += s * s;
    }
    Ok(total / n_mc as f64)
}

/// The exact quadrature value `⟨Δβ, CΔβ⟩ + (Δα + ⟨μ, Δβ⟩)²` of the same risk.
pub fn excess_risk_analytic(
    est_beta: &BetaEstimate,
    est_alpha: f64,
    true_beta: &BetaEstimate,
    true_alpha: f64,
    law: &PredictorLaw,
) -> Result<f64> {
    let grid = &true_beta.grid;
    let (_, wd) = deltas(est_beta, true_beta)?;
    let cov = law.cov.gram_cross(grid, grid)?;
    let wd = DVector::from_vec(wd);
    let quad = wd.dot(&(&cov * &wd));
    let shift = est_alpha - true_alpha + grid.iter().zip(wd.iter()).map(|(&t, d)| law.mean.eval(t) * d).sum::<f64>();
    Ok(quad + shift * shift)
}

pub fn relative_excess_risk(method_risk: f64, baseline_risk: f64) -> Result<f64> {
    if !(baseline_risk > 0.0) {
        return Err(Error::arg(format!("baseline risk must be positive, got {baseline_risk}")));
    }
    Ok(method_risk / baseline_risk)
}

/// Least-squares slope of `ln(risk)` against `ln(n)`.
pub fn log_log_slope(ns: &[f64], risks: &[f64]) -> Result<f64> {
    if ns.len() != risks.len() {
        return Err(Error::arg("sample sizes and risks differ in length"));
    }
    if ns.len() < 2 {
        return Err(Error::arg("need at least two sample sizes"));
    }
    if ns.iter().chain(risks).any(|v| !(*v > 0.0)) {
        return Err(Error::arg("sample sizes and risks must be positive"));
    }
    let x: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let y: Vec<f64> = risks.iter().map(|r| r.ln()).collect();
    let k = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / k, y.iter().sum::<f64>() / k);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::arg("sample sizes must not all be equal"));
    }
    Ok(sxy / sxx)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskEvaluation {
    /// Fresh predictor draws, as in the paper's tables.
    #[default]
    MonteCarlo,
    Analytic,
}

/// Estimators compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Method {
    /// Target-only fit.
    Oflr,
    /// Two-step transfer with the true transferable set.
    TlFlr,
    /// Pooled fit over target and the true transferable set, no debias step.
    PooledTl,
    /// Two-step transfer treating every source as transferable.
    NaiveTl,
    AtlFlr { aggregation: AggregationMethod },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Oflr => "oflr".into(),
            Method::TlFlr => "tl-flr".into(),
            Method::PooledTl => "pooled-tl".into(),
            Method::NaiveTl => "naive-tl".into(),
            Method::AtlFlr { aggregation: AggregationMethod::SparseStar } => "atl-flr(star)".into(),
            Method::AtlFlr { aggregation: AggregationMethod::ExpWeights { temperature } } => {
                format!("atl-flr(ew,T={temperature})")
            }
        }
    }
}

/// Everything an experiment needs besides the condition grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSetup {
    pub scenario: ScenarioConfig,
    /// Kernel of the estimators' RKHS.
    pub kernel: KernelSpec,
    pub lambda_rule: LambdaRule,
    /// Truncation level of the source-ranking distance.
    pub truncation_m: usize,
    pub n_mc: usize,
    pub risk_evaluation: RiskEvaluation,
    /// Worker threads over replications; results do not depend on it.
    pub threads: usize,
}

impl Default for ExperimentSetup {
    fn default() -> Self {
        ExperimentSetup {
            scenario: ScenarioConfig::default(),
            kernel: KernelSpec::eigen_expansion_default(),
            lambda_rule: LambdaRule::default(),
            truncation_m: DEFAULT_TRUNCATION,
            n_mc: 1000,
            risk_evaluation: RiskEvaluation::MonteCarlo,
            threads: 1,
        }
    }
}

/// A fitted predictor reduced to what the risk needs.
#[derive(Clone, Debug)]
pub struct FittedPredictor {
    pub intercept: f64,
    pub beta: BetaEstimate,
}

fn cv_seed(config: &ScenarioConfig) -> u64 {
    config.seed ^ (u64::from(config.replication) << 32)
}

/// Fits one method on a generated scenario; slopes are evaluated on the
/// generation grid.
pub fn fit_method(method: &Method, scen: &GeneratedScenario, setup: &ExperimentSetup) -> Result<FittedPredictor> {
    let opts = FitOptions::with_eval_grid(scen.config.grid());
    let seed = cv_seed(&scen.config);
    let k = &setup.kernel;
    let rule = &setup.lambda_rule;
    let target = &scen.target;
    let two_step = |sources: &[&TaskDataset], mode| -> Result<FittedPredictor> {
        let fit = fit_tlflr_with_rule(target, sources, k, rule, mode, &opts, seed)?;
        Ok(FittedPredictor { intercept: fit.combined_intercept, beta: fit.combined_beta })
    };
    match method {
        Method::Oflr => {
            let lambda = resolve_oflr_lambda(rule, &[target], k, seed)?;
            let fit = fit_oflr(&[target], k, lambda, &opts)?;
            Ok(FittedPredictor { intercept: fit.intercept(), beta: fit.beta_on_grid })
        }
        Method::TlFlr => two_step(&scen.transferable_sources(), TransferMode::Full),
        Method::PooledTl => two_step(&scen.transferable_sources(), TransferMode::PooledOnly),
        Method::NaiveTl => two_step(&scen.source_refs(), TransferMode::Full),
        Method::AtlFlr { aggregation } => {
            let fit = fit_atlflr(target, &scen.source_refs(), k, setup.truncation_m, rule, *aggregation, &opts, seed)?;
            Ok(FittedPredictor { intercept: fit.result.aggregated_intercept, beta: fit.result.aggregated_beta })
        }
    }
}

/// Target excess risk of a fitted predictor (true intercept 0).
pub fn target_excess_risk(fit: &FittedPredictor, scen: &GeneratedScenario, setup: &ExperimentSetup) -> Result<f64> {
    let law = PredictorLaw { mean: scen.config.predictor_mean, cov: scen.config.target_cov };
    match setup.risk_evaluation {
        RiskEvaluation::Analytic => excess_risk_analytic(&fit.beta, fit.intercept, &scen.true_target_beta, 0.0, &law),
        RiskEvaluation::MonteCarlo => {
            let mut rng = stream_rng(scen.config.seed, scen.config.replication, RISK_STREAM);
            excess_risk_mc(&fit.beta, fit.intercept, &scen.true_target_beta, 0.0, &law, setup.n_mc, &mut rng)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub h: f64,
    pub s_size: usize,
    pub method: String,
    pub mean: f64,
    pub se: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
    pub seed: u64,
    pub config_hash: Option<String>,
}

impl ExperimentResult {
    /// Long-form CSV: one line per (h, |S|, method).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn find(&self, h: f64, s_size: usize, method: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.h == h && r.s_size == s_size && r.method == method)
    }
}

fn summarize(h: f64, s_size: usize, method: String, values: &[f64]) -> ExperimentRow {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    ExperimentRow { h, s_size, method, mean, se, reps: n }
}

/// Runs `f(0..n)` over `threads` workers and returns results in index order.
fn par_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    let chunks: Vec<Result<Vec<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| scope.spawn(move || (w..n).step_by(threads).map(f).collect::<Result<Vec<T>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut chunks = chunks.into_iter().collect::<Result<Vec<_>>>()?.into_iter().map(Vec::into_iter).collect::<Vec<_>>();
    Ok((0..n).map(|i| chunks[i % threads].next().expect("chunk length")).collect())
}

fn replicate(base: &ScenarioConfig, rep: usize) -> ScenarioConfig {
    ScenarioConfig { replication: base.replication + rep as u32, ..base.clone() }
}

/// Relative risk of the two-step estimator (true transferable set) over the
/// target-only fit on an `h × |S|` grid; every source is transferable and
/// `L = |S|`. One `relative` row per cell: the per-replication ratio
/// TL-FLR / OFLR averaged over replications.
pub fn run_heatmap_experiment(h_values: &[f64], s_sizes: &[usize], reps: usize, setup: &ExperimentSetup) -> Result<ExperimentResult> {
    if reps == 0 || h_values.is_empty() || s_sizes.is_empty() {
        return Err(Error::arg("need at least one replication, h value and source count"));
    }
    let cells: Vec<(f64, usize)> = h_values.iter().flat_map(|&h| s_sizes.iter().map(move |&s| (h, s))).collect();
    // per replication: baseline risk, then (tl-flr risk) per cell
    let per_rep = par_map(reps, setup.threads, |rep| {
        let base = ScenarioConfig { num_sources: 0, transferable_ids: vec![], ..replicate(&setup.scenario, rep) };
        let scen = generate_scenario(&base)?;
        let oflr = target_excess_risk(&fit_method(&Method::Oflr, &scen, setup)?, &scen, setup)?;
        let tl = cells
            .iter()
            .map(|&(h, s)| {
                let cfg = ScenarioConfig { h, num_sources: s, transferable_ids: (0..s).collect(), ..base.clone() };
                let scen = generate_scenario(&cfg)?;
                target_excess_risk(&fit_method(&Method::TlFlr, &scen, setup)?, &scen, setup)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((oflr, tl))
    })?;
    let oflr: Vec<f64> = per_rep.iter().map(|r| r.0).collect();
    let mut rows = Vec::new();
    for (c, &(h, s)) in cells.iter().enumerate() {
        let tl: Vec<f64> = per_rep.iter().map(|r| r.1[c]).collect();
        let rel = tl.iter().zip(&oflr).map(|(t, o)| relative_excess_risk(*t, *o)).collect::<Result<Vec<_>>>()?;
        rows.push(summarize(h, s, "relative".into(), &rel));
    }
    Ok(ExperimentResult { rows, seed: setup.scenario.seed, config_hash: None })
}

/// Mean excess risk per (|S|, method) with `L = scenario.num_sources` and a
/// random transferable subset of each size (nested across sizes within a
/// replication).
pub fn run_mixture_experiment(s_sizes: &[usize], methods: &[Method], reps: usize, setup: &ExperimentSetup) -> Result<ExperimentResult> {
    if reps == 0 || s_sizes.is_empty() || methods.is_empty() {
        return Err(Error::arg("need at least one replication, source count and method"));
    }
    let l = setup.scenario.num_sources;
    if let Some(&s) = s_sizes.iter().find(|&&s| s > l) {
        return Err(Error::arg(format!("|S| = {s} exceeds the {l} sources")));
    }
    let per_rep = par_map(reps, setup.threads, |rep| {
        let base = replicate(&setup.scenario, rep);
        let mut order: Vec<usize> = (0..l).collect();
        order.shuffle(&mut stream_rng(base.seed, base.replication, SUBSET_STREAM));
        s_sizes
            .iter()
            .map(|&s| {
                let mut ids = order[..s].to_vec();
                ids.sort_unstable();
                let scen = generate_scenario(&ScenarioConfig { transferable_ids: ids, ..base.clone() })?;
                methods
                    .iter()
                    .map(|m| target_excess_risk(&fit_method(m, &scen, setup)?, &scen, setup))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::new();
    for (si, &s) in s_sizes.iter().enumerate() {
        for (mi, m) in methods.iter().enumerate() {
            let vals: Vec<f64> = per_rep.iter().map(|r| r[si][mi]).collect();
            rows.push(summarize(setup.scenario.h, s, m.label(), &vals));
        }
    }
    Ok(ExperimentResult { rows, seed: setup.scenario.seed, config_hash: None })
}

/// Mean target-only excess risk at each target sample size.
pub fn oflr_risk_curve(n_values: &[usize], reps: usize, setup: &ExperimentSetup) -> Result<Vec<f64>> {
    if reps == 0 {
        return Err(Error::arg("need at least one replication"));
    }
    let per_rep = par_map(reps, setup.threads, |rep| {
        n_values
            .iter()
            .map(|&n| {
                let cfg = ScenarioConfig { n0: n, num_sources: 0, transferable_ids: vec![], ..replicate(&setup.scenario, rep) };
                let scen = generate_scenario(&cfg)?;
                target_excess_risk(&fit_method(&Method::Oflr, &scen, setup)?, &scen, setup)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok((0..n_values.len()).map(|j| per_rep.iter().map(|r| r[j]).sum::<f64>() / reps as f64).collect())
}

/// Log-log slope of the target-only risk curve over `n_values`.
pub fn rate_slope_check(n_values: &[usize], reps: usize, setup: &ExperimentSetup) -> Result<f64> {
    if n_values.len() < 2 {
        return Err(Error::arg("need at least two sample sizes"));
    }
    let risks = oflr_risk_curve(n_values, reps, setup)?;
    let ns: Vec<f64> = n_values.iter().map(|&n| n as f64).collect();
    log_log_slope(&ns, &risks)
}
