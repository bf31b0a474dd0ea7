use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use fdtl::aggregate::{fit_atlflr, AggregationMethod};
use fdtl::fda::io::{read_tasks, write_tasks};
use fdtl::fda::uniform_grid;
use fdtl::flr::{fit_oflr, resolve_oflr_lambda};
use fdtl::risk::{run_heatmap_experiment, run_mixture_experiment, ExperimentResult, ExperimentRow};
use fdtl::simgen::{generate_scenario, stream_rng};
use fdtl::transfer::{fit_tlflr_with_rule, TransferMode};
use fdtl::{FitOptions, LinearModel, TaskDataset};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::config::{hash_json, sha256_hex, Experiment, FitConfig, MethodName, RunConfig};
use crate::error::{CliError, Result};
use crate::prices::{self, Month};
use crate::report::{
    AggregationReport, FitReport, IngestSummary, Lambdas, SectorSummary, SimulateReport, TestErrors,
    TransferComponents, SCHEMA_VERSION,
};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Input { path: path.to_path_buf(), message: e.to_string() }
}

/// Runs `f(0..n)` over up to `threads` workers, results in index order.
fn par_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    let mut chunks: Vec<std::vec::IntoIter<T>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| scope.spawn(move || (w..n).step_by(threads).map(f).collect::<Result<Vec<T>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect::<Result<Vec<_>>>()
    })?
    .into_iter()
    .map(Vec::into_iter)
    .collect();
    Ok((0..n).map(|i| chunks[i % threads].next().expect("chunk length")).collect())
}

// ---------------------------------------------------------------------------
// simulate

fn write_rows(path: &Path, rows: &[ExperimentRow], hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut go = || -> std::result::Result<(), csv::Error> {
        w.write_record(["h", "s_size", "method", "mean", "se", "reps", "config_hash"])?;
        for r in rows {
            w.write_record([
                r.h.to_string(),
                r.s_size.to_string(),
                r.method.clone(),
                r.mean.to_string(),
                r.se.to_string(),
                r.reps.to_string(),
                hash.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    go().map_err(|e| csv_error(path, e))
}

/// Runs the configured experiment and writes `result.csv` / `result.json`
/// (plus `scenario_*.csv` when exporting) into `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateReport> {
    cfg.validate()?;
    let sim = cfg.simulate.as_ref().ok_or_else(|| CliError::config("missing [simulate] table"))?;
    let hash = cfg.hash();
    let mut setup = sim.setup.clone();
    setup.scenario.seed = cfg.seed;
    setup.threads = cfg.threads.unwrap_or(1);
    ensure_dir(out)?;

    let (kind, result) = match &sim.experiment {
        Experiment::Heatmap { h_values, s_sizes, reps } => {
            ("heatmap", Some(run_heatmap_experiment(h_values, s_sizes, *reps, &setup)?))
        }
        Experiment::Mixture { s_sizes, methods, reps, temperature } => {
            let methods: Vec<_> = methods.iter().map(|m| m.to_method(*temperature)).collect();
            ("mixture", Some(run_mixture_experiment(s_sizes, &methods, *reps, &setup)?))
        }
        Experiment::Scenario => ("scenario", None),
    };
    let rows = result.map(|r: ExperimentResult| r.rows).unwrap_or_default();
    let mut files = Vec::new();
    if !rows.is_empty() {
        write_rows(&out.join("result.csv"), &rows, &hash)?;
        files.push("result.csv".to_string());
    }
    if sim.export_scenario {
        let scen = generate_scenario(&setup.scenario)?;
        let (cp, rp) = (out.join("scenario_curves.csv"), out.join("scenario_responses.csv"));
        scen.write_csv(create(&cp)?, create(&rp)?)?;
        let tp = out.join("scenario_truth.csv");
        let mut w = csv::Writer::from_writer(create(&tp)?);
        let mut go = || -> std::result::Result<(), csv::Error> {
            w.write_record(["task_id", "t", "beta", "config_hash"])?;
            let tasks = std::iter::once((&scen.target, &scen.true_target_beta))
                .chain(scen.sources.iter().zip(&scen.true_source_betas));
            for (task, beta) in tasks {
                for (t, b) in beta.grid.iter().zip(&beta.values) {
                    w.write_record([task.task_id.as_str(), &t.to_string(), &b.to_string(), &hash])?;
                }
            }
            w.flush()?;
            Ok(())
        };
        go().map_err(|e| csv_error(&tp, e))?;
        files.extend(["scenario_curves.csv", "scenario_responses.csv", "scenario_truth.csv"].map(String::from));
    }
    files.push("result.json".to_string());
    let report = SimulateReport {
        schema_version: SCHEMA_VERSION,
        command: "simulate".into(),
        config_hash: hash,
        seed: cfg.seed,
        experiment: kind.into(),
        rows,
        files,
    };
    write_json(&out.join("result.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// fit

fn load_tasks(curves: &Path, responses: &Path) -> Result<Vec<TaskDataset>> {
    read_tasks(open(curves)?, open(responses)?).map_err(|e| match &e {
        fdtl::Error::Parse { location, .. } => {
            let path = if location.starts_with("responses") { responses } else { curves };
            CliError::Input { path: path.to_path_buf(), message: e.to_string() }
        }
        fdtl::Error::Csv(_) => CliError::Input { path: curves.to_path_buf(), message: e.to_string() },
        _ => CliError::Core(e),
    })
}

struct Selection<'a> {
    target: &'a TaskDataset,
    sources: Vec<&'a TaskDataset>,
}

fn select_tasks<'a>(fit: &FitConfig, tasks: &'a [TaskDataset]) -> Result<Selection<'a>> {
    let target = match &fit.target_task {
        Some(name) => tasks
            .iter()
            .find(|t| t.task_id == *name)
            .ok_or_else(|| CliError::config(format!("target task `{name}` is not in the data")))?,
        None => tasks.first().ok_or_else(|| CliError::config("the data holds no tasks"))?,
    };
    let others = || tasks.iter().filter(|t| t.task_id != target.task_id);
    let sources = match (&fit.sources, fit.method) {
        (Some(names), m) if m != MethodName::Naive => names
            .iter()
            .map(|n| {
                if *n == target.task_id {
                    return Err(CliError::config(format!("task `{n}` is both target and source")));
                }
                others().find(|t| t.task_id == *n).ok_or_else(|| CliError::config(format!("source task `{n}` is not in the data")))
            })
            .collect::<Result<Vec<_>>>()?,
        _ => others().collect(),
    };
    if sources.is_empty() && matches!(fit.method, MethodName::AtlflrStar | MethodName::AtlflrEw) {
        return Err(CliError::config("aggregation methods need at least one source task"));
    }
    Ok(Selection { target, sources })
}

fn mse(model: &LinearModel, data: &TaskDataset) -> f64 {
    let preds = model.predict_many(&data.curves);
    preds.iter().zip(&data.responses).map(|(p, y)| (y - p).powi(2)).sum::<f64>() / data.len() as f64
}

struct OneFit {
    model: LinearModel,
    slope: Vec<f64>,
    lambdas: Lambdas,
    components: Option<TransferComponents>,
    aggregation: Option<AggregationReport>,
}

fn fit_once(fit: &FitConfig, train: &TaskDataset, sources: &[&TaskDataset], grid: &[f64], seed: u64) -> Result<OneFit> {
    let opts = FitOptions::with_eval_grid(grid.to_vec());
    let (k, rule) = (&fit.kernel, &fit.lambda_rule);
    Ok(match fit.method {
        MethodName::Oflr => {
            let lambda = resolve_oflr_lambda(rule, &[train], k, seed)?;
            let f = fit_oflr(&[train], k, lambda, &opts)?;
            OneFit {
                slope: f.beta_on_grid.values,
                model: f.model,
                lambdas: Lambdas { lambda: Some(lambda), ..Default::default() },
                components: None,
                aggregation: None,
            }
        }
        MethodName::Tlflr | MethodName::Pooled | MethodName::Naive => {
            let mode = if fit.method == MethodName::Pooled { TransferMode::PooledOnly } else { TransferMode::Full };
            let f = fit_tlflr_with_rule(train, sources, k, rule, mode, &opts, seed)?;
            let (debias_intercept, debias_slope) = match &f.debias_fit {
                Some(d) => (d.intercept(), d.beta_on_grid.values.clone()),
                None => (0.0, vec![0.0; grid.len()]),
            };
            OneFit {
                slope: f.combined_beta.values,
                lambdas: Lambdas {
                    lambda: None,
                    lambda1: Some(f.lambda1),
                    lambda2: (mode == TransferMode::Full).then_some(f.lambda2),
                },
                components: Some(TransferComponents {
                    transfer_intercept: f.transfer_fit.intercept(),
                    transfer_slope: f.transfer_fit.beta_on_grid.values.clone(),
                    debias_intercept,
                    debias_slope,
                }),
                model: f.model,
                aggregation: None,
            }
        }
        MethodName::AtlflrStar | MethodName::AtlflrEw => {
            let method = if fit.method == MethodName::AtlflrStar {
                AggregationMethod::SparseStar
            } else {
                AggregationMethod::ExpWeights { temperature: fit.temperature }
            };
            let f = fit_atlflr(train, sources, k, fit.truncation_m, rule, method, &opts, seed)?;
            let r = f.result;
            OneFit {
                slope: r.aggregated_beta.values,
                model: r.model,
                lambdas: Lambdas::default(),
                components: None,
                aggregation: Some(AggregationReport {
                    labels: f.dictionary.iter().map(|d| d.label.clone()).collect(),
                    candidate_sets: f
                        .candidates
                        .sets
                        .iter()
                        .map(|s| s.iter().map(|&i| sources[i].task_id.clone()).collect())
                        .collect(),
                    weights: r.weights,
                    support: r.support,
                    member_holdout_risks: r.member_risks,
                    holdout_risk: r.holdout_risk,
                }),
            }
        }
    })
}

/// Evaluation grid: explicit size, else the target's shared grid, else 201 points.
fn eval_grid(fit: &FitConfig, target: &TaskDataset) -> Result<Vec<f64>> {
    let d = fit.kernel.domain;
    Ok(match (fit.eval_points, target.common_grid()) {
        (Some(n), _) => uniform_grid(d.lo, d.hi, n)?,
        (None, Some(g)) => g.to_vec(),
        (None, None) => uniform_grid(d.lo, d.hi, 201)?,
    })
}

/// Target rows `(train, test)` for one replication.
fn split(target: &TaskDataset, fraction: f64, seed: u64, rep: usize) -> (TaskDataset, Option<TaskDataset>) {
    if fraction == 0.0 {
        return (target.clone(), None);
    }
    let n = target.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, rep as u32, 0));
    let n_test = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (test, train) = idx.split_at(n_test);
    let (mut test, mut train) = (test.to_vec(), train.to_vec());
    test.sort_unstable();
    train.sort_unstable();
    (target.select(&train), Some(target.select(&test)))
}

/// Fits the configured method and writes `report.json` into `out`.
///
/// With a test split the reported model is replication 0's; test errors
/// cover every replication.
pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<FitReport> {
    cfg.validate()?;
    let fit = cfg.fit.as_ref().ok_or_else(|| CliError::config("missing [fit] table"))?;
    let tasks = load_tasks(&fit.curves, &fit.responses)?;
    let sel = select_tasks(fit, &tasks)?;
    if fit.test_fraction > 0.0 && sel.target.len() < 2 {
        return Err(CliError::config("a test split needs at least two target rows"));
    }
    let grid = eval_grid(fit, sel.target)?;
    let reps = if fit.test_fraction == 0.0 { 1 } else { fit.replications };
    let runs = par_map(reps, cfg.threads.unwrap_or(1), |rep| {
        let (train, test) = split(sel.target, fit.test_fraction, cfg.seed, rep);
        let one = fit_once(fit, &train, &sel.sources, &grid, cfg.seed ^ ((rep as u64) << 32))?;
        let test_mse = test.as_ref().map(|t| mse(&one.model, t));
        Ok((one, train, test_mse))
    })?;
    let test = (fit.test_fraction > 0.0).then(|| {
        let per: Vec<f64> = runs.iter().filter_map(|r| r.2).collect();
        let m = per.len() as f64;
        let mean = per.iter().sum::<f64>() / m;
        let se = if per.len() > 1 { (per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt() } else { 0.0 };
        TestErrors { fraction: fit.test_fraction, replications: reps, mean_mse: mean, se, per_replication: per }
    });
    let (first, train, _) = runs.into_iter().next().expect("at least one replication");
    ensure_dir(out)?;
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        command: "fit".into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        method: fit.method,
        target_task: sel.target.task_id.clone(),
        source_tasks: if fit.method == MethodName::Oflr { vec![] } else { sel.sources.iter().map(|s| s.task_id.clone()).collect() },
        n_train: train.len(),
        n_test: sel.target.len() - train.len(),
        intercept: first.model.intercept,
        eval_grid: grid,
        slope: first.slope,
        lambdas: first.lambdas,
        components: first.components,
        aggregation: first.aggregation,
        train_mse: mse(&first.model, &train),
        test,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// ingest-prices

#[derive(Clone, Debug)]
pub struct IngestArgs {
    pub prices: PathBuf,
    pub month1: Month,
    pub month2: Month,
}

/// Writes `curves.csv`, `responses.csv` (one task per sector) and
/// `summary.json` into `out`.
pub fn cmd_ingest_prices(args: &IngestArgs, out: &Path) -> Result<IngestSummary> {
    if args.month1 == args.month2 {
        return Err(CliError::config("month1 and month2 must differ"));
    }
    let bytes = fs::read(&args.prices).map_err(|source| CliError::Read { path: args.prices.clone(), source })?;
    let input_err = |message: String| CliError::Input { path: args.prices.clone(), message };
    let rows = prices::read_prices(bytes.as_slice()).map_err(input_err)?;
    let ing = prices::ingest(&rows, args.month1, args.month2).map_err(input_err)?;
    if ing.tasks.is_empty() {
        return Err(input_err(format!("no ticker has two trading days in both {} and {}", args.month1, args.month2)));
    }
    ensure_dir(out)?;
    let (cp, rp) = (out.join("curves.csv"), out.join("responses.csv"));
    write_tasks(&ing.tasks, create(&cp)?, create(&rp)?)?;
    let data_hash = sha256_hex(&bytes);
    let summary = IngestSummary {
        schema_version: SCHEMA_VERSION,
        command: "ingest-prices".into(),
        config_hash: hash_json(&(&data_hash, args.month1, args.month2)),
        month1: args.month1.to_string(),
        month2: args.month2.to_string(),
        sectors: ing
            .tasks
            .iter()
            .zip(ing.tickers)
            .map(|(t, tickers)| SectorSummary { sector: t.task_id.clone(), tickers })
            .collect(),
        skipped: ing.skipped.len(),
        skipped_tickers: ing.skipped,
        files: ["curves.csv", "responses.csv", "summary.json"].map(String::from).to_vec(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
