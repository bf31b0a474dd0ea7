//! Penalty selection: theory-scaled rules, K-fold cross-validation and GCV.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::moments::{MomentSolver, Moments};
use super::operator::grid_operator;
use super::{center_gram, fit_oflr, pooled_rows, shared_grid, FitOptions, RoutePreference, SolveRoute};
use crate::error::{Error, Result};
use crate::fda::{gram_of_curves, TaskDataset};
use crate::kernels::KernelSpec;
use crate::linalg::sym_eigen_desc;

/// Pre-constants `0.05, 0.10, …, 1.00`.
pub const DEFAULT_PRE_GRID: [f64; 20] = [
    0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95,
    1.0,
];

/// How penalties are chosen. The rate rules scale as `n^{-2r/(2r+1)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaRule {
    /// Explicit values; single-stage fits use `lambda1`.
    Fixed { lambda1: f64, lambda2: f64 },
    /// `λ₁ = pre1·n_pooled^{-2r/(2r+1)}`, `λ₂ = pre2·n_target^{-2r/(2r+1)}`.
    Theorem { r: f64, pre1: f64, pre2: f64 },
    /// Rate rule with pre-constants picked from `pre_grid` by K-fold CV:
    /// one shared value, or an independent pair when `separate` is set.
    TheoremCv {
        r: f64,
        pre_grid: Vec<f64>,
        folds: usize,
        #[serde(default)]
        separate: bool,
    },
    /// Raw λ grid, K-fold CV per stage.
    Cv { grid: Vec<f64>, folds: usize },
    /// Raw λ grid, generalized cross-validation per stage.
    Gcv { grid: Vec<f64> },
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::TheoremCv { r: 2.0, pre_grid: DEFAULT_PRE_GRID.to_vec(), folds: 10, separate: false }
    }
}

impl LambdaRule {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::arg(format!("lambda rule: {name} must be positive, got {v}")))
            }
        };
        let grid_ok = |g: &[f64]| {
            if g.is_empty() {
                return Err(Error::arg("lambda rule: empty grid"));
            }
            g.iter().try_for_each(|&v| pos("grid value", v))
        };
        match self {
            LambdaRule::Fixed { lambda1, lambda2 } => {
                pos("lambda1", *lambda1)?;
                pos("lambda2", *lambda2)
            }
            LambdaRule::Theorem { r, pre1, pre2 } => {
                pos("r", *r)?;
                pos("pre1", *pre1)?;
                pos("pre2", *pre2)
            }
            LambdaRule::TheoremCv { r, pre_grid, folds, .. } => {
                pos("r", *r)?;
                grid_ok(pre_grid)?;
                folds_ok(*folds)
            }
            LambdaRule::Cv { grid, folds } => {
                grid_ok(grid)?;
                folds_ok(*folds)
            }
            LambdaRule::Gcv { grid } => grid_ok(grid),
        }
    }
}

fn folds_ok(folds: usize) -> Result<()> {
    if folds < 2 {
        return Err(Error::arg(format!("need at least 2 folds, got {folds}")));
    }
    Ok(())
}

/// `n^{-2r/(2r+1)}`.
pub(crate) fn rate(n: usize, r: f64) -> f64 {
    (n as f64).powf(-2.0 * r / (2.0 * r + 1.0))
}

/// Fold label per row: a seeded shuffle followed by round-robin assignment.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        out[i] = k % folds;
    }
    out
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::arg("lambda grid is empty"));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::arg(format!("lambda grid contains non-positive value {bad}")));
    }
    Ok(())
}

/// First index of the minimum (ties keep the earliest entry).
pub(crate) fn argmin_first(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Mean held-out squared prediction error for each λ.
pub fn cv_errors(
    data: &[&TaskDataset],
    kernel: &KernelSpec,
    lambdas: &[f64],
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_lambdas(lambdas)?;
    let (curves, ys) = pooled_rows(data);
    let n = curves.len();
    if folds < 2 || folds > n {
        return Err(Error::arg(format!("folds must lie in [2, {n}], got {folds}")));
    }
    let labels = fold_assignment(n, folds, seed);
    let mut sse = vec![0.0; lambdas.len()];
    if let Some(grid) = shared_grid(&curves) {
        let op = grid_operator(kernel, grid);
        let d = grid.len();
        let fold_moments: Vec<Moments> = (0..folds)
            .map(|f| {
                Moments::from_rows(
                    (0..n).filter(|&i| labels[i] == f).map(|i| (curves[i].values(), ys[i])),
                    d,
                )
            })
            .collect();
        let total = fold_moments.iter().fold(Moments::zeros(d), |acc, m| acc.plus(m));
        for held in &fold_moments {
            let train = total.minus(held);
            let solver = MomentSolver::new(&op, &train);
            for (k, &lambda) in lambdas.iter().enumerate() {
                let fit = solver.solve(lambda);
                sse[k] += held.sse(fit.alpha, &fit.a_u);
            }
        }
    } else {
        let opts = FitOptions {
            eval_grid: Some(vec![kernel.domain.lo, kernel.domain.hi]),
            route: RoutePreference::Force(SolveRoute::Representer),
        };
        let pooled = TaskDataset {
            task_id: "pooled".into(),
            curves: curves.iter().map(|c| (*c).clone()).collect(),
            responses: ys.clone(),
        };
        for f in 0..folds {
            let train_idx: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
            let test_idx: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
            let train = pooled.select(&train_idx);
            let test = pooled.select(&test_idx);
            for (k, &lambda) in lambdas.iter().enumerate() {
                let fit = fit_oflr(&[&train], kernel, lambda, &opts)?;
                let preds = fit.model.predict_many(&test.curves);
                sse[k] += preds.iter().zip(&test.responses).map(|(p, y)| (y - p).powi(2)).sum::<f64>();
            }
        }
    }
    Ok(sse.into_iter().map(|s| s / n as f64).collect())
}

/// The λ with the smallest K-fold CV error; ties go to the earliest grid entry.
pub fn select_lambda_cv(
    data: &[&TaskDataset],
    kernel: &KernelSpec,
    lambdas: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    if lambdas.len() == 1 {
        check_lambdas(lambdas)?;
        return Ok(lambdas[0]);
    }
    let errs = cv_errors(data, kernel, lambdas, folds, seed)?;
    argmin_first(errs)
        .map(|i| lambdas[i])
        .ok_or_else(|| Error::numerical("cross-validation produced no finite error"))
}

/// `GCV(λ) = (RSS/N) / (1 - tr(H)/N)²`; `None` where `tr(H)/N ≥ 1`.
pub fn gcv_scores(data: &[&TaskDataset], kernel: &KernelSpec, lambdas: &[f64]) -> Result<Vec<Option<f64>>> {
    check_lambdas(lambdas)?;
    let (curves, ys) = pooled_rows(data);
    let n = curves.len();
    if n < 2 {
        return Err(Error::arg("GCV needs at least 2 samples"));
    }
    let nf = n as f64;
    let score = |rss: f64, tr: f64, lambda: f64| {
        let ratio = tr / nf;
        if ratio >= 1.0 {
            log::warn!("GCV: tr(H)/N = {ratio:.4} >= 1 at lambda = {lambda:.3e}; skipped");
            None
        } else {
            Some((rss / nf) / (1.0 - ratio).powi(2))
        }
    };
    if let Some(grid) = shared_grid(&curves) {
        let op = grid_operator(kernel, grid);
        let m = Moments::from_rows(curves.iter().zip(&ys).map(|(c, &y)| (c.values(), y)), grid.len());
        let solver = MomentSolver::new(&op, &m);
        Ok(lambdas
            .iter()
            .map(|&lambda| {
                let fit = solver.solve(lambda);
                score(m.sse(fit.alpha, &fit.a_u), solver.hat_trace(lambda), lambda)
            })
            .collect())
    } else {
        let sigma = gram_of_curves(curves.iter().copied(), kernel)?;
        let (vals, vecs) = sym_eigen_desc(&center_gram(&sigma));
        let ybar = ys.iter().sum::<f64>() / nf;
        let yc = DVector::from_iterator(n, ys.iter().map(|y| y - ybar));
        let proj = vecs.tr_mul(&yc);
        Ok(lambdas
            .iter()
            .map(|&lambda| {
                let mu = nf * lambda;
                let mut rss = 0.0;
                let mut tr = 1.0;
                for (v, p) in vals.iter().zip(proj.iter()) {
                    let v = v.max(0.0);
                    rss += (mu / (v + mu) * p).powi(2);
                    tr += v / (v + mu);
                }
                score(rss, tr, lambda)
            })
            .collect())
    }
}

pub fn select_lambda_gcv(data: &[&TaskDataset], kernel: &KernelSpec, lambdas: &[f64]) -> Result<f64> {
    if lambdas.len() == 1 {
        check_lambdas(lambdas)?;
        return Ok(lambdas[0]);
    }
    let scores = gcv_scores(data, kernel, lambdas)?;
    argmin_first(scores.iter().map(|s| s.unwrap_or(f64::NAN)))
        .map(|i| lambdas[i])
        .ok_or_else(|| Error::numerical("GCV: every lambda was skipped"))
}

/// Penalty for a single-stage fit on `data` under `rule`.
pub fn resolve_oflr_lambda(rule: &LambdaRule, data: &[&TaskDataset], kernel: &KernelSpec, seed: u64) -> Result<f64> {
    rule.validate()?;
    let n: usize = data.iter().map(|t| t.len()).sum();
    match rule {
        LambdaRule::Fixed { lambda1, .. } => Ok(*lambda1),
        LambdaRule::Theorem { r, pre1, .. } => Ok(pre1 * rate(n, *r)),
        LambdaRule::TheoremCv { r, pre_grid, folds, .. } => {
            let scale = rate(n, *r);
            let grid: Vec<f64> = pre_grid.iter().map(|c| c * scale).collect();
            select_lambda_cv(data, kernel, &grid, (*folds).min(n), seed)
        }
        LambdaRule::Cv { grid, folds } => select_lambda_cv(data, kernel, grid, (*folds).min(n), seed),
        LambdaRule::Gcv { grid } => select_lambda_gcv(data, kernel, grid),
    }
}
