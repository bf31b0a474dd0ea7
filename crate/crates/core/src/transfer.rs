//! Two-step transfer estimator: a pooled fit over the target and the chosen
//! sources, followed by a target-only fit of the residual contrast.
//!
//! Also provides the two baselines built from the same pieces: pooling
//! without the correction step, and the full procedure with every source
//! treated as transferable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fda::TaskDataset;
use crate::flr::{
    argmin_first, fit_oflr, fold_assignment, grid_operator_for, rate, select_lambda_cv, select_lambda_gcv,
    BetaEstimate, FitOptions, LambdaRule, LinearModel, MomentSolver, Moments, RidgeFit,
};
use crate::kernels::KernelSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Transfer step followed by the debias step.
    #[default]
    Full,
    /// Transfer step only.
    PooledOnly,
}

#[derive(Clone, Debug)]
pub struct TransferFit {
    /// Pooled fit over target and sources with `λ₁`.
    pub transfer_fit: RidgeFit,
    /// Target-only fit of the transfer-step residuals with `λ₂`; `None` in
    /// pooled-only mode, where the correction is identically zero.
    pub debias_fit: Option<RidgeFit>,
    pub model: LinearModel,
    pub combined_beta: BetaEstimate,
    pub combined_intercept: f64,
    pub source_ids: Vec<String>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mode: TransferMode,
}

/// Rate-optimal penalties `(pre₁·n_pooled^{-2r/(2r+1)}, pre₂·n_target^{-2r/(2r+1)})`.
pub fn default_lambdas(n_pooled: usize, n_target: usize, r: f64, pre_c1: f64, pre_c2: f64) -> (f64, f64) {
    (pre_c1 * rate(n_pooled, r), pre_c2 * rate(n_target, r))
}

/// Runs the two-step estimator with explicit penalties.
///
/// An empty `sources` list is allowed: both steps then use the target alone.
pub fn fit_tlflr(
    target: &TaskDataset,
    sources: &[&TaskDataset],
    kernel: &KernelSpec,
    lambda1: f64,
    lambda2: f64,
    mode: TransferMode,
    opts: &FitOptions,
) -> Result<TransferFit> {
    if target.is_empty() {
        return Err(Error::arg("target dataset is empty"));
    }
    if !(lambda2 > 0.0 && lambda2.is_finite()) && mode == TransferMode::Full {
        return Err(Error::arg(format!("lambda2 must be positive, got {lambda2}")));
    }
    let mut pooled: Vec<&TaskDataset> = Vec::with_capacity(sources.len() + 1);
    pooled.push(target);
    pooled.extend_from_slice(sources);
    let transfer_fit = fit_oflr(&pooled, kernel, lambda1, opts)?;
    let debias_fit = match mode {
        TransferMode::PooledOnly => None,
        TransferMode::Full => {
            let resid = residual_task(target, &transfer_fit.model);
            Some(fit_oflr(&[&resid], kernel, lambda2, opts)?)
        }
    };
    Ok(assemble(transfer_fit, debias_fit, sources, lambda1, lambda2, mode))
}

fn residual_task(target: &TaskDataset, model: &LinearModel) -> TaskDataset {
    let preds = model.predict_many(&target.curves);
    TaskDataset {
        task_id: format!("{}-residual", target.task_id),
        curves: target.curves.clone(),
        responses: target.responses.iter().zip(preds).map(|(y, p)| y - p).collect(),
    }
}

fn assemble(
    transfer_fit: RidgeFit,
    debias_fit: Option<RidgeFit>,
    sources: &[&TaskDataset],
    lambda1: f64,
    lambda2: f64,
    mode: TransferMode,
) -> TransferFit {
    let (model, combined_beta) = match &debias_fit {
        Some(d) => (transfer_fit.model.plus(&d.model), transfer_fit.beta_on_grid.plus(&d.beta_on_grid)),
        None => (transfer_fit.model.clone(), transfer_fit.beta_on_grid.clone()),
    };
    TransferFit {
        combined_intercept: model.intercept,
        model,
        combined_beta,
        source_ids: sources.iter().map(|s| s.task_id.clone()).collect(),
        transfer_fit,
        debias_fit,
        lambda1,
        lambda2,
        mode,
    }
}

/// Runs the two-step estimator with penalties chosen by `rule`.
///
/// * rate rules scale with the pooled and target sample sizes;
/// * `TheoremCv` picks the pre-constants (shared, or an independent pair) by
///   K-fold CV over target rows, with sources always on the training side;
/// * `Cv` / `Gcv` tune `λ₁` on the pooled data and then `λ₂` on the residuals.
pub fn fit_tlflr_with_rule(
    target: &TaskDataset,
    sources: &[&TaskDataset],
    kernel: &KernelSpec,
    rule: &LambdaRule,
    mode: TransferMode,
    opts: &FitOptions,
    seed: u64,
) -> Result<TransferFit> {
    rule.validate()?;
    let n0 = target.len();
    let n_pooled = n0 + sources.iter().map(|s| s.len()).sum::<usize>();
    match rule {
        LambdaRule::Fixed { lambda1, lambda2 } => fit_tlflr(target, sources, kernel, *lambda1, *lambda2, mode, opts),
        LambdaRule::Theorem { r, pre1, pre2 } => {
            let (l1, l2) = default_lambdas(n_pooled, n0, *r, *pre1, *pre2);
            fit_tlflr(target, sources, kernel, l1, l2, mode, opts)
        }
        LambdaRule::TheoremCv { r, pre_grid, folds, separate } => {
            let pairs = pre_pairs(pre_grid, *separate && mode == TransferMode::Full);
            let (c1, c2) = if pairs.len() == 1 {
                pairs[0]
            } else {
                let errs = cv_over_pairs(target, sources, kernel, *r, &pairs, (*folds).min(n0), mode, seed)?;
                pairs[argmin_first(errs).ok_or_else(|| Error::numerical("TL-FLR CV produced no finite error"))?]
            };
            let (l1, l2) = default_lambdas(n_pooled, n0, *r, c1, c2);
            fit_tlflr(target, sources, kernel, l1, l2, mode, opts)
        }
        LambdaRule::Cv { .. } | LambdaRule::Gcv { .. } => {
            let mut pooled: Vec<&TaskDataset> = vec![target];
            pooled.extend_from_slice(sources);
            let select = |data: &[&TaskDataset]| match rule {
                LambdaRule::Cv { grid, folds } => {
                    let n: usize = data.iter().map(|t| t.len()).sum();
                    select_lambda_cv(data, kernel, grid, (*folds).min(n), seed)
                }
                LambdaRule::Gcv { grid } => select_lambda_gcv(data, kernel, grid),
                _ => unreachable!(),
            };
            let lambda1 = select(&pooled)?;
            let transfer_fit = fit_oflr(&pooled, kernel, lambda1, opts)?;
            let (debias_fit, lambda2) = match mode {
                TransferMode::PooledOnly => (None, lambda1),
                TransferMode::Full => {
                    let resid = residual_task(target, &transfer_fit.model);
                    let lambda2 = select(&[&resid])?;
                    (Some(fit_oflr(&[&resid], kernel, lambda2, opts)?), lambda2)
                }
            };
            Ok(assemble(transfer_fit, debias_fit, sources, lambda1, lambda2, mode))
        }
    }
}

/// Candidate `(pre₁, pre₂)` pairs: the diagonal, or the full product grid.
fn pre_pairs(pre_grid: &[f64], separate: bool) -> Vec<(f64, f64)> {
    if separate {
        pre_grid.iter().flat_map(|&a| pre_grid.iter().map(move |&b| (a, b))).collect()
    } else {
        pre_grid.iter().map(|&c| (c, c)).collect()
    }
}

/// Mean held-out squared error of the two-step estimator for each shared
/// pre-constant, with K folds over the target rows.
#[allow(clippy::too_many_arguments)]
pub fn tlflr_cv_errors(
    target: &TaskDataset,
    sources: &[&TaskDataset],
    kernel: &KernelSpec,
    r: f64,
    pre_grid: &[f64],
    folds: usize,
    mode: TransferMode,
    seed: u64,
) -> Result<Vec<f64>> {
    cv_over_pairs(target, sources, kernel, r, &pre_pairs(pre_grid, false), folds, mode, seed)
}

#[allow(clippy::too_many_arguments)]
fn cv_over_pairs(
    target: &TaskDataset,
    sources: &[&TaskDataset],
    kernel: &KernelSpec,
    r: f64,
    pairs: &[(f64, f64)],
    folds: usize,
    mode: TransferMode,
    seed: u64,
) -> Result<Vec<f64>> {
    let n0 = target.len();
    if folds < 2 || folds > n0 {
        return Err(Error::arg(format!("folds must lie in [2, {n0}], got {folds}")));
    }
    if pairs.is_empty() || pairs.iter().any(|&(a, b)| !(a > 0.0 && b > 0.0)) {
        return Err(Error::arg("pre-constant grid must be nonempty and positive"));
    }
    let n_src: usize = sources.iter().map(|s| s.len()).sum();
    let labels = fold_assignment(n0, folds, seed);
    let mut sse = vec![0.0; pairs.len()];

    let grid = target.common_grid().filter(|g| {
        sources.iter().all(|s| s.common_grid().is_some_and(|sg| sg[..] == g[..]))
    });
    if let Some(grid) = grid {
        let op = grid_operator_for(kernel, grid);
        let d = grid.len();
        let rows = |t: &TaskDataset| {
            Moments::from_rows(t.curves.iter().zip(&t.responses).map(|(c, &y)| (c.values(), y)), d)
        };
        let src = sources.iter().fold(Moments::zeros(d), |acc, s| acc.plus(&rows(s)));
        let fold_m: Vec<Moments> = (0..folds)
            .map(|f| {
                let idx: Vec<usize> = (0..n0).filter(|&i| labels[i] == f).collect();
                rows(&target.select(&idx))
            })
            .collect();
        let total = fold_m.iter().fold(Moments::zeros(d), |acc, m| acc.plus(m));
        for held in &fold_m {
            let train = total.minus(held);
            let n_train = train.n.round() as usize;
            let pool_solver = MomentSolver::new(&op, &train.plus(&src));
            let target_solver = MomentSolver::new(&op, &train);
            for (k, &(c1, c2)) in pairs.iter().enumerate() {
                let (l1, l2) = default_lambdas(n_train + n_src, n_train, r, c1, c2);
                let fit_s = pool_solver.solve(l1);
                let (alpha, a) = match mode {
                    TransferMode::PooledOnly => (fit_s.alpha, fit_s.a_u),
                    TransferMode::Full => {
                        let resid = train.residualize(fit_s.alpha, &fit_s.a_u);
                        let fit_d = target_solver.solve_for(&resid, l2);
                        (fit_s.alpha + fit_d.alpha, &fit_s.a_u + &fit_d.a_u)
                    }
                };
                sse[k] += held.sse(alpha, &a);
            }
        }
    } else {
        let opts = FitOptions::with_eval_grid(vec![kernel.domain.lo, kernel.domain.hi]);
        for f in 0..folds {
            let train_idx: Vec<usize> = (0..n0).filter(|&i| labels[i] != f).collect();
            let test_idx: Vec<usize> = (0..n0).filter(|&i| labels[i] == f).collect();
            let train = target.select(&train_idx);
            let test = target.select(&test_idx);
            for (k, &(c1, c2)) in pairs.iter().enumerate() {
                let (l1, l2) = default_lambdas(train.len() + n_src, train.len(), r, c1, c2);
                let fit = fit_tlflr(&train, sources, kernel, l1, l2, mode, &opts)?;
                let preds = fit.model.predict_many(&test.curves);
                sse[k] += preds.iter().zip(&test.responses).map(|(p, y)| (y - p).powi(2)).sum::<f64>();
            }
        }
    }
    Ok(sse.into_iter().map(|s| s / n0 as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fda::{uniform_grid, Curve};
    use crate::flr::{RoutePreference, SolveRoute};
    use crate::kernels::MaternNu;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn task(rng: &mut ChaCha8Rng, id: &str, n: usize, grid: &Arc<[f64]>, shift: f64) -> TaskDataset {
        let curves: Vec<Curve> = (0..n)
            .map(|_| {
                let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                let vals = grid
                    .iter()
                    .map(|&t| c.iter().enumerate().map(|(k, a)| a * (std::f64::consts::PI * k as f64 * t).cos()).sum())
                    .collect();
                Curve::new(grid.clone(), vals).unwrap()
            })
            .collect();
        let ys = curves.iter().map(|c| c.values().iter().sum::<f64>() / 10.0 + shift + rng.random_range(-0.2..0.2)).collect();
        TaskDataset::new(id, curves, ys).unwrap()
    }

    fn grid(n: usize) -> Arc<[f64]> {
        Arc::from(uniform_grid(0.0, 1.0, n).unwrap())
    }

    #[test]
    fn default_lambda_arithmetic() {
        let (l1, l2) = default_lambdas(1000, 1000, 1.0, 1.0, 0.05);
        assert_relative_eq!(l1, 1e-2, max_relative = 1e-12);
        assert_relative_eq!(l2, 5e-4, max_relative = 1e-12);
        let (_, l) = default_lambdas(1, 150, 2.0, 1.0, 1.0);
        assert_relative_eq!(l, 150f64.powf(-0.8), max_relative = 1e-12);
        assert!((l - 0.01816).abs() < 1e-5);
    }

    #[test]
    fn zero_data_gives_zero_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = grid(20);
        let mut t = task(&mut rng, "t", 10, &g, 0.0);
        let mut s = task(&mut rng, "s", 10, &g, 0.0);
        t.responses.iter_mut().for_each(|y| *y = 0.0);
        s.responses.iter_mut().for_each(|y| *y = 0.0);
        let k = KernelSpec::eigen_expansion_default();
        let fit = fit_tlflr(&t, &[&s], &k, 0.01, 0.01, TransferMode::Full, &FitOptions::default()).unwrap();
        assert_eq!(fit.combined_intercept, 0.0);
        assert!(fit.combined_beta.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn heavy_debias_penalty_returns_transfer_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = grid(25);
        let t = task(&mut rng, "t", 30, &g, 0.5);
        let k = KernelSpec::matern(MaternNu::ThreeHalves, 1.0).unwrap();
        let fit = fit_tlflr(&t, &[], &k, 0.01, 1e6, TransferMode::Full, &FitOptions::default()).unwrap();
        let oflr = fit_oflr(&[&t], &k, 0.01, &FitOptions::default()).unwrap();
        assert!(fit.combined_beta.sup_distance(&oflr.beta_on_grid) < 1e-4);
    }

    #[test]
    fn combined_pieces_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(30);
        let t = task(&mut rng, "t", 20, &g, 0.1);
        let s1 = task(&mut rng, "s1", 15, &g, -0.3);
        let k = KernelSpec::eigen_expansion_default();
        let fit = fit_tlflr(&t, &[&s1], &k, 0.02, 0.05, TransferMode::Full, &FitOptions::default()).unwrap();
        let d = fit.debias_fit.as_ref().unwrap();
        assert_relative_eq!(fit.combined_intercept, fit.transfer_fit.intercept() + d.intercept(), epsilon = 1e-14);
        for i in 0..fit.combined_beta.values.len() {
            assert_relative_eq!(
                fit.combined_beta.values[i],
                fit.transfer_fit.beta_on_grid.values[i] + d.beta_on_grid.values[i],
                epsilon = 1e-14
            );
        }
        assert_eq!(fit.source_ids, vec!["s1".to_string()]);

        let pooled = fit_tlflr(&t, &[&s1], &k, 0.02, 0.05, TransferMode::PooledOnly, &FitOptions::default()).unwrap();
        assert!(pooled.debias_fit.is_none());
        assert_eq!(pooled.combined_beta, fit.transfer_fit.beta_on_grid);
    }

    #[test]
    fn source_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = grid(30);
        let t = task(&mut rng, "t", 20, &g, 0.1);
        let s: Vec<TaskDataset> = (0..3).map(|i| task(&mut rng, &format!("s{i}"), 12, &g, 0.2 * i as f64)).collect();
        let k = KernelSpec::matern(MaternNu::Half, 1.0).unwrap();
        let a = fit_tlflr(&t, &[&s[0], &s[1], &s[2]], &k, 0.01, 0.02, TransferMode::Full, &FitOptions::default()).unwrap();
        let b = fit_tlflr(&t, &[&s[2], &s[0], &s[1]], &k, 0.01, 0.02, TransferMode::Full, &FitOptions::default()).unwrap();
        assert!(a.combined_beta.sup_distance(&b.combined_beta) < 1e-12);
        assert!((a.combined_intercept - b.combined_intercept).abs() < 1e-12);
    }

    #[test]
    fn cv_fast_path_matches_refits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = grid(20);
        let t = task(&mut rng, "t", 24, &g, 0.1);
        let s = task(&mut rng, "s", 30, &g, 0.4);
        let k = KernelSpec::eigen_expansion_default();
        let pre = [0.05, 0.3, 1.0];
        for mode in [TransferMode::Full, TransferMode::PooledOnly] {
            let fast = tlflr_cv_errors(&t, &[&s], &k, 2.0, &pre, 4, mode, 7).unwrap();
            // oracle: refit with the representer route on every fold
            let labels = fold_assignment(t.len(), 4, 7);
            let opts = FitOptions { eval_grid: None, route: RoutePreference::Force(SolveRoute::Representer) };
            for (kk, &c) in pre.iter().enumerate() {
                let mut sse = 0.0;
                for f in 0..4 {
                    let tr: Vec<usize> = (0..t.len()).filter(|&i| labels[i] != f).collect();
                    let te: Vec<usize> = (0..t.len()).filter(|&i| labels[i] == f).collect();
                    let train = t.select(&tr);
                    let (l1, l2) = default_lambdas(train.len() + s.len(), train.len(), 2.0, c, c);
                    let fit = fit_tlflr(&train, &[&s], &k, l1, l2, mode, &opts).unwrap();
                    for &i in &te {
                        sse += (t.responses[i] - fit.model.predict(&t.curves[i])).powi(2);
                    }
                }
                assert_relative_eq!(fast[kk], sse / t.len() as f64, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn rules_produce_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = grid(20);
        let t = task(&mut rng, "t", 30, &g, 0.1);
        let s = task(&mut rng, "s", 30, &g, 0.4);
        let k = KernelSpec::eigen_expansion_default();
        let opts = FitOptions::default();
        for rule in [
            LambdaRule::default(),
            LambdaRule::Theorem { r: 2.0, pre1: 0.5, pre2: 0.5 },
            LambdaRule::Cv { grid: vec![1e-3, 1e-2, 1e-1], folds: 5 },
            LambdaRule::Gcv { grid: vec![1e-3, 1e-2, 1e-1] },
            LambdaRule::Fixed { lambda1: 0.01, lambda2: 0.02 },
        ] {
            let fit = fit_tlflr_with_rule(&t, &[&s], &k, &rule, TransferMode::Full, &opts, 3).unwrap();
            assert!(fit.combined_beta.values.iter().all(|v| v.is_finite()));
            assert!(fit.lambda1 > 0.0 && fit.lambda2 > 0.0);
        }
    }
}
