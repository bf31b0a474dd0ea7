//! Single-task RKHS-penalized functional linear regression.
//!
//! The estimator minimizes
//! `(1/N) Σ (y_i - α - ⟨X_i, β⟩)² + λ ‖β‖²_K` over `α ∈ ℝ, β ∈ H(K)`.
//! By the representer theorem `β(t) = Σ c_i ∫ X_i(s) K(s,t) ds`, and after
//! profiling out `α` the coefficients solve `(Σ_c + Nλ I) c = y_c` where
//! `Σ_c` is the doubly centered double-quadrature Gram matrix.

mod distance;
pub(crate) mod moments;
pub(crate) mod operator;
mod tuning;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use distance::truncated_rkhs_distance;
pub(crate) use moments::{MomentSolver, Moments};
pub(crate) use tuning::{argmin_first, rate};
pub use tuning::{
    cv_errors, fold_assignment, gcv_scores, resolve_oflr_lambda, select_lambda_cv, select_lambda_gcv,
    LambdaRule, DEFAULT_PRE_GRID,
};

use crate::error::{Error, Result};
use crate::fda::{check_curve_domain, gram_of_curves, group_by_grid, interpolate, uniform_grid, Curve, TaskDataset};
use crate::kernels::KernelSpec;
use crate::linalg::{cholesky_with_jitter, trace};
use operator::{cached_gram, grid_operator};

/// Default number of points of the slope evaluation grid.
pub const DEFAULT_EVAL_POINTS: usize = 201;

/// A slope function sampled on an ascending grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl BetaEstimate {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.is_empty() {
            return Err(Error::arg("slope grid and values must be nonempty and of equal length"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::arg("slope grid must be strictly ascending"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("slope values must be finite"));
        }
        Ok(BetaEstimate { grid, values })
    }

    pub fn zero(grid: &[f64]) -> Self {
        BetaEstimate { grid: grid.to_vec(), values: vec![0.0; grid.len()] }
    }

    /// Values on `grid`, linearly interpolated unless the grids coincide.
    pub fn at_grid(&self, grid: &[f64]) -> Vec<f64> {
        if grid == self.grid.as_slice() {
            return self.values.clone();
        }
        grid.iter().map(|&t| interpolate(&self.grid, &self.values, t)).collect()
    }

    /// Pointwise `self + other` on `self`'s grid.
    pub fn plus(&self, other: &BetaEstimate) -> BetaEstimate {
        let o = other.at_grid(&self.grid);
        BetaEstimate {
            grid: self.grid.clone(),
            values: self.values.iter().zip(o).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn minus(&self, other: &BetaEstimate) -> BetaEstimate {
        self.plus(&other.scaled(-1.0))
    }

    pub fn scaled(&self, a: f64) -> BetaEstimate {
        BetaEstimate { grid: self.grid.clone(), values: self.values.iter().map(|v| a * v).collect() }
    }

    pub fn sup_distance(&self, other: &BetaEstimate) -> f64 {
        let o = other.at_grid(&self.grid);
        self.values.iter().zip(o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
struct SlopeTerm {
    grid: Arc<[f64]>,
    /// `Σ_i c_i (w ∘ x_i)` over the training curves observed on `grid`.
    coef: DVector<f64>,
}

/// A slope in representer form, `β(t) = Σ_terms Σ_m coef[m] K(grid[m], t)`.
///
/// Closed under addition and scaling, so transfer-plus-debias sums and convex
/// aggregates stay exact functions rather than interpolated samples.
#[derive(Clone, Debug)]
pub struct Slope {
    kernel: KernelSpec,
    terms: Vec<SlopeTerm>,
}

impl Slope {
    pub fn zero(kernel: &KernelSpec) -> Self {
        Slope { kernel: *kernel, terms: Vec::new() }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| {
                term.grid
                    .iter()
                    .zip(term.coef.iter())
                    .map(|(&s, &c)| c * self.kernel.eval_unchecked(s, t))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Values at every point of `grid` (assumed inside the kernel domain).
    pub fn values_on(&self, grid: &[f64]) -> Vec<f64> {
        let mut out = DVector::zeros(grid.len());
        for term in &self.terms {
            let k = cached_gram(&self.kernel, &term.grid, grid);
            out += k.tr_mul(&term.coef);
        }
        out.as_slice().to_vec()
    }

    pub fn on_grid(&self, grid: &[f64]) -> Result<BetaEstimate> {
        for &t in grid {
            self.kernel.domain.check(t)?;
        }
        BetaEstimate::new(grid.to_vec(), self.values_on(grid))
    }

    pub fn scaled(&self, a: f64) -> Slope {
        Slope {
            kernel: self.kernel,
            terms: self
                .terms
                .iter()
                .map(|t| SlopeTerm { grid: t.grid.clone(), coef: &t.coef * a })
                .collect(),
        }
    }

    pub fn plus(&self, other: &Slope) -> Slope {
        let mut out = self.clone();
        for term in &other.terms {
            out.push_term(term.grid.clone(), term.coef.clone());
        }
        out
    }

    /// `Σ w_j f_j`.
    pub fn combination<'a>(kernel: &KernelSpec, parts: impl IntoIterator<Item = (f64, &'a Slope)>) -> Slope {
        let mut out = Slope::zero(kernel);
        for (w, s) in parts {
            if w != 0.0 {
                out = out.plus(&s.scaled(w));
            }
        }
        out
    }

    fn push_term(&mut self, grid: Arc<[f64]>, coef: DVector<f64>) {
        match self
            .terms
            .iter_mut()
            .find(|t| Arc::ptr_eq(&t.grid, &grid) || t.grid[..] == grid[..])
        {
            Some(t) => t.coef += coef,
            None => self.terms.push(SlopeTerm { grid, coef }),
        }
    }
}

/// Intercept plus slope: the predictor `x ↦ α + ∫ x β`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub intercept: f64,
    pub slope: Slope,
}

impl LinearModel {
    pub fn predict(&self, x: &Curve) -> f64 {
        let beta = self.slope.values_on(x.grid());
        self.intercept + x.weighted_values().iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Predictions for many curves, evaluating the slope once per distinct grid.
    pub fn predict_many(&self, xs: &[Curve]) -> Vec<f64> {
        let mut out = vec![0.0; xs.len()];
        for group in group_by_grid(xs) {
            let beta = DVector::from_vec(self.slope.values_on(&group.grid));
            let preds = &group.weighted * beta;
            for (p, &row) in group.rows.iter().enumerate() {
                out[row] = self.intercept + preds[p];
            }
        }
        out
    }

    pub fn combination<'a>(kernel: &KernelSpec, parts: impl IntoIterator<Item = (f64, &'a LinearModel)> + Clone) -> LinearModel {
        let intercept = parts.clone().into_iter().map(|(w, m)| w * m.intercept).sum();
        let slope = Slope::combination(kernel, parts.into_iter().map(|(w, m)| (w, &m.slope)));
        LinearModel { intercept, slope }
    }

    pub fn plus(&self, other: &LinearModel) -> LinearModel {
        LinearModel { intercept: self.intercept + other.intercept, slope: self.slope.plus(&other.slope) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveRoute {
    /// N×N representer system on the double-quadrature Gram matrix.
    Representer,
    /// d×d feature-space system; requires all curves on one grid.
    SharedGrid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RoutePreference {
    /// Shared-grid route when every curve shares one grid, else representer.
    #[default]
    Auto,
    Force(SolveRoute),
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Grid on which `beta_on_grid` is cached; 201 uniform points over the
    /// kernel domain when unset.
    pub eval_grid: Option<Vec<f64>>,
    pub route: RoutePreference,
}

impl FitOptions {
    pub fn with_eval_grid(grid: Vec<f64>) -> Self {
        FitOptions { eval_grid: Some(grid), ..Default::default() }
    }

    pub(crate) fn eval_grid_for(&self, kernel: &KernelSpec) -> Vec<f64> {
        self.eval_grid.clone().unwrap_or_else(|| {
            uniform_grid(kernel.domain.lo, kernel.domain.hi, DEFAULT_EVAL_POINTS).expect("domain is valid")
        })
    }
}

/// A fitted single-task (or pooled) RKHS regression.
#[derive(Clone, Debug)]
pub struct RidgeFit {
    pub model: LinearModel,
    /// Representer coefficients `c_i`, one per training curve, in input order.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub route: SolveRoute,
    /// Diagonal jitter added by the representer route (0 when none was needed).
    pub jitter: f64,
    pub beta_on_grid: BetaEstimate,
}

impl RidgeFit {
    pub fn intercept(&self) -> f64 {
        self.model.intercept
    }

    pub fn n(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict(&self, x: &Curve) -> f64 {
        self.model.predict(x)
    }

    pub fn evaluate_beta(&self, grid: &[f64]) -> Result<BetaEstimate> {
        self.model.slope.on_grid(grid)
    }
}

/// `α + ∫ x β̂` for a fitted model.
pub fn predict(fit: &RidgeFit, x: &Curve) -> Result<f64> {
    check_curve_domain(x, &fit.kernel)?;
    Ok(fit.predict(x))
}

/// `β̂(t) = Σ c_i ⟨X_i, K_t⟩` on `grid`.
pub fn evaluate_beta(fit: &RidgeFit, grid: &[f64]) -> Result<BetaEstimate> {
    fit.evaluate_beta(grid)
}

pub(crate) fn grid_operator_for(kernel: &KernelSpec, grid: &[f64]) -> Arc<operator::GridOperator> {
    grid_operator(kernel, grid)
}

/// `(1/N)‖y - α1 - Σc‖² + λ cᵀΣc`, the objective the fit minimizes.
pub fn ridge_objective(sigma: &DMatrix<f64>, y: &[f64], alpha: f64, c: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let c = DVector::from_column_slice(c);
    let sc = sigma * &c;
    let rss: f64 = y.iter().zip(sc.iter()).map(|(yi, s)| (yi - alpha - s).powi(2)).sum();
    rss / n + lambda * c.dot(&sc)
}

pub(crate) fn pooled_rows<'a>(data: &'a [&'a TaskDataset]) -> (Vec<&'a Curve>, Vec<f64>) {
    let curves = data.iter().flat_map(|t| t.curves.iter()).collect();
    let ys = data.iter().flat_map(|t| t.responses.iter().copied()).collect();
    (curves, ys)
}

/// The grid shared by every curve, if any.
pub(crate) fn shared_grid<'a>(curves: &[&'a Curve]) -> Option<&'a Arc<[f64]>> {
    let first = curves.first()?;
    curves.iter().all(|c| c.same_grid(first)).then(|| first.shared_grid())
}

/// Fits the penalized regression on the concatenation of `data`.
pub fn fit_oflr(data: &[&TaskDataset], kernel: &KernelSpec, lambda: f64, opts: &FitOptions) -> Result<RidgeFit> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::arg(format!("lambda must be positive, got {lambda}")));
    }
    let (curves, ys) = pooled_rows(data);
    if curves.is_empty() {
        return Err(Error::arg("fit_oflr needs at least one curve"));
    }
    for c in &curves {
        check_curve_domain(c, kernel)?;
    }
    let eval_grid = opts.eval_grid_for(kernel);
    for &t in &eval_grid {
        kernel.domain.check(t)?;
    }
    let shared = shared_grid(&curves);
    let route = match opts.route {
        RoutePreference::Force(SolveRoute::SharedGrid) if shared.is_none() => {
            return Err(Error::arg("shared-grid route requested but curves use different grids"));
        }
        RoutePreference::Force(r) => r,
        RoutePreference::Auto if shared.is_some() => SolveRoute::SharedGrid,
        RoutePreference::Auto => SolveRoute::Representer,
    };
    let (model, coefficients, jitter) = match route {
        SolveRoute::SharedGrid => {
            let grid = shared.expect("checked above").clone();
            let (m, c) = solve_shared(&curves, &ys, &grid, kernel, lambda);
            (m, c, 0.0)
        }
        SolveRoute::Representer => solve_representer(&curves, &ys, kernel, lambda)?,
    };
    let beta_on_grid = BetaEstimate::new(eval_grid.clone(), model.slope.values_on(&eval_grid))?;
    Ok(RidgeFit { model, coefficients, lambda, kernel: *kernel, route, jitter, beta_on_grid })
}

fn solve_shared(
    curves: &[&Curve],
    ys: &[f64],
    grid: &Arc<[f64]>,
    kernel: &KernelSpec,
    lambda: f64,
) -> (LinearModel, Vec<f64>) {
    let op = grid_operator(kernel, grid);
    let d = grid.len();
    let moments = Moments::from_rows(curves.iter().zip(ys).map(|(c, &y)| (c.values(), y)), d);
    let solver = MomentSolver::new(&op, &moments);
    let fit = solver.solve(lambda);
    let proj = solver.root() * &fit.theta;
    let xbar = solver.xbar();
    let ybar = solver.ybar();
    let coefficients = curves
        .iter()
        .zip(ys)
        .map(|(c, &y)| {
            let xc_proj: f64 = c.values().iter().zip(xbar.iter()).zip(proj.iter()).map(|((x, m), p)| (x - m) * p).sum();
            (y - ybar - xc_proj) / fit.mu
        })
        .collect();
    let coef = DVector::from_iterator(d, op.weights.iter().zip(fit.u.iter()).map(|(w, u)| w * u));
    let mut slope = Slope::zero(kernel);
    slope.push_term(grid.clone(), coef);
    (LinearModel { intercept: fit.alpha, slope }, coefficients)
}

fn solve_representer(
    curves: &[&Curve],
    ys: &[f64],
    kernel: &KernelSpec,
    lambda: f64,
) -> Result<(LinearModel, Vec<f64>, f64)> {
    let n = curves.len();
    let nf = n as f64;
    let sigma = gram_of_curves(curves.iter().copied(), kernel)?;
    let ybar = ys.iter().sum::<f64>() / nf;
    let yc = DVector::from_iterator(n, ys.iter().map(|y| y - ybar));
    let sigma_c = center_gram(&sigma);
    let mut system = sigma_c.clone();
    let mu = nf * lambda;
    for i in 0..n {
        system[(i, i)] += mu;
    }
    let tr = trace(&sigma).max(f64::MIN_POSITIVE);
    let (chol, jitter) = cholesky_with_jitter(&system, tr / nf, 1e-12, 1e-6 * nf)
        .map_err(|e| Error::numerical(format!("representer solve (N={n}, lambda={lambda:.3e}): {e}")))?;
    let c = chol.solve(&yc);
    let sc = &sigma * &c;
    let alpha = ybar - sc.mean();
    let mut slope = Slope::zero(kernel);
    for group in group_by_grid(curves.iter().copied()) {
        let cg = DVector::from_iterator(group.rows.len(), group.rows.iter().map(|&i| c[i]));
        slope.push_term(group.grid.clone(), group.weighted.tr_mul(&cg));
    }
    Ok((LinearModel { intercept: alpha, slope }, c.as_slice().to_vec(), jitter))
}

/// `P Σ P` with `P = I - 11ᵀ/N`.
pub fn center_gram(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sigma.nrows();
    let row_means: Vec<f64> = (0..n).map(|i| sigma.row(i).mean()).collect();
    let col_means: Vec<f64> = (0..n).map(|j| sigma.column(j).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut out = DMatrix::from_fn(n, n, |i, j| sigma[(i, j)] - row_means[i] - col_means[j] + grand);
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}
