//! Sufficient statistics for fits whose curves all share one design grid.
//!
//! With `A = W K W` and `R = A^{1/2}`, the centered Gram matrix factors as
//! `Σ_c = (X_c R)(X_c R)ᵀ`, so the N×N representer system collapses to a d×d
//! ridge problem in the grid-sized feature space. Everything the solver needs
//! is additive over rows, which makes pooling and K-fold splits cheap.

use nalgebra::{DMatrix, DVector};

use super::operator::GridOperator;
use crate::linalg::sym_eigen_desc;

/// Raw (uncentered) sums over a set of rows `(x_i, y_i)`.
#[derive(Clone, Debug)]
pub(crate) struct Moments {
    pub n: f64,
    pub sx: DVector<f64>,
    pub sy: f64,
    pub syy: f64,
    pub xx: DMatrix<f64>,
    pub xy: DVector<f64>,
}

impl Moments {
    pub fn zeros(d: usize) -> Self {
        Moments {
            n: 0.0,
            sx: DVector::zeros(d),
            sy: 0.0,
            syy: 0.0,
            xx: DMatrix::zeros(d, d),
            xy: DVector::zeros(d),
        }
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = (&'a [f64], f64)>, d: usize) -> Self {
        let mut data: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for (x, y) in rows {
            data.extend_from_slice(x);
            ys.push(y);
        }
        let n = ys.len();
        if n == 0 {
            return Self::zeros(d);
        }
        // row-major N×d read as column-major d×N
        let xt = DMatrix::from_column_slice(d, n, &data);
        let y = DVector::from_vec(ys);
        Moments {
            n: n as f64,
            sx: xt.column_sum(),
            sy: y.sum(),
            syy: y.dot(&y),
            xx: &xt * xt.transpose(),
            xy: &xt * &y,
        }
    }

    pub fn plus(&self, other: &Moments) -> Moments {
        Moments {
            n: self.n + other.n,
            sx: &self.sx + &other.sx,
            sy: self.sy + other.sy,
            syy: self.syy + other.syy,
            xx: &self.xx + &other.xx,
            xy: &self.xy + &other.xy,
        }
    }

    pub fn minus(&self, other: &Moments) -> Moments {
        Moments {
            n: self.n - other.n,
            sx: &self.sx - &other.sx,
            sy: self.sy - other.sy,
            syy: self.syy - other.syy,
            xx: &self.xx - &other.xx,
            xy: &self.xy - &other.xy,
        }
    }

    /// Moments of the residual rows `(x_i, y_i - α - x_iᵀ a)`.
    pub fn residualize(&self, alpha: f64, a: &DVector<f64>) -> Moments {
        let sxa = self.sx.dot(a);
        let xxa = &self.xx * a;
        Moments {
            n: self.n,
            sx: self.sx.clone(),
            sy: self.sy - self.n * alpha - sxa,
            syy: self.sse(alpha, a),
            xx: self.xx.clone(),
            xy: &self.xy - &self.sx * alpha - &xxa,
        }
    }

    /// `Σ (y_i - α - x_iᵀ a)²`.
    pub fn sse(&self, alpha: f64, a: &DVector<f64>) -> f64 {
        let sxa = self.sx.dot(a);
        let quad = a.dot(&(&self.xx * a));
        let v = self.syy - 2.0 * alpha * self.sy - 2.0 * a.dot(&self.xy)
            + self.n * alpha * alpha
            + 2.0 * alpha * sxa
            + quad;
        v.max(0.0)
    }
}

/// Ridge solver in feature space for a fixed set of moments; eigendecomposes
/// the feature Gram once so that each additional λ costs O(d²).
pub(crate) struct MomentSolver<'a> {
    op: &'a GridOperator,
    pub n: f64,
    xbar: DVector<f64>,
    ybar: f64,
    s_vec: DVector<f64>,
    /// `S R` with `S` the centered second moment.
    s_root: DMatrix<f64>,
    q: DMatrix<f64>,
    /// Eigenvalues of `G = R S R` (nonincreasing, clipped at 0).
    pub gamma: Vec<f64>,
    qtg: DVector<f64>,
}

/// Solution of one ridge problem: intercept, grid-space representer sum
/// `u = X_cᵀ c`, feature coefficients `θ`, and `A u`.
pub(crate) struct MomentFit {
    pub alpha: f64,
    pub u: DVector<f64>,
    pub theta: DVector<f64>,
    pub a_u: DVector<f64>,
    pub mu: f64,
}

impl<'a> MomentSolver<'a> {
    pub fn new(op: &'a GridOperator, m: &Moments) -> Self {
        let n = m.n;
        let xbar = &m.sx / n;
        let ybar = m.sy / n;
        let s_mat = &m.xx - &xbar * xbar.transpose() * n;
        let s_vec = &m.xy - &xbar * (n * ybar);
        let s_root = &s_mat * &op.root;
        let g = &op.root * &s_root;
        let (gamma, q) = sym_eigen_desc(&g);
        let gamma: Vec<f64> = gamma.into_iter().map(|v| v.max(0.0)).collect();
        let qtg = q.transpose() * (&op.root * &s_vec);
        MomentSolver { op, n, xbar, ybar, s_vec, s_root, q, gamma, qtg }
    }

    pub fn solve(&self, lambda: f64) -> MomentFit {
        self.solve_parts(self.ybar, &self.s_vec, &self.qtg, lambda)
    }

    /// Solves for a different response on the same curves: only the `y`
    /// parts of `resp` are read; its `x` parts must match the ones this
    /// solver was built from.
    pub fn solve_for(&self, resp: &Moments, lambda: f64) -> MomentFit {
        let ybar = resp.sy / self.n;
        let s_vec = &resp.xy - &self.xbar * (self.n * ybar);
        let qtg = self.q.transpose() * (&self.op.root * &s_vec);
        self.solve_parts(ybar, &s_vec, &qtg, lambda)
    }

    fn solve_parts(&self, ybar: f64, s_vec: &DVector<f64>, qtg: &DVector<f64>, lambda: f64) -> MomentFit {
        let mu = self.n * lambda;
        let scaled = DVector::from_iterator(
            self.gamma.len(),
            self.gamma.iter().zip(qtg.iter()).map(|(g, v)| v / (g + mu)),
        );
        let theta = &self.q * scaled;
        let u = (s_vec - &self.s_root * &theta) / mu;
        let a_u = &self.op.a * &u;
        let alpha = ybar - self.xbar.dot(&a_u);
        MomentFit { alpha, u, theta, a_u, mu }
    }

    /// Trace of the hat matrix including the intercept projector.
    pub fn hat_trace(&self, lambda: f64) -> f64 {
        let mu = self.n * lambda;
        1.0 + self.gamma.iter().map(|g| g / (g + mu)).sum::<f64>()
    }

    pub fn xbar(&self) -> &DVector<f64> {
        &self.xbar
    }

    pub fn ybar(&self) -> f64 {
        self.ybar
    }

    pub fn root(&self) -> &DMatrix<f64> {
        &self.op.root
    }
}
