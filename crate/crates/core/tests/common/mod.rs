//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use fdtl::fda::quad_weights;
use fdtl::{Curve, KernelSpec, TaskDataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Curve built from a random cosine series plus pointwise jitter, so that
/// small samples have a nonsingular Gram matrix.
pub fn random_curve(rng: &mut impl Rng, grid: &Arc<[f64]>) -> Curve {
    let coefs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let vals = grid
        .iter()
        .map(|&t| {
            coefs.iter().enumerate().map(|(k, c)| c * (PI * k as f64 * t).cos()).sum::<f64>()
                + 0.1 * rng.random_range(-1.0..1.0)
        })
        .collect();
    Curve::new(grid.clone(), vals).unwrap()
}

/// `Σ_ij = Σ_a Σ_b w_a x_i(a) K(s_a, t_b) w_b x_j(b)` by explicit loops.
pub fn double_quadrature_gram(curves: &[&Curve], kernel: &KernelSpec) -> DMatrix<f64> {
    let n = curves.len();
    let mut sigma = DMatrix::zeros(n, n);
    for i in 0..n {
        let wi = quad_weights(curves[i].grid()).unwrap();
        for j in 0..n {
            let wj = quad_weights(curves[j].grid()).unwrap();
            let mut acc = 0.0;
            for (a, &s) in curves[i].grid().iter().enumerate() {
                for (b, &t) in curves[j].grid().iter().enumerate() {
                    acc += wi[a] * curves[i].values()[a] * kernel.eval(s, t).unwrap() * wj[b] * curves[j].values()[b];
                }
            }
            sigma[(i, j)] = acc;
        }
    }
    sigma
}

/// Minimizer of `(1/N)‖y − α1 − Σc‖² + λ cᵀΣc` over `(α, c)`, from the
/// full stationarity system solved by LU.
pub fn brute_force_minimizer(sigma: &DMatrix<f64>, y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let nf = n as f64;
    // design D = [1 | Σ]; gradient of the objective is (2/N) Dᵀ(Dz − y) + 2λ P z
    let mut d = DMatrix::zeros(n, n + 1);
    for i in 0..n {
        d[(i, 0)] = 1.0;
        for j in 0..n {
            d[(i, j + 1)] = sigma[(i, j)];
        }
    }
    let mut h = d.transpose() * &d / nf;
    for i in 0..n {
        for j in 0..n {
            h[(i + 1, j + 1)] += lambda * sigma[(i, j)];
        }
    }
    let rhs = d.transpose() * DVector::from_column_slice(y) / nf;
    let z = h.lu().solve(&rhs).expect("nonsingular stationarity system");
    (z[0], z.iter().skip(1).copied().collect())
}

pub fn objective(sigma: &DMatrix<f64>, y: &[f64], alpha: f64, c: &[f64], lambda: f64) -> f64 {
    let c = DVector::from_column_slice(c);
    let fitted = sigma * &c;
    let rss: f64 = y.iter().zip(fitted.iter()).map(|(y, f)| (y - alpha - f).powi(2)).sum();
    rss / y.len() as f64 + lambda * c.dot(&(sigma * &c))
}

/// The cosine eigen-expansion kernel truncated at `terms` spans exactly
/// `span{ψ_1..ψ_terms}` with `‖Σ b_k ψ_k‖²_K = Σ k^decay b_k²`. Penalized
/// least squares over that finite basis is therefore an exact, independent
/// route to the RKHS estimator.
pub struct CosineBasisRidge {
    pub terms: usize,
    pub decay: f64,
}

impl CosineBasisRidge {
    pub fn psi(k: usize, t: f64) -> f64 {
        2f64.sqrt() * (PI * k as f64 * t).cos()
    }

    pub fn scores(&self, curves: &[&Curve]) -> DMatrix<f64> {
        DMatrix::from_fn(curves.len(), self.terms, |i, k| {
            let c = curves[i];
            let w = quad_weights(c.grid()).unwrap();
            c.grid().iter().zip(c.values()).zip(&w).map(|((&t, x), w)| w * x * Self::psi(k + 1, t)).sum()
        })
    }

    /// Minimizes `(1/N)‖y − α − Zb‖² + λ Σ k^decay (b_k − b0_k)²` over `(α, b)`.
    pub fn solve(&self, curves: &[&Curve], y: &[f64], lambda: f64, center: &[f64]) -> (f64, Vec<f64>) {
        let n = y.len() as f64;
        let z = self.scores(curves);
        let m = self.terms;
        let mut d = DMatrix::zeros(curves.len(), m + 1);
        for i in 0..curves.len() {
            d[(i, 0)] = 1.0;
            for k in 0..m {
                d[(i, k + 1)] = z[(i, k)];
            }
        }
        let mut h = d.transpose() * &d / n;
        let mut rhs = d.transpose() * DVector::from_column_slice(y) / n;
        for k in 0..m {
            let pen = lambda * ((k + 1) as f64).powf(self.decay);
            h[(k + 1, k + 1)] += pen;
            rhs[k + 1] += pen * center[k];
        }
        let sol = h.lu().solve(&rhs).expect("nonsingular basis system");
        (sol[0], sol.iter().skip(1).copied().collect())
    }

    pub fn eval(coefs: &[f64], t: f64) -> f64 {
        coefs.iter().enumerate().map(|(k, b)| b * Self::psi(k + 1, t)).sum()
    }
}

pub fn task_refs(tasks: &[TaskDataset]) -> Vec<&TaskDataset> {
    tasks.iter().collect()
}
