//! Reproducing kernels on a compact interval and their Mercer eigenpairs.
//!
//! Every kernel lives on a [`Domain`] (default `[0, 1]`). Pointwise evaluation
//! rejects arguments outside the domain; the grid helpers assume their inputs
//! were produced on the domain and validate once per call.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fda::{quad_weights, uniform_grid};
use crate::linalg::sym_eigen_desc;

/// Relative slack allowed when checking that a point lies inside the domain.
const DOMAIN_SLACK: f64 = 1e-12;

/// Eigenvalues below this fraction of the largest one are dropped by the
/// Nyström route.
pub const PSD_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Domain { lo: 0.0, hi: 1.0 }
    }
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::arg(format!("domain [{lo}, {hi}] is not a proper interval")));
        }
        Ok(Domain { lo, hi })
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = DOMAIN_SLACK * self.length().max(1.0);
        t >= self.lo - slack && t <= self.hi + slack
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::Domain { value: t, lo: self.lo, hi: self.hi })
        }
    }
}

/// Smoothness index of the half-integer Matérn family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    #[serde(rename = "1/2", alias = "0.5")]
    Half,
    #[serde(rename = "3/2", alias = "1.5")]
    ThreeHalves,
    #[serde(rename = "5/2", alias = "2.5")]
    FiveHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelKind {
    /// `Σ_{k=1}^{truncation} k^{-decay} ψ_k(s) ψ_k(t)` with the cosine basis
    /// `ψ_k(t) = √2 cos(πk t)` (rescaled to the domain).
    EigenExpansion { decay: f64, truncation: usize },
    Matern { nu: MaternNu, rho: f64 },
    /// `exp(-(s-t)² / (2ρ²))`, the `ν → ∞` member of the Matérn family.
    Gaussian { rho: f64 },
    /// `exp(-2 sin²(π|s-t|/period) / lengthscale²)`.
    Periodic { lengthscale: f64, period: f64 },
    /// `exp(-rate |s-t|)`.
    OrnsteinUhlenbeck { rate: f64 },
    /// Brownian-motion covariance `min(s, t)` (after shifting the domain to start at 0).
    Wiener,
}

/// A validated reproducing kernel on a domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default)]
    pub domain: Domain,
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Result<Self> {
        Self::with_domain(kind, Domain::default())
    }

    pub fn with_domain(kind: KernelKind, domain: Domain) -> Result<Self> {
        let spec = KernelSpec { kind, domain };
        spec.validate()?;
        Ok(spec)
    }

    /// The cosine eigen-expansion kernel with `k^{-2}` decay and 50 terms.
    pub fn eigen_expansion_default() -> Self {
        KernelSpec {
            kind: KernelKind::EigenExpansion { decay: 2.0, truncation: 50 },
            domain: Domain::default(),
        }
    }

    pub fn matern(nu: MaternNu, rho: f64) -> Result<Self> {
        Self::new(KernelKind::Matern { nu, rho })
    }

    pub fn validate(&self) -> Result<()> {
        Domain::new(self.domain.lo, self.domain.hi)?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::arg(format!("kernel parameter {name} must be positive, got {v}")))
            }
        };
        match self.kind {
            KernelKind::EigenExpansion { decay, truncation } => {
                positive("decay", decay)?;
                if truncation == 0 {
                    return Err(Error::arg("eigen-expansion truncation must be at least 1"));
                }
            }
            KernelKind::Matern { rho, .. } | KernelKind::Gaussian { rho } => positive("rho", rho)?,
            KernelKind::Periodic { lengthscale, period } => {
                positive("lengthscale", lengthscale)?;
                positive("period", period)?;
            }
            KernelKind::OrnsteinUhlenbeck { rate } => positive("rate", rate)?,
            KernelKind::Wiener => {}
        }
        Ok(())
    }

    /// `K(s, t)`, rejecting arguments outside the domain.
    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        self.domain.check(s)?;
        self.domain.check(t)?;
        Ok(self.eval_unchecked(s, t))
    }

    /// `K(s, t)` without the domain check.
    pub fn eval_unchecked(&self, s: f64, t: f64) -> f64 {
        let d = (s - t).abs();
        match self.kind {
            KernelKind::EigenExpansion { decay, truncation } => {
                let len = self.domain.length();
                let a = PI * (s - self.domain.lo) / len;
                let b = PI * (t - self.domain.lo) / len;
                // ψ_k(s)ψ_k(t) = (1/L)[cos(k(a-b)) + cos(k(a+b))]
                let (cm, cp) = (a - b, a + b);
                let mut acc = 0.0;
                for k in 1..=truncation {
                    let kf = k as f64;
                    acc += kf.powf(-decay) * ((kf * cm).cos() + (kf * cp).cos());
                }
                acc / len
            }
            KernelKind::Matern { nu, rho } => {
                let r = d / rho;
                match nu {
                    MaternNu::Half => (-r).exp(),
                    MaternNu::ThreeHalves => {
                        let z = 3f64.sqrt() * r;
                        (1.0 + z) * (-z).exp()
                    }
                    MaternNu::FiveHalves => {
                        let z = 5f64.sqrt() * r;
                        (1.0 + z + z * z / 3.0) * (-z).exp()
                    }
                }
            }
            KernelKind::Gaussian { rho } => (-(d * d) / (2.0 * rho * rho)).exp(),
            KernelKind::Periodic { lengthscale, period } => {
                let s = (PI * d / period).sin();
                (-2.0 * s * s / (lengthscale * lengthscale)).exp()
            }
            KernelKind::OrnsteinUhlenbeck { rate } => (-rate * d).exp(),
            KernelKind::Wiener => (s.min(t) - self.domain.lo).max(0.0),
        }
    }

    /// Cross Gram matrix `G[p][q] = K(a[p], b[q])`.
    pub fn gram_cross(&self, grid_a: &[f64], grid_b: &[f64]) -> Result<DMatrix<f64>> {
        if grid_a.is_empty() || grid_b.is_empty() {
            return Err(Error::arg("gram_cross needs nonempty grids"));
        }
        for &t in grid_a.iter().chain(grid_b) {
            self.domain.check(t)?;
        }
        Ok(self.gram_cross_unchecked(grid_a, grid_b))
    }

    pub(crate) fn gram_cross_unchecked(&self, grid_a: &[f64], grid_b: &[f64]) -> DMatrix<f64> {
        if std::ptr::eq(grid_a, grid_b) || grid_a == grid_b {
            let n = grid_a.len();
            let mut g = DMatrix::zeros(n, n);
            for p in 0..n {
                for q in p..n {
                    let v = self.eval_unchecked(grid_a[p], grid_a[q]);
                    g[(p, q)] = v;
                    g[(q, p)] = v;
                }
            }
            g
        } else {
            DMatrix::from_fn(grid_a.len(), grid_b.len(), |p, q| {
                self.eval_unchecked(grid_a[p], grid_b[q])
            })
        }
    }

    /// The `k`-th cosine basis function (k ≥ 1) on this kernel's domain.
    pub fn cosine_basis(&self, k: usize, t: f64) -> f64 {
        let len = self.domain.length();
        SQRT_2 / len.sqrt() * (PI * k as f64 * (t - self.domain.lo) / len).cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigenSource {
    Analytic,
    Nystrom,
}

/// Leading Mercer eigenpairs `(τ_j, v_j)` of a kernel, sampled on a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenSystem {
    pub grid: Vec<f64>,
    pub quad_weights: Vec<f64>,
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// `eigenfunctions[j][g] = v_j(grid[g])`.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Number of pairs asked for; `count() < requested` when the kernel ran out.
    pub requested: usize,
    pub source: EigenSource,
}

impl EigenSystem {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_complete(&self) -> bool {
        self.count() >= self.requested
    }

    /// Largest absolute deviation of the weighted Gram of eigenfunctions from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, vj) in self.eigenfunctions.iter().enumerate() {
            for (k, vk) in self.eigenfunctions.iter().enumerate() {
                let ip: f64 = self
                    .quad_weights
                    .iter()
                    .zip(vj.iter().zip(vk))
                    .map(|(w, (a, b))| w * a * b)
                    .sum();
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        worst
    }

    /// `Σ_{j<m} τ_j v_j(s) v_j(t)` on the grid.
    pub fn reconstruct(&self, m: usize) -> DMatrix<f64> {
        let n = self.grid.len();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..m.min(self.count()) {
            let v = &self.eigenfunctions[j];
            let tau = self.eigenvalues[j];
            for p in 0..n {
                for q in 0..n {
                    out[(p, q)] += tau * v[p] * v[q];
                }
            }
        }
        out
    }
}

/// Mercer eigenpairs on a uniform grid of `grid_size` points over the kernel domain.
pub fn mercer_eigensystem(kernel: &KernelSpec, grid_size: usize, m: usize) -> Result<EigenSystem> {
    if m == 0 || grid_size < m {
        return Err(Error::arg(format!(
            "need grid_size >= M >= 1, got grid_size={grid_size}, M={m}"
        )));
    }
    let grid = uniform_grid(kernel.domain.lo, kernel.domain.hi, grid_size)?;
    mercer_eigensystem_on_grid(kernel, &grid, m)
}

/// Mercer eigenpairs on an arbitrary ascending grid.
///
/// The cosine eigen-expansion kernel uses its analytic pairs; every other
/// kernel goes through the trapezoid-weighted Nyström route.
pub fn mercer_eigensystem_on_grid(
    kernel: &KernelSpec,
    grid: &[f64],
    m: usize,
) -> Result<EigenSystem> {
    if m == 0 || grid.len() < m {
        return Err(Error::arg(format!(
            "need grid length >= M >= 1, got {} and M={m}",
            grid.len()
        )));
    }
    for &t in grid {
        kernel.domain.check(t)?;
    }
    let weights = quad_weights(grid)?;
    match kernel.kind {
        KernelKind::EigenExpansion { decay, truncation } => {
            let count = m.min(truncation);
            let eigenvalues = (1..=count).map(|j| (j as f64).powf(-decay)).collect();
            let eigenfunctions = (1..=count)
                .map(|j| grid.iter().map(|&t| kernel.cosine_basis(j, t)).collect())
                .collect();
            Ok(EigenSystem {
                grid: grid.to_vec(),
                quad_weights: weights,
                eigenvalues,
                eigenfunctions,
                requested: m,
                source: EigenSource::Analytic,
            })
        }
        _ => nystrom(kernel, grid, weights, m),
    }
}

fn nystrom(kernel: &KernelSpec, grid: &[f64], weights: Vec<f64>, m: usize) -> Result<EigenSystem> {
    let n = grid.len();
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    if sqrt_w.iter().any(|&w| w <= 0.0) {
        return Err(Error::arg("Nyström route needs strictly positive quadrature weights"));
    }
    let gram = kernel.gram_cross_unchecked(grid, grid);
    let scaled = DMatrix::from_fn(n, n, |p, q| sqrt_w[p] * gram[(p, q)] * sqrt_w[q]);
    let (vals, vecs) = sym_eigen_desc(&scaled);
    let top = vals.first().copied().unwrap_or(0.0);
    let floor = PSD_FLOOR * top;
    let mut eigenvalues = Vec::with_capacity(m);
    let mut eigenfunctions = Vec::with_capacity(m);
    for (j, &tau) in vals.iter().enumerate().take(m) {
        if !(tau > floor && tau > 0.0) {
            break;
        }
        let col = vecs.column(j);
        // fix the sign so the largest-magnitude entry is positive
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        eigenvalues.push(tau);
        eigenfunctions.push((0..n).map(|g| sign * col[g] / sqrt_w[g]).collect());
    }
    if eigenvalues.len() < m {
        log::warn!(
            "kernel {:?}: only {} of {} eigenvalues above the PSD floor",
            kernel.kind,
            eigenvalues.len(),
            m
        );
    }
    Ok(EigenSystem {
        grid: grid.to_vec(),
        quad_weights: weights,
        eigenvalues,
        eigenfunctions,
        requested: m,
        source: EigenSource::Nystrom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn all_kernels() -> Vec<KernelSpec> {
        vec![
            KernelSpec::eigen_expansion_default(),
            KernelSpec::matern(MaternNu::Half, 1.0).unwrap(),
            KernelSpec::matern(MaternNu::ThreeHalves, 0.5).unwrap(),
            KernelSpec::matern(MaternNu::FiveHalves, 0.3).unwrap(),
            KernelSpec::new(KernelKind::Gaussian { rho: 1.0 }).unwrap(),
            KernelSpec::new(KernelKind::Periodic { lengthscale: 1.0, period: 0.5 }).unwrap(),
            KernelSpec::new(KernelKind::OrnsteinUhlenbeck { rate: 15.0 }).unwrap(),
            KernelSpec::new(KernelKind::Wiener).unwrap(),
        ]
    }

    #[test]
    fn gaussian_is_one_on_the_diagonal() {
        let k = KernelSpec::new(KernelKind::Gaussian { rho: 1.0 }).unwrap();
        assert_eq!(k.eval(0.3, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn exponential_matern_at_unit_distance() {
        let k = KernelSpec::matern(MaternNu::Half, 1.0).unwrap();
        assert_relative_eq!(k.eval(0.0, 1.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(k.eval(0.0, 1.0).unwrap(), 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn eigen_expansion_diagonal_matches_partial_sum() {
        // oracle: direct summation of 2/k² for k ≤ 50
        let oracle: f64 = (1..=50).map(|k| 2.0 / (k as f64).powi(2)).sum();
        let k = KernelSpec::eigen_expansion_default();
        assert_relative_eq!(k.eval(0.0, 0.0).unwrap(), oracle, epsilon = 1e-12);
        assert!((oracle - PI * PI / 3.0).abs() < 0.05);
    }

    #[test]
    fn eval_outside_domain_is_rejected() {
        let k = KernelSpec::eigen_expansion_default();
        assert!(matches!(k.eval(-0.1, 0.5), Err(Error::Domain { .. })));
        assert!(matches!(k.eval(0.5, 1.2), Err(Error::Domain { .. })));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(KernelSpec::new(KernelKind::Gaussian { rho: 0.0 }).is_err());
        assert!(KernelSpec::new(KernelKind::EigenExpansion { decay: 2.0, truncation: 0 }).is_err());
        assert!(KernelSpec::new(KernelKind::OrnsteinUhlenbeck { rate: -1.0 }).is_err());
        assert!(KernelSpec::with_domain(KernelKind::Wiener, Domain { lo: 1.0, hi: 0.0 }).is_err());
    }

    #[test]
    fn gram_cross_small_cases() {
        let k = KernelSpec::matern(MaternNu::Half, 1.0).unwrap();
        let g = k.gram_cross(&[0.4], &[0.4]).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert_eq!(g[(0, 0)], 1.0);
        let g = k.gram_cross(&[0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert_relative_eq!(g[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert!(k.gram_cross(&[], &[0.0]).is_err());
    }

    #[test]
    fn gram_cross_is_entrywise_eval() {
        let k = KernelSpec::eigen_expansion_default();
        let grid = uniform_grid(0.0, 1.0, 10).unwrap();
        let g = k.gram_cross(&grid, &grid).unwrap();
        for p in 0..10 {
            for q in 0..10 {
                assert_eq!(g[(p, q)], k.eval(grid[p], grid[q]).unwrap());
            }
        }
        assert_eq!(g, g.transpose());
    }

    #[test]
    fn analytic_eigenpairs_of_cosine_kernel() {
        let k = KernelSpec::eigen_expansion_default();
        let eig = mercer_eigensystem(&k, 50, 3).unwrap();
        assert_eq!(eig.source, EigenSource::Analytic);
        assert_relative_eq!(eig.eigenvalues[0], 1.0);
        assert_relative_eq!(eig.eigenvalues[1], 0.25);
        assert_relative_eq!(eig.eigenvalues[2], 1.0 / 9.0, epsilon = 1e-15);
        for (j, v) in eig.eigenfunctions.iter().enumerate() {
            for (g, &t) in eig.grid.iter().enumerate() {
                let expect = SQRT_2 * (PI * (j + 1) as f64 * t).cos();
                assert_relative_eq!(v[g], expect, epsilon = 1e-12);
            }
        }
        assert!(eig.orthonormality_error() < 1e-6);
    }

    #[test]
    fn gaussian_leading_eigenfunction_has_unit_norm() {
        let k = KernelSpec::new(KernelKind::Gaussian { rho: 1.0 }).unwrap();
        let eig = mercer_eigensystem(&k, 101, 1).unwrap();
        assert_eq!(eig.count(), 1);
        let norm: f64 = eig
            .quad_weights
            .iter()
            .zip(&eig.eigenfunctions[0])
            .map(|(w, v)| w * v * v)
            .sum();
        assert_relative_eq!(norm, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn nystrom_grid_refinement_agrees() {
        let k = KernelSpec::matern(MaternNu::Half, 1.0).unwrap();
        let coarse = mercer_eigensystem(&k, 256, 5).unwrap();
        let fine = mercer_eigensystem(&k, 512, 5).unwrap();
        for j in 0..5 {
            let rel = (coarse.eigenvalues[j] - fine.eigenvalues[j]).abs() / fine.eigenvalues[j];
            assert!(rel < 1e-3, "eigenvalue {j}: relative gap {rel}");
        }
    }

    #[test]
    fn nystrom_matches_analytic_for_cosine_kernel() {
        let k = KernelSpec::eigen_expansion_default();
        let analytic = mercer_eigensystem(&k, 256, 5).unwrap();
        let grid = uniform_grid(0.0, 1.0, 256).unwrap();
        let numeric = nystrom(&k, &grid, quad_weights(&grid).unwrap(), 5).unwrap();
        for j in 0..5 {
            let rel = (analytic.eigenvalues[j] - numeric.eigenvalues[j]).abs() / analytic.eigenvalues[j];
            assert!(rel < 1e-3, "eigenvalue {j}: relative gap {rel}");
        }
        assert!(numeric.orthonormality_error() < 1e-6);
    }

    #[test]
    fn eigen_count_flags_exhaustion() {
        let k = KernelSpec::new(KernelKind::EigenExpansion { decay: 2.0, truncation: 4 }).unwrap();
        let eig = mercer_eigensystem(&k, 50, 10).unwrap();
        assert_eq!(eig.count(), 4);
        assert!(!eig.is_complete());

        // rank-deficient numerical case: a 3-term expansion seen through Nyström
        let grid = uniform_grid(0.0, 1.0, 40).unwrap();
        let k3 = KernelSpec::new(KernelKind::EigenExpansion { decay: 2.0, truncation: 3 }).unwrap();
        let eig = nystrom(&k3, &grid, quad_weights(&grid).unwrap(), 8).unwrap();
        assert_eq!(eig.count(), 3);
        assert!(!eig.is_complete());
    }

    #[test]
    fn mercer_argument_errors() {
        let k = KernelSpec::eigen_expansion_default();
        assert!(mercer_eigensystem(&k, 3, 5).is_err());
        assert!(mercer_eigensystem(&k, 10, 0).is_err());
    }

    #[test]
    fn mercer_reconstruction_error_is_monotone() {
        for k in [
            KernelSpec::matern(MaternNu::ThreeHalves, 1.0).unwrap(),
            KernelSpec::eigen_expansion_default(),
        ] {
            let eig = mercer_eigensystem(&k, 60, 30).unwrap();
            let gram = k.gram_cross(&eig.grid, &eig.grid).unwrap();
            let mut prev = f64::INFINITY;
            for m in 0..=eig.count() {
                let err = (&gram - eig.reconstruct(m)).norm();
                assert!(err <= prev + 1e-10, "{:?}: M={m} err {err} > {prev}", k.kind);
                prev = err;
            }
        }
    }

    #[test]
    fn all_kernels_symmetric_on_samples() {
        let pts = [0.0, 0.13, 0.5, 0.77, 1.0];
        for k in all_kernels() {
            for &s in &pts {
                for &t in &pts {
                    assert_eq!(k.eval(s, t).unwrap(), k.eval(t, s).unwrap(), "{:?}", k.kind);
                }
            }
        }
    }

    #[test]
    fn kernel_spec_serde_round_trip() {
        let k = KernelSpec::matern(MaternNu::ThreeHalves, 1.0).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert!(s.contains("\"3/2\""));
        let back: KernelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
    }
}
