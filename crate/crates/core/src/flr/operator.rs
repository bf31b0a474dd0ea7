//! Per-grid kernel operators, memoized across fits.
//!
//! Simulated designs put every curve on one grid, so the kernel matrix on
//! that grid and its weighted square root are reused by thousands of fits.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::fda::quad_weights;
use crate::kernels::KernelSpec;
use crate::linalg::psd_sqrt;

const CACHE_LIMIT: usize = 256;

/// Kernel quantities on one design grid.
pub(crate) struct GridOperator {
    pub weights: Vec<f64>,
    /// `A = W K W`, so that `Σ_ij = x_iᵀ A x_j` for curves on this grid.
    pub a: DMatrix<f64>,
    /// Symmetric square root of `A`.
    pub root: DMatrix<f64>,
}

type GramKey = (String, Vec<u64>, Vec<u64>);

fn bits(grid: &[f64]) -> Vec<u64> {
    grid.iter().map(|t| t.to_bits()).collect()
}

fn gram_cache() -> &'static Mutex<HashMap<GramKey, Arc<DMatrix<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<GramKey, Arc<DMatrix<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn operator_cache() -> &'static Mutex<HashMap<(String, Vec<u64>), Arc<GridOperator>>> {
    static CACHE: OnceLock<Mutex<HashMap<(String, Vec<u64>), Arc<GridOperator>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn kernel_key(kernel: &KernelSpec) -> String {
    format!("{kernel:?}")
}

/// `K(a[p], b[q])`, memoized. Inputs are assumed to lie in the kernel domain.
pub(crate) fn cached_gram(kernel: &KernelSpec, a: &[f64], b: &[f64]) -> Arc<DMatrix<f64>> {
    let key = (kernel_key(kernel), bits(a), bits(b));
    if let Some(hit) = gram_cache().lock().unwrap().get(&key) {
        return hit.clone();
    }
    let g = Arc::new(kernel.gram_cross_unchecked(a, b));
    let mut cache = gram_cache().lock().unwrap();
    if cache.len() >= CACHE_LIMIT {
        cache.clear();
    }
    cache.insert(key, g.clone());
    g
}

pub(crate) fn grid_operator(kernel: &KernelSpec, grid: &[f64]) -> Arc<GridOperator> {
    let key = (kernel_key(kernel), bits(grid));
    if let Some(hit) = operator_cache().lock().unwrap().get(&key) {
        return hit.clone();
    }
    let weights = quad_weights(grid).expect("operator grids have at least 2 points");
    let k = cached_gram(kernel, grid, grid);
    let d = grid.len();
    let a = DMatrix::from_fn(d, d, |p, q| weights[p] * k[(p, q)] * weights[q]);
    let root = psd_sqrt(&a);
    let op = Arc::new(GridOperator { weights, a, root });
    let mut cache = operator_cache().lock().unwrap();
    if cache.len() >= CACHE_LIMIT {
        cache.clear();
    }
    cache.insert(key, op.clone());
    op
}
