//! Discretely observed curves, trapezoid quadrature and the double-quadrature
//! Gram matrix `Σ_ij = ∫∫ X_i(s) K(s,t) X_j(t) ds dt`.

pub mod io;

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// One functional observation: strictly ascending design points and the
/// sampled values. The grid is reference counted so that curves observed on
/// the same design share storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    grid: Arc<[f64]>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: impl Into<Arc<[f64]>>, values: Vec<f64>) -> Result<Self> {
        let grid = grid.into();
        if grid.len() < 2 {
            return Err(Error::arg(format!("a curve needs at least 2 design points, got {}", grid.len())));
        }
        if grid.len() != values.len() {
            return Err(Error::arg(format!(
                "grid has {} points but {} values were given",
                grid.len(),
                values.len()
            )));
        }
        if let Some(w) = grid.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::arg(format!("grid is not strictly ascending near {} -> {}", w[0], w[1])));
        }
        if grid.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::arg("curve contains non-finite entries"));
        }
        Ok(Curve { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn shared_grid(&self) -> &Arc<[f64]> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Trapezoid weights times values: the vector `w ∘ x` that turns integrals
    /// against this curve into dot products.
    pub fn weighted_values(&self) -> Vec<f64> {
        let w = quad_weights(&self.grid).expect("curve grids have at least 2 points");
        w.iter().zip(&self.values).map(|(w, x)| w * x).collect()
    }

    pub fn same_grid(&self, other: &Curve) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid[..] == other.grid[..]
    }
}

/// Curves and responses belonging to one task (target or source).
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task_id: String,
    pub curves: Vec<Curve>,
    pub responses: Vec<f64>,
}

impl TaskDataset {
    pub fn new(task_id: impl Into<String>, curves: Vec<Curve>, responses: Vec<f64>) -> Result<Self> {
        let task_id = task_id.into();
        if curves.is_empty() {
            return Err(Error::arg(format!("task {task_id} has no curves")));
        }
        if curves.len() != responses.len() {
            return Err(Error::arg(format!(
                "task {task_id}: {} curves but {} responses",
                curves.len(),
                responses.len()
            )));
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(Error::arg(format!("task {task_id} has non-finite responses")));
        }
        Ok(TaskDataset { task_id, curves, responses })
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// Sub-dataset with the given row indices, in that order.
    pub fn select(&self, idx: &[usize]) -> TaskDataset {
        TaskDataset {
            task_id: self.task_id.clone(),
            curves: idx.iter().map(|&i| self.curves[i].clone()).collect(),
            responses: idx.iter().map(|&i| self.responses[i]).collect(),
        }
    }

    /// The grid shared by every curve, if there is one.
    pub fn common_grid(&self) -> Option<&Arc<[f64]>> {
        let first = self.curves.first()?;
        self.curves
            .iter()
            .all(|c| c.same_grid(first))
            .then(|| first.shared_grid())
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(lo < hi) {
        return Err(Error::arg(format!("uniform grid needs n >= 2 and lo < hi, got n={n}, [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut g: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    g[n - 1] = hi;
    Ok(g)
}

/// Trapezoid weights for an ascending grid; they sum to `t_d - t_1`.
pub fn quad_weights(grid: &[f64]) -> Result<Vec<f64>> {
    let d = grid.len();
    if d < 2 {
        return Err(Error::arg(format!("quadrature needs at least 2 points, got {d}")));
    }
    let mut w = vec![0.0; d];
    w[0] = (grid[1] - grid[0]) / 2.0;
    w[d - 1] = (grid[d - 1] - grid[d - 2]) / 2.0;
    for m in 1..d - 1 {
        w[m] = (grid[m + 1] - grid[m - 1]) / 2.0;
    }
    Ok(w)
}

/// `Σ w_m a_m b_m`.
pub fn l2_inner_on_grid(a: &[f64], b: &[f64], weights: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != weights.len() {
        return Err(Error::arg(format!(
            "length mismatch in weighted inner product: {}, {}, {}",
            a.len(),
            b.len(),
            weights.len()
        )));
    }
    Ok(weights.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * x * y).sum())
}

/// Quadrature version of `∫ X(s) K(s, t) ds`.
pub fn kernel_section_inner(curve: &Curve, kernel: &KernelSpec, t: f64) -> Result<f64> {
    kernel.domain.check(t)?;
    check_curve_domain(curve, kernel)?;
    let wx = curve.weighted_values();
    Ok(curve
        .grid()
        .iter()
        .zip(&wx)
        .map(|(&s, &v)| v * kernel.eval_unchecked(s, t))
        .sum())
}

pub(crate) fn check_curve_domain(curve: &Curve, kernel: &KernelSpec) -> Result<()> {
    let g = curve.grid();
    kernel.domain.check(g[0])?;
    kernel.domain.check(g[g.len() - 1])
}

/// Linear interpolation of `(grid, values)` at `t`, clamped to the end values.
pub fn interpolate(grid: &[f64], values: &[f64], t: f64) -> f64 {
    let n = grid.len();
    if t <= grid[0] {
        return values[0];
    }
    if t >= grid[n - 1] {
        return values[n - 1];
    }
    let hi = grid.partition_point(|&g| g < t);
    if grid[hi] == t {
        return values[hi];
    }
    let lo = hi - 1;
    let frac = (t - grid[lo]) / (grid[hi] - grid[lo]);
    values[lo] + frac * (values[hi] - values[lo])
}

/// Curves grouped by identical design grids. Rows of `weighted` are `w ∘ x`
/// for the curves listed in `rows` (indices into the concatenated input).
pub(crate) struct GridGroup {
    pub grid: Arc<[f64]>,
    pub rows: Vec<usize>,
    pub weighted: DMatrix<f64>,
}

pub(crate) fn group_by_grid<'a>(curves: impl IntoIterator<Item = &'a Curve>) -> Vec<GridGroup> {
    let mut groups: Vec<(Arc<[f64]>, Vec<usize>, Vec<Vec<f64>>)> = Vec::new();
    for (i, c) in curves.into_iter().enumerate() {
        let wx = c.weighted_values();
        match groups
            .iter_mut()
            .find(|(g, _, _)| Arc::ptr_eq(g, c.shared_grid()) || g[..] == c.grid()[..])
        {
            Some((_, rows, data)) => {
                rows.push(i);
                data.push(wx);
            }
            None => groups.push((c.shared_grid().clone(), vec![i], vec![wx])),
        }
    }
    groups
        .into_iter()
        .map(|(grid, rows, data)| {
            let d = grid.len();
            let weighted = DMatrix::from_fn(rows.len(), d, |r, m| data[r][m]);
            GridGroup { grid, rows, weighted }
        })
        .collect()
}

/// Double-quadrature Gram matrix over the concatenation of all task curves.
pub fn rkhs_gram(tasks: &[TaskDataset], kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let curves: Vec<&Curve> = tasks.iter().flat_map(|t| t.curves.iter()).collect();
    if curves.is_empty() {
        return Err(Error::arg("rkhs_gram needs at least one curve"));
    }
    gram_of_curves(curves.iter().copied(), kernel)
}

pub(crate) fn gram_of_curves<'a>(
    curves: impl IntoIterator<Item = &'a Curve> + Clone,
    kernel: &KernelSpec,
) -> Result<DMatrix<f64>> {
    for c in curves.clone() {
        check_curve_domain(c, kernel)?;
    }
    let groups = group_by_grid(curves);
    let n: usize = groups.iter().map(|g| g.rows.len()).sum();
    let mut sigma = DMatrix::zeros(n, n);
    for (a, ga) in groups.iter().enumerate() {
        for gb in groups.iter().skip(a) {
            let k = kernel.gram_cross_unchecked(&ga.grid, &gb.grid);
            let block = &ga.weighted * k * gb.weighted.transpose();
            for (p, &i) in ga.rows.iter().enumerate() {
                for (q, &j) in gb.rows.iter().enumerate() {
                    sigma[(i, j)] = block[(p, q)];
                    sigma[(j, i)] = block[(p, q)];
                }
            }
        }
    }
    // exact symmetry within a diagonal block
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(sigma)
}
