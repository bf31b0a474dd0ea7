//! Small dense linear-algebra helpers shared by the fitting and sampling code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in nonincreasing order.
/// Eigenvectors are the columns of the returned matrix, in the same order.
pub fn sym_eigen_desc(mat: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = mat.nrows();
    let sym = symmetrize(mat);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(mat: &DMatrix<f64>) -> DMatrix<f64> {
    (mat + mat.transpose()) * 0.5
}

/// Cholesky factorization that adds `start * scale` to the diagonal on failure,
/// growing the jitter tenfold until it exceeds `max * scale`.
///
/// Returns the factor and the jitter that was finally applied (0 when none was needed).
pub fn cholesky_with_jitter(
    mat: &DMatrix<f64>,
    scale: f64,
    start: f64,
    max: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(mat.clone()) {
        return Ok((chol, 0.0));
    }
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let mut rel = start;
    while rel <= max * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut shifted = mat.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok((chol, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::numerical(format!(
        "Cholesky factorization of a {n}x{n} matrix failed with jitter up to {:.3e} (scale {scale:.3e})",
        max * scale,
        n = mat.nrows()
    )))
}

/// Symmetric PSD square root, clipping negative eigenvalues to zero.
pub fn psd_sqrt(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(mat);
    let d = DVector::from_iterator(vals.len(), vals.iter().map(|&v| v.max(0.0).sqrt()));
    let scaled = &vecs * DMatrix::from_diagonal(&d);
    symmetrize(&(scaled * vecs.transpose()))
}

pub fn trace(mat: &DMatrix<f64>) -> f64 {
    (0..mat.nrows().min(mat.ncols())).map(|i| mat[(i, i)]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals, vec![5.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let (_, jitter) = cholesky_with_jitter(&m, 1.0, 1e-10, 1e-6).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-6);
    }

    #[test]
    fn jitter_gives_up_on_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_with_jitter(&m, 1.0, 1e-10, 1e-6),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = psd_sqrt(&m);
        assert!((&r * &r - &m).norm() < 1e-12);
    }
}
