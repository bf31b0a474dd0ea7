use super::BetaEstimate;
use crate::error::{Error, Result};
use crate::kernels::EigenSystem;

/// Squared RKHS norm of `beta_a - beta_b` truncated to the leading `m`
/// eigenpairs: `Σ_{j≤m} ⟨β_a - β_b, v_j⟩² / τ_j`.
///
/// Both slopes are interpolated onto the eigensystem grid when needed.
pub fn truncated_rkhs_distance(
    beta_a: &BetaEstimate,
    beta_b: &BetaEstimate,
    eig: &EigenSystem,
    m: usize,
) -> Result<f64> {
    if m > eig.count() {
        return Err(Error::arg(format!(
            "requested {m} eigenpairs but the eigensystem holds {}",
            eig.count()
        )));
    }
    let a = beta_a.at_grid(&eig.grid);
    let b = beta_b.at_grid(&eig.grid);
    let weighted_diff: Vec<f64> = eig
        .quad_weights
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(w, (x, y))| w * (x - y))
        .collect();
    Ok(eig.eigenfunctions[..m]
        .iter()
        .zip(&eig.eigenvalues)
        .map(|(v, tau)| {
            let score: f64 = weighted_diff.iter().zip(v).map(|(d, v)| d * v).sum();
            score * score / tau
        })
        .sum())
}
