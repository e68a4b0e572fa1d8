//! Small dense linear-algebra helpers shared by the solver modules.
//!
//! The oracle module intentionally does not use these; it sticks to raw
//! `nalgebra` operations so that a defect here cannot hide in both routes.

use nalgebra::DMatrix;

/// Relative eigenvalue threshold for definiteness decisions.
pub(crate) const DEFINITENESS_TOL: f64 = 1e-10;

/// Condition-number bound above which a linear solve is not trusted.
pub(crate) const CONDITION_BOUND: f64 = 1e12;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalue range of a symmetric matrix.
pub(crate) struct EigenRange {
    pub min: f64,
    pub max_abs: f64,
}

pub(crate) fn eigen_range(sym: &DMatrix<f64>) -> EigenRange {
    let eigs = sym.clone().symmetric_eigen().eigenvalues;
    let mut min = f64::INFINITY;
    let mut max_abs: f64 = 0.0;
    for &e in eigs.iter() {
        min = min.min(e);
        max_abs = max_abs.max(e.abs());
    }
    EigenRange { min, max_abs }
}

/// Positive definiteness at numerical scale: a symmetric factorization must
/// succeed and the smallest eigenvalue must clear `DEFINITENESS_TOL`
/// relative to `max(1, spectral norm)`.
pub(crate) fn is_positive_definite(sym: &DMatrix<f64>) -> bool {
    if sym.clone().cholesky().is_none() {
        return false;
    }
    let range = eigen_range(sym);
    range.min > DEFINITENESS_TOL * range.max_abs.max(1.0)
}

/// Positive semidefiniteness with the same relative eigenvalue scale.
pub(crate) fn is_positive_semidefinite(sym: &DMatrix<f64>) -> bool {
    let range = eigen_range(sym);
    range.min >= -DEFINITENESS_TOL * range.max_abs.max(1.0)
}

/// Rank from singular values with a relative cutoff.
pub(crate) fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}
