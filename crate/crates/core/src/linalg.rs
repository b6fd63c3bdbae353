//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Default relative tolerance for definiteness checks.
pub const PSD_TOL: f64 = 1e-9;
/// Default relative tolerance on singular values for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = symmetrize(m);
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Relative asymmetry `max|M - M'| / max(1, max|M|)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let d = (m - m.transpose()).amax();
    d / m.amax().max(1.0)
}

/// Definiteness check of a symmetric matrix relative to its largest
/// eigenvalue magnitude. Returns the smallest eigenvalue on failure.
pub fn check_definite(m: &DMatrix<f64>, strict: bool, tol: f64) -> Result<(), f64> {
    let ev = sym_eigenvalues(m);
    let scale = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let min = ev.first().copied().unwrap_or(0.0);
    let ok = if strict {
        // all-zero matrices have scale 0 and must fail strict positivity
        min > tol * scale && min > 0.0
    } else {
        min >= -tol * scale
    };
    if ok {
        Ok(())
    } else {
        Err(min)
    }
}

/// Numerical rank via singular values above `tol` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0_f64, |acc, v| acc.max(*v));
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > tol * max).count()
}

/// Lower-triangular `L` with `L L' = M` for a symmetric PSD matrix.
///
/// Uses Cholesky when it succeeds and falls back to the eigen factor
/// `V sqrt(max(D, 0))` for singular covariances such as a point-mass
/// initial state.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(sym);
    let sqrt_d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()),
    );
    eig.eigenvectors * DMatrix::from_diagonal(&sqrt_d)
}

/// `max|a - b| / max(1, max|a|, max|b|)`.
pub fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = a.amax().max(b.amax()).max(1.0);
    (a - b).amax() / scale
}
