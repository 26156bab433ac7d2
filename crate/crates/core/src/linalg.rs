//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative tolerance used for symmetry and semidefiniteness checks.
pub(crate) fn rel_tol<T: Scalar>() -> T {
    T::eps().sqrt() * T::lit(16.0)
}

fn scale_of<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::one(), |acc, v| acc.max(v.abs()))
}

pub fn is_symmetric<T: Scalar>(m: &DMatrix<T>) -> bool {
    if !m.is_square() {
        return false;
    }
    let tol = rel_tol::<T>() * scale_of(m);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub(crate) fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    let mut v: Vec<T> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    v
}

pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).first().copied().unwrap_or_else(T::zero)
}

/// Checks that `m` is symmetric with no eigenvalue below `-tol·scale`.
pub fn check_psd<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if !is_symmetric(m) {
        return Err(Error::NotPsd(format!("{what} is not symmetric")));
    }
    let lo = min_eigenvalue(m);
    if lo < -(rel_tol::<T>() * scale_of(m)) {
        return Err(Error::NotPsd(format!(
            "{what} has negative eigenvalue {}",
            lo.as_f64()
        )));
    }
    Ok(())
}

/// Returns `L` with `L Lᵀ = m` for a symmetric positive semidefinite `m`.
///
/// Uses the eigendecomposition so singular (even zero) matrices are fine.
pub fn psd_factor<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_psd(m, "covariance")?;
    let eig = symmetrize(m).symmetric_eigen();
    let mut l = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(T::zero()).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    Ok(l)
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius<T: Scalar>(a: &DMatrix<T>) -> T {
    if a.nrows() == 0 {
        return T::zero();
    }
    a.complex_eigenvalues()
        .iter()
        .fold(T::zero(), |acc, z| acc.max((z.re * z.re + z.im * z.im).sqrt()))
}

/// Largest singular value.
pub fn op_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let gram = m.transpose() * m;
    sym_eigenvalues(&gram)
        .last()
        .copied()
        .unwrap_or_else(T::zero)
        .max(T::zero())
        .sqrt()
}

/// Solves the Stein equation `R = A R Aᵀ + Q` by vectorisation.
pub fn solve_stein<T: Scalar>(a: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>> {
    let p = a.nrows();
    let kron = a.kronecker(a);
    let lhs = DMatrix::<T>::identity(p * p, p * p) - kron;
    let rhs = DVector::from_iterator(p * p, q.iter().copied());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter("Stein equation is singular".into()))?;
    let r = DMatrix::from_iterator(p, p, sol.iter().copied());
    Ok(symmetrize(&r))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn sym_pinv<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = symmetrize(m).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let cut = top * rel_tol::<T>();
    let p = m.nrows();
    let mut out = DMatrix::zeros(p, p);
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut {
            let v = eig.eigenvectors.column(j);
            out += v * v.transpose() * (T::one() / lam);
        }
    }
    out
}

/// Inverse of a symmetric positive definite matrix; singular input reports
/// the eigenvectors spanning the degenerate directions.
pub fn spd_inverse<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_psd(m, "matrix")?;
    let eig = symmetrize(m).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let cut = top.max(T::one()) * rel_tol::<T>();
    let degenerate: Vec<Vec<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &lam)| lam <= cut)
        .map(|(j, _)| eig.eigenvectors.column(j).iter().map(|v| v.as_f64()).collect())
        .collect();
    if !degenerate.is_empty() {
        return Err(Error::Singular { directions: degenerate });
    }
    Ok(sym_pinv(m))
}

pub(crate) fn dims_match<T: Scalar>(m: &DMatrix<T>, p: usize, what: &str) -> Result<()> {
    if m.nrows() != p || m.ncols() != p {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {p}x{p}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stein_scalar_matches_closed_form() {
        let a = DMatrix::from_element(1, 1, 0.5f64);
        let q = DMatrix::from_element(1, 1, 0.75f64);
        let r = solve_stein(&a, &q).unwrap();
        assert_relative_eq!(r[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_of_rotation_block() {
        // eigenvalues 0.6 ± 0.8i scaled by 0.5 -> modulus 0.5
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -0.4, 0.4, 0.3f64]);
        assert_relative_eq!(spectral_radius(&a), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn psd_factor_handles_zero_and_rejects_indefinite() {
        let z = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(psd_factor(&z).unwrap(), DMatrix::zeros(2, 2));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0f64]);
        assert!(matches!(psd_factor(&bad), Err(Error::NotPsd(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0f64]);
        assert!(matches!(check_psd(&asym, "x"), Err(Error::NotPsd(_))));
    }

    #[test]
    fn singular_inverse_names_direction() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0f64]);
        match spd_inverse(&m) {
            Err(Error::Singular { directions }) => {
                assert_eq!(directions.len(), 1);
                let d = &directions[0];
                assert_relative_eq!((d[0] + d[1]).abs(), 0.0, epsilon = 1e-9);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn op_norm_diag() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0f32]);
        assert_relative_eq!(op_norm(&m), 4.0, epsilon = 1e-5);
    }
}
