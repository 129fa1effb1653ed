//! Feature correlation matrices: validation, generators, and the dense
//! factorization primitives the rest of the crate is built on.

mod cholesky;
mod eigen;
mod matrix;

pub use cholesky::{cholesky, cholesky_psd, cholesky_strict, CholeskyFactor};
pub use eigen::{max_eigenvalue, min_eigenvalue, symmetric_eigenvalues};
pub use matrix::{dot, Matrix};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Symmetry tolerance for accepted correlation matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Per-dimension eigenvalue floor: `λ_min ≥ -PSD_TOL * p` is accepted as PSD.
pub const PSD_TOL: f64 = 1e-8;
/// Ridge added by [`RidgePolicy::Auto`].
pub const RIDGE_EPS: f64 = 1e-6;
/// Smallest Cholesky pivot tolerated before an inverse is called singular.
pub const SINGULAR_PIVOT: f64 = 1e-10;

/// Symmetric, unit-diagonal, positive semi-definite `p × p` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix<T> {
    inner: Matrix<T>,
}

impl<T: Scalar> CorrelationMatrix<T> {
    /// Validates `mat` against every correlation-matrix invariant.
    pub fn new(mat: Matrix<T>) -> Result<Self> {
        let lambda_min = Self::validate_structure(&mat)?;
        let p = mat.rows();
        let floor = -T::tol(PSD_TOL) * T::lit(p as f64);
        if lambda_min < floor {
            return Err(Error::InvalidCorrelation(format!(
                "not positive semi-definite: smallest eigenvalue {lambda_min:e}"
            )));
        }
        Ok(Self { inner: mat })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    fn validate_structure(mat: &Matrix<T>) -> Result<T> {
        if !mat.is_square() || mat.rows() == 0 {
            return Err(Error::InvalidCorrelation(format!(
                "expected a non-empty square matrix, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        if !mat.is_finite() {
            return Err(Error::NonFinite("correlation matrix".into()));
        }
        if !mat.is_symmetric(T::tol(SYMMETRY_TOL)) {
            return Err(Error::InvalidCorrelation("not symmetric".into()));
        }
        let p = mat.rows();
        if let Some(j) = (0..p).find(|&j| mat[(j, j)] != T::one()) {
            return Err(Error::InvalidCorrelation(format!(
                "diagonal entry {j} is {} (must be exactly 1)",
                mat[(j, j)]
            )));
        }
        let bound = T::one() + T::tol(SYMMETRY_TOL);
        if mat.as_slice().iter().any(|x| x.abs() > bound) {
            return Err(Error::InvalidCorrelation(
                "entry with absolute value above 1".into(),
            ));
        }
        min_eigenvalue(mat)
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.inner.rows()
    }

    #[inline]
    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.inner
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.inner[(i, j)]
    }

    pub fn min_eigenvalue(&self) -> Result<T> {
        min_eigenvalue(&self.inner)
    }

    /// Correlation matrix restricted to `idx`.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        Self {
            inner: self.inner.principal_submatrix(idx),
        }
    }

    pub fn cast<U: Scalar>(&self) -> CorrelationMatrix<U> {
        CorrelationMatrix {
            inner: self.inner.cast(),
        }
    }
}

/// `σ_ij = ρ` off the diagonal, `1` on it.
pub fn make_compound_symmetry<T: Scalar>(p: usize, rho: T) -> Result<CorrelationMatrix<T>> {
    if p == 0 {
        return Err(Error::Domain("p must be at least 1".into()));
    }
    if !(rho >= T::zero() && rho < T::one()) {
        return Err(Error::Domain(format!(
            "compound symmetry needs 0 <= rho < 1, got {rho}"
        )));
    }
    Ok(CorrelationMatrix {
        inner: Matrix::from_fn(p, p, |i, j| if i == j { T::one() } else { rho }),
    })
}

/// `σ_ij = ρ^|i-j|`.
pub fn make_ar1<T: Scalar>(p: usize, rho: T) -> Result<CorrelationMatrix<T>> {
    if p == 0 {
        return Err(Error::Domain("p must be at least 1".into()));
    }
    if !(rho.abs() < T::one()) {
        return Err(Error::Domain(format!("AR(1) needs |rho| < 1, got {rho}")));
    }
    Ok(CorrelationMatrix {
        inner: Matrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32)),
    })
}

/// Regularization applied when a correlation matrix is numerically singular.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RidgePolicy {
    /// Fail with [`Error::Singular`].
    #[default]
    Never,
    /// Retry once with `Σ + RIDGE_EPS·I`.
    Auto,
}

/// Inverse of a symmetric positive definite matrix with diagnostics.
#[derive(Clone, Debug)]
pub struct SpdInverse<T> {
    pub inverse: Matrix<T>,
    /// Ridge actually added to the diagonal, if any.
    pub ridge: Option<T>,
    pub min_pivot: T,
}

/// `Σ⁻¹` for a positive definite correlation matrix; singular input is an error.
pub fn inverse_spd<T: Scalar>(sigma: &CorrelationMatrix<T>) -> Result<Matrix<T>> {
    Ok(inverse_spd_with(sigma.as_matrix(), RidgePolicy::Never)?.inverse)
}

/// `A⁻¹` through its Cholesky factor, optionally ridge-regularized.
pub fn inverse_spd_with<T: Scalar>(mat: &Matrix<T>, policy: RidgePolicy) -> Result<SpdInverse<T>> {
    let threshold = T::tol(SINGULAR_PIVOT);
    let first = cholesky(mat)?;
    if first.min_pivot() >= threshold && first.is_full_rank() {
        return Ok(SpdInverse {
            inverse: inverse_from_factor(&first),
            ridge: None,
            min_pivot: first.min_pivot(),
        });
    }
    let index = first.zeroed_pivots().first().copied().unwrap_or(0);
    match policy {
        RidgePolicy::Never => Err(Error::Singular {
            index,
            pivot: first.min_pivot().as_f64(),
        }),
        RidgePolicy::Auto => {
            let eps = T::lit(RIDGE_EPS);
            let mut ridged = mat.clone();
            for i in 0..ridged.rows() {
                ridged[(i, i)] = ridged[(i, i)] + eps;
            }
            let factor = cholesky_strict(&ridged)?;
            log::warn!(
                "matrix singular to working precision (min pivot {:e}); added ridge {eps:e}",
                first.min_pivot().as_f64()
            );
            Ok(SpdInverse {
                inverse: inverse_from_factor(&factor),
                ridge: Some(eps),
                min_pivot: factor.min_pivot(),
            })
        }
    }
}

fn inverse_from_factor<T: Scalar>(factor: &CholeskyFactor<T>) -> Matrix<T> {
    // A⁻¹ = L⁻ᵀ L⁻¹; row i of L⁻ᵀ is column i of L⁻¹
    let linv_t = factor.inverse_lower().transpose();
    let n = linv_t.rows();
    let mut inv = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = dot(&linv_t.row(i)[i..], &linv_t.row(j)[i..]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    inv
}
