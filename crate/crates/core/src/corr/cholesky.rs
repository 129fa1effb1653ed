use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pivots below `PIVOT_FLOOR * scale` are treated as exact zeros.
const PIVOT_FLOOR: f64 = 1e-10;
/// Pivots below `-INDEFINITE_TOL * scale` reject the input as indefinite.
const INDEFINITE_TOL: f64 = 1e-8;
/// Rows factored together so earlier rows are streamed once per block.
const BLOCK: usize = 64;

/// Lower-triangular factor `L` with `L Lᵀ` equal to the factored matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CholeskyFactor<T> {
    lower: Matrix<T>,
    zeroed: Vec<usize>,
    min_pivot: T,
}

impl<T: Scalar> CholeskyFactor<T> {
    #[inline]
    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Columns whose pivot fell below the floor and were zeroed.
    pub fn zeroed_pivots(&self) -> &[usize] {
        &self.zeroed
    }

    /// Smallest pivot (squared diagonal of `L`) seen during the factorization.
    pub fn min_pivot(&self) -> T {
        self.min_pivot
    }

    pub fn is_full_rank(&self) -> bool {
        self.zeroed.is_empty()
    }

    /// `L x`.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.dim())
            .map(|i| dot(&self.lower.row(i)[..=i], &x[..=i]))
            .collect()
    }

    /// `L x` into a caller-provided buffer.
    pub fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim()) {
            *o = dot(&self.lower.row(i)[..=i], &x[..=i]);
        }
    }

    /// Solves `L y = b` in place. Requires a full-rank factor.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        for i in 0..self.dim() {
            let row = self.lower.row(i);
            let s = dot(&row[..i], &b[..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Solves `Lᵀ x = b` in place. Requires a full-rank factor.
    pub fn solve_upper_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s = s - self.lower[(k, i)] * b[k];
            }
            b[i] = s / self.lower[(i, i)];
        }
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&self.lower.row(i)[..=j], &self.lower.row(j)[..=j]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// `L⁻¹` as a dense lower-triangular matrix. Requires a full-rank factor.
    pub fn inverse_lower(&self) -> Matrix<T> {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = T::zero());
            col[j] = T::one();
            for i in j..n {
                let row = self.lower.row(i);
                let s = dot(&row[j..i], &col[j..i]);
                col[i] = (col[i] - s) / row[i];
            }
            for i in j..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Cholesky factorization for symmetric positive semi-definite input.
///
/// Pivots within the floor are zeroed along with their column so rank-deficient
/// inputs still factor exactly; a clearly negative pivot is an error naming its index.
pub fn cholesky<T: Scalar>(mat: &Matrix<T>) -> Result<CholeskyFactor<T>> {
    factor(mat, false)
}

/// Like [`cholesky`] but rejects any pivot at or below the floor as singular.
pub fn cholesky_strict<T: Scalar>(mat: &Matrix<T>) -> Result<CholeskyFactor<T>> {
    factor(mat, true)
}

/// Like [`cholesky`] but retries with a small diagonal jitter when rounding makes a
/// singular PSD input look indefinite.
///
/// Jitter starts at `1e-12` and grows tenfold up to `1e-8`, relative to the largest
/// diagonal entry. The error of the unjittered attempt is returned if all fail.
pub fn cholesky_psd<T: Scalar>(mat: &Matrix<T>) -> Result<CholeskyFactor<T>> {
    let first = match factor(mat, false) {
        Err(e @ Error::Indefinite { .. }) => e,
        other => return other,
    };
    let n = mat.rows();
    let scale = (0..n).map(|i| mat[(i, i)].abs()).fold(T::zero(), T::max);
    let mut rel = 1e-12;
    while rel <= 1e-8 * (1.0 + 1e-9) {
        let eps = T::lit(rel) * scale;
        let mut jittered = mat.clone();
        for i in 0..n {
            jittered[(i, i)] = jittered[(i, i)] + eps;
        }
        if let Ok(f) = factor(&jittered, false) {
            log::debug!("cholesky needed diagonal jitter {rel:e} (relative)");
            return Ok(f);
        }
        rel *= 10.0;
    }
    Err(first)
}

fn factor<T: Scalar>(mat: &Matrix<T>, strict: bool) -> Result<CholeskyFactor<T>> {
    if !mat.is_square() {
        return Err(Error::Dimension {
            expected: mat.rows(),
            got: mat.cols(),
        });
    }
    if !mat.is_finite() {
        return Err(Error::NonFinite("matrix to factor".into()));
    }
    let n = mat.rows();
    let scale = (0..n)
        .map(|i| mat[(i, i)].abs())
        .fold(T::zero(), T::max)
        .max(T::min_positive_value());
    let floor = T::tol(PIVOT_FLOOR) * scale;
    let neg = T::tol(INDEFINITE_TOL) * scale;

    let mut lower = Matrix::zeros(n, n);
    let mut zeroed = Vec::new();
    let mut min_pivot = T::infinity();
    for i0 in (0..n).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(n);
        for j in 0..i1 {
            for i in i0.max(j)..i1 {
                if i > j {
                    let d = lower[(j, j)];
                    lower[(i, j)] = if d > T::zero() {
                        (mat[(i, j)] - dot(&lower.row(i)[..j], &lower.row(j)[..j])) / d
                    } else {
                        T::zero()
                    };
                    continue;
                }
                let row = lower.row(i);
                let pivot = mat[(i, i)] - dot(&row[..i], &row[..i]);
                min_pivot = min_pivot.min(pivot);
                if pivot < -neg {
                    return Err(Error::Indefinite {
                        index: i,
                        pivot: pivot.as_f64(),
                    });
                }
                if pivot <= floor {
                    if strict {
                        return Err(Error::Singular {
                            index: i,
                            pivot: pivot.as_f64(),
                        });
                    }
                    zeroed.push(i);
                    lower[(i, i)] = T::zero();
                } else {
                    lower[(i, i)] = pivot.sqrt();
                }
            }
        }
    }
    if n == 0 {
        min_pivot = T::zero();
    }
    Ok(CholeskyFactor {
        lower,
        zeroed,
        min_pivot,
    })
}
