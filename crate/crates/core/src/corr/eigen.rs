//! Eigenvalues of dense symmetric matrices.
//!
//! Householder reduction to tridiagonal form followed by the implicit QL
//! iteration with Wilkinson-style shifts. Only eigenvalues are produced; the
//! crate needs spectra for feasibility margins, never eigenvectors.

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_QL_ITERS: usize = 64;

/// All eigenvalues of the symmetric matrix `mat`, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(mat: &Matrix<T>) -> Result<Vec<T>> {
    if !mat.is_square() {
        return Err(Error::Dimension {
            expected: mat.rows(),
            got: mat.cols(),
        });
    }
    if !mat.is_finite() {
        return Err(Error::NonFinite("matrix passed to eigensolver".into()));
    }
    let n = mat.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = mat.clone();
    a.symmetrize();
    let (mut d, mut e) = tridiagonalize(&mut a);
    ql_implicit(&mut d, &mut e)?;
    d.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(d)
}

pub fn min_eigenvalue<T: Scalar>(mat: &Matrix<T>) -> Result<T> {
    Ok(symmetric_eigenvalues(mat)?
        .first()
        .copied()
        .unwrap_or_else(T::zero))
}

pub fn max_eigenvalue<T: Scalar>(mat: &Matrix<T>) -> Result<T> {
    Ok(symmetric_eigenvalues(mat)?
        .last()
        .copied()
        .unwrap_or_else(T::zero))
}

/// Returns (diagonal, subdiagonal) with `e[i]` coupling rows `i - 1` and `i`.
fn tridiagonalize<T: Scalar>(a: &mut Matrix<T>) -> (Vec<T>, Vec<T>) {
    let n = a.rows();
    let zero = T::zero();
    let mut d = vec![zero; n];
    let mut e = vec![zero; n];
    for i in (1..n).rev() {
        let l = i - 1;
        if l > 0 {
            let scale: T = (0..=l).map(|k| a[(i, k)].abs()).sum();
            if scale == zero {
                e[i] = a[(i, l)];
            } else {
                let mut h = zero;
                for k in 0..=l {
                    a[(i, k)] = a[(i, k)] / scale;
                    h = h + a[(i, k)] * a[(i, k)];
                }
                let f = a[(i, l)];
                let g = if f >= zero { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h = h - f * g;
                a[(i, l)] = f - g;
                let mut f = zero;
                for j in 0..=l {
                    let mut g = zero;
                    for k in 0..=j {
                        g = g + a[(j, k)] * a[(i, k)];
                    }
                    for k in (j + 1)..=l {
                        g = g + a[(k, j)] * a[(i, k)];
                    }
                    e[j] = g / h;
                    f = f + e[j] * a[(i, j)];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[(j, k)] = a[(j, k)] - (f * e[k] + g * a[(i, k)]);
                    }
                }
            }
        } else {
            e[i] = a[(i, l)];
        }
    }
    for (i, di) in d.iter_mut().enumerate() {
        *di = a[(i, i)];
    }
    (d, e)
}

fn ql_implicit<T: Scalar>(d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= T::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_ITERS {
                return Err(Error::Domain(
                    "symmetric eigensolver failed to converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(one);
            g = d[m] - d[l] + e[l] / (g + r.abs().copysign(g));
            let (mut s, mut c, mut p) = (one, one, zero);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == zero {
                    d[i + 1] = d[i + 1] - p;
                    e[m] = zero;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] = d[l] - p;
            e[l] = g;
            e[m] = zero;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cyclic Jacobi rotations; slow but independent of the QL path.
    fn jacobi_eigenvalues(mat: &Matrix<f64>) -> Vec<f64> {
        let n = mat.rows();
        let mut a = mat.clone();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev = a.diag();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }

    #[test]
    fn diagonal_matrix_spectrum() {
        let m = Matrix::from_diag(&[3.0, -1.0, 2.0]);
        assert_eq!(symmetric_eigenvalues(&m).unwrap(), vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn agrees_with_jacobi_on_dense_matrix() {
        let n = 12;
        let m = Matrix::from_fn(n, n, |i, j| {
            let (a, b) = (i.min(j) as f64, i.max(j) as f64);
            ((a + 1.0) * 0.37 + b * 0.11).sin()
        });
        let ql = symmetric_eigenvalues(&m).unwrap();
        let jac = jacobi_eigenvalues(&m);
        for (x, y) in ql.iter().zip(&jac) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn single_precision_path() {
        let m = Matrix::<f32>::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let ev = symmetric_eigenvalues(&m).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-5 && (ev[1] - 3.0).abs() < 1e-5);
    }
}
