//! Construction of the coupling matrix `D` for multiple knockoffs.
//!
//! Every returned `D` satisfies `((M+1)/M)·Σ − D ⪰ 0` up to [`FEASIBILITY_TOL`].
//! Diagonal constructions return an [`SVector`]; the group construction
//! returns a block-diagonal [`GroupD`].

use crate::corr::{
    cholesky_strict, inverse_spd, max_eigenvalue, min_eigenvalue, CorrelationMatrix, Matrix,
    PSD_TOL,
};
use crate::error::{Error, Result};
use crate::groups::GroupStructure;
use crate::scalar::Scalar;

/// Lower bound accepted for `λ_min(((M+1)/M)·Σ − D)`.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// `(M + 1) / M`.
#[inline]
pub fn inflation<T: Scalar>(m: usize) -> T {
    T::lit((m as f64 + 1.0) / m as f64)
}

/// Diagonal of `D` together with how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct SVector<T> {
    s: Vec<T>,
    m: usize,
    gamma: T,
    feasibility_margin: T,
    converged: bool,
    sweeps: usize,
}

impl<T: Scalar> SVector<T> {
    /// Wraps an externally supplied `s`, checking non-negativity and feasibility for `m`.
    pub fn from_values(sigma: &CorrelationMatrix<T>, s: Vec<T>, m: usize) -> Result<Self> {
        check_m(m)?;
        if s.len() != sigma.p() {
            return Err(Error::Dimension {
                expected: sigma.p(),
                got: s.len(),
            });
        }
        if s.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
            return Err(Error::Domain(
                "s entries must be finite and non-negative".into(),
            ));
        }
        let margin = feasibility_margin(sigma, &s, m)?;
        if margin < -T::tol(FEASIBILITY_TOL) {
            return Err(Error::Infeasible {
                lambda_min: margin.as_f64(),
            });
        }
        Ok(Self {
            s,
            m,
            gamma: T::one(),
            feasibility_margin: margin,
            converged: true,
            sweeps: 0,
        })
    }

    /// Rebuilds a stored vector (e.g. read back from disk) without re-validating it.
    pub fn from_parts(
        s: Vec<T>,
        m: usize,
        gamma: T,
        feasibility_margin: T,
        converged: bool,
    ) -> Self {
        Self {
            s,
            m,
            gamma,
            feasibility_margin,
            converged,
            sweeps: 0,
        }
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.s
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// `λ_min(((M+1)/M)·Σ − diag(s))` at construction time.
    #[inline]
    pub fn feasibility_margin(&self) -> T {
        self.feasibility_margin
    }

    #[inline]
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Coordinate sweeps spent by the SDP solver (zero for closed forms).
    #[inline]
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn total(&self) -> T {
        self.s.iter().copied().sum()
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Domain(
            "number of knockoff copies M must be >= 1".into(),
        ));
    }
    Ok(())
}

/// `((M+1)/M)·Σ − diag(s)`.
pub fn constraint_matrix<T: Scalar>(sigma: &CorrelationMatrix<T>, s: &[T], m: usize) -> Matrix<T> {
    let mut a = sigma.as_matrix().scale(inflation(m));
    for (j, &sj) in s.iter().enumerate() {
        a[(j, j)] = a[(j, j)] - sj;
    }
    a
}

/// Smallest eigenvalue of the constraint matrix; non-negative means feasible.
pub fn feasibility_margin<T: Scalar>(sigma: &CorrelationMatrix<T>, s: &[T], m: usize) -> Result<T> {
    min_eigenvalue(&constraint_matrix(sigma, s, m))
}

/// Largest `t` with `((M+1)/M)·Σ − t·diag(s) ⪰ 0`, i.e. `c / λ_max(D^½ Σ⁻¹ D^½)`.
fn boundary_scale<T: Scalar>(sigma_inv: &Matrix<T>, s: &[T], c: T) -> Result<T> {
    let root: Vec<T> = s.iter().map(|x| x.sqrt()).collect();
    let n = s.len();
    let k = Matrix::from_fn(n, n, |i, j| root[i] * sigma_inv[(i, j)] * root[j]);
    let lmax = max_eigenvalue(&k)?;
    Ok(if lmax > T::zero() {
        c / lmax
    } else {
        T::infinity()
    })
}

/// `s_j = min(1, ((M+1)/M)·λ_min(Σ))` for every feature.
pub fn solve_equi<T: Scalar>(sigma: &CorrelationMatrix<T>, m: usize) -> Result<SVector<T>> {
    check_m(m)?;
    let p = sigma.p();
    let lambda_min = sigma.min_eigenvalue()?;
    if lambda_min < -T::tol(PSD_TOL) * T::lit(p as f64) {
        return Err(Error::InvalidCorrelation(format!(
            "smallest eigenvalue {lambda_min:e} is negative"
        )));
    }
    let value = (inflation::<T>(m) * lambda_min)
        .max(T::zero())
        .min(T::one());
    finish(sigma, vec![value; p], m, T::one(), true, 0)
}

/// Options for [`solve_sdp`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdpOptions {
    /// Stop a barrier stage once no coordinate moves by more than this.
    pub tol: f64,
    /// Total coordinate sweeps across all barrier stages.
    pub max_iters: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iters: 100,
        }
    }
}

/// Approximately maximizes `Σ s_j` over `s ∈ [0,1]^p` with `((M+1)/M)·Σ − diag(s) ⪰ 0`.
///
/// Coordinate ascent on the log-barrier relaxation
/// `Σ s_j + μ·log det(((M+1)/M)·Σ − diag(s))` with `μ` shrinking tenfold per
/// stage. The exact coordinate optimum is `s_j + 1/(A⁻¹)_jj − μ` for the current
/// constraint matrix `A`; `(A⁻¹)_jj` comes from the running
/// Cholesky factor, which is refactored every sweep and patched by rank-one
/// updates in between. The barrier iterate is finally scaled up to the feasibility
/// boundary. The equicorrelated point is kept whenever it has larger mass.
pub fn solve_sdp<T: Scalar>(
    sigma: &CorrelationMatrix<T>,
    m: usize,
    options: &SdpOptions,
) -> Result<SVector<T>> {
    check_m(m)?;
    if !(options.tol > 0.0) {
        return Err(Error::Domain("SDP tolerance must be positive".into()));
    }
    let p = sigma.p();
    let c: T = inflation(m);
    let sigma_inv = inverse_spd(sigma)?;
    let tol = T::lit(options.tol);
    let mu_floor = T::lit(options.tol * 0.1);

    let mut s = vec![T::zero(); p];
    let mut mu = T::lit(0.1);
    let mut sweeps = 0;
    let mut converged = false;
    let mut u = cholesky_strict(&constraint_matrix(sigma, &s, m))?
        .lower()
        .transpose();
    'stages: loop {
        let mut stage_done = false;
        while sweeps < options.max_iters {
            if let Some(fresh) = constraint_upper(sigma, &s, m) {
                u = fresh;
            }
            sweeps += 1;
            let mut max_change = T::zero();
            let mut y = vec![T::zero(); p];
            for j in 0..p {
                let wjj = inverse_diag(&u, j, &mut y);
                let target = (s[j] + T::one() / wjj - mu).max(T::zero()).min(T::one());
                let delta = target - s[j];
                if delta == T::zero() {
                    continue;
                }
                if !rank_one_diag(&mut u, j, delta, &mut y) {
                    break 'stages;
                }
                s[j] = target;
                max_change = max_change.max(delta.abs());
            }
            if max_change < tol {
                stage_done = true;
                break;
            }
        }
        if !stage_done {
            break;
        }
        if mu <= mu_floor {
            converged = true;
            break;
        }
        mu = (mu * T::lit(0.1)).max(mu_floor);
    }
    if !converged {
        log::info!(
            "SDP coordinate ascent stopped after {sweeps} sweeps without meeting tol {:e}",
            options.tol
        );
    }

    let t = boundary_scale(&sigma_inv, &s, c)?;
    if t.is_finite() {
        for x in s.iter_mut() {
            *x = (*x * t).min(T::one());
        }
    }

    let candidate = finish(sigma, s, m, T::one(), converged, sweeps)?;
    let equi = solve_equi(sigma, m)?;
    if equi.total() > candidate.total() {
        return Ok(SVector {
            converged,
            sweeps,
            ..equi
        });
    }
    Ok(candidate)
}

fn constraint_upper<T: Scalar>(
    sigma: &CorrelationMatrix<T>,
    s: &[T],
    m: usize,
) -> Option<Matrix<T>> {
    let a = constraint_matrix(sigma, s, m);
    Some(cholesky_strict(&a).ok()?.lower().transpose())
}

/// `(A⁻¹)_jj = ‖L⁻¹ e_j‖²` for `A = UᵀU`.
fn inverse_diag<T: Scalar>(u: &Matrix<T>, j: usize, y: &mut [T]) -> T {
    let p = u.rows();
    y[j..].iter_mut().for_each(|v| *v = T::zero());
    y[j] = T::one();
    let mut acc = T::zero();
    for k in j..p {
        let row = u.row(k);
        let yk = y[k] / row[k];
        y[k] = yk;
        acc = acc + yk * yk;
        for (yi, &r) in y[k + 1..].iter_mut().zip(&row[k + 1..]) {
            *yi = *yi - yk * r;
        }
    }
    acc
}

/// Rewrites `U` into the factor of `UᵀU − δ e_j e_jᵀ`; false if that loses definiteness.
fn rank_one_diag<T: Scalar>(u: &mut Matrix<T>, j: usize, delta: T, x: &mut [T]) -> bool {
    let p = u.rows();
    let sign = if delta > T::zero() {
        -T::one()
    } else {
        T::one()
    };
    x[j..].iter_mut().for_each(|v| *v = T::zero());
    x[j] = delta.abs().sqrt();
    for k in j..p {
        let row = u.row_mut(k);
        let ukk = row[k];
        let r2 = ukk * ukk + sign * x[k] * x[k];
        if !(r2 > T::zero()) {
            return false;
        }
        let r = r2.sqrt();
        let c = r / ukk;
        let sn = x[k] / ukk;
        row[k] = r;
        for (ui, xi) in row[k + 1..].iter_mut().zip(x[k + 1..].iter_mut()) {
            *ui = (*ui + sign * sn * *xi) / c;
            *xi = c * *xi - sn * *ui;
        }
    }
    true
}

/// Applies the final feasibility projection and records the margin.
fn finish<T: Scalar>(
    sigma: &CorrelationMatrix<T>,
    mut s: Vec<T>,
    m: usize,
    gamma: T,
    converged: bool,
    sweeps: usize,
) -> Result<SVector<T>> {
    let mut margin = feasibility_margin(sigma, &s, m)?;
    if margin < -T::tol(FEASIBILITY_TOL) {
        let sigma_inv = inverse_spd(sigma)?;
        let t = boundary_scale(&sigma_inv, &s, inflation(m))?;
        let t = t.min(T::one());
        s.iter_mut().for_each(|x| *x = *x * t);
        margin = feasibility_margin(sigma, &s, m)?;
        log::debug!("s scaled by {t} to restore feasibility");
    }
    Ok(SVector {
        s,
        m,
        gamma,
        feasibility_margin: margin,
        converged,
        sweeps,
    })
}

/// Shrinks `D` by `γ ∈ (0, 1]`; shrinking a feasible `D` keeps it feasible.
pub fn apply_perturbation<T: Scalar>(
    sigma: &CorrelationMatrix<T>,
    s: &SVector<T>,
    gamma: T,
) -> Result<SVector<T>> {
    if !(gamma > T::zero() && gamma <= T::one()) {
        return Err(Error::Domain(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )));
    }
    if gamma == T::one() {
        return Ok(s.clone());
    }
    let values: Vec<T> = s.s.iter().map(|&x| x * gamma).collect();
    let margin = feasibility_margin(sigma, &values, s.m)?;
    Ok(SVector {
        s: values,
        gamma: s.gamma * gamma,
        feasibility_margin: margin,
        ..s.clone()
    })
}

/// As [`apply_perturbation`] for a group `D`.
pub fn apply_group_perturbation<T: Scalar>(
    sigma: &CorrelationMatrix<T>,
    d: &GroupD<T>,
    gamma: T,
) -> Result<GroupD<T>> {
    if !(gamma > T::zero() && gamma <= T::one()) {
        return Err(Error::Domain(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )));
    }
    if gamma == T::one() {
        return Ok(d.clone());
    }
    let matrix = d.matrix.scale(gamma);
    let margin = min_eigenvalue(&sigma.as_matrix().scale(inflation(d.m)).sub(&matrix)?)?;
    Ok(GroupD {
        matrix,
        scale: d.scale * gamma,
        feasibility_margin: margin,
        ..d.clone()
    })
}

/// Block-diagonal `D` aligned with a feature grouping.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupD<T> {
    matrix: Matrix<T>,
    groups: GroupStructure,
    scale: T,
    m: usize,
    feasibility_margin: T,
}

impl<T: Scalar> GroupD<T> {
    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn groups(&self) -> &GroupStructure {
        &self.groups
    }

    /// Common factor `γ*` multiplying every within-group correlation block.
    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn feasibility_margin(&self) -> T {
        self.feasibility_margin
    }
}

/// `D = γ*·blockdiag(Σ_1, …, Σ_G)` with `γ* = min(1, ((M+1)/M)·λ_min(B^{-½} Σ B^{-½}))`.
pub fn solve_group_equi<T: Scalar>(
    sigma: &CorrelationMatrix<T>,
    groups: &GroupStructure,
    m: usize,
) -> Result<GroupD<T>> {
    check_m(m)?;
    let p = sigma.p();
    if groups.p() != p {
        return Err(Error::Dimension {
            expected: p,
            got: groups.p(),
        });
    }
    // whitening by the block-diagonal Cholesky factor: eig(L⁻¹ Σ L⁻ᵀ) = eig(B^{-½} Σ B^{-½})
    let mut linv = Matrix::zeros(p, p);
    let mut block = Matrix::zeros(p, p);
    for (g, idx) in groups.iter().enumerate() {
        let sub = sigma.as_matrix().principal_submatrix(idx);
        let factor = cholesky_strict(&sub).map_err(|_| Error::SingularGroup { group: g })?;
        let li = factor.inverse_lower();
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                linv[(i, j)] = li[(a, b)];
                block[(i, j)] = sub[(a, b)];
            }
        }
    }
    let whitened = linv.matmul(sigma.as_matrix())?.matmul(&linv.transpose())?;
    let lambda = min_eigenvalue(&whitened)?;
    let c: T = inflation(m);
    let mut scale = (c * lambda).max(T::zero()).min(T::one());
    let mut d = block.scale(scale);
    let mut margin = min_eigenvalue(&sigma.as_matrix().scale(c).sub(&d)?)?;
    if margin < -T::tol(FEASIBILITY_TOL) {
        // λ_min(cΣ − tB) is concave in t; back off geometrically until feasible
        let mut t = T::one();
        while margin < -T::tol(FEASIBILITY_TOL) && t > T::lit(1e-6) {
            t = t * T::lit(0.999);
            d = block.scale(scale * t);
            margin = min_eigenvalue(&sigma.as_matrix().scale(c).sub(&d)?)?;
        }
        scale = scale * t;
    }
    Ok(GroupD {
        matrix: d,
        groups: groups.clone(),
        scale,
        m,
        feasibility_margin: margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::{make_ar1, make_compound_symmetry};

    #[test]
    fn equi_on_identity_is_one() {
        let s = solve_equi(
            &CorrelationMatrix::new(Matrix::<f64>::identity(4)).unwrap(),
            7,
        )
        .unwrap();
        assert!(s.values().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn equi_compound_symmetry_closed_form() {
        let sigma = make_compound_symmetry(100, 0.5f64).unwrap();
        let s = solve_equi(&sigma, 19).unwrap();
        let expected = (20.0f64 / 19.0) * 0.5;
        for &x in s.values() {
            assert!((x - expected).abs() < 1e-10);
        }
        assert!((expected - 0.5263).abs() < 1e-4);
        assert!(s.feasibility_margin() >= -1e-8);
    }

    #[test]
    fn equi_ar1_two_by_two() {
        let s = solve_equi(&make_ar1(2, 0.5f64).unwrap(), 1).unwrap();
        assert!(s.values().iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn equi_non_increasing_in_m() {
        let sigma = make_ar1(20, 0.7).unwrap();
        let mut prev = f64::INFINITY;
        for m in 1..30 {
            let v = solve_equi(&sigma, m).unwrap().values()[0];
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn sdp_on_identity_is_one() {
        let sigma = CorrelationMatrix::new(Matrix::<f64>::identity(6)).unwrap();
        let s = solve_sdp(&sigma, 19, &SdpOptions::default()).unwrap();
        assert!(s.values().iter().all(|&x| x == 1.0), "{:?}", s.values());
    }

    #[test]
    fn sdp_two_by_two_with_one_copy() {
        // 2Σ − I = [[1,1],[1,1]] is PSD, so s = (1,1) is optimal
        let sigma = CorrelationMatrix::from_rows(&[[1.0f64, 0.5], [0.5, 1.0]]).unwrap();
        let s = solve_sdp(&sigma, 1, &SdpOptions::default()).unwrap();
        for &x in s.values() {
            assert!((x - 1.0).abs() < 1e-9, "{x}");
        }
        let ev =
            crate::corr::symmetric_eigenvalues(&constraint_matrix(&sigma, s.values(), 1)).unwrap();
        assert!(ev[0] >= -1e-8);
    }

    #[test]
    fn sdp_dominates_equi_on_compound_symmetry() {
        let sigma = make_compound_symmetry(100, 0.9).unwrap();
        let sdp = solve_sdp(&sigma, 19, &SdpOptions::default()).unwrap();
        let equi = solve_equi(&sigma, 19).unwrap();
        assert!(sdp.total() >= equi.total());
        assert!(sdp.feasibility_margin() >= -1e-8);
    }

    #[test]
    fn perturbation_scales_and_widens_margin() {
        let sigma = make_ar1(10, 0.5).unwrap();
        let s = solve_sdp(&sigma, 3, &SdpOptions::default()).unwrap();
        let half = apply_perturbation(&sigma, &s, 0.5).unwrap();
        for (a, b) in half.values().iter().zip(s.values()) {
            assert_eq!(*a, 0.5 * b);
        }
        assert!(half.feasibility_margin() >= s.feasibility_margin());
        assert_eq!(apply_perturbation(&sigma, &s, 1.0).unwrap(), s);
        assert!(apply_perturbation(&sigma, &s, 0.0).is_err());
        assert!(apply_perturbation(&sigma, &s, 1.1).is_err());
    }

    #[test]
    fn perturbation_unit_vector() {
        let sigma = CorrelationMatrix::new(Matrix::<f64>::identity(2)).unwrap();
        let s = SVector::from_values(&sigma, vec![1.0, 1.0], 3).unwrap();
        let g = apply_perturbation(&sigma, &s, 0.9).unwrap();
        assert_eq!(g.values(), &[0.9, 0.9]);
        assert_eq!(g.gamma(), 0.9);
    }

    #[test]
    fn group_equi_singletons_on_identity() {
        let sigma = CorrelationMatrix::new(Matrix::<f64>::identity(3)).unwrap();
        let d = solve_group_equi(&sigma, &GroupStructure::singletons(3), 19).unwrap();
        assert!(d.matrix().max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn group_equi_single_group_reproduces_sigma() {
        let sigma = make_ar1(4, 0.5f64).unwrap();
        let g = GroupStructure::from_assignment(vec![0; 4]).unwrap();
        let d = solve_group_equi(&sigma, &g, 19).unwrap();
        assert!((d.scale() - 1.0).abs() < 1e-12);
        assert!(d.matrix().max_abs_diff(sigma.as_matrix()) < 1e-12);
        assert!(d.feasibility_margin() >= -1e-8);
    }

    #[test]
    fn group_equi_two_blocks_feasible() {
        let sigma = make_ar1(4, 0.5).unwrap();
        let g = GroupStructure::from_assignment(vec![0, 0, 1, 1]).unwrap();
        let d = solve_group_equi(&sigma, &g, 19).unwrap();
        assert!(d.feasibility_margin() >= -1e-8);
        assert_eq!(d.matrix()[(0, 2)], 0.0);
        assert!(d.matrix()[(0, 1)] > 0.0);
    }

    #[test]
    fn rejects_infeasible_external_s() {
        let sigma = make_ar1(3, 0.9).unwrap();
        assert!(matches!(
            SVector::from_values(&sigma, vec![1.0; 3], 19),
            Err(Error::Infeasible { .. })
        ));
    }
}
