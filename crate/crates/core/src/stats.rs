//! Knockoff statistics `(κ, τ)` and group chi-square importance scores.

use serde::{Deserialize, Serialize};

use crate::corr::{cholesky_strict, CholeskyFactor, CorrelationMatrix, RIDGE_EPS};
use crate::error::{Error, Result};
use crate::groups::GroupStructure;
use crate::sampler::KnockoffScores;
use crate::scalar::Scalar;

/// Per-item winning copy `κ` and margin `τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnockoffStats<T> {
    kappa: Vec<usize>,
    tau: Vec<T>,
    m: usize,
}

impl<T: Scalar> KnockoffStats<T> {
    pub fn new(kappa: Vec<usize>, tau: Vec<T>, m: usize) -> Result<Self> {
        if kappa.len() != tau.len() {
            return Err(Error::Dimension {
                expected: kappa.len(),
                got: tau.len(),
            });
        }
        if let Some(&k) = kappa.iter().find(|&&k| k > m) {
            return Err(Error::Domain(format!("kappa {k} exceeds M = {m}")));
        }
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("tau".into()));
        }
        Ok(Self { kappa, tau, m })
    }

    #[inline]
    pub fn kappa(&self) -> &[usize] {
        &self.kappa
    }

    #[inline]
    pub fn tau(&self) -> &[T] {
        &self.tau
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }
}

/// Argmax (smallest index on ties) and max-minus-median of the rest.
pub fn kappa_tau<T: Scalar>(values: &[T], scratch: &mut Vec<T>) -> (usize, T) {
    let mut best = 0;
    for (m, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = m;
        }
    }
    scratch.clear();
    scratch.extend(
        values
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != best)
            .map(|(_, v)| *v),
    );
    (best, values[best] - median_in_place(scratch))
}

/// Median; the mean of the two central values for an even count.
pub fn median_in_place<T: Scalar>(values: &mut [T]) -> T {
    let n = values.len();
    assert!(n > 0, "median of an empty slice");
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / T::lit(2.0)
    }
}

/// `κ_j = argmax_m (z_j^m)²`, `τ_j = (z_j^{κ_j})² − median_{m≠κ_j} (z_j^m)²`.
pub fn knockoff_stats<T: Scalar>(scores: &KnockoffScores<T>) -> Result<KnockoffStats<T>> {
    stats_with(scores, |x| x * x)
}

fn stats_with<T: Scalar>(
    scores: &KnockoffScores<T>,
    f: impl Fn(T) -> T,
) -> Result<KnockoffStats<T>> {
    if !scores.is_finite() {
        return Err(Error::NonFinite("knockoff scores".into()));
    }
    let q = scores.n_items();
    let copies = scores.m() + 1;
    let mut kappa = Vec::with_capacity(q);
    let mut tau = Vec::with_capacity(q);
    let mut row = vec![T::zero(); copies];
    let mut scratch = Vec::with_capacity(copies);
    for j in 0..q {
        for (m, r) in row.iter_mut().enumerate() {
            *r = f(scores.get(j, m));
        }
        let (k, t) = kappa_tau(&row, &mut scratch);
        kappa.push(k);
        tau.push(t);
    }
    Ok(KnockoffStats {
        kappa,
        tau,
        m: scores.m(),
    })
}

/// Exponent applied to chi-square values before `(κ, τ)` are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChiSquarePower {
    One,
    #[default]
    Two,
}

impl ChiSquarePower {
    pub fn from_exponent(e: u32) -> Result<Self> {
        match e {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            other => Err(Error::Domain(format!(
                "chi-square power must be 1 or 2, got {other}"
            ))),
        }
    }

    pub fn exponent(self) -> u32 {
        match self {
            Self::One => 1,
            Self::Two => 2,
        }
    }
}

/// `(κ, τ)` from group chi-square values of every copy, squared per `power`.
pub fn group_knockoff_stats<T: Scalar>(
    chi: &KnockoffScores<T>,
    power: ChiSquarePower,
) -> Result<KnockoffStats<T>> {
    if (0..=chi.m()).any(|m| chi.column(m).iter().any(|&x| x < T::zero())) {
        return Err(Error::Domain(
            "chi-square values must be non-negative".into(),
        ));
    }
    match power {
        ChiSquarePower::One => stats_with(chi, |x| x),
        ChiSquarePower::Two => stats_with(chi, |x| x * x),
    }
}

/// Per-group factors of `Σ_l`, reusable across every knockoff copy.
#[derive(Clone, Debug)]
pub struct GroupChiSquare<T> {
    groups: GroupStructure,
    factors: Vec<CholeskyFactor<T>>,
}

impl<T: Scalar> GroupChiSquare<T> {
    /// Factors each within-group block, retrying once with a ridge if singular.
    pub fn new(sigma: &CorrelationMatrix<T>, groups: &GroupStructure) -> Result<Self> {
        if groups.p() != sigma.p() {
            return Err(Error::Dimension {
                expected: sigma.p(),
                got: groups.p(),
            });
        }
        let factors = groups
            .iter()
            .enumerate()
            .map(|(g, idx)| {
                let block = sigma.as_matrix().principal_submatrix(idx);
                cholesky_strict(&block).or_else(|_| {
                    let mut ridged = block.clone();
                    for i in 0..ridged.rows() {
                        ridged[(i, i)] = ridged[(i, i)] + T::lit(RIDGE_EPS);
                    }
                    log::warn!("group {g} block is singular; added ridge {RIDGE_EPS:e}");
                    cholesky_strict(&ridged).map_err(|_| Error::SingularGroup { group: g })
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            groups: groups.clone(),
            factors,
        })
    }

    pub fn groups(&self) -> &GroupStructure {
        &self.groups
    }

    /// `χ_l = z_lᵀ Σ_l⁻¹ z_l` for every group.
    pub fn apply(&self, z: &[T]) -> Result<Vec<T>> {
        if z.len() != self.groups.p() {
            return Err(Error::Dimension {
                expected: self.groups.p(),
                got: z.len(),
            });
        }
        let mut buf = Vec::new();
        Ok(self
            .groups
            .iter()
            .zip(&self.factors)
            .map(|(idx, f)| {
                buf.clear();
                buf.extend(idx.iter().map(|&j| z[j]));
                f.solve_lower_in_place(&mut buf);
                buf.iter().map(|&x| x * x).sum()
            })
            .collect())
    }

    /// Chi-square values of the original and every knockoff copy.
    pub fn apply_all(&self, scores: &KnockoffScores<T>) -> Result<KnockoffScores<T>> {
        let columns = (0..=scores.m())
            .map(|m| self.apply(scores.column(m)))
            .collect::<Result<Vec<_>>>()?;
        KnockoffScores::from_columns(columns)
    }
}

/// `χ_l = z_lᵀ Σ_l⁻¹ z_l` per group.
pub fn group_chi_square<T: Scalar>(
    z: &[T],
    sigma: &CorrelationMatrix<T>,
    groups: &GroupStructure,
) -> Result<Vec<T>> {
    GroupChiSquare::new(sigma, groups)?.apply(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::Matrix;

    fn one_row(row: &[f64]) -> KnockoffStats<f64> {
        knockoff_stats(&KnockoffScores::from_rows(&[row]).unwrap()).unwrap()
    }

    #[test]
    fn hand_traced_rows() {
        let s = one_row(&[3.0, 1.0, -1.0, 0.0]);
        assert_eq!((s.kappa()[0], s.tau()[0]), (0, 8.0));
        let s = one_row(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!((s.kappa()[0], s.tau()[0]), (0, 0.0));
        let s = one_row(&[1.0, -2.0]);
        assert_eq!((s.kappa()[0], s.tau()[0]), (1, 3.0));
    }

    #[test]
    fn even_count_median_is_midpoint() {
        // M = 4: the four non-max values 0,1,4,9 have median 2.5
        let s = one_row(&[0.0, 1.0, 2.0, 3.0, 5.0]);
        assert_eq!(s.kappa()[0], 4);
        assert_eq!(s.tau()[0], 25.0 - 2.5);
    }

    #[test]
    fn tie_goes_to_smallest_index() {
        let s = one_row(&[1.0, 2.0, -2.0]);
        assert_eq!(s.kappa()[0], 1);
    }

    #[test]
    fn group_rows() {
        let chi = KnockoffScores::from_rows(&[[5.0, 1.0, 2.0, 0.0]]).unwrap();
        let s = group_knockoff_stats(&chi, ChiSquarePower::Two).unwrap();
        assert_eq!((s.kappa()[0], s.tau()[0]), (0, 24.0));
        let s = group_knockoff_stats(&chi, ChiSquarePower::One).unwrap();
        assert_eq!((s.kappa()[0], s.tau()[0]), (0, 4.0));
        let flat = KnockoffScores::from_rows(&[[2.0, 2.0, 2.0]]).unwrap();
        let s = group_knockoff_stats(&flat, ChiSquarePower::Two).unwrap();
        assert_eq!((s.kappa()[0], s.tau()[0]), (0, 0.0));
        let neg = KnockoffScores::from_rows(&[[-1.0, 2.0]]).unwrap();
        assert!(group_knockoff_stats(&neg, ChiSquarePower::Two).is_err());
    }

    #[test]
    fn chi_square_examples() {
        let id = CorrelationMatrix::new(Matrix::identity(3)).unwrap();
        let chi = group_chi_square(&[1.0, -2.0, 3.0], &id, &GroupStructure::singletons(3)).unwrap();
        assert_eq!(chi, vec![1.0, 4.0, 9.0]);
        let pair = GroupStructure::from_assignment(vec![0, 0]).unwrap();
        let id2 = CorrelationMatrix::new(Matrix::<f64>::identity(2)).unwrap();
        assert!((group_chi_square(&[3.0, 4.0], &id2, &pair).unwrap()[0] - 25.0).abs() < 1e-12);
        let s = CorrelationMatrix::from_rows(&[[1.0f64, 0.5], [0.5, 1.0]]).unwrap();
        assert!((group_chi_square(&[1.0, 1.0], &s, &pair).unwrap()[0] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_group_is_ridged() {
        let s = CorrelationMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let pair = GroupStructure::from_assignment(vec![0, 0]).unwrap();
        let chi = group_chi_square(&[1.0, 1.0], &s, &pair).unwrap();
        // 1ᵀ(J + εI)⁻¹1 = 2 / (2 + ε)
        assert!((chi[0] - 2.0 / (2.0 + RIDGE_EPS)).abs() < 1e-9);
    }

    #[test]
    fn non_finite_scores_rejected() {
        let sc = KnockoffScores::<f64>::zeros(2, 1);
        assert!(knockoff_stats(&sc).is_ok());
        assert!(KnockoffScores::from_rows(&[[f64::INFINITY, 0.0]]).is_err());
    }
}
