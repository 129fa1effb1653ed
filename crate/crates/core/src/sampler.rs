//! Knockoff copies of Z-scores from the Gaussian conditional model
//! `Z̃^{1:M} = P·Z + Ẽ`, `Ẽ ~ N(0, V)`.
//!
//! [`KnockoffModel`] splits `V` into a block-constant part with common block
//! `C − ((M−1)/M)·D` and a centered part built from `M` independent `N(0, D)`
//! draws, so only a `p × p` matrix is ever factored. [`TrivialSampler`]
//! factors the full `pM × pM` covariance and is kept as the reference path.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corr::{
    cholesky_psd, inverse_spd, min_eigenvalue, CholeskyFactor, CorrelationMatrix, Matrix,
};
use crate::dsolve::{GroupD, SVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest `p·M` the trivial path will assemble.
pub const TRIVIAL_MAX_DIM: usize = 20_000;

/// Identifies an independent random stream: `(master_seed, stream_id)` pairs
/// map one-to-one onto ChaCha8 key/stream states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSeed {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RandomSeed {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Same master seed, different stream.
    pub fn with_stream(&self, stream_id: u64) -> Self {
        Self::new(self.master_seed, stream_id)
    }
}

#[inline]
pub(crate) fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

/// Original scores and their knockoff copies, `q` items by `M + 1` copies.
///
/// Stored column-major by copy index: copy `m` of every item is contiguous.
/// Copy 0 is the original.
#[derive(Clone, Debug, PartialEq)]
pub struct KnockoffScores<T> {
    q: usize,
    copies: usize,
    data: Vec<T>,
}

impl<T: Scalar> KnockoffScores<T> {
    pub fn zeros(q: usize, m: usize) -> Self {
        Self {
            q,
            copies: m + 1,
            data: vec![T::zero(); q * (m + 1)],
        }
    }

    /// Builds from `M + 1` columns of equal length; every entry must be finite.
    pub fn from_columns(columns: Vec<Vec<T>>) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::Domain(
                "need the original plus at least one knockoff".into(),
            ));
        }
        let q = columns[0].len();
        let mut data = Vec::with_capacity(q * columns.len());
        for col in &columns {
            if col.len() != q {
                return Err(Error::Dimension {
                    expected: q,
                    got: col.len(),
                });
            }
            data.extend_from_slice(col);
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("knockoff scores".into()));
        }
        Ok(Self {
            q,
            copies: columns.len(),
            data,
        })
    }

    /// Builds from per-item rows of length `M + 1`.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let copies = rows.first().map_or(0, |r| r.as_ref().len());
        let columns = (0..copies)
            .map(|m| {
                rows.iter()
                    .map(|r| {
                        r.as_ref().get(m).copied().ok_or(Error::Dimension {
                            expected: copies,
                            got: r.as_ref().len(),
                        })
                    })
                    .collect::<Result<Vec<T>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(r) = rows.iter().find(|r| r.as_ref().len() != copies) {
            return Err(Error::Dimension {
                expected: copies,
                got: r.as_ref().len(),
            });
        }
        Self::from_columns(columns)
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.q
    }

    /// Number of knockoff copies `M`.
    #[inline]
    pub fn m(&self) -> usize {
        self.copies - 1
    }

    #[inline]
    pub fn get(&self, item: usize, copy: usize) -> T {
        self.data[copy * self.q + item]
    }

    #[inline]
    pub fn column(&self, copy: usize) -> &[T] {
        &self.data[copy * self.q..(copy + 1) * self.q]
    }

    #[inline]
    pub fn column_mut(&mut self, copy: usize) -> &mut [T] {
        &mut self.data[copy * self.q..(copy + 1) * self.q]
    }

    #[inline]
    pub fn original(&self) -> &[T] {
        self.column(0)
    }

    /// Scores of one item across all `M + 1` copies.
    pub fn row(&self, item: usize) -> Vec<T> {
        (0..self.copies).map(|m| self.get(item, m)).collect()
    }

    /// The knockoff copies stacked as one `pM` vector (copy-major).
    pub fn knockoffs(&self) -> &[T] {
        &self.data[self.q..]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum DRoot<T> {
    Diagonal(Vec<T>),
    Dense(CholeskyFactor<T>),
}

/// Everything needed to draw knockoff copies for a fixed `(Σ, D, M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KnockoffModel<T> {
    p: usize,
    m: usize,
    d: Matrix<T>,
    proj: Matrix<T>,
    lower: CholeskyFactor<T>,
    d_root: DRoot<T>,
}

impl<T: Scalar> KnockoffModel<T> {
    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    /// The coupling matrix `D`.
    pub fn d(&self) -> &Matrix<T> {
        &self.d
    }

    /// `I − D Σ⁻¹`, the repeated block of `P`.
    pub fn proj_block(&self) -> &Matrix<T> {
        &self.proj
    }

    /// Factor of `C − ((M−1)/M)·D`.
    pub fn factor(&self) -> &CholeskyFactor<T> {
        &self.lower
    }

    /// `√s_j` for diagonal `D`; `None` for block `D`.
    pub fn d_sqrt(&self) -> Option<&[T]> {
        match &self.d_root {
            DRoot::Diagonal(r) => Some(r),
            DRoot::Dense(_) => None,
        }
    }

    /// Draws one set of `M` knockoff copies into `out`, reusing its allocation.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        z: &[T],
        rng: &mut R,
        out: &mut KnockoffScores<T>,
    ) -> Result<()> {
        if z.len() != self.p {
            return Err(Error::Dimension {
                expected: self.p,
                got: z.len(),
            });
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Z-scores".into()));
        }
        if out.q != self.p || out.copies != self.m + 1 {
            *out = KnockoffScores::zeros(self.p, self.m);
        }
        let p = self.p;
        let mut shared = self.proj.matvec(z)?;
        let g: Vec<T> = (0..p).map(|_| normal(rng)).collect();
        let e1 = self.lower.mul_vec(&g);
        for (s, e) in shared.iter_mut().zip(&e1) {
            *s = *s + *e;
        }
        out.column_mut(0).copy_from_slice(z);
        let mut mean = vec![T::zero(); p];
        let mut g = vec![T::zero(); p];
        for copy in 1..=self.m {
            match &self.d_root {
                DRoot::Diagonal(root) => {
                    let col = out.column_mut(copy);
                    for (c, r) in col.iter_mut().zip(root) {
                        *c = *r * normal::<T, R>(rng);
                    }
                }
                DRoot::Dense(factor) => {
                    g.iter_mut().for_each(|x| *x = normal(rng));
                    factor.mul_vec_into(&g, out.column_mut(copy));
                }
            }
            for (mu, c) in mean.iter_mut().zip(out.column(copy)) {
                *mu = *mu + *c;
            }
        }
        let inv_m = T::one() / T::lit(self.m as f64);
        mean.iter_mut().for_each(|x| *x = *x * inv_m);
        for copy in 1..=self.m {
            for ((c, s), mu) in out.column_mut(copy).iter_mut().zip(&shared).zip(&mean) {
                *c = *s + *c - *mu;
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, z: &[T], rng: &mut R) -> Result<KnockoffScores<T>> {
        let mut out = KnockoffScores::zeros(self.p, self.m);
        self.sample_into(z, rng, &mut out)?;
        Ok(out)
    }
}

/// Precomputes `I − DΣ⁻¹` and the factor of `C − ((M−1)/M)·D` for diagonal `D`.
pub fn build_model<T: Scalar>(
    sigma: &CorrelationMatrix<T>,
    s: &SVector<T>,
    m: usize,
) -> Result<KnockoffModel<T>> {
    if s.len() != sigma.p() {
        return Err(Error::Dimension {
            expected: sigma.p(),
            got: s.len(),
        });
    }
    let d = Matrix::from_diag(s.values());
    let root = s.values().iter().map(|x| x.max(T::zero()).sqrt()).collect();
    build(sigma, d, DRoot::Diagonal(root), m)
}

/// As [`build_model`] for a block-diagonal group `D`.
pub fn build_group_model<T: Scalar>(
    sigma: &CorrelationMatrix<T>,
    d: &GroupD<T>,
    m: usize,
) -> Result<KnockoffModel<T>> {
    if d.matrix().rows() != sigma.p() {
        return Err(Error::Dimension {
            expected: sigma.p(),
            got: d.matrix().rows(),
        });
    }
    let root = cholesky_psd(d.matrix())?;
    build(sigma, d.matrix().clone(), DRoot::Dense(root), m)
}

fn build<T: Scalar>(
    sigma: &CorrelationMatrix<T>,
    d: Matrix<T>,
    d_root: DRoot<T>,
    m: usize,
) -> Result<KnockoffModel<T>> {
    if m == 0 {
        return Err(Error::Domain(
            "number of knockoff copies M must be >= 1".into(),
        ));
    }
    let p = sigma.p();
    let sigma_inv = inverse_spd(sigma)?;
    let parts = coupling_parts(&sigma_inv, &d, m)?;
    let lower = cholesky_psd(&parts.block).map_err(|e| match e {
        Error::Indefinite { .. } => Error::Infeasible {
            lambda_min: min_eigenvalue(&parts.block).map_or(f64::NAN, Scalar::as_f64),
        },
        other => other,
    })?;
    Ok(KnockoffModel {
        p,
        m,
        d,
        proj: parts.proj,
        lower,
        d_root,
    })
}

/// Pieces of the conditional model shared by both sampling paths.
#[derive(Clone, Debug)]
pub struct CouplingParts<T> {
    /// `I − DΣ⁻¹`.
    pub proj: Matrix<T>,
    /// `C = 2D − DΣ⁻¹D`, symmetrized.
    pub c: Matrix<T>,
    /// `C − ((M−1)/M)·D`, symmetrized.
    pub block: Matrix<T>,
}

pub fn coupling_parts<T: Scalar>(
    sigma_inv: &Matrix<T>,
    d: &Matrix<T>,
    m: usize,
) -> Result<CouplingParts<T>> {
    let p = sigma_inv.rows();
    let d_sinv = d.matmul(sigma_inv)?;
    let proj = Matrix::identity(p).sub(&d_sinv)?;
    let mut c = d.scale(T::lit(2.0)).sub(&d_sinv.matmul(d)?)?;
    c.symmetrize();
    let shrink = T::lit((m as f64 - 1.0) / m as f64);
    let mut block = c.sub(&d.scale(shrink))?;
    block.symmetrize();
    Ok(CouplingParts { proj, c, block })
}

/// `V`: `C` on the diagonal blocks and `C − D` elsewhere.
pub fn assemble_v<T: Scalar>(c: &Matrix<T>, d: &Matrix<T>, m: usize) -> Result<Matrix<T>> {
    let c_minus_d = c.sub(d)?;
    tile(c, &c_minus_d, m)
}

/// `V₁`: every block equal to `C − ((M−1)/M)·D`.
pub fn assemble_v1<T: Scalar>(block: &Matrix<T>, m: usize) -> Result<Matrix<T>> {
    tile(block, block, m)
}

/// `V₂`: `((M−1)/M)·D` on diagonal blocks and `−D/M` elsewhere.
pub fn assemble_v2<T: Scalar>(d: &Matrix<T>, m: usize) -> Result<Matrix<T>> {
    let mf = T::lit(m as f64);
    tile(&d.scale((mf - T::one()) / mf), &d.scale(-T::one() / mf), m)
}

fn tile<T: Scalar>(diag: &Matrix<T>, off: &Matrix<T>, m: usize) -> Result<Matrix<T>> {
    let p = diag.rows();
    let n = p * m;
    if n > TRIVIAL_MAX_DIM {
        return Err(Error::TooLarge {
            dim: n,
            limit: TRIVIAL_MAX_DIM,
        });
    }
    Ok(Matrix::from_fn(n, n, |i, j| {
        let src = if i / p == j / p { diag } else { off };
        src[(i % p, j % p)]
    }))
}

/// Reference sampler that factors the full `pM × pM` covariance `V`.
#[derive(Clone, Debug)]
pub struct TrivialSampler<T> {
    p: usize,
    m: usize,
    proj: Matrix<T>,
    factor: CholeskyFactor<T>,
}

impl<T: Scalar> TrivialSampler<T> {
    pub fn new(sigma: &CorrelationMatrix<T>, s: &SVector<T>, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain(
                "number of knockoff copies M must be >= 1".into(),
            ));
        }
        let p = sigma.p();
        if p * m > TRIVIAL_MAX_DIM {
            return Err(Error::TooLarge {
                dim: p * m,
                limit: TRIVIAL_MAX_DIM,
            });
        }
        let sigma_inv = inverse_spd(sigma)?;
        let d = Matrix::from_diag(s.values());
        let parts = coupling_parts(&sigma_inv, &d, m)?;
        let v = assemble_v(&parts.c, &d, m)?;
        let factor = cholesky_psd(&v)?;
        Ok(Self::from_factor(parts.proj, factor, m))
    }

    /// Wraps an already factored `V`.
    pub fn from_factor(proj: Matrix<T>, factor: CholeskyFactor<T>, m: usize) -> Self {
        Self {
            p: proj.rows(),
            m,
            proj,
            factor,
        }
    }

    pub fn factor(&self) -> &CholeskyFactor<T> {
        &self.factor
    }

    pub fn sample<R: Rng + ?Sized>(&self, z: &[T], rng: &mut R) -> Result<KnockoffScores<T>> {
        if z.len() != self.p {
            return Err(Error::Dimension {
                expected: self.p,
                got: z.len(),
            });
        }
        let mean = self.proj.matvec(z)?;
        let g: Vec<T> = (0..self.p * self.m).map(|_| normal(rng)).collect();
        let noise = self.factor.mul_vec(&g);
        let mut out = KnockoffScores::zeros(self.p, self.m);
        out.column_mut(0).copy_from_slice(z);
        for copy in 1..=self.m {
            let e = &noise[(copy - 1) * self.p..copy * self.p];
            for ((c, mu), ei) in out.column_mut(copy).iter_mut().zip(&mean).zip(e) {
                *c = *mu + *ei;
            }
        }
        Ok(out)
    }
}

/// Draws knockoff copies with the efficient path.
pub fn sample_knockoffs_fast<T: Scalar>(
    model: &KnockoffModel<T>,
    z: &[T],
    seed: RandomSeed,
) -> Result<KnockoffScores<T>> {
    model.sample(z, &mut seed.rng())
}

/// Draws knockoff copies by factoring the full `pM × pM` covariance.
pub fn sample_knockoffs_trivial<T: Scalar>(
    sigma: &CorrelationMatrix<T>,
    s: &SVector<T>,
    m: usize,
    z: &[T],
    seed: RandomSeed,
) -> Result<KnockoffScores<T>> {
    TrivialSampler::new(sigma, s, m)?.sample(z, &mut seed.rng())
}

/// `n` independent draws from one generator stream.
pub fn sample_many<T: Scalar>(
    model: &KnockoffModel<T>,
    z: &[T],
    seed: RandomSeed,
    n: usize,
) -> Result<Vec<KnockoffScores<T>>> {
    let mut rng = seed.rng();
    (0..n).map(|_| model.sample(z, &mut rng)).collect()
}
