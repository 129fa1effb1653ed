//! The FWER filter and its baselines.
//!
//! `U ~ NB(v, p₀)` counts zero-`κ` events (probability `p₀ = 1/(M+1)` each)
//! before the `v`-th nonzero `κ`. The filter walks features by decreasing `τ`
//! and stops at the `v`-th nonzero `κ`, with `v` the largest count whose tail
//! `Pr(U ≥ k)` stays within `α`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{KnockoffModel, KnockoffScores, RandomSeed};
use crate::scalar::Scalar;
use crate::stats::{knockoff_stats, KnockoffStats};

/// Relative slack on `α` when comparing against a tail probability, so that
/// `1 − 19/20` rounding above `0.05` does not flip the boundary case.
pub const ALPHA_SLACK: f64 = 1e-9;

/// Default cap for [`choose_m`].
pub const DEFAULT_M_CAP: usize = 10_000;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

fn within(tail: f64, alpha: f64) -> bool {
    tail <= alpha * (1.0 + ALPHA_SLACK)
}

/// `Pr(U ≥ k)` for `U ~ NB(v, p0)`.
pub fn nb_tail(v: usize, p0: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if v == 0 {
        return 0.0;
    }
    let q = 1.0 - p0;
    if k == 1 {
        return -(v as f64 * (-p0).ln_1p()).exp_m1();
    }
    // pmf(u) = C(u+v−1, u) p0^u q^v, accumulated by ratio
    let mut pmf = q.powi(v as i32);
    let mut below = pmf;
    for u in 1..k {
        pmf *= (u + v - 1) as f64 / u as f64 * p0;
        below += pmf;
    }
    (1.0 - below).max(0.0)
}

/// Largest `v` with `Pr(U ≥ k | NB(v, 1/(M+1))) ≤ α`.
pub fn nb_threshold(alpha: f64, m: usize, k: usize) -> Result<usize> {
    check_alpha(alpha)?;
    if m == 0 {
        return Err(Error::Domain(
            "number of knockoff copies M must be >= 1".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Domain("k must be >= 1".into()));
    }
    Ok(largest_v(alpha, 1.0 / (m as f64 + 1.0), k))
}

fn largest_v(alpha: f64, p0: f64, k: usize) -> usize {
    let mut v = if k == 1 {
        ((1.0 - alpha).ln() / (-p0).ln_1p()).floor().max(0.0) as usize
    } else {
        0
    };
    while v > 0 && !within(nb_tail(v, p0, k), alpha) {
        v -= 1;
    }
    while within(nb_tail(v + 1, p0, k), alpha) {
        v += 1;
    }
    v
}

/// Smallest `M` for which the NB rule admits `v ≥ 1`.
pub fn choose_m(alpha: f64, cap: usize) -> Result<usize> {
    check_alpha(alpha)?;
    let mut m = ((1.0 / alpha).ceil() as usize).saturating_sub(1).max(1);
    while m > 1 && nb_threshold(alpha, m - 1, 1)? >= 1 {
        m -= 1;
    }
    while nb_threshold(alpha, m, 1)? == 0 {
        m += 1;
        if m > cap {
            break;
        }
    }
    if m > cap {
        return Err(Error::Domain(format!(
            "alpha = {alpha} needs M = {m} knockoff copies, above the cap of {cap}"
        )));
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub alpha: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub k: usize,
    pub v: usize,
    /// Set when a manually supplied `v` exceeds the `α`-compliant maximum.
    pub exceeds_rule: bool,
}

impl FilterConfig {
    pub fn new(alpha: f64, m: usize, k: usize) -> Result<Self> {
        let v = nb_threshold(alpha, m, k)?;
        Ok(Self {
            alpha,
            m,
            k,
            v,
            exceeds_rule: false,
        })
    }

    /// Overrides `v`, warning when it is larger than the NB rule allows.
    pub fn with_v(mut self, v: usize) -> Self {
        let rule = nb_threshold(self.alpha, self.m, self.k).unwrap_or(0);
        self.exceeds_rule = v > rule;
        if self.exceeds_rule {
            log::warn!(
                "v = {v} exceeds the largest value {rule} that controls {}-FWER at alpha = {}",
                self.k,
                self.alpha
            );
        }
        self.v = v;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub kappa: usize,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub alpha: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub k: usize,
    pub v: usize,
    /// Number of features walked, 1-based position of the stop.
    #[serde(rename = "T")]
    pub t: usize,
    pub rejected: Vec<usize>,
    pub trace: Vec<TraceEntry>,
}

/// Indices ordered by `τ` descending, ties by ascending index.
pub fn tau_order<T: Scalar>(tau: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tau.len()).collect();
    order.sort_by(|&a, &b| {
        tau[b]
            .partial_cmp(&tau[a])
            .expect("finite tau")
            .then(a.cmp(&b))
    });
    order
}

/// Rejects zero-`κ` features walked before the `v`-th nonzero `κ`.
pub fn fwer_filter<T: Scalar>(stats: &KnockoffStats<T>, config: &FilterConfig) -> FilterOutcome {
    let mut outcome = FilterOutcome {
        alpha: config.alpha,
        m: config.m,
        k: config.k,
        v: config.v,
        t: 0,
        rejected: Vec::new(),
        trace: Vec::new(),
    };
    if config.v == 0 || stats.is_empty() {
        return outcome;
    }
    let mut nonzero = 0;
    for j in tau_order(stats.tau()) {
        let kappa = stats.kappa()[j];
        outcome.t += 1;
        outcome.trace.push(TraceEntry {
            index: j,
            kappa,
            tau: stats.tau()[j].as_f64(),
        });
        if kappa == 0 {
            outcome.rejected.push(j);
        } else {
            nonzero += 1;
            if nonzero == config.v {
                break;
            }
        }
    }
    outcome.rejected.sort_unstable();
    outcome
}

/// Interpolated rule for a single knockoff copy: `v_α` or `v_α + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JansonRule {
    pub alpha: f64,
    pub k: usize,
    pub v_alpha: usize,
    /// Probability of using `v_α + 1`.
    pub q: f64,
}

impl JansonRule {
    pub fn new(alpha: f64, k: usize) -> Result<Self> {
        let v_alpha = janson_deterministic(alpha, k)?;
        let lo = nb_tail(v_alpha, 0.5, k);
        let hi = nb_tail(v_alpha + 1, 0.5, k);
        let q = if hi > lo {
            ((alpha - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        Ok(Self {
            alpha,
            k,
            v_alpha,
            q,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> JansonDraw {
        let randomized = rng.random::<f64>() < self.q;
        JansonDraw {
            v: self.v_alpha + usize::from(randomized),
            randomized,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JansonDraw {
    pub v: usize,
    /// True when the draw landed on `v_α + 1`.
    pub randomized: bool,
}

/// Largest `v` with `Pr(U ≥ k | NB(v, 1/2)) ≤ α`.
pub fn janson_deterministic(alpha: f64, k: usize) -> Result<usize> {
    nb_threshold(alpha, 1, k)
}

/// One draw of the stochastic rule.
pub fn janson_rule(alpha: f64, k: usize, seed: RandomSeed) -> Result<JansonDraw> {
    Ok(JansonRule::new(alpha, k)?.draw(&mut seed.rng()))
}

/// Fraction of rejection sets containing each feature.
pub fn selection_frequencies(rejection_sets: &[Vec<usize>], q: usize) -> Result<Vec<f64>> {
    if rejection_sets.is_empty() {
        return Err(Error::Domain(
            "derandomized selection needs at least one rejection set".into(),
        ));
    }
    let mut counts = vec![0usize; q];
    for set in rejection_sets {
        for &j in set {
            *counts.get_mut(j).ok_or_else(|| {
                Error::Domain(format!("rejected index {j} out of range for {q} features"))
            })? += 1;
        }
    }
    let n = rejection_sets.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// `{ j : Π_j ≥ η }`.
pub fn derandomized_select(
    rejection_sets: &[Vec<usize>],
    eta: f64,
    q: usize,
) -> Result<Vec<usize>> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain(format!("eta must lie in (0, 1], got {eta}")));
    }
    let freq = selection_frequencies(rejection_sets, q)?;
    Ok(freq
        .iter()
        .enumerate()
        .filter(|&(_, &f)| f >= eta - 1e-12)
        .map(|(j, _)| j)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerandomizedConfig {
    pub alpha: f64,
    pub k: usize,
    pub m_deran: usize,
    pub eta: f64,
}

impl Default for DerandomizedConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            k: 1,
            m_deran: 50,
            eta: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerandomizedOutcome {
    pub selected: Vec<usize>,
    pub frequencies: Vec<f64>,
    /// Stopping count drawn from the stochastic rule for this run.
    pub v: usize,
}

/// Repeats the single-copy filter with fresh knockoff draws and keeps features
/// selected in at least a fraction `η` of repetitions.
///
/// The stochastic stopping count is drawn once per call and shared by all
/// repetitions. `model` must have `M = 1`.
pub fn derandomized_knockoffs<T: Scalar>(
    model: &KnockoffModel<T>,
    z: &[T],
    config: &DerandomizedConfig,
    seed: RandomSeed,
) -> Result<DerandomizedOutcome> {
    if model.m() != 1 {
        return Err(Error::Domain(format!(
            "derandomized knockoffs use a single copy, model has M = {}",
            model.m()
        )));
    }
    if config.m_deran == 0 {
        return Err(Error::Domain("m_deran must be >= 1".into()));
    }
    let rule = JansonRule::new(config.alpha, config.k)?;
    let mut rng = seed.rng();
    let v = rule.draw(&mut rng).v;
    let filter = FilterConfig {
        alpha: config.alpha,
        m: 1,
        k: config.k,
        v,
        exceeds_rule: false,
    };
    let mut scores = KnockoffScores::zeros(model.p(), 1);
    let mut sets = Vec::with_capacity(config.m_deran);
    for _ in 0..config.m_deran {
        if v == 0 {
            sets.push(Vec::new());
            continue;
        }
        model.sample_into(z, &mut rng, &mut scores)?;
        let stats = knockoff_stats(&scores)?;
        sets.push(fwer_filter(&stats, &filter).rejected);
    }
    let frequencies = selection_frequencies(&sets, model.p())?;
    let selected = derandomized_select(&sets, config.eta, model.p())?;
    Ok(DerandomizedOutcome {
        selected,
        frequencies,
        v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nb_anchor_points() {
        assert_eq!(nb_threshold(0.05, 19, 1).unwrap(), 1);
        assert_eq!(nb_threshold(0.05, 18, 1).unwrap(), 0);
        assert_eq!(nb_threshold(0.05, 39, 1).unwrap(), 2);
        assert_eq!(nb_threshold(0.01, 19, 1).unwrap(), 0);
        for m in 1..=18 {
            assert_eq!(nb_threshold(0.05, m, 1).unwrap(), 0, "M = {m}");
        }
    }

    #[test]
    fn closed_form_tail_matches_summation() {
        for &(v, p0) in &[(1usize, 0.05f64), (3, 0.5), (7, 0.1)] {
            let closed = nb_tail(v, p0, 1);
            assert!((closed - (1.0 - (1.0 - p0).powi(v as i32))).abs() < 1e-14);
        }
    }

    #[test]
    fn general_k_tail_against_direct_sum() {
        // Pr(U ≥ 2) for NB(3, 1/2): 1 − q³(1 + 3p)
        let direct = 1.0 - 0.125 * (1.0 + 1.5);
        assert!((nb_tail(3, 0.5, 2) - direct).abs() < 1e-14);
    }

    #[test]
    fn choose_m_examples_and_consistency() {
        assert_eq!(choose_m(0.05, DEFAULT_M_CAP).unwrap(), 19);
        assert_eq!(choose_m(0.1, DEFAULT_M_CAP).unwrap(), 9);
        assert_eq!(choose_m(0.5, DEFAULT_M_CAP).unwrap(), 1);
        for &a in &[0.01, 0.05, 0.1] {
            let m = choose_m(a, DEFAULT_M_CAP).unwrap();
            assert_eq!(nb_threshold(a, m, 1).unwrap(), 1);
            assert_eq!(nb_threshold(a, m - 1, 1).unwrap(), 0);
        }
        assert!(choose_m(1e-5, DEFAULT_M_CAP).is_err());
        assert!(choose_m(0.0, DEFAULT_M_CAP).is_err());
    }

    fn stats(kappa: &[usize], tau: &[f64], m: usize) -> KnockoffStats<f64> {
        KnockoffStats::new(kappa.to_vec(), tau.to_vec(), m).unwrap()
    }

    fn config(v: usize) -> FilterConfig {
        FilterConfig::new(0.05, 19, 1).unwrap().with_v(v)
    }

    #[test]
    fn hand_traced_walk() {
        let out = fwer_filter(&stats(&[0, 0, 1, 0], &[4.0, 3.0, 2.0, 1.0], 19), &config(1));
        assert_eq!(out.rejected, vec![0, 1]);
        assert_eq!(out.t, 3);
        assert_eq!(out.trace.len(), 3);
    }

    #[test]
    fn all_zero_kappa_rejects_everything() {
        let out = fwer_filter(&stats(&[0, 0, 0], &[1.0, 5.0, 3.0], 19), &config(1));
        assert_eq!(out.rejected, vec![0, 1, 2]);
        assert_eq!(out.t, 3);
    }

    #[test]
    fn zero_v_rejects_nothing() {
        let out = fwer_filter(&stats(&[0, 0], &[1.0, 2.0], 19), &config(0));
        assert!(out.rejected.is_empty());
        assert_eq!(out.t, 0);
    }

    #[test]
    fn tau_ties_break_by_index() {
        assert_eq!(tau_order(&[1.0, 2.0, 2.0, 0.5]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn manual_v_flags_excess() {
        let c = FilterConfig::new(0.05, 19, 1).unwrap();
        assert!(!c.with_v(1).exceeds_rule);
        assert!(c.with_v(2).exceeds_rule);
    }

    #[test]
    fn janson_examples() {
        assert_eq!(janson_deterministic(0.05, 1).unwrap(), 0);
        assert_eq!(janson_deterministic(0.6, 1).unwrap(), 1);
        let rule = JansonRule::new(0.05, 1).unwrap();
        assert_eq!(rule.v_alpha, 0);
        assert!((rule.q - 0.1).abs() < 1e-12);
        let mut rng = RandomSeed::new(3, 0).rng();
        let n = 100_000;
        let hits = (0..n).filter(|_| rule.draw(&mut rng).v == 1).count();
        let se = (0.1f64 * 0.9 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.1).abs() < 4.0 * se);
    }

    #[test]
    fn derandomized_examples() {
        let sets = vec![vec![3]; 50];
        assert_eq!(derandomized_select(&sets, 0.99, 5).unwrap(), vec![3]);
        let mut sets = vec![vec![2]; 49];
        sets.push(vec![]);
        assert!(derandomized_select(&sets, 0.99, 5).unwrap().is_empty());
        assert_eq!(derandomized_select(&sets, 0.98, 5).unwrap(), vec![2]);
        let mut sets = vec![vec![1]; 9];
        sets.push(vec![]);
        assert!(derandomized_select(&sets, 1.0, 2).unwrap().is_empty());
        assert!(derandomized_select(&[], 0.5, 2).is_err());
        assert!(derandomized_select(&[vec![7]], 0.5, 2).is_err());
    }
}
