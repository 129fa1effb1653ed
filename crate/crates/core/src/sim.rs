//! Simulation studies and timing benchmarks on synthetic Gaussian designs.
//!
//! Each replication draws `X` with i.i.d. `N(0, Σ)` rows and
//! `y = Xβ + ε`, turns the pair into Z-scores, and runs one selection method.
//! Random streams are keyed by `(seed, rep << 8 | purpose)`, so results do not
//! depend on thread scheduling.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr::inverse_spd;
use crate::corr::{
    cholesky, cholesky_psd, make_ar1, make_compound_symmetry, CholeskyFactor, CorrelationMatrix,
    Matrix,
};
use crate::dsolve::{apply_perturbation, solve_equi, solve_sdp, SVector, SdpOptions};
use crate::error::{Error, Result};
use crate::filter::{
    choose_m, derandomized_knockoffs, fwer_filter, DerandomizedConfig, FilterConfig, JansonRule,
    DEFAULT_M_CAP,
};
use crate::sampler::{
    build_model, coupling_parts, normal, KnockoffModel, KnockoffScores, RandomSeed, TrivialSampler,
};
use crate::stats::knockoff_stats;

const STREAM_DATA: u64 = 0;
const STREAM_KNOCKOFF: u64 = 1;
const STREAM_RULE: u64 = 2;

fn stream(rep: usize, purpose: u64) -> u64 {
    ((rep as u64) << 8) | purpose
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    CompoundSymmetry,
    Ar1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Proposed,
    Janson,
    Derandomized,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DMode {
    #[default]
    Sdp,
    Equi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub structure: Structure,
    pub rho: f64,
    /// Signal amplitude `A`; nonnull coefficients are `±A/√n`.
    pub amplitude: f64,
    pub n_nonnull: usize,
    pub reps: usize,
    pub alpha: f64,
    pub method: Method,
    /// Perturbation factor; `None` applies 0.9 to compound symmetry with `ρ ≥ 0.5`.
    pub gamma: Option<f64>,
    pub seed: u64,
    pub d_mode: DMode,
    /// Knockoff copies for the proposed method; `None` picks the smallest workable `M`.
    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub m_deran: usize,
    pub eta: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 500,
            p: 100,
            structure: Structure::Ar1,
            rho: 0.5,
            amplitude: 10.0,
            n_nonnull: 5,
            reps: 500,
            alpha: 0.05,
            method: Method::Proposed,
            gamma: None,
            seed: 0,
            d_mode: DMode::Sdp,
            m: None,
            m_deran: 50,
            eta: 0.99,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Domain(format!("n must be >= 2, got {}", self.n)));
        }
        if self.p == 0 {
            return Err(Error::Domain("p must be >= 1".into()));
        }
        if !(1..=self.p).contains(&self.n_nonnull) {
            return Err(Error::Domain(format!(
                "n_nonnull must lie in [1, p = {}], got {}",
                self.p, self.n_nonnull
            )));
        }
        if self.reps == 0 {
            return Err(Error::Domain("reps must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !self.amplitude.is_finite() || self.amplitude < 0.0 {
            return Err(Error::Domain(format!(
                "amplitude must be finite and >= 0, got {}",
                self.amplitude
            )));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Domain(format!("gamma must lie in (0, 1], got {g}")));
            }
        }
        if self.m == Some(0) {
            return Err(Error::Domain("M must be >= 1".into()));
        }
        if self.m_deran == 0 || !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Domain(
                "m_deran must be >= 1 and eta in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn sigma(&self) -> Result<CorrelationMatrix<f64>> {
        match self.structure {
            Structure::CompoundSymmetry => make_compound_symmetry(self.p, self.rho),
            Structure::Ar1 => make_ar1(self.p, self.rho),
        }
    }

    pub fn effective_gamma(&self) -> f64 {
        self.gamma.unwrap_or(
            if self.structure == Structure::CompoundSymmetry && self.rho >= 0.5 {
                0.9
            } else {
                1.0
            },
        )
    }

    /// Copies actually drawn: 1 for the baselines.
    pub fn effective_m(&self) -> Result<usize> {
        match self.method {
            Method::Proposed => match self.m {
                Some(m) => Ok(m),
                None => choose_m(self.alpha, DEFAULT_M_CAP),
            },
            Method::Janson | Method::Derandomized => Ok(1),
        }
    }
}

/// One synthetic dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Matrix<f64>,
    pub y: Vec<f64>,
    pub beta: Vec<f64>,
    /// Sorted nonnull indices; empty when `A = 0`.
    pub nonnull: Vec<usize>,
}

/// Draws datasets for a fixed design; holds the factor of `Σ`.
#[derive(Clone, Debug)]
pub struct DataGenerator {
    config: SimConfig,
    factor: CholeskyFactor<f64>,
}

impl DataGenerator {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let factor = cholesky(config.sigma()?.as_matrix())?;
        Ok(Self {
            config: config.clone(),
            factor,
        })
    }

    pub fn generate(&self, rep: usize) -> Dataset {
        let c = &self.config;
        let mut rng = RandomSeed::new(c.seed, stream(rep, STREAM_DATA)).rng();
        let mut nonnull = sample_indices(&mut rng, c.p, c.n_nonnull).into_vec();
        nonnull.sort_unstable();
        let mut beta = vec![0.0; c.p];
        let size = c.amplitude / (c.n as f64).sqrt();
        for &j in &nonnull {
            beta[j] = if rng.random::<bool>() { size } else { -size };
        }
        if c.amplitude == 0.0 {
            nonnull.clear();
        }
        let mut x = Matrix::zeros(c.n, c.p);
        let mut g = vec![0.0; c.p];
        let mut y = Vec::with_capacity(c.n);
        for i in 0..c.n {
            g.iter_mut().for_each(|v| *v = normal(&mut rng));
            self.factor.mul_vec_into(&g, x.row_mut(i));
            let signal: f64 = nonnull.iter().map(|&j| x[(i, j)] * beta[j]).sum();
            y.push(signal + normal::<f64, _>(&mut rng));
        }
        Dataset {
            x,
            y,
            beta,
            nonnull,
        }
    }
}

pub fn generate_dataset(config: &SimConfig, rep: usize) -> Result<Dataset> {
    Ok(DataGenerator::new(config)?.generate(rep))
}

fn standardize(v: &mut [f64]) -> Option<()> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return None;
    }
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    Some(())
}

/// `Z_j = Σ_i x_ij y_i / √n` after standardizing every column and `y` to mean 0, variance 1.
pub fn compute_zscores(x: &Matrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let mut ys = y.to_vec();
    standardize(&mut ys).ok_or_else(|| Error::Domain("response has zero variance".into()))?;
    let scale = 1.0 / (n as f64).sqrt();
    let mut col = vec![0.0; n];
    (0..x.cols())
        .map(|j| {
            for (i, c) in col.iter_mut().enumerate() {
                *c = x[(i, j)];
            }
            standardize(&mut col)
                .ok_or_else(|| Error::Domain(format!("feature column {j} has zero variance")))?;
            Ok(crate::corr::dot(&col, &ys) * scale)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub n_rejected: usize,
    pub n_false: usize,
    pub n_true_found: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyTiming {
    pub setup_seconds: f64,
    pub replications_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    #[serde(rename = "M")]
    pub m: usize,
    pub gamma: f64,
    pub empirical_fwer: f64,
    pub empirical_power: f64,
    pub per_rep: Vec<RepOutcome>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<StudyTiming>,
}

impl SimResult {
    pub fn without_timing(mut self) -> Self {
        self.timing = None;
        self
    }

    /// Fraction of replications with at least one rejection.
    pub fn any_rejection_rate(&self) -> f64 {
        self.per_rep.iter().filter(|r| r.n_rejected > 0).count() as f64 / self.per_rep.len() as f64
    }
}

/// Coupling vector for `(Σ, M)` under the configured construction and `γ`.
pub fn build_s(
    sigma: &CorrelationMatrix<f64>,
    m: usize,
    d_mode: DMode,
    gamma: f64,
) -> Result<SVector<f64>> {
    let s = match d_mode {
        DMode::Sdp => solve_sdp(sigma, m, &SdpOptions::default())?,
        DMode::Equi => solve_equi(sigma, m)?,
    };
    apply_perturbation(sigma, &s, gamma)
}

struct Runner {
    config: SimConfig,
    data: DataGenerator,
    model: KnockoffModel<f64>,
    filter: FilterConfig,
    janson: JansonRule,
}

impl Runner {
    fn run(&self, rep: usize) -> Result<RepOutcome> {
        let c = &self.config;
        let data = self.data.generate(rep);
        let z = compute_zscores(&data.x, &data.y)?;
        let seed = RandomSeed::new(c.seed, stream(rep, STREAM_KNOCKOFF));
        let rejected = match c.method {
            Method::Proposed => self.filter_once(&z, seed, self.filter.v)?,
            Method::Janson => {
                let mut rng = RandomSeed::new(c.seed, stream(rep, STREAM_RULE)).rng();
                let v = self.janson.draw(&mut rng).v;
                self.filter_once(&z, seed, v)?
            }
            Method::Derandomized => {
                let dc = DerandomizedConfig {
                    alpha: c.alpha,
                    k: 1,
                    m_deran: c.m_deran,
                    eta: c.eta,
                };
                derandomized_knockoffs(&self.model, &z, &dc, seed)?.selected
            }
        };
        let n_true_found = rejected
            .iter()
            .filter(|j| data.nonnull.binary_search(j).is_ok())
            .count();
        Ok(RepOutcome {
            rep,
            n_rejected: rejected.len(),
            n_false: rejected.len() - n_true_found,
            n_true_found,
        })
    }

    fn filter_once(&self, z: &[f64], seed: RandomSeed, v: usize) -> Result<Vec<usize>> {
        if v == 0 {
            return Ok(Vec::new());
        }
        let scores = self.model.sample(z, &mut seed.rng())?;
        let stats = knockoff_stats(&scores)?;
        Ok(fwer_filter(&stats, &FilterConfig { v, ..self.filter }).rejected)
    }
}

/// Runs every replication of one configuration, in parallel.
pub fn run_study(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let start = Instant::now();
    let sigma = config.sigma()?;
    let m = config.effective_m()?;
    let gamma = config.effective_gamma();
    let s = build_s(&sigma, m, config.d_mode, gamma)?;
    let model = build_model(&sigma, &s, m)?;
    let runner = Runner {
        config: config.clone(),
        data: DataGenerator::new(config)?,
        model,
        filter: FilterConfig::new(config.alpha, m, 1)?,
        janson: JansonRule::new(config.alpha, 1)?,
    };
    let setup_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let per_rep = (0..config.reps)
        .into_par_iter()
        .map(|rep| runner.run(rep))
        .collect::<Result<Vec<_>>>()?;
    let replications_seconds = start.elapsed().as_secs_f64();
    let reps = per_rep.len() as f64;
    let empirical_fwer = per_rep.iter().filter(|r| r.n_false > 0).count() as f64 / reps;
    let empirical_power = per_rep
        .iter()
        .map(|r| r.n_true_found as f64 / config.n_nonnull as f64)
        .sum::<f64>()
        / reps;
    Ok(SimResult {
        config: config.clone(),
        m,
        gamma,
        empirical_fwer,
        empirical_power,
        per_rep,
        timing: Some(StudyTiming {
            setup_seconds,
            replications_seconds,
        }),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Derandomized,
    Trivial,
    Fast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Cholesky,
    Sampling,
    Inference,
    Total,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 3] = [
        BenchMethod::Derandomized,
        BenchMethod::Trivial,
        BenchMethod::Fast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Derandomized => "derandomized",
            Self::Trivial => "trivial",
            Self::Fast => "fast",
        }
    }
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::Cholesky,
        Phase::Sampling,
        Phase::Inference,
        Phase::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cholesky => "cholesky",
            Self::Sampling => "sampling",
            Self::Inference => "inference",
            Self::Total => "total",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub p_grid: Vec<usize>,
    #[serde(rename = "M")]
    pub m: usize,
    pub reps: usize,
    pub seed: u64,
    pub n: usize,
    pub rho: f64,
    pub m_deran: usize,
    pub skip_trivial: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            p_grid: vec![50, 100, 200],
            m: 19,
            reps: 10,
            seed: 0,
            n: 1000,
            rho: 0.25,
            m_deran: 50,
            skip_trivial: false,
        }
    }
}

/// Median seconds for one method, phase and dimension; `None` when skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: BenchMethod,
    pub phase: Phase,
    pub p: usize,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub config: BenchConfig,
    pub cells: Vec<BenchCell>,
}

impl BenchTable {
    pub fn get(&self, method: BenchMethod, phase: Phase, p: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.phase == phase && c.p == p)
            .and_then(|c| c.seconds)
    }

    pub fn methods(&self) -> Vec<BenchMethod> {
        let mut m: Vec<_> = self.cells.iter().map(|c| c.method).collect();
        m.sort();
        m.dedup();
        m
    }

    /// Wide CSV: one row per method and phase, one column per `p`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,phase");
        for p in &self.config.p_grid {
            out.push_str(&format!(",p{p}"));
        }
        out.push('\n');
        for method in self.methods() {
            for phase in Phase::ALL {
                out.push_str(method.name());
                out.push(',');
                out.push_str(phase.name());
                for &p in &self.config.p_grid {
                    match self.get(method, phase, p) {
                        Some(s) => out.push_str(&format!(",{s:.6e}")),
                        None => out.push_str(",skipped"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    crate::stats::median_in_place(&mut v)
}

fn timed<R>(f: impl FnOnce() -> Result<R>) -> Result<(R, f64)> {
    let t = Instant::now();
    let r = f()?;
    Ok((r, t.elapsed().as_secs_f64()))
}

type PhaseTimes = [f64; 3];

fn bench_fast(
    parts: &crate::sampler::CouplingParts<f64>,
    model: &KnockoffModel<f64>,
    z: &[f64],
    filter: &FilterConfig,
    seed: RandomSeed,
) -> Result<PhaseTimes> {
    let (_, chol) = timed(|| cholesky_psd(&parts.block))?;
    let (scores, samp) = timed(|| model.sample(z, &mut seed.rng()))?;
    let (_, inf) = timed(|| Ok(fwer_filter(&knockoff_stats(&scores)?, filter)))?;
    Ok([chol, samp, inf])
}

fn bench_trivial(
    parts: &crate::sampler::CouplingParts<f64>,
    d: &Matrix<f64>,
    m: usize,
    z: &[f64],
    filter: &FilterConfig,
    seed: RandomSeed,
) -> Result<PhaseTimes> {
    let v = crate::sampler::assemble_v(&parts.c, d, m)?;
    let (factor, chol) = timed(|| cholesky_psd(&v))?;
    let sampler = TrivialSampler::from_factor(parts.proj.clone(), factor, m);
    let (scores, samp) = timed(|| sampler.sample(z, &mut seed.rng()))?;
    let (_, inf) = timed(|| Ok(fwer_filter(&knockoff_stats(&scores)?, filter)))?;
    Ok([chol, samp, inf])
}

fn bench_derandomized(
    parts: &crate::sampler::CouplingParts<f64>,
    model: &KnockoffModel<f64>,
    z: &[f64],
    m_deran: usize,
    seed: RandomSeed,
) -> Result<PhaseTimes> {
    let (_, chol) = timed(|| cholesky_psd(&parts.c))?;
    let mut rng = seed.rng();
    let (draws, samp) = timed(|| {
        let mut out = Vec::with_capacity(m_deran);
        for _ in 0..m_deran {
            out.push(model.sample(z, &mut rng)?);
        }
        Ok(out)
    })?;
    let filter = FilterConfig {
        alpha: 0.05,
        m: 1,
        k: 1,
        v: 1,
        exceeds_rule: false,
    };
    let (_, inf) = timed(|| {
        let sets = draws
            .iter()
            .map(|s: &KnockoffScores<f64>| Ok(fwer_filter(&knockoff_stats(s)?, &filter).rejected))
            .collect::<Result<Vec<_>>>()?;
        crate::filter::derandomized_select(&sets, 0.99, z.len())
    })?;
    Ok([chol, samp, inf])
}

/// Times the three knockoff pipelines on AR(1) designs; runs on the calling thread.
pub fn run_bench(config: &BenchConfig) -> Result<BenchTable> {
    if config.reps == 0 || config.m == 0 || config.p_grid.is_empty() {
        return Err(Error::Domain(
            "bench needs reps >= 1, M >= 1 and a non-empty p grid".into(),
        ));
    }
    let mut cells = Vec::new();
    for &p in &config.p_grid {
        let sim = SimConfig {
            n: config.n,
            p,
            structure: Structure::Ar1,
            rho: config.rho,
            amplitude: 0.0,
            n_nonnull: 1,
            reps: config.reps,
            seed: config.seed,
            ..SimConfig::default()
        };
        let sigma = sim.sigma()?;
        let sigma_inv = inverse_spd(&sigma)?;
        let gen = DataGenerator::new(&sim)?;
        let s_fast = build_s(&sigma, config.m, DMode::Sdp, 1.0)?;
        let d_fast = Matrix::from_diag(s_fast.values());
        let parts_fast = coupling_parts(&sigma_inv, &d_fast, config.m)?;
        let model_fast = build_model(&sigma, &s_fast, config.m)?;
        let s_one = build_s(&sigma, 1, DMode::Sdp, 1.0)?;
        let parts_one = coupling_parts(&sigma_inv, &Matrix::from_diag(s_one.values()), 1)?;
        let model_one = build_model(&sigma, &s_one, 1)?;
        let filter = FilterConfig::new(0.05, config.m, 1)?;
        let trivial_ok = !config.skip_trivial && p * config.m <= crate::sampler::TRIVIAL_MAX_DIM;
        if !config.skip_trivial && !trivial_ok {
            log::warn!("p = {p}: trivial path exceeds the memory guard, skipped");
        }

        let mut times: Vec<(BenchMethod, Vec<PhaseTimes>)> =
            BenchMethod::ALL.iter().map(|&m| (m, Vec::new())).collect();
        for rep in 0..=config.reps {
            let data = gen.generate(rep);
            let z = compute_zscores(&data.x, &data.y)?;
            let seed = RandomSeed::new(config.seed, stream(rep, STREAM_KNOCKOFF));
            let d = bench_derandomized(&parts_one, &model_one, &z, config.m_deran, seed)?;
            let t = if trivial_ok {
                Some(bench_trivial(
                    &parts_fast,
                    &d_fast,
                    config.m,
                    &z,
                    &filter,
                    seed,
                )?)
            } else {
                None
            };
            let f = bench_fast(&parts_fast, &model_fast, &z, &filter, seed)?;
            // rep 0 is the warm-up
            if rep == 0 {
                continue;
            }
            times[0].1.push(d);
            if let Some(t) = t {
                times[1].1.push(t);
            }
            times[2].1.push(f);
        }
        for (method, samples) in times {
            if config.skip_trivial && method == BenchMethod::Trivial {
                continue;
            }
            for (k, phase) in Phase::ALL.iter().enumerate() {
                let seconds = if samples.is_empty() {
                    None
                } else if *phase == Phase::Total {
                    Some(median(samples.iter().map(|t| t.iter().sum()).collect()))
                } else {
                    Some(median(samples.iter().map(|t| t[k]).collect()))
                };
                cells.push(BenchCell {
                    method,
                    phase: *phase,
                    p,
                    seconds,
                });
            }
        }
    }
    Ok(BenchTable {
        config: config.clone(),
        cells,
    })
}
