use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::Serialize;

use knockoff_fwer::dsolve::{apply_group_perturbation, solve_group_equi};
use knockoff_fwer::groups::{cluster as cluster_features, ClusterConfig, GroupStructure};
use knockoff_fwer::io::{
    read_correlation, read_groups, write_groups_csv, write_matrix, write_svector,
};
use knockoff_fwer::sim::{build_s, run_bench, BenchConfig};
use knockoff_fwer::{CorrelationMatrix, Error};

use crate::error::{CliError, CliResult};
use crate::{require_file, resolve_seed, write_output, CopiesArg, DModeArg};

/// Where a grouping comes from: a CSV file or clustering at a cutoff.
#[derive(Clone, Debug, PartialEq)]
pub enum GroupSource {
    File(PathBuf),
    Cluster(f64),
}

impl FromStr for GroupSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("cluster:") {
            Some(c) => c
                .parse::<f64>()
                .map(Self::Cluster)
                .map_err(|_| format!("expected 'cluster:<cutoff>', got '{s}'")),
            None => Ok(Self::File(PathBuf::from(s))),
        }
    }
}

impl GroupSource {
    pub fn load(&self, sigma: &CorrelationMatrix) -> CliResult<GroupStructure> {
        let groups = match self {
            Self::File(path) => {
                require_file(path)?;
                read_groups(path)?
            }
            Self::Cluster(cutoff) => cluster_features(sigma, &ClusterConfig::with_cutoff(*cutoff)?),
        };
        if groups.p() != sigma.p() {
            return Err(Error::Dimension {
                expected: sigma.p(),
                got: groups.p(),
            }
            .into());
        }
        Ok(groups)
    }
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Dimensions to time.
    #[arg(long, value_delimiter = ',', default_values_t = vec![50usize, 100, 200])]
    pub p_grid: Vec<usize>,
    /// Knockoff copies for the trivial and fast paths.
    #[arg(long = "M", alias = "m", default_value_t = 19)]
    pub copies: usize,
    /// Timed repetitions per cell, after one discarded warm-up.
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Sample size of the synthetic datasets.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// AR(1) correlation of the synthetic design.
    #[arg(long, default_value_t = 0.25)]
    pub rho: f64,
    /// Knockoff draws aggregated by the derandomized baseline.
    #[arg(long, default_value_t = 50)]
    pub m_deran: usize,
    /// Leave out the trivial `pM × pM` path.
    #[arg(long)]
    pub skip_trivial: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Timing CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench(args: BenchArgs) -> CliResult<()> {
    if args.p_grid.iter().any(|&p| p < 2) {
        return Err(CliError::Usage("every p in --p-grid must be >= 2".into()));
    }
    let config = BenchConfig {
        p_grid: args.p_grid,
        m: args.copies,
        reps: args.reps,
        seed: resolve_seed(args.seed),
        n: args.n,
        rho: args.rho,
        m_deran: args.m_deran,
        skip_trivial: args.skip_trivial,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let table = pool.install(|| run_bench(&config))?;
    write_output(args.out.as_deref(), &table.to_csv())
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Correlation matrix (CSV or `.bin`).
    #[arg(long)]
    pub sigma: PathBuf,
    /// Features join a group when `1 − |ρ|` is strictly below this.
    #[arg(long, default_value_t = 0.25)]
    pub cutoff: f64,
    /// Groups CSV (`feature,group`); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cluster(args: ClusterArgs) -> CliResult<()> {
    require_file(&args.sigma)?;
    let sigma = read_correlation(&args.sigma)?;
    let groups = cluster_features(&sigma, &ClusterConfig::with_cutoff(args.cutoff)?);
    let largest = groups.iter().map(<[usize]>::len).max().unwrap_or(0);
    log::info!(
        "{} features in {} groups, largest has {largest}",
        groups.p(),
        groups.n_groups()
    );
    let mut buf = Vec::new();
    write_groups_csv(&mut buf, &groups)?;
    write_output(args.out.as_deref(), &String::from_utf8_lossy(&buf))
}

#[derive(Args, Debug)]
pub struct DsolveArgs {
    /// Correlation matrix (CSV or `.bin`).
    #[arg(long)]
    pub sigma: PathBuf,
    /// Knockoff copies; `auto` resolves from `--alpha`.
    #[arg(long = "M", alias = "m", default_value = "auto")]
    pub copies: CopiesArg,
    /// Only used to resolve `--M auto`.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = DModeArg::Sdp)]
    pub d_mode: DModeArg,
    /// Shrink `D` by this factor in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Solve the group-equicorrelated block `D` for a groups CSV or `cluster:<cutoff>`.
    #[arg(long)]
    pub groups: Option<GroupSource>,
    /// Output: an `s` vector (plus a `.json` sidecar) or, with groups, the full `D` matrix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct DsolveSummary {
    schema_version: u32,
    #[serde(rename = "M")]
    m: usize,
    kind: &'static str,
    gamma: f64,
    feasibility_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    out: String,
}

pub fn dsolve(args: DsolveArgs) -> CliResult<()> {
    require_file(&args.sigma)?;
    let sigma = read_correlation(&args.sigma)?;
    let m = args.copies.resolve(args.alpha)?;
    let out = args.out.display().to_string();
    let summary = match &args.groups {
        None => {
            let s = build_s(&sigma, m, args.d_mode.into(), args.gamma)?;
            write_svector(&args.out, &s)?;
            DsolveSummary {
                schema_version: 1,
                m,
                kind: match args.d_mode {
                    DModeArg::Sdp => "sdp",
                    DModeArg::Equi => "equi",
                },
                gamma: s.gamma(),
                feasibility_margin: s.feasibility_margin(),
                total: Some(s.total()),
                converged: Some(s.converged()),
                n_groups: None,
                scale: None,
                out,
            }
        }
        Some(source) => {
            let groups = source.load(&sigma)?;
            let d = apply_group_perturbation(
                &sigma,
                &solve_group_equi(&sigma, &groups, m)?,
                args.gamma,
            )?;
            write_matrix(&args.out, d.matrix())?;
            DsolveSummary {
                schema_version: 1,
                m,
                kind: "group_equi",
                gamma: args.gamma,
                feasibility_margin: d.feasibility_margin(),
                total: None,
                converged: None,
                n_groups: Some(groups.n_groups()),
                scale: Some(d.scale()),
                out,
            }
        }
    };
    let json = serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n";
    write_output(None, &json)
}
