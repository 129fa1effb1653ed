use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use knockoff_fwer::dsolve::{apply_group_perturbation, solve_group_equi};
use knockoff_fwer::filter::{fwer_filter, FilterConfig, FilterOutcome};
use knockoff_fwer::groups::GroupStructure;
use knockoff_fwer::io::{read_correlation, read_zscores};
use knockoff_fwer::sampler::{build_group_model, build_model, RandomSeed};
use knockoff_fwer::sim::build_s;
use knockoff_fwer::stats::{group_knockoff_stats, knockoff_stats, ChiSquarePower, GroupChiSquare};
use knockoff_fwer::{Error, KnockoffStats};

use crate::error::{CliError, CliResult};
use crate::tools::GroupSource;
use crate::{require_file, write_output, CopiesArg, DModeArg, SeedArg};

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Z-score CSV with header `id,z`.
    #[arg(long)]
    pub z: PathBuf,
    /// Correlation matrix (CSV or `.bin`), in the same feature order as the Z-scores.
    #[arg(long)]
    pub sigma: PathBuf,
    /// Target family-wise error rate.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Knockoff copies; `auto` picks the smallest `M` admitting a rejection.
    #[arg(long = "M", alias = "m", default_value = "auto")]
    pub copies: CopiesArg,
    /// Reject until `k` false discoveries are possible (k-FWER).
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Construction of `D` for feature-level inference.
    #[arg(long, value_enum, default_value_t = DModeArg::Sdp)]
    pub d_mode: DModeArg,
    /// Shrink `D` by this factor in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Group-level inference: a groups CSV (`feature,group`) or `cluster:<cutoff>`.
    #[arg(long)]
    pub groups: Option<GroupSource>,
    /// Exponent applied to group chi-square statistics.
    #[arg(long, default_value_t = 2)]
    pub chi_square_power: u32,
    #[command(flatten)]
    pub seed: SeedArg,
    /// JSON report; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of rejected features; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    pub rejected_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    schema_version: u32,
    level: &'static str,
    n_features: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_groups: Option<usize>,
    seed: u64,
    d_mode: &'static str,
    gamma: f64,
    feasibility_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    chi_square_power: Option<u32>,
    exceeds_rule: bool,
    outcome: FilterOutcome,
    rejected_ids: Vec<String>,
}

#[derive(Serialize)]
struct RejectedRow<'a> {
    id: &'a str,
    index: usize,
    group: usize,
    z: f64,
}

pub fn run(args: InferArgs) -> CliResult<()> {
    require_file(&args.z)?;
    require_file(&args.sigma)?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!(
            "--alpha must lie in (0, 1), got {}",
            args.alpha
        )));
    }
    if args.k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let power = ChiSquarePower::from_exponent(args.chi_square_power)?;
    let table = read_zscores(std::fs::File::open(&args.z)?)?;
    let sigma = read_correlation(&args.sigma)?;
    let p = sigma.p();
    if table.z.len() != p {
        return Err(Error::Dimension {
            expected: p,
            got: table.z.len(),
        }
        .into());
    }
    let m = args.copies.resolve(args.alpha)?;
    let seed = args.seed.resolve();
    let mut rng = RandomSeed::new(seed, 0).rng();
    let groups = args.groups.as_ref().map(|g| g.load(&sigma)).transpose()?;
    log::info!("p = {p}, M = {m}, alpha = {}", args.alpha);

    let (stats, margin, d_mode): (KnockoffStats, f64, &'static str) = match &groups {
        None => {
            let s = build_s(&sigma, m, args.d_mode.into(), args.gamma)?;
            let model = build_model(&sigma, &s, m)?;
            let scores = model.sample(&table.z, &mut rng)?;
            let mode = match args.d_mode {
                DModeArg::Sdp => "sdp",
                DModeArg::Equi => "equi",
            };
            (knockoff_stats(&scores)?, s.feasibility_margin(), mode)
        }
        Some(g) => {
            if args.d_mode != DModeArg::Sdp {
                log::info!("group inference always uses the group-equicorrelated D");
            }
            let d = apply_group_perturbation(&sigma, &solve_group_equi(&sigma, g, m)?, args.gamma)?;
            log::info!("{} groups, D scale {:.4}", g.n_groups(), d.scale());
            let model = build_group_model(&sigma, &d, m)?;
            let scores = model.sample(&table.z, &mut rng)?;
            let chi = GroupChiSquare::new(&sigma, g)?.apply_all(&scores)?;
            (
                group_knockoff_stats(&chi, power)?,
                d.feasibility_margin(),
                "group_equi",
            )
        }
    };

    let config = FilterConfig::new(args.alpha, m, args.k)?;
    if config.v == 0 {
        log::warn!(
            "v = 0 at alpha = {} and M = {m}: nothing can be rejected",
            args.alpha
        );
    }
    let outcome = fwer_filter(&stats, &config);
    log::info!(
        "v = {}, stopped after {} items, {} rejected",
        outcome.v,
        outcome.t,
        outcome.rejected.len()
    );

    let members = |item: usize| -> Vec<usize> {
        match &groups {
            None => vec![item],
            Some(g) => g.members(item).to_vec(),
        }
    };
    let rejected_features: Vec<(usize, usize)> = outcome
        .rejected
        .iter()
        .flat_map(|&item| members(item).into_iter().map(move |j| (item, j)))
        .collect();
    let report = Report {
        schema_version: 1,
        level: if groups.is_some() { "group" } else { "feature" },
        n_features: p,
        n_groups: groups.as_ref().map(GroupStructure::n_groups),
        seed,
        d_mode,
        gamma: args.gamma,
        feasibility_margin: margin,
        chi_square_power: groups.as_ref().map(|_| power.exponent()),
        exceeds_rule: config.exceeds_rule,
        rejected_ids: rejected_features
            .iter()
            .map(|&(_, j)| table.ids[j].clone())
            .collect(),
        outcome,
    };
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    write_output(args.out.as_deref(), &json)?;

    let csv_path = args.rejected_csv.clone().or_else(|| {
        args.out
            .as_ref()
            .filter(|p| p.as_os_str() != "-")
            .map(|p| p.with_extension("csv"))
    });
    if let Some(path) = csv_path {
        let mut w = csv::Writer::from_path(&path)?;
        for &(group, j) in &rejected_features {
            w.serialize(RejectedRow {
                id: &table.ids[j],
                index: j,
                group,
                z: table.z[j],
            })?;
        }
        if rejected_features.is_empty() {
            w.write_record(["id", "index", "group", "z"])?;
        }
        w.flush()?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}
