use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use knockoff_fwer::sim::{run_study, Method, SimConfig, SimResult, Structure};
use knockoff_fwer::Error;

use crate::error::{CliError, CliResult};
use crate::{
    read_text, require_file, resolve_seed, write_output, CopiesArg, DModeArg, MethodArg,
    StructureArg,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Power and FWER against amplitude for every method, both correlation structures.
    ReplicateFig2,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// TOML or JSON file with study fields and an optional `[grid]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,

    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, value_enum)]
    pub structure: Option<StructureArg>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Signal amplitude `A`; nonnull coefficients are `±A/√n`.
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub n_nonnull: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Target family-wise error rate [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Shrink `D` by this factor [default: 1.0, or 0.9 for compound symmetry with rho >= 0.5].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Construction of `D` [default: sdp].
    #[arg(long, value_enum)]
    pub d_mode: Option<DModeArg>,
    /// Knockoff copies for the proposed method [default: auto].
    #[arg(long = "M", alias = "m")]
    pub copies: Option<CopiesArg>,
    /// Knockoff draws aggregated by the derandomized method [default: 50].
    #[arg(long)]
    pub m_deran: Option<usize>,
    /// Selection frequency kept by the derandomized method [default: 0.99].
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, value_delimiter = ',')]
    pub grid_amplitude: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_rho: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_n_nonnull: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub grid_method: Option<Vec<MethodArg>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub grid_structure: Option<Vec<StructureArg>>,

    /// Worker threads for replications; all cores when omitted.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Include wall-clock timings in the JSON (makes output run-dependent).
    #[arg(long)]
    pub with_timing: bool,
    /// JSON results; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One row per replication and cell.
    #[arg(long)]
    pub per_rep_csv: Option<PathBuf>,
    /// One row per cell with FWER and power.
    #[arg(long)]
    pub summary_csv: Option<PathBuf>,
}

/// Values swept by a study; each field left empty keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    pub amplitude: Vec<f64>,
    pub rho: Vec<f64>,
    pub n: Vec<usize>,
    pub n_nonnull: Vec<usize>,
    pub method: Vec<Method>,
    pub structure: Vec<Structure>,
}

impl Grid {
    fn from_args(args: &SimulateArgs, mut base: Grid) -> CliResult<Grid> {
        fn set<T: Clone>(dst: &mut Vec<T>, src: &Option<Vec<T>>, name: &str) -> CliResult<()> {
            if let Some(v) = src {
                if v.is_empty() {
                    return Err(CliError::Usage(format!("--grid-{name} is empty")));
                }
                *dst = v.clone();
            }
            Ok(())
        }
        set(&mut base.amplitude, &args.grid_amplitude, "amplitude")?;
        set(&mut base.rho, &args.grid_rho, "rho")?;
        set(&mut base.n, &args.grid_n, "n")?;
        set(&mut base.n_nonnull, &args.grid_n_nonnull, "n-nonnull")?;
        if let Some(m) = &args.grid_method {
            base.method = m.iter().map(|&x| x.into()).collect();
        }
        if let Some(s) = &args.grid_structure {
            base.structure = s.iter().map(|&x| x.into()).collect();
        }
        Ok(base)
    }

    fn is_empty(&self) -> bool {
        *self == Grid::default()
    }

    /// Cartesian product in the order structure, method, rho, n, |H₁|, amplitude.
    fn expand(&self, base: &SimConfig) -> Vec<SimConfig> {
        fn axis<T: Clone>(v: &[T], default: T) -> Vec<T> {
            if v.is_empty() {
                vec![default]
            } else {
                v.to_vec()
            }
        }
        let mut cells = Vec::new();
        for structure in axis(&self.structure, base.structure) {
            for method in axis(&self.method, base.method) {
                for rho in axis(&self.rho, base.rho) {
                    for n in axis(&self.n, base.n) {
                        for n_nonnull in axis(&self.n_nonnull, base.n_nonnull) {
                            for amplitude in axis(&self.amplitude, base.amplitude) {
                                cells.push(SimConfig {
                                    structure,
                                    method,
                                    rho,
                                    n,
                                    n_nonnull,
                                    amplitude,
                                    ..base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

/// Parses a TOML or JSON study file into serde-neutral JSON, splitting off `grid`.
fn load_config(path: &Path) -> CliResult<(serde_json::Value, Grid)> {
    require_file(path)?;
    let text = read_text(path)?;
    let mut value: serde_json::Value = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        _ => {
            let t: toml::Value = toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::to_value(t).map_err(Error::from)?
        }
    };
    let obj = value.as_object_mut().ok_or_else(|| {
        CliError::Config(format!(
            "{}: expected a table of study fields",
            path.display()
        ))
    })?;
    let grid = match obj.remove("grid") {
        Some(g) => serde_json::from_value(g).map_err(|e| CliError::Config(format!("grid: {e}")))?,
        None => Grid::default(),
    };
    Ok((value, grid))
}

fn preset_cells(base: &SimConfig) -> Vec<SimConfig> {
    let mut cells = Vec::new();
    for (structure, max_a) in [(Structure::CompoundSymmetry, 20), (Structure::Ar1, 25)] {
        for method in [Method::Proposed, Method::Derandomized, Method::Janson] {
            for a in 1..=max_a {
                cells.push(SimConfig {
                    structure,
                    method,
                    amplitude: a as f64,
                    ..base.clone()
                });
            }
        }
    }
    cells
}

fn apply_flags(args: &SimulateArgs, c: &mut SimConfig) {
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = args.$field {
                c.$field = v;
            }
        };
    }
    take!(n);
    take!(p);
    take!(rho);
    take!(amplitude);
    take!(n_nonnull);
    take!(reps);
    take!(alpha);
    take!(m_deran);
    take!(eta);
    if let Some(s) = args.structure {
        c.structure = s.into();
    }
    if let Some(m) = args.method {
        c.method = m.into();
    }
    if let Some(d) = args.d_mode {
        c.d_mode = d.into();
    }
    if args.gamma.is_some() {
        c.gamma = args.gamma;
    }
    if let Some(m) = args.copies {
        c.m = m.fixed();
    }
}

/// Resolves every study cell: file, then preset, then explicit flags.
pub fn cells(args: &SimulateArgs) -> CliResult<Vec<SimConfig>> {
    let (file_value, file_grid) = match &args.config {
        Some(path) => load_config(path)?,
        None => (serde_json::json!({}), Grid::default()),
    };
    let seed_in_file = file_value.get("seed").is_some();
    let mut base: SimConfig =
        serde_json::from_value(file_value).map_err(|e| CliError::Config(e.to_string()))?;
    if args.preset == Some(Preset::ReplicateFig2) {
        base.n = 500;
        base.p = 100;
        base.rho = 0.5;
        base.n_nonnull = 5;
    }
    apply_flags(args, &mut base);
    if args.seed.is_some() || !seed_in_file {
        base.seed = resolve_seed(args.seed);
    }
    let grid = Grid::from_args(args, file_grid)?;
    let cells = match args.preset {
        Some(Preset::ReplicateFig2) => {
            if !grid.is_empty() {
                return Err(CliError::Usage(
                    "a preset fixes its own grid; drop the grid options".into(),
                ));
            }
            preset_cells(&base)
        }
        None => grid.expand(&base),
    };
    for (i, c) in cells.iter().enumerate() {
        c.validate()
            .map_err(|e| CliError::Usage(format!("cell {i}: {e}")))?;
    }
    Ok(cells)
}

#[derive(Serialize)]
struct Output<'a> {
    schema_version: u32,
    results: &'a [SimResult],
}

const KEY_HEADER: [&str; 8] = [
    "cell",
    "structure",
    "method",
    "rho",
    "n",
    "p",
    "n_nonnull",
    "amplitude",
];

fn cell_key(cell: usize, c: &SimConfig) -> Vec<String> {
    let name = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
    vec![
        cell.to_string(),
        name(serde_json::to_value(c.structure).unwrap_or_default()),
        name(serde_json::to_value(c.method).unwrap_or_default()),
        c.rho.to_string(),
        c.n.to_string(),
        c.p.to_string(),
        c.n_nonnull.to_string(),
        c.amplitude.to_string(),
    ]
}

fn write_csv(
    path: &Path,
    extra: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(KEY_HEADER.iter().chain(extra))?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn run(args: SimulateArgs) -> CliResult<()> {
    let cells = cells(&args)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = args.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| CliError::Config(e.to_string()))?
    };
    log::info!("{} cells, seed {}", cells.len(), cells[0].seed);
    let mut results = Vec::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        let r = pool.install(|| run_study(c))?;
        log::info!(
            "cell {i}: {:?} {:?} A = {} -> FWER {:.3}, power {:.3}",
            c.structure,
            c.method,
            c.amplitude,
            r.empirical_fwer,
            r.empirical_power
        );
        results.push(if args.with_timing {
            r
        } else {
            r.without_timing()
        });
    }
    let json = serde_json::to_string_pretty(&Output {
        schema_version: 1,
        results: &results,
    })
    .map_err(Error::from)?
        + "\n";
    write_output(args.out.as_deref(), &json)?;
    if let Some(path) = &args.per_rep_csv {
        write_csv(
            path,
            &["rep", "n_rejected", "n_false", "n_true_found"],
            results.iter().enumerate().flat_map(|(i, r)| {
                r.per_rep.iter().map(move |o| {
                    let mut row = cell_key(i, &r.config);
                    row.extend(
                        [o.rep, o.n_rejected, o.n_false, o.n_true_found].map(|x| x.to_string()),
                    );
                    row
                })
            }),
        )?;
    }
    if let Some(path) = &args.summary_csv {
        write_csv(
            path,
            &["M", "gamma", "reps", "fwer", "power", "any_rejection"],
            results.iter().enumerate().map(|(i, r)| {
                let mut row = cell_key(i, &r.config);
                row.extend([
                    r.m.to_string(),
                    r.gamma.to_string(),
                    r.per_rep.len().to_string(),
                    r.empirical_fwer.to_string(),
                    r.empirical_power.to_string(),
                    r.any_rejection_rate().to_string(),
                ]);
                row
            }),
        )?;
    }
    Ok(())
}
