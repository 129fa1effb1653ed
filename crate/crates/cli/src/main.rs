//! `knockoff-fwer`: knockoff inference with FWER control from summary statistics.

mod error;
mod infer;
mod simulate;
mod tools;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use knockoff_fwer::sim::{DMode, Method, Structure};

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(
    name = "knockoff-fwer",
    version,
    about = "Summary-statistics knockoffs with family-wise error rate control"
)]
struct Cli {
    /// Log verbosity; repeat for more detail. `RUST_LOG` takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Silence everything below warnings.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Select features (or groups) from a Z-score file and a correlation matrix.
    Infer(infer::InferArgs),
    /// Run simulation studies, optionally over a parameter grid.
    Simulate(simulate::SimulateArgs),
    /// Time the derandomized, trivial and fast knockoff samplers.
    Bench(tools::BenchArgs),
    /// Group features by single-linkage clustering of `1 − |Σ|`.
    Cluster(tools::ClusterArgs),
    /// Compute the knockoff coupling `D` for a correlation matrix.
    Dsolve(tools::DsolveArgs),
}

/// Number of knockoff copies: an integer or `auto`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopiesArg {
    Auto,
    Fixed(usize),
}

impl FromStr for CopiesArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected a positive integer or 'auto', got '{s}'")),
            Ok(m) => Ok(Self::Fixed(m)),
        }
    }
}

impl CopiesArg {
    pub fn resolve(self, alpha: f64) -> CliResult<usize> {
        match self {
            Self::Fixed(m) => Ok(m),
            Self::Auto => Ok(knockoff_fwer::filter::choose_m(
                alpha,
                knockoff_fwer::filter::DEFAULT_M_CAP,
            )?),
        }
    }

    pub fn fixed(self) -> Option<usize> {
        match self {
            Self::Auto => None,
            Self::Fixed(m) => Some(m),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DModeArg {
    Sdp,
    Equi,
}

impl From<DModeArg> for DMode {
    fn from(d: DModeArg) -> Self {
        match d {
            DModeArg::Sdp => DMode::Sdp,
            DModeArg::Equi => DMode::Equi,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Proposed,
    Janson,
    Derandomized,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Proposed => Method::Proposed,
            MethodArg::Janson => Method::Janson,
            MethodArg::Derandomized => Method::Derandomized,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StructureArg {
    #[value(alias = "cs")]
    CompoundSymmetry,
    Ar1,
}

impl From<StructureArg> for Structure {
    fn from(s: StructureArg) -> Self {
        match s {
            StructureArg::CompoundSymmetry => Structure::CompoundSymmetry,
            StructureArg::Ar1 => Structure::Ar1,
        }
    }
}

/// `--seed` shared by every randomized subcommand.
#[derive(Args, Debug, Clone, Copy)]
pub struct SeedArg {
    /// Master seed; a random one is drawn and logged when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SeedArg {
    pub fn resolve(self) -> u64 {
        resolve_seed(self.seed)
    }
}

pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let seed = rand::random::<u64>();
        log::info!("no --seed given; using seed {seed}");
        seed
    })
}

/// Writes to `path`, or to stdout when it is absent or `-`.
pub fn write_output(path: Option<&Path>, contents: &str) -> CliResult<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            std::fs::write(p, contents)?;
            log::info!("wrote {}", p.display());
        }
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })
}

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.quiet);
    let result = match cli.command {
        Command::Infer(args) => infer::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Bench(args) => tools::bench(args),
        Command::Cluster(args) => tools::cluster(args),
        Command::Dsolve(args) => tools::dsolve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copies_parsing() {
        assert_eq!("auto".parse::<CopiesArg>().unwrap(), CopiesArg::Auto);
        assert_eq!("19".parse::<CopiesArg>().unwrap(), CopiesArg::Fixed(19));
        assert!("0".parse::<CopiesArg>().is_err());
        assert_eq!(CopiesArg::Auto.resolve(0.1).unwrap(), 9);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
