//! `kswap` command-line driver.

mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kswap::donors::{Strategy, DEFAULT_HALF_WINDOW, DEFAULT_N_MST};
use kswap::evaluate::Mode;
use kswap::metrics::ToleranceUnit;
use kswap::phantom::Severity;
use kswap::transfer::Aggregation;

/// Training-free test-time adaptation by low-frequency Fourier amplitude
/// swapping.
///
/// Defaults are tagged [published] when they are the values stated for the
/// original method and [chosen] when they are this tool's own choice.
#[derive(Debug, Parser)]
#[command(name = "kswap", version, about, long_about)]
struct Cli {
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true, env = "KSWAP_WORKERS")]
    workers: Option<usize>,

    /// More logging (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Swap donor styles into a target volume and write the adapted volumes
    Adapt(AdaptArgs),
    /// Rank style donors for a target volume
    Donors(DonorArgs),
    /// Score a predictor on a source/target pair under one adaptation mode
    Evaluate(EvalArgs),
    /// Grid-search beta over one or more source/target pairs
    BetaSearch(BetaSearchArgs),
    /// Generate a synthetic multi-domain phantom benchmark
    Phantom(PhantomArgs),
}

#[derive(Debug, Clone, Args)]
struct SelectionArgs {
    /// Donor search strategy: 3d, 2d or 2.5d [chosen]
    #[arg(long, default_value = "2.5d", value_parser = parse::<Strategy>)]
    strategy: Strategy,
    /// Donors per target slice [published]
    #[arg(long = "n-mst", default_value_t = DEFAULT_N_MST)]
    n_mst: usize,
    /// Half-width of the 2.5d slice window [published]
    #[arg(long, default_value_t = DEFAULT_HALF_WINDOW)]
    m: usize,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    /// Target volume (.vol or .nii)
    #[arg(long)]
    target: PathBuf,
    /// Directory of source-domain .vol scans
    #[arg(long)]
    sources: PathBuf,
    /// Swap radius as a fraction of the inscribed disk [published]
    #[arg(long, default_value_t = 0.03)]
    beta: f64,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DonorArgs {
    /// Target volume (.vol or .nii)
    #[arg(long)]
    target: PathBuf,
    /// Directory of source-domain .vol scans
    #[arg(long)]
    sources: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct ScoringArgs {
    /// `baseline` or `precomputed:<file or directory>` [chosen]
    #[arg(long, default_value = "baseline")]
    predictor: String,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Aggregation of donor predictions: mean-probability or mean-vote [chosen]
    #[arg(long, default_value = "mean-probability", value_parser = parse::<Aggregation>)]
    aggregation: Aggregation,
    /// Probability threshold for the final mask [chosen]
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Surface Dice tolerance [chosen]
    #[arg(long, default_value_t = 1.0)]
    tolerance: f64,
    /// Unit of the tolerance: voxel or mm [chosen]
    #[arg(long, default_value = "voxel", value_parser = parse_unit)]
    tolerance_unit: ToleranceUnit,
    /// Seed of random donor draws (mst, swap-single) [chosen]
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of source-domain .vol scans
    #[arg(long)]
    sources: PathBuf,
    /// Directory of target .vol scans with <id>_mask.vol ground truth
    #[arg(long)]
    targets: PathBuf,
    /// naive (alias none), swap-single, mst or srsim-mst [chosen]
    #[arg(long, default_value = "srsim-mst", value_parser = parse::<Mode>)]
    mode: Mode,
    /// Swap radius as a fraction of the inscribed disk [published]
    #[arg(long, default_value_t = 0.03)]
    beta: f64,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Also write each target's probability volume
    #[arg(long)]
    save_predictions: bool,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BetaSearchArgs {
    /// Source directory; repeat once per pair
    #[arg(long, required = true)]
    sources: Vec<PathBuf>,
    /// Target directory with masks; repeat once per pair
    #[arg(long, required = true)]
    targets: Vec<PathBuf>,
    /// Comma-separated strictly increasing betas [chosen; brackets the published 0.03]
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.03,0.05,0.07,0.1")]
    grid: Vec<f64>,
    /// Use only the first N target scans of each pair (default: all) [chosen]
    #[arg(long)]
    validation_scans: Option<usize>,
    /// Adaptation mode scored at each beta [chosen]
    #[arg(long, default_value = "srsim-mst", value_parser = parse::<Mode>)]
    mode: Mode,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PhantomArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Master seed [chosen]
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// subtle, medium, severe or all [chosen]
    #[arg(long, default_value = "all")]
    severity: String,
    /// Domains per tier [chosen]
    #[arg(long, default_value_t = 2)]
    domains: usize,
    /// Scans per domain [chosen]
    #[arg(long, default_value_t = 4)]
    scans: usize,
    /// Scan shape as slices,rows,cols [chosen]
    #[arg(long, value_delimiter = ',', default_value = "8,64,64")]
    shape: Vec<usize>,
}

fn parse<T: std::str::FromStr<Err = kswap::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: kswap::Error| e.to_string())
}

fn parse_unit(s: &str) -> Result<ToleranceUnit, String> {
    match s {
        "voxel" => Ok(ToleranceUnit::Voxel),
        "mm" => Ok(ToleranceUnit::Mm),
        other => Err(format!("unknown tolerance unit '{other}' (expected voxel or mm)")),
    }
}

fn parse_severities(s: &str) -> Result<Vec<Severity>, kswap::Error> {
    if s == "all" {
        return Ok(Severity::ALL.to_vec());
    }
    s.split(',').map(str::parse).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    let result = match cli.command {
        Command::Adapt(a) => commands::adapt(a),
        Command::Donors(a) => commands::donors(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::BetaSearch(a) => commands::beta_search(a),
        Command::Phantom(a) => commands::phantom(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
