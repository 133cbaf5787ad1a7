//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error (including bad arguments),
//! 1 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;
use serde::Serialize;

use ris_rci::experiments::{self, ExperimentConfig};
use ris_rci::masks::MaskStrategy;
use ris_rci::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "ris-rci", version, about = "RIS radar coincidence imaging simulator")]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root RNG seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for field and matrix evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Proposed,
    Raster,
    Random,
}

#[derive(clap::Args)]
struct StrategyOpts {
    /// Mask strategy (overrides the config).
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Number of masks (overrides the config).
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate masks and export them as CSV.
    Masks(StrategyOpts),
    /// Render single-panel and aggregate speckle patterns.
    Fields(StrategyOpts),
    /// Singular-value study of offset-only vs offset+angle masks.
    Svd,
    /// Simulate and reconstruct with one strategy.
    Image(StrategyOpts),
    /// Proposed vs raster scan vs random patterns.
    Compare,
    /// Clutter robustness study.
    Clutter,
    /// Pattern confinement across several ROIs.
    RoiSweep,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn apply_strategy(cfg: &mut ExperimentConfig, opts: &StrategyOpts) {
    if let Some(n) = opts.count {
        cfg.mask_count = n;
    }
    if let Some(s) = opts.strategy {
        cfg.strategy = match s {
            StrategyArg::Proposed => MaskStrategy::focused_speckle(),
            StrategyArg::Raster => MaskStrategy::raster_for_count(cfg.mask_count),
            StrategyArg::Random => MaskStrategy::RandomPattern,
        };
    }
}

fn print_json<S: Serialize>(value: &S) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => error!("cannot print summary: {e}"),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Masks(o) => {
            apply_strategy(&mut cfg, o);
            let masks = experiments::run_masks(&cfg)?;
            println!("wrote {} masks to {}", masks.len(), cfg.output_dir.join("masks/masks.csv").display());
        }
        Command::Fields(o) => {
            apply_strategy(&mut cfg, o);
            print_json(&experiments::run_fields(&cfg)?);
        }
        Command::Svd => {
            let rep = experiments::run_svd_study(&cfg)?;
            for c in &rep.curves {
                println!("{:<14} sigma40/sigma30 = {:.3e}", c.label, c.ratio(40, 30).unwrap_or(f64::NAN));
            }
        }
        Command::Image(o) => {
            apply_strategy(&mut cfg, o);
            print_json(&experiments::run_image(&cfg)?);
        }
        Command::Compare => {
            let rep = experiments::run_compare(&cfg)?;
            for m in &rep.methods {
                println!(
                    "{:<18} correlation {:>7.4}  peaks {}/{}  iterations {}",
                    m.method, m.metrics.normalized_correlation, m.peak_hits, m.peaks_covered, m.iterations
                );
            }
        }
        Command::Clutter => {
            let rep = experiments::run_clutter_study(&cfg)?;
            for case in &rep.cases {
                for m in &case.report.methods {
                    println!("{:<16} {:<10} correlation {:>7.4}", case.report.case, m.method, m.metrics.normalized_correlation);
                }
            }
        }
        Command::RoiSweep => {
            let rep = experiments::run_roi_sweep(&cfg)?;
            for (i, e) in rep.entries.iter().enumerate() {
                println!(
                    "roi{i} confinement {:.3} (max other {:.3}) centroid inside: {}",
                    e.confinement, e.max_mismatched_confinement, e.centroid_inside
                );
            }
        }
        Command::ShowConfig => {
            cfg.validate()?;
            print!("{}", cfg.to_toml_string()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
