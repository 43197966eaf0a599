use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use firmsim::analysis::{analyze, diff, read_counts, write_diff, write_metrics, write_rank_size};
use firmsim::calibration::{fit_all, parse_targets, write_results};
use firmsim::config::ScenarioConfig;
use firmsim::ingest::read_file;
use firmsim::preset::{PAPER_2008, SECTOR_TARGETS_CSV, TARGET_HORIZON};
use firmsim::runner::run;

#[derive(Parser)]
#[command(name = "firmsim", version, about = "Firm demography and relocation on a grid")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Start from a named preset instead of a file.
    #[arg(long, global = true, value_name = "NAME", conflicts_with = "config")]
    preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario and write snapshots, report.csv and timings.csv.
    Run,
    /// Fit per-sector parameters to start/end totals.
    Calibrate {
        /// Targets CSV; defaults to the bundled 1950/2004 sector totals.
        #[arg(long, value_name = "PATH")]
        targets: Option<PathBuf>,
        /// Years between the two observations.
        #[arg(long, default_value_t = TARGET_HORIZON)]
        horizon: u32,
    },
    /// Rank-size metrics of a snapshot (firm or raster CSV).
    Analyze {
        snapshot: PathBuf,
        /// Second snapshot for a cell-level difference report.
        #[arg(long, value_name = "PATH")]
        compare: Option<PathBuf>,
    },
    /// Check a scenario without running it.
    ValidateConfig,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn scenario(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => ScenarioConfig::from_file(path),
        (None, Some(name)) => ScenarioConfig::preset(name),
        (None, None) => ScenarioConfig::preset(PAPER_2008),
    }
    .map_err(|e| Failure::Validation(e.to_string()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

/// `dir/name` when `--out` is given, stdout otherwise.
fn sink(dir: Option<&Path>, name: &str) -> Result<Box<dyn Write>, Failure> {
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run => {
            let cfg = scenario(cli)?;
            let report = run(&cfg).map_err(runtime)?;
            println!(
                "{} years simulated, {} snapshots in {}",
                report.iterations,
                report.snapshots.len(),
                cfg.output_dir.display()
            );
        }
        Command::Calibrate { targets, horizon } => {
            let search = match (&cli.config, &cli.preset) {
                (None, None) => Default::default(),
                _ => scenario(cli)?.search,
            };
            let parsed = match targets {
                Some(path) => parse_targets(read_file(path).map_err(runtime)?, *horizon),
                None => parse_targets(SECTOR_TARGETS_CSV.as_bytes(), *horizon),
            }
            .map_err(|e| Failure::Validation(e.to_string()))?;
            let results = fit_all(&parsed, |_| search);
            for r in results.iter().filter(|r| !r.converged) {
                warn!(
                    "sector {} did not converge (rel_psi {:.3e}, rel_xi {:.3e}{})",
                    r.sector,
                    r.rel_psi,
                    r.rel_xi,
                    if r.infeasible { ", outside reach of the bounds" } else { "" }
                );
            }
            write_results(sink(cli.out.as_deref(), "calibration.csv")?, &results).map_err(runtime)?;
        }
        Command::Analyze { snapshot, compare } => {
            let load = |p: &Path| read_file(p).and_then(read_counts).map_err(runtime);
            let counts = load(snapshot)?;
            let metrics = analyze(&counts);
            let out = cli.out.as_deref();
            write_metrics(sink(out, "metrics.csv")?, &metrics).map_err(runtime)?;
            if out.is_some() {
                write_rank_size(sink(out, "rank_size.csv")?, &metrics).map_err(runtime)?;
            }
            if let Some(other) = compare {
                let d = diff(&counts, &load(other)?);
                write_diff(sink(out, "diff.csv")?, &d).map_err(runtime)?;
            }
        }
        Command::ValidateConfig => {
            let cfg = scenario(cli)?;
            info!("{cfg:?}");
            println!(
                "ok: {}..{} on {}x{} cells, seed {}",
                cfg.start_year, cfg.end_year, cfg.grid.ncols, cfg.grid.nrows, cfg.seed
            );
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
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
