//! The yearly simulation loop and its output files.
//!
//! Each year: potentials from the start-of-year state, then demography and
//! relocation in the configured order, then the year advances. Output goes to
//! the scenario's output directory:
//!
//! - `firms_<year>.csv` / `raster_<year>.csv`: snapshots (see [`crate::ingest::write_snapshot`])
//! - `report.csv`: per-year, per-sector event counts and totals
//! - `timings.csv`: wall-clock phase durations; the only output that varies between identical runs

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;
use thiserror::Error;

use crate::config::{EventOrder, InputSource, ScenarioConfig};
use crate::demography::{step_demography, SectorLedger};
use crate::ingest::{
    assign_to_cells, generate_synthetic, parse_municipality_map, parse_registry, read_file, write_snapshot,
    IngestError, SnapshotPaths,
};
use crate::relocation::step_relocation;
use crate::rng::{substream, Purpose};
use crate::spatial::compute_fields;
use crate::world::{SectorId, WorldError, WorldState, NUM_SECTORS};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("initial world: {0}")]
    World(#[from] WorldError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("year {year}: bookkeeping mismatch in sector {sector}")]
    Bookkeeping { year: i32, sector: SectorId },
}

/// Builds the start-year world from the configured registry or synthetic recipe.
pub fn initial_world(cfg: &ScenarioConfig) -> Result<WorldState, RunError> {
    let year = cfg.start_year;
    let records = match &cfg.input {
        InputSource::Registry { registry, municipalities } => {
            let records = parse_registry(read_file(registry)?)?;
            let map = parse_municipality_map(read_file(municipalities)?, &cfg.grid)?;
            (records, map)
        }
        InputSource::Synthetic(spec) => {
            let mut rng = substream(cfg.seed, year as i64, 0, Purpose::Synthetic);
            generate_synthetic(spec, &cfg.grid, &mut rng)
        }
    };
    let (records, map) = records;
    let mut rng = substream(cfg.seed, year as i64, 0, Purpose::Assignment);
    let firms = assign_to_cells(&records, &map, year, &mut rng)?;
    Ok(WorldState::build(firms, cfg.grid, year)?)
}

/// One sector's events in one simulated year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YearRecord {
    pub year: i32,
    pub sector: SectorId,
    pub ledger: SectorLedger,
    pub moves: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub fields: Duration,
    pub demography: Duration,
    pub relocation: Duration,
}

/// Advances `state` by one year and returns its per-sector records.
pub fn step_year(state: &mut WorldState, cfg: &ScenarioConfig) -> (Vec<YearRecord>, PhaseTimings) {
    let year = state.year();
    let mut t = PhaseTimings::default();

    let clock = Instant::now();
    let field = compute_fields(state, &cfg.sectors, cfg.potential, cfg.mass_weighting);
    t.fields = clock.elapsed();

    let mut moves = Vec::new();
    let mut relocate = |state: &mut WorldState, t: &mut PhaseTimings| {
        let clock = Instant::now();
        moves = step_relocation(state, &field, &cfg.sectors, &cfg.relocation, cfg.seed);
        t.relocation = clock.elapsed();
    };
    if cfg.event_order == EventOrder::RelocationFirst {
        relocate(state, &mut t);
    }
    let clock = Instant::now();
    let outcome = step_demography(state, &cfg.sectors, &cfg.demography, cfg.seed);
    t.demography = clock.elapsed();
    if cfg.event_order == EventOrder::DemographyFirst {
        relocate(state, &mut t);
    }

    let mut per_sector = [0u64; NUM_SECTORS];
    for (id, _) in &moves {
        // Closed firms never move, so every mover is still present.
        let sector = state.firm(*id).expect("moved firm exists").sector;
        per_sector[sector.index()] += 1;
    }
    state.set_year(year + 1);
    let records = SectorId::all()
        .map(|s| YearRecord { year, sector: s, ledger: outcome.ledger[s.index()], moves: per_sector[s.index()] })
        .collect();
    (records, t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub years: Vec<YearRecord>,
    pub snapshots: Vec<SnapshotPaths>,
    pub iterations: u32,
    pub report_path: PathBuf,
    pub timings_path: PathBuf,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

pub const REPORT_HEADER: &str = "year,sector,firms_before,closures,spinoffs,firms_after,employees_before,growth,closed_employees,employees_after,moves";

fn write_report_row(w: &mut impl Write, r: &YearRecord) -> std::io::Result<()> {
    let l = &r.ledger;
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.year,
        r.sector,
        l.firms_before,
        l.closures,
        l.spinoffs,
        l.firms_after,
        l.employees_before.to_f64(),
        l.growth.to_f64(),
        l.closed_employees.to_f64(),
        l.employees_after.to_f64(),
        r.moves
    )
}

fn snapshot_due(cfg: &ScenarioConfig, year: i32) -> bool {
    year == cfg.start_year || year == cfg.end_year || (year - cfg.start_year) % cfg.snapshot_every as i32 == 0
}

/// Runs the scenario from `start_year` to `end_year`, writing all outputs.
pub fn run(cfg: &ScenarioConfig) -> Result<RunReport, RunError> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut state = initial_world(cfg)?;
    info!("{} firms at {}", state.num_firms(), cfg.start_year);

    let report_path = dir.join("report.csv");
    let timings_path = dir.join("timings.csv");
    let mut report = BufWriter::new(File::create(&report_path).map_err(io_err(&report_path))?);
    let mut timings = BufWriter::new(File::create(&timings_path).map_err(io_err(&timings_path))?);
    writeln!(report, "{REPORT_HEADER}").map_err(io_err(&report_path))?;
    writeln!(timings, "year,fields_ms,demography_ms,relocation_ms,snapshot_ms").map_err(io_err(&timings_path))?;

    let mut out = RunReport {
        years: Vec::new(),
        snapshots: vec![write_snapshot(&state, dir)?],
        iterations: 0,
        report_path: report_path.clone(),
        timings_path: timings_path.clone(),
    };

    while state.year() < cfg.end_year {
        let year = state.year();
        let (records, t) = step_year(&mut state, cfg);
        for r in &records {
            if !(r.ledger.firms_balance() && r.ledger.employees_balance()) {
                return Err(RunError::Bookkeeping { year, sector: r.sector });
            }
            write_report_row(&mut report, r).map_err(io_err(&report_path))?;
        }
        out.years.extend(records);
        out.iterations += 1;

        let clock = Instant::now();
        if snapshot_due(cfg, state.year()) {
            out.snapshots.push(write_snapshot(&state, dir)?);
        }
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        writeln!(
            timings,
            "{},{:.3},{:.3},{:.3},{:.3}",
            year,
            ms(t.fields),
            ms(t.demography),
            ms(t.relocation),
            ms(clock.elapsed())
        )
        .map_err(io_err(&timings_path))?;
        info!("year {year}: {} firms", state.num_firms());
    }

    report.flush().map_err(io_err(&report_path))?;
    timings.flush().map_err(io_err(&timings_path))?;
    Ok(out)
}
