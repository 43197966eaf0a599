//! Firm registries, municipality maps, synthetic registries and snapshots.
//!
//! All files are headered CSV. Firms are placed by drawing a cell uniformly,
//! with replacement, from the cells of their municipality.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Deserialize;
use thiserror::Error;

use crate::world::{CellId, Firm, FirmId, GridGeometry, SectorId, WorldState, NUM_SECTORS};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}, column {column}: {message}")]
    Row { line: u64, column: String, message: String },
    #[error("line {line}: duplicate firm_id {firm_id}")]
    DuplicateFirm { line: u64, firm_id: u64 },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("unknown municipality {0}")]
    UnknownMunicipality(u64),
    #[error("municipality map: {0}")]
    Map(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistryRecord {
    pub firm_id: u64,
    pub sector: SectorId,
    pub size: u64,
    pub municipality_id: u64,
}

/// Municipality id to its cells. Cell lists are non-empty and disjoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MunicipalityMap {
    cells: BTreeMap<u64, Vec<CellId>>,
}

impl MunicipalityMap {
    pub fn new(cells: BTreeMap<u64, Vec<CellId>>, grid: &GridGeometry) -> Result<Self, IngestError> {
        let mut seen = BTreeSet::new();
        for (id, list) in &cells {
            if list.is_empty() {
                return Err(IngestError::Map(format!("municipality {id} has no cells")));
            }
            for &c in list {
                if !grid.contains(c) {
                    return Err(IngestError::Map(format!("municipality {id}: cell {c} outside the grid")));
                }
                if !seen.insert(c) {
                    return Err(IngestError::Map(format!("cell {c} belongs to more than one municipality")));
                }
            }
        }
        Ok(MunicipalityMap { cells })
    }

    pub fn cells(&self, municipality: u64) -> Option<&[CellId]> {
        self.cells.get(&municipality).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[CellId])> {
        self.cells.iter().map(|(&id, c)| (id, c.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<bool, IngestError> {
    let header = rdr
        .headers()
        .map_err(|e| IngestError::Malformed { line: 1, message: e.to_string() })?;
    if header.is_empty() {
        return Ok(false);
    }
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(IngestError::Malformed { line: 1, message: format!("expected header {}", expected.join(",")) });
    }
    Ok(true)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<T, IngestError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).ok_or_else(|| IngestError::Row { line, column: name.into(), message: "missing".into() })?;
    raw.parse::<T>()
        .map_err(|e| IngestError::Row { line, column: name.into(), message: format!("{raw:?}: {e}") })
}

fn records(
    rdr: &mut csv::Reader<impl Read>,
    ncols: usize,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord), IngestError>> + '_ {
    rdr.records().map(move |r| {
        let rec = r.map_err(|e| IngestError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != ncols {
            return Err(IngestError::Malformed { line, message: format!("expected {ncols} fields, found {}", rec.len()) });
        }
        Ok((line, rec))
    })
}

const REGISTRY_HEADER: [&str; 4] = ["firm_id", "sector", "size", "municipality_id"];

/// Parses `firm_id,sector,size,municipality_id`.
pub fn parse_registry<R: Read>(reader: R) -> Result<Vec<RegistryRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    if !check_header(&mut rdr, &REGISTRY_HEADER)? {
        return Ok(Vec::new());
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in records(&mut rdr, 4) {
        let (line, rec) = row?;
        let firm_id: u64 = field(&rec, 0, "firm_id", line)?;
        let sector_raw: i64 = field(&rec, 1, "sector", line)?;
        let sector = SectorId::new(sector_raw)
            .map_err(|e| IngestError::Row { line, column: "sector".into(), message: e.to_string() })?;
        let size: u64 = field(&rec, 2, "size", line)?;
        if size == 0 {
            return Err(IngestError::Row { line, column: "size".into(), message: "size must be >= 1".into() });
        }
        let municipality_id: u64 = field(&rec, 3, "municipality_id", line)?;
        if !seen.insert(firm_id) {
            return Err(IngestError::DuplicateFirm { line, firm_id });
        }
        out.push(RegistryRecord { firm_id, sector, size, municipality_id });
    }
    Ok(out)
}

/// Parses `municipality_id,col,row`, one row per cell.
pub fn parse_municipality_map<R: Read>(reader: R, grid: &GridGeometry) -> Result<MunicipalityMap, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let mut cells: BTreeMap<u64, Vec<CellId>> = BTreeMap::new();
    if check_header(&mut rdr, &["municipality_id", "col", "row"])? {
        for row in records(&mut rdr, 3) {
            let (line, rec) = row?;
            let id: u64 = field(&rec, 0, "municipality_id", line)?;
            let cell = CellId::new(field(&rec, 1, "col", line)?, field(&rec, 2, "row", line)?);
            cells.entry(id).or_default().push(cell);
        }
    }
    MunicipalityMap::new(cells, grid)
}

/// Places each registry firm in a cell drawn uniformly from its municipality.
pub fn assign_to_cells<R: Rng + ?Sized>(
    records: &[RegistryRecord],
    map: &MunicipalityMap,
    year: i32,
    rng: &mut R,
) -> Result<Vec<Firm>, IngestError> {
    records
        .iter()
        .map(|r| {
            let cells = map.cells(r.municipality_id).ok_or(IngestError::UnknownMunicipality(r.municipality_id))?;
            let cell = *cells.choose(rng).expect("municipality has cells");
            Ok(Firm { id: FirmId(r.firm_id), sector: r.sector, size: r.size as f64, cell, born_year: year, parent: None })
        })
        .collect()
}

/// Recipe for a synthetic registry.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Firms per sector, indexed by `SectorId::index`.
    pub counts: Vec<u64>,
    /// Target mean employees per firm, per sector.
    pub mean_sizes: Vec<f64>,
    /// Log-scale spread of the size distribution.
    pub size_sigma: f64,
    /// 0 spreads firms uniformly over cells; larger values concentrate them in few municipalities.
    pub clustering: f64,
    /// Municipality block size in cells.
    pub block_cols: u32,
    pub block_rows: u32,
}

impl SyntheticSpec {
    /// Sector mix and mean sizes of a reference population, scaled to `total` firms.
    ///
    /// Counts are apportioned by largest remainder so they add up to `total` exactly.
    pub fn scaled(reference: &[(u64, u64)], total: u64) -> Self {
        assert_eq!(reference.len(), NUM_SECTORS);
        let all: u64 = reference.iter().map(|r| r.0).sum();
        let quotas: Vec<f64> = reference.iter().map(|r| r.0 as f64 * total as f64 / all as f64).collect();
        let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
        let mut order: Vec<usize> = (0..NUM_SECTORS).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let missing = total - counts.iter().sum::<u64>();
        for &i in order.iter().take(missing as usize) {
            counts[i] += 1;
        }
        let mean_sizes = reference.iter().map(|&(f, e)| if f > 0 { e as f64 / f as f64 } else { 1.0 }).collect();
        SyntheticSpec { counts, mean_sizes, size_sigma: 1.0, clustering: 1.0, block_cols: 5, block_rows: 5 }
    }
}

/// Integer size >= 1 with mean `mean` (sizes of 1 when `mean <= 1`).
///
/// `1 + lognormal` with its mean set to `mean - 1`, then rounded up or down
/// at random in proportion to the fractional part, which keeps the mean exact.
pub fn draw_firm_size<R: Rng + ?Sized>(mean: f64, sigma: f64, rng: &mut R) -> u64 {
    if mean <= 1.0 {
        return 1;
    }
    let mu = (mean - 1.0).ln() - 0.5 * sigma * sigma;
    let y = 1.0 + LogNormal::new(mu, sigma).expect("sigma >= 0").sample(rng);
    let base = y.floor();
    let up = rng.random::<f64>() < y - base;
    base as u64 + up as u64
}

/// Lays municipalities out as `block_cols x block_rows` tiles, numbered from 1 in row-major order.
pub fn block_municipalities(grid: &GridGeometry, block_cols: u32, block_rows: u32) -> MunicipalityMap {
    let bc = block_cols.max(1);
    let br = block_rows.max(1);
    let per_row = grid.ncols.div_ceil(bc);
    let mut cells: BTreeMap<u64, Vec<CellId>> = BTreeMap::new();
    for c in grid.cells() {
        let id = (c.row / br) as u64 * per_row as u64 + (c.col / bc) as u64 + 1;
        cells.entry(id).or_default().push(c);
    }
    MunicipalityMap::new(cells, grid).expect("tiling is a partition")
}

/// Generates a registry and its municipality map.
///
/// Municipality `m` receives firms with probability proportional to
/// `cells_m * rank_m^(-clustering)`, where ranks are a random permutation.
pub fn generate_synthetic<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    grid: &GridGeometry,
    rng: &mut R,
) -> (Vec<RegistryRecord>, MunicipalityMap) {
    let map = block_municipalities(grid, spec.block_cols, spec.block_rows);
    let ids: Vec<u64> = map.iter().map(|(id, _)| id).collect();
    let mut ranks: Vec<usize> = (1..=ids.len()).collect();
    ranks.shuffle(rng);
    let weights: Vec<f64> = map
        .iter()
        .zip(&ranks)
        .map(|((_, cells), &rank)| cells.len() as f64 * (rank as f64).powf(-spec.clustering))
        .collect();
    let pick = WeightedIndex::new(&weights).expect("positive weights");

    let mut records = Vec::new();
    let mut next_id = 1;
    for s in SectorId::all() {
        let n = spec.counts.get(s.index()).copied().unwrap_or(0);
        let mean = spec.mean_sizes.get(s.index()).copied().unwrap_or(1.0);
        for _ in 0..n {
            records.push(RegistryRecord {
                firm_id: next_id,
                sector: s,
                size: draw_firm_size(mean, spec.size_sigma, rng),
                municipality_id: ids[pick.sample(rng)],
            });
            next_id += 1;
        }
    }
    (records, map)
}

fn create(path: &Path) -> Result<BufWriter<File>, IngestError> {
    File::create(path).map(BufWriter::new).map_err(|e| IngestError::io(path, e))
}

pub fn write_registry(path: &Path, records: &[RegistryRecord]) -> Result<(), IngestError> {
    let mut w = create(path)?;
    let io = |e| IngestError::io(path, e);
    writeln!(w, "{}", REGISTRY_HEADER.join(",")).map_err(io)?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.firm_id, r.sector, r.size, r.municipality_id).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_municipality_map(path: &Path, map: &MunicipalityMap) -> Result<(), IngestError> {
    let mut w = create(path)?;
    let io = |e| IngestError::io(path, e);
    writeln!(w, "municipality_id,col,row").map_err(io)?;
    for (id, cells) in map.iter() {
        for c in cells {
            writeln!(w, "{},{},{}", id, c.col, c.row).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Paths of one snapshot's two files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotPaths {
    pub firms: PathBuf,
    pub raster: PathBuf,
}

pub const FIRM_SNAPSHOT_HEADER: &str = "firm_id,sector,size,col,row,year";
pub const RASTER_HEADER: &str = "col,row,sector,count";

/// Writes `firms_<year>.csv` and `raster_<year>.csv` into `dir`.
///
/// Sizes use the shortest representation that parses back to the same value.
/// The raster lists nonzero `(cell, sector)` counts in cell order.
pub fn write_snapshot(state: &WorldState, dir: &Path) -> Result<SnapshotPaths, IngestError> {
    std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    let year = state.year();
    let paths = SnapshotPaths {
        firms: dir.join(format!("firms_{year}.csv")),
        raster: dir.join(format!("raster_{year}.csv")),
    };

    let mut w = create(&paths.firms)?;
    let io = |e| IngestError::io(&paths.firms, e);
    writeln!(w, "{FIRM_SNAPSHOT_HEADER}").map_err(io)?;
    for f in state.firms() {
        writeln!(w, "{},{},{},{},{},{}", f.id, f.sector, f.size, f.cell.col, f.cell.row, year).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let mut w = create(&paths.raster)?;
    let io = |e| IngestError::io(&paths.raster, e);
    writeln!(w, "{RASTER_HEADER}").map_err(io)?;
    for cell in state.grid().cells() {
        if state.occupancy_total(cell) == 0 {
            continue;
        }
        for s in SectorId::all() {
            let n = state.occupancy(cell, s);
            if n > 0 {
                writeln!(w, "{},{},{},{}", cell.col, cell.row, s, n).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;
    Ok(paths)
}

/// Reads a firm-level snapshot back into firms.
///
/// Lineage is not part of the file: every firm comes back with `born_year`
/// equal to the snapshot year and no parent.
pub fn parse_snapshot_firms<R: Read>(reader: R) -> Result<Vec<Firm>, IngestError> {
    let header: Vec<&str> = FIRM_SNAPSHOT_HEADER.split(',').collect();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    if !check_header(&mut rdr, &header)? {
        return Ok(Vec::new());
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in records(&mut rdr, 6) {
        let (line, rec) = row?;
        let id: u64 = field(&rec, 0, "firm_id", line)?;
        let sector_raw: i64 = field(&rec, 1, "sector", line)?;
        let sector = SectorId::new(sector_raw)
            .map_err(|e| IngestError::Row { line, column: "sector".into(), message: e.to_string() })?;
        let size: f64 = field(&rec, 2, "size", line)?;
        let col: u32 = field(&rec, 3, "col", line)?;
        let row: u32 = field(&rec, 4, "row", line)?;
        let year: i32 = field(&rec, 5, "year", line)?;
        if !seen.insert(id) {
            return Err(IngestError::DuplicateFirm { line, firm_id: id });
        }
        out.push(Firm { id: FirmId(id), sector, size, cell: CellId::new(col, row), born_year: year, parent: None });
    }
    Ok(out)
}

/// One `(cell, sector, count)` raster entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RasterEntry {
    pub cell: CellId,
    pub sector: SectorId,
    pub count: u64,
}

pub fn parse_raster<R: Read>(reader: R) -> Result<Vec<RasterEntry>, IngestError> {
    let header: Vec<&str> = RASTER_HEADER.split(',').collect();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    if !check_header(&mut rdr, &header)? {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for row in records(&mut rdr, 4) {
        let (line, rec) = row?;
        let cell = CellId::new(field(&rec, 0, "col", line)?, field(&rec, 1, "row", line)?);
        let sector_raw: i64 = field(&rec, 2, "sector", line)?;
        let sector = SectorId::new(sector_raw)
            .map_err(|e| IngestError::Row { line, column: "sector".into(), message: e.to_string() })?;
        out.push(RasterEntry { cell, sector, count: field(&rec, 3, "count", line)? });
    }
    Ok(out)
}

pub fn read_file(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|e| IngestError::io(path, e))
}
