//! Market, agglomeration and congestion potentials.
//!
//! Each potential is a sum over source cells of `N_j * exp(-decay * d_ij)`,
//! where `N_j` is all firms (market, congestion) or firms of one sector
//! (agglomeration), and a cell always counts its own occupants with weight 1.
//!
//! Two routes compute the same sums:
//! - [`PotentialMethod::Exact`] evaluates every target/source pair directly.
//! - [`PotentialMethod::Truncated`] drops sources farther than `radius` and
//!   reads weights from a precomputed stencil. Its per-cell error is at most
//!   `ignored_mass * exp(-decay * radius)`, reported in [`PotentialField::bounds`].

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::world::{CellId, GridGeometry, SectorId, SectorParams, SectorTable, WorldState, NUM_SECTORS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum PotentialMethod {
    Exact,
    /// Ignore sources beyond `radius` distance units. `f64::INFINITY` keeps every source.
    Truncated { radius: f64 },
}

/// What `N_j` counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassWeighting {
    #[default]
    Firms,
    Employees,
}

/// Euclidean distance between cell centroids in model units.
pub fn cell_distance(a: CellId, b: CellId, grid: &GridGeometry) -> f64 {
    let dx = a.col as f64 - b.col as f64;
    let dy = a.row as f64 - b.row as f64;
    grid.cell_size * dx.hypot(dy)
}

pub fn decay_weight(decay: f64, distance: f64) -> f64 {
    (-decay * distance).exp()
}

/// `sum_j weights[j] * exp(-decay * d(i, j))` over all cells, by direct evaluation.
pub fn potential_at(i: CellId, weights: &[f64], decay: f64, grid: &GridGeometry) -> f64 {
    weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(j, &w)| w * decay_weight(decay, cell_distance(i, grid.cell(j), grid)))
        .sum()
}

/// Upper bound on the per-cell error of dropping sources beyond `radius`.
pub fn truncation_bound(total_mass: f64, decay: f64, radius: f64) -> f64 {
    if radius.is_infinite() {
        0.0
    } else {
        total_mass * decay_weight(decay, radius)
    }
}

/// Kernel weights by `(|dy|, |dx|)` offset, zero beyond the truncation radius.
#[derive(Debug, Clone)]
struct Stencil {
    max_dx: usize,
    /// Per `|dy|`: largest `|dx|` inside the radius, or `None` if the row is out of reach.
    half_width: Vec<Option<usize>>,
    weights: Vec<f64>,
}

impl Stencil {
    fn new(grid: &GridGeometry, decay: f64, radius: f64) -> Self {
        let max_dx = grid.ncols as usize - 1;
        let max_dy = grid.nrows as usize - 1;
        let mut weights = vec![0.0; (max_dy + 1) * (max_dx + 1)];
        let mut half_width = vec![None; max_dy + 1];
        let origin = CellId::new(0, 0);
        for dy in 0..=max_dy {
            for dx in 0..=max_dx {
                let d = cell_distance(origin, CellId::new(dx as u32, dy as u32), grid);
                if d <= radius {
                    weights[dy * (max_dx + 1) + dx] = decay_weight(decay, d);
                    half_width[dy] = Some(dx);
                }
            }
        }
        Stencil { max_dx, half_width, weights }
    }

    fn weight(&self, dy: usize, dx: usize) -> f64 {
        self.weights[dy * (self.max_dx + 1) + dx]
    }
}

/// Nonzero source masses grouped by row, columns ascending.
fn sources_by_row(grid: &GridGeometry, mass: &[f64]) -> Vec<Vec<(usize, f64)>> {
    let ncols = grid.ncols as usize;
    let mut rows = vec![Vec::new(); grid.nrows as usize];
    for (j, &m) in mass.iter().enumerate() {
        if m != 0.0 {
            rows[j / ncols].push((j % ncols, m));
        }
    }
    rows
}

fn convolve_truncated(grid: &GridGeometry, mass: &[f64], decay: f64, radius: f64) -> Vec<f64> {
    let ncols = grid.ncols as usize;
    let mut out = vec![0.0; grid.ncells()];
    if mass.iter().all(|&m| m == 0.0) {
        return out;
    }
    let stencil = Stencil::new(grid, decay, radius);
    let rows = sources_by_row(grid, mass);
    out.par_chunks_mut(ncols).enumerate().for_each(|(r, out_row)| {
        for (sr, sources) in rows.iter().enumerate() {
            let dy = r.abs_diff(sr);
            let Some(hx) = stencil.half_width[dy] else { continue };
            for &(sc, m) in sources {
                let lo = sc.saturating_sub(hx);
                let hi = (sc + hx).min(ncols - 1);
                for (c, slot) in out_row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    *slot += m * stencil.weight(dy, c.abs_diff(sc));
                }
            }
        }
    });
    out
}

fn convolve_exact(grid: &GridGeometry, mass: &[f64], decay: f64) -> Vec<f64> {
    let sources: Vec<(CellId, f64)> = mass
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(j, &m)| (grid.cell(j), m))
        .collect();
    (0..grid.ncells())
        .into_par_iter()
        .map(|i| {
            let target = grid.cell(i);
            sources
                .iter()
                .map(|&(src, m)| m * decay_weight(decay, cell_distance(target, src, grid)))
                .sum()
        })
        .collect()
}

/// Potential of `mass` over the whole grid.
pub fn convolve(grid: &GridGeometry, mass: &[f64], decay: f64, method: PotentialMethod) -> Vec<f64> {
    match method {
        PotentialMethod::Exact => convolve_exact(grid, mass, decay),
        PotentialMethod::Truncated { radius } => convolve_truncated(grid, mass, decay, radius),
    }
}

/// Error bounds of one sector's three fields; zero for exact fields.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FieldBounds {
    pub mp: f64,
    pub ap: f64,
    pub cp: f64,
}

/// The three potentials for one start-of-year snapshot.
///
/// Decay rates differ by sector, so market and congestion potentials are
/// stored per sector as well (sectors with equal decay share identical values).
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub snapshot_year: i32,
    pub method: PotentialMethod,
    pub weighting: MassWeighting,
    /// `[sector][cell]`
    pub mp: Vec<Vec<f64>>,
    pub ap: Vec<Vec<f64>>,
    pub cp: Vec<Vec<f64>>,
    pub bounds: Vec<FieldBounds>,
}

impl PotentialField {
    pub fn mp(&self, sector: SectorId, cell: usize) -> f64 {
        self.mp[sector.index()][cell]
    }

    pub fn ap(&self, sector: SectorId, cell: usize) -> f64 {
        self.ap[sector.index()][cell]
    }

    pub fn cp(&self, sector: SectorId, cell: usize) -> f64 {
        self.cp[sector.index()][cell]
    }

    /// Flat field of zeros, handy for constructing test instances.
    pub fn zeros(ncells: usize, snapshot_year: i32) -> Self {
        PotentialField {
            snapshot_year,
            method: PotentialMethod::Exact,
            weighting: MassWeighting::Firms,
            mp: vec![vec![0.0; ncells]; NUM_SECTORS],
            ap: vec![vec![0.0; ncells]; NUM_SECTORS],
            cp: vec![vec![0.0; ncells]; NUM_SECTORS],
            bounds: vec![FieldBounds::default(); NUM_SECTORS],
        }
    }
}

/// Source masses `(total, per sector)` from the current occupancy.
pub fn source_masses(state: &WorldState, weighting: MassWeighting) -> (Vec<f64>, Vec<Vec<f64>>) {
    let grid = state.grid();
    match weighting {
        MassWeighting::Firms => {
            let total = state.total_counts().iter().map(|&c| c as f64).collect();
            let per = SectorId::all()
                .map(|s| state.sector_counts(s).into_iter().map(|c| c as f64).collect())
                .collect();
            (total, per)
        }
        MassWeighting::Employees => {
            let mut total = vec![0.0; grid.ncells()];
            let mut per = vec![vec![0.0; grid.ncells()]; NUM_SECTORS];
            for f in state.firms() {
                let c = grid.index(f.cell);
                total[c] += f.size;
                per[f.sector.index()][c] += f.size;
            }
            (total, per)
        }
    }
}

fn method_radius(method: PotentialMethod) -> f64 {
    match method {
        PotentialMethod::Exact => f64::INFINITY,
        PotentialMethod::Truncated { radius } => radius,
    }
}

/// Computes all fields from the current state.
pub fn compute_fields(
    state: &WorldState,
    params: &SectorTable,
    method: PotentialMethod,
    weighting: MassWeighting,
) -> PotentialField {
    let grid = state.grid();
    let (total, per_sector) = source_masses(state, weighting);
    let total_mass: f64 = total.iter().sum();
    let radius = method_radius(method);

    // Market and congestion fields only depend on the decay rate.
    let mut by_decay: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (_, p) in params.iter() {
        for d in [p.decay_mp, p.decay_cp] {
            by_decay.entry(d.to_bits()).or_insert_with(|| convolve(grid, &total, d, method));
        }
    }

    let mut field = PotentialField::zeros(grid.ncells(), state.year());
    field.method = method;
    field.weighting = weighting;
    for (s, p) in params.iter() {
        let i = s.index();
        field.mp[i] = by_decay[&p.decay_mp.to_bits()].clone();
        field.cp[i] = by_decay[&p.decay_cp.to_bits()].clone();
        let sector_mass: f64 = per_sector[i].iter().sum();
        if sector_mass > 0.0 {
            field.ap[i] = convolve(grid, &per_sector[i], p.decay_ap, method);
        }
        field.bounds[i] = FieldBounds {
            mp: truncation_bound(total_mass, p.decay_mp, radius),
            ap: truncation_bound(sector_mass, p.decay_ap, radius),
            cp: truncation_bound(total_mass, p.decay_cp, radius),
        };
    }
    field
}

/// Change in every cell's kernel sum when `mass` moves from `old` to `new`.
fn move_delta(grid: &GridGeometry, old: CellId, new: CellId, decay: f64, radius: f64, mass: f64) -> Vec<f64> {
    let kernel = |d: f64| if d <= radius { decay_weight(decay, d) } else { 0.0 };
    grid.cells()
        .map(|i| mass * (kernel(cell_distance(i, new, grid)) - kernel(cell_distance(i, old, grid))))
        .collect()
}

/// Updates `field` in place for one firm of `sector` moving from `old` to `new`.
///
/// `mass` is 1 under firm weighting and the firm's size under employee weighting.
pub fn field_delta_move(
    field: &mut PotentialField,
    grid: &GridGeometry,
    old: CellId,
    new: CellId,
    sector: SectorId,
    mass: f64,
    params: &SectorTable,
) {
    if old == new {
        return;
    }
    let radius = method_radius(field.method);
    let mut cache: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut delta_for = |decay: f64| {
        cache
            .entry(decay.to_bits())
            .or_insert_with(|| move_delta(grid, old, new, decay, radius, mass))
            .clone()
    };
    let add = |values: &mut [f64], delta: &[f64]| {
        for (v, d) in values.iter_mut().zip(delta) {
            // Clamp the rounding residue of a cell whose mass moved away entirely.
            *v = (*v + d).max(0.0);
        }
    };
    for (s, p) in params.iter() {
        let i = s.index();
        add(&mut field.mp[i], &delta_for(p.decay_mp));
        add(&mut field.cp[i], &delta_for(p.decay_cp));
        if s == sector {
            add(&mut field.ap[i], &delta_for(p.decay_ap));
        }
    }
}

/// Writes one field layer as `col,row,value`.
pub fn write_field_raster(path: &Path, grid: &GridGeometry, values: &[f64]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "col,row,value")?;
    for (i, v) in values.iter().enumerate() {
        let c = grid.cell(i);
        writeln!(out, "{},{},{}", c.col, c.row, v)?;
    }
    out.flush()
}

/// Weighted combination `w_mp*MP + w_ap*AP + w_cp*CP` for one sector and cell.
pub fn weighted_potential(field: &PotentialField, sector: SectorId, cell: usize, p: &SectorParams) -> f64 {
    p.w_mp * field.mp(sector, cell) + p.w_ap * field.ap(sector, cell) + p.w_cp * field.cp(sector, cell)
}
