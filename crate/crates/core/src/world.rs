//! Domain types, grid geometry and the mutable simulation state.
//!
//! [`WorldState`] is the single source of truth for a simulated year. It owns
//! the live firm population together with per-cell occupancy histograms, and
//! every mutation goes through methods that keep the two consistent.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::ExactSum;

/// Number of industrial sectors in the classification.
pub const NUM_SECTORS: usize = 21;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("sector {0} outside 1..={NUM_SECTORS}")]
    InvalidSector(i64),
    #[error("grid must have ncols >= 1, nrows >= 1 and cell_size > 0 (got {ncols}x{nrows}, {cell_size})")]
    InvalidGrid { ncols: u32, nrows: u32, cell_size: f64 },
    #[error("firm {firm} is located at ({col},{row}) outside the {ncols}x{nrows} grid")]
    OutOfGrid { firm: FirmId, col: u32, row: u32, ncols: u32, nrows: u32 },
    #[error("cell ({col},{row}) outside the grid")]
    CellOutOfGrid { col: u32, row: u32 },
    #[error("duplicate firm id {0}")]
    DuplicateFirm(FirmId),
    #[error("unknown firm id {0}")]
    UnknownFirm(FirmId),
    #[error("firm {firm} has non-positive size {size}")]
    NonPositiveSize { firm: FirmId, size: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct SectorId(u8);

impl SectorId {
    pub fn new(id: i64) -> Result<Self, WorldError> {
        if (1..=NUM_SECTORS as i64).contains(&id) {
            Ok(SectorId(id as u8))
        } else {
            Err(WorldError::InvalidSector(id))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based position, for indexing per-sector tables.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < NUM_SECTORS, "sector index {index} out of range");
        SectorId(index as u8 + 1)
    }

    pub fn all() -> impl Iterator<Item = SectorId> {
        (1..=NUM_SECTORS as u8).map(SectorId)
    }
}

impl TryFrom<i64> for SectorId {
    type Error = WorldError;
    fn try_from(v: i64) -> Result<Self, WorldError> {
        SectorId::new(v)
    }
}

impl From<SectorId> for u8 {
    fn from(s: SectorId) -> u8 {
        s.0
    }
}

impl fmt::Display for SectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub col: u32,
    pub row: u32,
}

impl CellId {
    pub const fn new(col: u32, row: u32) -> Self {
        CellId { col, row }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FirmId(pub u64);

impl fmt::Display for FirmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Rectangular lattice of square cells. Cells are stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub ncols: u32,
    pub nrows: u32,
    /// Model distance units per cell edge.
    pub cell_size: f64,
}

impl GridGeometry {
    pub fn new(ncols: u32, nrows: u32, cell_size: f64) -> Result<Self, WorldError> {
        if ncols == 0 || nrows == 0 || !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(WorldError::InvalidGrid { ncols, nrows, cell_size });
        }
        Ok(GridGeometry { ncols, nrows, cell_size })
    }

    pub fn ncells(&self) -> usize {
        self.ncols as usize * self.nrows as usize
    }

    pub fn contains(&self, cell: CellId) -> bool {
        cell.col < self.ncols && cell.row < self.nrows
    }

    pub fn index(&self, cell: CellId) -> usize {
        debug_assert!(self.contains(cell));
        cell.row as usize * self.ncols as usize + cell.col as usize
    }

    pub fn cell(&self, index: usize) -> CellId {
        let ncols = self.ncols as usize;
        CellId::new((index % ncols) as u32, (index / ncols) as u32)
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.ncells()).map(move |i| self.cell(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Firm {
    pub id: FirmId,
    pub sector: SectorId,
    /// Employees; real-valued so yearly growth factors do not accumulate rounding.
    pub size: f64,
    pub cell: CellId,
    pub born_year: i32,
    pub parent: Option<FirmId>,
}

/// Per-sector demographic and locational constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorParams {
    /// Mean annual relative growth.
    pub epsilon: f64,
    /// Base annual closure probability.
    pub theta: f64,
    pub spin_alpha: f64,
    pub spin_beta: f64,
    /// Critical size scaling the spin-off logistic.
    pub s_crit: f64,
    /// Weight on distance from the current location; never positive.
    pub delta: f64,
    pub sigma_phi: f64,
    pub sigma_rho: f64,
    pub spin_mu: f64,
    pub spin_sigma: f64,
    pub decay_mp: f64,
    pub decay_ap: f64,
    pub decay_cp: f64,
    pub w_mp: f64,
    pub w_ap: f64,
    pub w_cp: f64,
    /// Constant spin-off probability replacing the size logistic when set.
    /// Calibration fits this proxy.
    pub spin_rate: Option<f64>,
}

impl SectorParams {
    pub fn validate(&self) -> Result<(), String> {
        let finite = [
            self.epsilon, self.theta, self.spin_alpha, self.spin_beta, self.s_crit, self.delta,
            self.sigma_phi, self.sigma_rho, self.spin_mu, self.spin_sigma, self.decay_mp,
            self.decay_ap, self.decay_cp, self.w_mp, self.w_ap, self.w_cp,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err("all parameters must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(format!("theta {} outside [0,1]", self.theta));
        }
        if self.s_crit <= 0.0 {
            return Err(format!("s_crit {} must be > 0", self.s_crit));
        }
        if self.delta > 0.0 {
            return Err(format!("delta {} must be <= 0", self.delta));
        }
        if self.sigma_phi < 0.0 || self.sigma_rho < 0.0 || self.spin_sigma < 0.0 {
            return Err("noise scales must be >= 0".into());
        }
        for (name, v) in [("decay_mp", self.decay_mp), ("decay_ap", self.decay_ap), ("decay_cp", self.decay_cp)] {
            if v <= 0.0 {
                return Err(format!("{name} {v} must be > 0"));
            }
        }
        if let Some(p) = self.spin_rate {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("spin_rate {p} outside [0,1]"));
            }
        }
        Ok(())
    }
}

/// Parameters for all 21 sectors, indexed by [`SectorId`].
#[derive(Debug, Clone, PartialEq)]
pub struct SectorTable(Vec<SectorParams>);

impl SectorTable {
    pub fn new(params: Vec<SectorParams>) -> Self {
        assert_eq!(params.len(), NUM_SECTORS, "sector table needs exactly {NUM_SECTORS} rows");
        SectorTable(params)
    }

    pub fn uniform(params: SectorParams) -> Self {
        SectorTable(vec![params; NUM_SECTORS])
    }

    pub fn get(&self, sector: SectorId) -> &SectorParams {
        &self.0[sector.index()]
    }

    pub fn get_mut(&mut self, sector: SectorId) -> &mut SectorParams {
        &mut self.0[sector.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (SectorId, &SectorParams)> {
        self.0.iter().enumerate().map(|(i, p)| (SectorId::from_index(i), p))
    }

    pub fn validate(&self) -> Result<(), String> {
        for (s, p) in self.iter() {
            p.validate().map_err(|e| format!("sector {s}: {e}"))?;
        }
        Ok(())
    }
}

/// Annual relocation mode probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelocationParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl RelocationParams {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self, String> {
        let p = RelocationParams { lambda1, lambda2, lambda3 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ls = [self.lambda1, self.lambda2, self.lambda3];
        if ls.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(format!("relocation probabilities {ls:?} must lie in [0,1]"));
        }
        let total: f64 = ls.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(format!("relocation probabilities sum to {total}, not 1"));
        }
        Ok(())
    }
}

/// Count and employee total of one sector.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SectorAggregate {
    pub firms: u64,
    pub employees: ExactSum,
}

impl SectorAggregate {
    pub fn employees_f64(&self) -> f64 {
        self.employees.to_f64()
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    year: i32,
    grid: GridGeometry,
    firms: BTreeMap<FirmId, Firm>,
    /// `ncells * NUM_SECTORS`, cell-major.
    occupancy: Vec<u32>,
    occupancy_total: Vec<u32>,
    next_id: u64,
}

impl WorldState {
    pub fn build(firms: Vec<Firm>, grid: GridGeometry, year: i32) -> Result<Self, WorldError> {
        let mut state = WorldState {
            year,
            grid,
            firms: BTreeMap::new(),
            occupancy: vec![0; grid.ncells() * NUM_SECTORS],
            occupancy_total: vec![0; grid.ncells()],
            next_id: 1,
        };
        for firm in firms {
            state.insert_firm(firm)?;
        }
        Ok(state)
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn set_year(&mut self, year: i32) {
        self.year = year;
    }

    pub fn grid(&self) -> &GridGeometry {
        &self.grid
    }

    pub fn num_firms(&self) -> usize {
        self.firms.len()
    }

    pub fn firm(&self, id: FirmId) -> Option<&Firm> {
        self.firms.get(&id)
    }

    /// Live firms in ascending id order.
    pub fn firms(&self) -> impl Iterator<Item = &Firm> {
        self.firms.values()
    }

    pub fn firm_ids(&self) -> Vec<FirmId> {
        self.firms.keys().copied().collect()
    }

    pub fn occupancy(&self, cell: CellId, sector: SectorId) -> u32 {
        self.occupancy[self.grid.index(cell) * NUM_SECTORS + sector.index()]
    }

    pub fn occupancy_total(&self, cell: CellId) -> u32 {
        self.occupancy_total[self.grid.index(cell)]
    }

    /// Occupancy of one sector for every cell, by cell index.
    pub fn sector_counts(&self, sector: SectorId) -> Vec<u32> {
        self.occupancy.iter().skip(sector.index()).step_by(NUM_SECTORS).copied().collect()
    }

    pub fn total_counts(&self) -> &[u32] {
        &self.occupancy_total
    }

    /// Reserves a fresh firm id above every id seen so far.
    pub fn allocate_id(&mut self) -> FirmId {
        let id = FirmId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn insert_firm(&mut self, firm: Firm) -> Result<(), WorldError> {
        if !self.grid.contains(firm.cell) {
            return Err(WorldError::OutOfGrid {
                firm: firm.id,
                col: firm.cell.col,
                row: firm.cell.row,
                ncols: self.grid.ncols,
                nrows: self.grid.nrows,
            });
        }
        if !(firm.size > 0.0 && firm.size.is_finite()) {
            return Err(WorldError::NonPositiveSize { firm: firm.id, size: firm.size });
        }
        if self.firms.contains_key(&firm.id) {
            return Err(WorldError::DuplicateFirm(firm.id));
        }
        self.next_id = self.next_id.max(firm.id.0 + 1);
        self.bump(firm.cell, firm.sector, 1);
        self.firms.insert(firm.id, firm);
        Ok(())
    }

    pub fn remove_firm(&mut self, id: FirmId) -> Result<Firm, WorldError> {
        let firm = self.firms.remove(&id).ok_or(WorldError::UnknownFirm(id))?;
        self.bump(firm.cell, firm.sector, -1);
        Ok(firm)
    }

    pub fn set_size(&mut self, id: FirmId, size: f64) -> Result<(), WorldError> {
        if !(size > 0.0 && size.is_finite()) {
            return Err(WorldError::NonPositiveSize { firm: id, size });
        }
        let firm = self.firms.get_mut(&id).ok_or(WorldError::UnknownFirm(id))?;
        firm.size = size;
        Ok(())
    }

    /// Moves a firm, returning its previous cell.
    pub fn apply_move(&mut self, id: FirmId, new_cell: CellId) -> Result<CellId, WorldError> {
        if !self.grid.contains(new_cell) {
            return Err(WorldError::CellOutOfGrid { col: new_cell.col, row: new_cell.row });
        }
        let firm = self.firms.get_mut(&id).ok_or(WorldError::UnknownFirm(id))?;
        let old = firm.cell;
        if old == new_cell {
            return Ok(old);
        }
        firm.cell = new_cell;
        let sector = firm.sector;
        self.bump(old, sector, -1);
        self.bump(new_cell, sector, 1);
        Ok(old)
    }

    fn bump(&mut self, cell: CellId, sector: SectorId, delta: i32) {
        let c = self.grid.index(cell);
        let slot = &mut self.occupancy[c * NUM_SECTORS + sector.index()];
        *slot = slot.checked_add_signed(delta).expect("occupancy underflow");
        let total = &mut self.occupancy_total[c];
        *total = total.checked_add_signed(delta).expect("occupancy underflow");
    }

    pub fn sector_aggregate(&self, sector: SectorId) -> SectorAggregate {
        let mut agg = SectorAggregate::default();
        for f in self.firms.values().filter(|f| f.sector == sector) {
            agg.firms += 1;
            agg.employees += ExactSum::from_f64(f.size);
        }
        agg
    }

    /// Aggregates for all sectors in one pass, indexed by `SectorId::index`.
    pub fn aggregates(&self) -> [SectorAggregate; NUM_SECTORS] {
        let mut out = [SectorAggregate::default(); NUM_SECTORS];
        for f in self.firms.values() {
            let a = &mut out[f.sector.index()];
            a.firms += 1;
            a.employees += ExactSum::from_f64(f.size);
        }
        out
    }

    /// Recomputes occupancy from the firm list and compares with the maintained histogram.
    pub fn occupancy_consistent(&self) -> bool {
        let mut occ = vec![0u32; self.occupancy.len()];
        let mut tot = vec![0u32; self.occupancy_total.len()];
        for f in self.firms.values() {
            let c = self.grid.index(f.cell);
            occ[c * NUM_SECTORS + f.sector.index()] += 1;
            tot[c] += 1;
        }
        occ == self.occupancy && tot == self.occupancy_total
    }
}
