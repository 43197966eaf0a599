//! The `paper-2008` parameter preset and bundled 1950/2004 sector targets.

use crate::calibration::CalibrationTarget;
use crate::world::{RelocationParams, SectorId, SectorParams, SectorTable, NUM_SECTORS};

pub const PAPER_2008: &str = "paper-2008";

/// Sector totals for 1950 and 2004, `sector,firms_t0,employees_t0,firms_T,employees_T`.
pub const SECTOR_TARGETS_CSV: &str = include_str!("../data/sector_targets.csv");

/// Years between the two observed cross-sections.
pub const TARGET_HORIZON: u32 = 54;

/// (epsilon, theta, critical size, alpha, beta) per sector.
const POPULATION: [(f64, f64, f64, f64, f64); NUM_SECTORS] = [
    (-0.00646, 0.00010, 24.0, 3.1, 0.1),
    (0.00334, 0.00120, 8.0, 4.0, 0.1),
    (0.01129, 0.00900, 7.0, 2.7, 0.1),
    (0.00607, 0.01500, 16.0, 4.0, 0.1),
    (0.02770, 0.00100, 7.0, 2.8, 0.1),
    (-0.01779, 0.00700, 6.0, 5.3, 0.1),
    (-0.00662, 0.01500, 5.0, 5.5, 0.1),
    (-0.01489, 0.02000, 56.0, 6.0, 0.1),
    (0.00395, 0.00852, 11.0, 2.0, 0.1),
    (-0.00137, 0.00700, 52.0, 4.0, 0.1),
    (-0.01620, 0.01000, 66.0, 6.5, 0.1),
    (-0.00302, 0.00400, 39.0, 6.0, 0.1),
    (-0.00862, 0.01000, 10.0, 5.0, 0.1),
    (0.02335, 0.00100, 2.0, 6.0, 0.1),
    (0.03137, 0.00100, 5.0, 2.0, 0.1),
    (0.04838, 0.00010, 3303.0, 1.0, 0.1),
    (0.01869, 0.01294, 5.0, 3.5, 0.1),
    (-0.01269, 0.02000, 7.0, 5.5, 0.1),
    (0.07463, 0.00100, 10.0, 0.1, 0.1),
    (0.02895, 0.00100, 19.0, 1.0, 0.1),
    (0.05542, 0.01147, 3.0, 1.0, 0.1),
];

/// Distance decay shared by the three potentials; sectors not listed use 0.6.
fn decay(sector: SectorId) -> f64 {
    match sector.get() {
        9 => 0.1,
        15 => 0.2,
        14 => 0.3,
        3 => 0.4,
        6 => 0.5,
        _ => 0.6,
    }
}

pub const DEFAULT_DELTA: f64 = -0.01;
pub const DEFAULT_SIGMA_PHI: f64 = 0.02;
pub const DEFAULT_SIGMA_RHO: f64 = 0.0;
pub const DEFAULT_SPIN_MU: f64 = 0.0;
pub const DEFAULT_SPIN_SIGMA: f64 = 1.0;

pub fn paper_2008_sectors() -> SectorTable {
    let params = SectorId::all()
        .map(|s| {
            let (epsilon, theta, s_crit, spin_alpha, spin_beta) = POPULATION[s.index()];
            let d = decay(s);
            SectorParams {
                epsilon,
                theta,
                spin_alpha,
                spin_beta,
                s_crit,
                delta: DEFAULT_DELTA,
                sigma_phi: DEFAULT_SIGMA_PHI,
                sigma_rho: DEFAULT_SIGMA_RHO,
                spin_mu: DEFAULT_SPIN_MU,
                spin_sigma: DEFAULT_SPIN_SIGMA,
                decay_mp: d,
                decay_ap: d,
                decay_cp: d,
                w_mp: 1.0,
                w_ap: 0.5,
                w_cp: -1.0,
                spin_rate: None,
            }
        })
        .collect();
    SectorTable::new(params)
}

pub fn paper_2008_relocation() -> RelocationParams {
    RelocationParams { lambda1: 0.9, lambda2: 0.09, lambda3: 0.01 }
}

pub fn sector_targets() -> Vec<CalibrationTarget> {
    crate::calibration::parse_targets(SECTOR_TARGETS_CSV.as_bytes(), TARGET_HORIZON)
        .expect("bundled targets parse")
}
