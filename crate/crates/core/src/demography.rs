//! Yearly demographic events: growth, closure and spin-off.
//!
//! Within a year every live firm, visited in a seeded shuffled order, first
//! grows by the sector trend plus noise, then may close, and if it survives
//! may produce a spin-off that starts in the parent's cell. Draws for a firm
//! come from its own substream, so the per-firm computation runs in parallel
//! and only the application of outcomes is serialized.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::exact::ExactSum;
use crate::rng::{Purpose, StreamFamily};
use crate::world::{Firm, FirmId, SectorId, SectorParams, SectorTable, WorldState, NUM_SECTORS};

/// Sign convention of the spin-off logistic.
///
/// `Printed` evaluates `1 / (1 + exp((alpha*S - beta) / S_crit))`, which falls
/// with size for positive alpha. `Inverted` flips the sign of the exponent so
/// the probability rises with size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    #[default]
    Printed,
    Inverted,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Printed => 1.0,
            Orientation::Inverted => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemographyConfig {
    pub orientation: Orientation,
    /// Firms that shrink below this many employees close.
    pub min_size: f64,
}

impl Default for DemographyConfig {
    fn default() -> Self {
        DemographyConfig { orientation: Orientation::Printed, min_size: 0.5 }
    }
}

/// Size after one year of growth, `size * (1 + epsilon + phi)` with
/// `phi ~ Normal(0, sigma_phi)`. The caller closes firms that end up below
/// [`DemographyConfig::min_size`].
pub fn grow_firm<R: Rng + ?Sized>(size: f64, params: &SectorParams, rng: &mut R) -> f64 {
    let phi = Normal::new(0.0, params.sigma_phi).expect("sigma_phi >= 0").sample(rng);
    size * (1.0 + params.epsilon + phi)
}

/// `theta + rho` with `rho ~ Normal(0, sigma_rho)`, clamped to [0, 1].
pub fn closure_probability<R: Rng + ?Sized>(params: &SectorParams, rng: &mut R) -> f64 {
    let rho = Normal::new(0.0, params.sigma_rho).expect("sigma_rho >= 0").sample(rng);
    (params.theta + rho).clamp(0.0, 1.0)
}

/// Size-dependent spin-off logistic.
pub fn spinoff_probability(size: f64, params: &SectorParams, orientation: Orientation) -> f64 {
    let z = orientation.sign() * (params.spin_alpha * size - params.spin_beta) / params.s_crit;
    1.0 / (1.0 + z.exp())
}

/// Spin-off probability actually used: the constant proxy when one is set,
/// the logistic otherwise.
pub fn spinoff_chance(size: f64, params: &SectorParams, orientation: Orientation) -> f64 {
    params.spin_rate.unwrap_or_else(|| spinoff_probability(size, params, orientation))
}

/// Unclamped spin-off size, lognormal(spin_mu, spin_sigma).
pub fn draw_spinoff_size<R: Rng + ?Sized>(params: &SectorParams, rng: &mut R) -> f64 {
    LogNormal::new(params.spin_mu, params.spin_sigma).expect("spin_sigma >= 0").sample(rng)
}

/// Splits `parent_size` into `(parent_after, spinoff)`.
///
/// The spin-off size is clamped to `[1, parent_size - 1]` and snapped to the
/// float spacing of `parent_size`, which makes `parent_after + spinoff ==
/// parent_size` hold exactly. Requires `parent_size >= 2`.
pub fn split_size(parent_size: f64, sigma: f64) -> (f64, f64) {
    assert!((2.0..9.0e15).contains(&parent_size), "parent size {parent_size} cannot split");
    let hi = parent_size - 1.0;
    let spacing = f64::from_bits(parent_size.to_bits() + 1) - parent_size;
    let child = ((sigma.clamp(1.0, hi) / spacing).round() * spacing).clamp(1.0, hi);
    (parent_size - child, child)
}

/// Draws a spin-off for `parent` and returns the parent's new size and the new firm.
pub fn execute_spinoff<R: Rng + ?Sized>(
    parent: &Firm,
    params: &SectorParams,
    rng: &mut R,
    child_id: FirmId,
    born_year: i32,
) -> (f64, Firm) {
    let sigma = draw_spinoff_size(params, rng);
    let (parent_size, child_size) = split_size(parent.size, sigma);
    let child = Firm {
        id: child_id,
        sector: parent.sector,
        size: child_size,
        cell: parent.cell,
        born_year,
        parent: Some(parent.id),
    };
    (parent_size, child)
}

/// Per-sector bookkeeping for one year.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SectorLedger {
    pub firms_before: u64,
    pub closures: u64,
    pub spinoffs: u64,
    pub firms_after: u64,
    pub employees_before: ExactSum,
    /// Sum of size changes from growth, closing firms included.
    pub growth: ExactSum,
    /// Employees of closed firms at the moment they closed.
    pub closed_employees: ExactSum,
    pub employees_after: ExactSum,
}

impl SectorLedger {
    /// `firms_after = firms_before - closures + spinoffs`
    pub fn firms_balance(&self) -> bool {
        self.firms_after + self.closures == self.firms_before + self.spinoffs
    }

    /// `employees_after = employees_before + growth - closures`
    pub fn employees_balance(&self) -> bool {
        self.employees_after == self.employees_before + self.growth - self.closed_employees
    }
}

#[derive(Debug, Clone, Default)]
pub struct DemographyOutcome {
    /// Post-growth size of every firm visited, including those that closed.
    pub grown: Vec<(FirmId, f64)>,
    pub closed: Vec<FirmId>,
    /// `(parent, new firm)`.
    pub spinoffs: Vec<(FirmId, Firm)>,
    /// Indexed by `SectorId::index`.
    pub ledger: Vec<SectorLedger>,
}

enum Fate {
    Survive,
    Close,
    Spinoff(f64),
}

struct Draw {
    id: FirmId,
    sector: SectorId,
    old_size: f64,
    new_size: f64,
    fate: Fate,
}

fn draw_firm<R: Rng + ?Sized>(firm: &Firm, params: &SectorParams, cfg: &DemographyConfig, rng: &mut R) -> Draw {
    let new_size = grow_firm(firm.size, params, rng);
    // Also catches NaN sizes.
    let below_floor = !(new_size >= cfg.min_size);
    let fate = if below_floor || rng.random::<f64>() < closure_probability(params, rng) {
        Fate::Close
    } else if new_size >= 2.0 && rng.random::<f64>() < spinoff_chance(new_size, params, cfg.orientation) {
        Fate::Spinoff(draw_spinoff_size(params, rng))
    } else {
        Fate::Survive
    };
    Draw { id: firm.id, sector: firm.sector, old_size: firm.size, new_size, fate }
}

/// Visiting order of firms in a given year.
pub fn shuffled_ids(state: &WorldState, seed: u64, purpose: Purpose) -> Vec<FirmId> {
    let mut ids = state.firm_ids();
    let mut rng = StreamFamily::new(seed, state.year() as i64, purpose).stream(0);
    ids.shuffle(&mut rng);
    ids
}

/// Applies one year of demographic events to `state`.
///
/// Spin-offs are born in `state.year() + 1`. The year counter itself is left
/// for the caller to advance.
pub fn step_demography(
    state: &mut WorldState,
    params: &SectorTable,
    cfg: &DemographyConfig,
    seed: u64,
) -> DemographyOutcome {
    let year = state.year();
    let before = state.aggregates();
    let order = shuffled_ids(state, seed, Purpose::DemographyOrder);
    let family = StreamFamily::new(seed, year as i64, Purpose::Demography);

    let draws: Vec<Draw> = {
        let state = &*state;
        order
            .par_iter()
            .map(|&id| {
                let firm = state.firm(id).expect("listed firm exists");
                let mut rng = family.stream(id.0);
                draw_firm(firm, params.get(firm.sector), cfg, &mut rng)
            })
            .collect()
    };

    let mut ledger = vec![SectorLedger::default(); NUM_SECTORS];
    for (l, b) in ledger.iter_mut().zip(before.iter()) {
        l.firms_before = b.firms;
        l.employees_before = b.employees;
    }
    let mut outcome = DemographyOutcome { ledger: Vec::new(), ..Default::default() };

    for d in draws {
        let l = &mut ledger[d.sector.index()];
        l.growth += ExactSum::from_f64(d.new_size) - ExactSum::from_f64(d.old_size);
        outcome.grown.push((d.id, d.new_size));
        match d.fate {
            Fate::Close => {
                // Sizes that fell below the floor (possibly to <= 0) still count in full.
                l.closed_employees += ExactSum::from_f64(d.new_size);
                l.closures += 1;
                state.remove_firm(d.id).expect("firm exists");
                outcome.closed.push(d.id);
            }
            Fate::Survive => {
                state.set_size(d.id, d.new_size).expect("size above floor");
            }
            Fate::Spinoff(sigma) => {
                let (parent_size, child_size) = split_size(d.new_size, sigma);
                state.set_size(d.id, parent_size).expect("parent keeps >= 1");
                let parent = state.firm(d.id).expect("firm exists").clone();
                let child = Firm {
                    id: state.allocate_id(),
                    sector: parent.sector,
                    size: child_size,
                    cell: parent.cell,
                    born_year: year + 1,
                    parent: Some(parent.id),
                };
                state.insert_firm(child.clone()).expect("child fits in grid");
                l.spinoffs += 1;
                outcome.spinoffs.push((parent.id, child));
            }
        }
    }

    for (l, a) in ledger.iter_mut().zip(state.aggregates().iter()) {
        l.firms_after = a.firms;
        l.employees_after = a.employees;
    }
    outcome.ledger = ledger;
    outcome
}

/// A pool of identical firms tracked by expected mass instead of Bernoulli draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cohort {
    pub sector: SectorId,
    /// Expected number of firms.
    pub mass: f64,
    /// Mean employees per firm.
    pub size: f64,
}

/// One cohort per live firm, mass 1.
pub fn cohorts_from_world(state: &WorldState) -> Vec<Cohort> {
    state.firms().map(|f| Cohort { sector: f.sector, mass: 1.0, size: f.size }).collect()
}

/// One year with every event applied at its expected value and noise off.
///
/// Growth scales the size by `1 + epsilon`; closure keeps a `1 - theta`
/// share of the mass; survivors spawn `p` spin-offs per firm, which conserve
/// employees and are pooled back into the cohort.
pub fn step_expected(cohorts: &mut [Cohort], params: &SectorTable, cfg: &DemographyConfig) {
    for c in cohorts.iter_mut().filter(|c| c.mass > 0.0) {
        let p = params.get(c.sector);
        let grown = c.size * (1.0 + p.epsilon);
        if !(grown >= cfg.min_size) {
            c.mass = 0.0;
            continue;
        }
        let survivors = c.mass * (1.0 - p.theta.clamp(0.0, 1.0));
        let spin = spinoff_chance(grown, p, cfg.orientation);
        c.mass = survivors * (1.0 + spin);
        c.size = grown / (1.0 + spin);
    }
}

/// Expected `(firms, employees)` per sector, indexed by `SectorId::index`.
pub fn cohort_totals(cohorts: &[Cohort]) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); NUM_SECTORS];
    for c in cohorts {
        let t = &mut out[c.sector.index()];
        t.0 += c.mass;
        t.1 += c.mass * c.size;
    }
    out
}
