//! Annual relocation: mode sampling, candidate sets, utility and destination choice.

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demography::shuffled_ids;
use crate::rng::{Purpose, StreamFamily};
use crate::spatial::{cell_distance, PotentialField};
use crate::world::{CellId, Firm, FirmId, RelocationParams, SectorId, SectorParams, SectorTable, WorldState, NUM_SECTORS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelocationMode {
    Stay,
    /// Move to a cell where the firm's sector is already present.
    MoveToOccupied,
    /// Move to a cell without firms of the sector.
    MoveToUnoccupied,
}

/// How potentials enter the utility.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityForm {
    /// `delta*d + w_mp*MP + w_ap*AP + w_cp*CP`
    #[default]
    Weighted,
    /// `delta*d + MP + AP + CP`
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelocationConfig {
    pub params: RelocationParams,
    pub form: UtilityForm,
}

/// Maps a uniform draw onto modes with cumulative thresholds `(l1, l1+l2, 1)`.
pub fn mode_for_draw(p: &RelocationParams, u: f64) -> RelocationMode {
    if u < p.lambda1 {
        RelocationMode::Stay
    } else if u < p.lambda1 + p.lambda2 {
        RelocationMode::MoveToOccupied
    } else {
        RelocationMode::MoveToUnoccupied
    }
}

pub fn sample_mode<R: Rng + ?Sized>(p: &RelocationParams, rng: &mut R) -> RelocationMode {
    mode_for_draw(p, rng.random::<f64>())
}

fn is_candidate(state: &WorldState, cell: CellId, sector: SectorId, mode: RelocationMode) -> bool {
    match mode {
        RelocationMode::Stay => false,
        RelocationMode::MoveToOccupied => state.occupancy(cell, sector) >= 1,
        RelocationMode::MoveToUnoccupied => state.occupancy(cell, sector) == 0,
    }
}

/// Cells a firm of `sector` at `current` may move to under `mode`, in grid order.
pub fn candidate_cells(state: &WorldState, sector: SectorId, mode: RelocationMode, current: CellId) -> Vec<CellId> {
    state
        .grid()
        .cells()
        .filter(|&c| c != current && is_candidate(state, c, sector, mode))
        .collect()
}

/// Utility of cell `l` for `firm` currently at `origin`.
pub fn location_utility(
    l: CellId,
    firm: &Firm,
    field: &PotentialField,
    params: &SectorParams,
    origin: CellId,
    state: &WorldState,
    form: UtilityForm,
) -> f64 {
    let grid = state.grid();
    let i = grid.index(l);
    let s = firm.sector;
    let distance = params.delta * cell_distance(origin, l, grid);
    match form {
        UtilityForm::Weighted => {
            distance + params.w_mp * field.mp(s, i) + params.w_ap * field.ap(s, i) + params.w_cp * field.cp(s, i)
        }
        UtilityForm::Unweighted => distance + field.mp(s, i) + field.ap(s, i) + field.cp(s, i),
    }
}

/// Highest-utility candidate, ties broken uniformly. Returns the firm's own
/// cell when there is nothing to choose from.
pub fn choose_destination<R: Rng + ?Sized>(
    firm: &Firm,
    mode: RelocationMode,
    state: &WorldState,
    field: &PotentialField,
    params: &SectorParams,
    form: UtilityForm,
    rng: &mut R,
) -> CellId {
    let mut best = f64::NEG_INFINITY;
    let mut winners: Vec<CellId> = Vec::new();
    for l in state.grid().cells() {
        if l == firm.cell || !is_candidate(state, l, firm.sector, mode) {
            continue;
        }
        let u = location_utility(l, firm, field, params, firm.cell, state, form);
        if u > best {
            best = u;
            winners.clear();
            winners.push(l);
        } else if u == best {
            winners.push(l);
        }
    }
    match winners.len() {
        0 => {
            debug!("firm {} ({:?}): no candidate cells, staying", firm.id, mode);
            firm.cell
        }
        1 => winners[0],
        k => winners[rng.random_range(0..k)],
    }
}

/// Potential part of utility, `location_utility` without the distance term.
///
/// Evaluated with the same operation order, so with `delta <= 0` it bounds
/// the utility of the cell from above for every origin.
fn potential_part(field: &PotentialField, s: SectorId, i: usize, params: &SectorParams, form: UtilityForm) -> f64 {
    match form {
        UtilityForm::Weighted => params.w_mp * field.mp(s, i) + params.w_ap * field.ap(s, i) + params.w_cp * field.cp(s, i),
        UtilityForm::Unweighted => field.mp(s, i) + field.ap(s, i) + field.cp(s, i),
    }
}

/// A sector's cells by descending potential part.
#[derive(Debug, Clone)]
pub struct RankedCells {
    order: Vec<(f64, usize)>,
}

impl RankedCells {
    pub fn new(field: &PotentialField, sector: SectorId, params: &SectorParams, form: UtilityForm, ncells: usize) -> Self {
        let mut order: Vec<(f64, usize)> =
            (0..ncells).map(|i| (potential_part(field, sector, i, params, form), i)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        RankedCells { order }
    }
}

/// Same result as [`choose_destination`], including the tie-break draw, but
/// stops once no remaining cell can reach the best utility found.
pub fn choose_destination_ranked<R: Rng + ?Sized>(
    firm: &Firm,
    mode: RelocationMode,
    state: &WorldState,
    field: &PotentialField,
    params: &SectorParams,
    form: UtilityForm,
    ranked: &RankedCells,
    rng: &mut R,
) -> CellId {
    debug_assert!(params.delta <= 0.0);
    let grid = state.grid();
    let mut best = f64::NEG_INFINITY;
    let mut winners: Vec<usize> = Vec::new();
    for &(bound, i) in &ranked.order {
        if bound < best {
            break;
        }
        let l = grid.cell(i);
        if l == firm.cell || !is_candidate(state, l, firm.sector, mode) {
            continue;
        }
        let u = location_utility(l, firm, field, params, firm.cell, state, form);
        if u > best {
            best = u;
            winners.clear();
            winners.push(i);
        } else if u == best {
            winners.push(i);
        }
    }
    winners.sort_unstable();
    match winners.len() {
        0 => {
            debug!("firm {} ({:?}): no candidate cells, staying", firm.id, mode);
            firm.cell
        }
        1 => grid.cell(winners[0]),
        k => grid.cell(winners[rng.random_range(0..k)]),
    }
}

/// Relocation pass for one year.
///
/// Potentials stay frozen at `field`, while candidate sets follow the live
/// occupancy so later movers see earlier moves. Firms born after
/// `state.year()` sit out. Moves are applied to `state` and returned.
pub fn step_relocation(
    state: &mut WorldState,
    field: &PotentialField,
    params: &SectorTable,
    cfg: &RelocationConfig,
    seed: u64,
) -> Vec<(FirmId, CellId)> {
    let year = state.year();
    let order = shuffled_ids(state, seed, Purpose::RelocationOrder);
    let family = StreamFamily::new(seed, year as i64, Purpose::Relocation);
    let mut moves = Vec::new();
    let mut ranked: Vec<Option<RankedCells>> = vec![None; NUM_SECTORS];
    for id in order {
        let firm = state.firm(id).expect("listed firm exists");
        if firm.born_year > year {
            continue;
        }
        let mut rng = family.stream(id.0);
        let mode = sample_mode(&cfg.params, &mut rng);
        if mode == RelocationMode::Stay {
            continue;
        }
        let p = params.get(firm.sector);
        let r = ranked[firm.sector.index()]
            .get_or_insert_with(|| RankedCells::new(field, firm.sector, p, cfg.form, state.grid().ncells()));
        let dest = choose_destination_ranked(firm, mode, state, field, p, cfg.form, r, &mut rng);
        if dest != firm.cell {
            state.apply_move(id, dest).expect("destination inside grid");
            moves.push((id, dest));
        }
    }
    moves
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preset::paper_2008_sectors;
    use crate::world::GridGeometry;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table4() -> RelocationParams {
        RelocationParams::new(0.9, 0.09, 0.01).unwrap()
    }

    fn firm(id: u64, sector: i64, col: u32, row: u32) -> Firm {
        Firm { id: FirmId(id), sector: SectorId::new(sector).unwrap(), size: 3.0, cell: CellId::new(col, row), born_year: 1950, parent: None }
    }

    fn params() -> SectorParams {
        SectorParams { delta: 0.0, ..*paper_2008_sectors().get(SectorId::new(9).unwrap()) }
    }

    #[test]
    fn mode_thresholds() {
        assert_eq!(mode_for_draw(&table4(), 0.50), RelocationMode::Stay);
        assert_eq!(mode_for_draw(&table4(), 0.95), RelocationMode::MoveToOccupied);
        assert_eq!(mode_for_draw(&table4(), 0.995), RelocationMode::MoveToUnoccupied);
        let stay = RelocationParams::new(1.0, 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| sample_mode(&stay, &mut rng) == RelocationMode::Stay));
    }

    #[test]
    fn candidates_exclude_current_cell() {
        let firms = vec![firm(1, 4, 0, 0), firm(2, 4, 1, 0), firm(3, 4, 2, 0), firm(4, 5, 3, 0)];
        let w = WorldState::build(firms, GridGeometry::new(4, 2, 1.0).unwrap(), 1950).unwrap();
        let s = SectorId::new(4).unwrap();
        let occ = candidate_cells(&w, s, RelocationMode::MoveToOccupied, CellId::new(0, 0));
        assert_eq!(occ, vec![CellId::new(1, 0), CellId::new(2, 0)]);
        let un = candidate_cells(&w, s, RelocationMode::MoveToUnoccupied, CellId::new(0, 0));
        assert_eq!(un.len(), 5);
    }

    #[test]
    fn saturated_sector_has_no_unoccupied_candidates() {
        let firms = (0..4).map(|i| firm(i + 1, 2, i as u32, 0)).collect();
        let w = WorldState::build(firms, GridGeometry::new(4, 1, 1.0).unwrap(), 1950).unwrap();
        let f = w.firm(FirmId(1)).unwrap().clone();
        assert!(candidate_cells(&w, f.sector, RelocationMode::MoveToUnoccupied, f.cell).is_empty());
        let field = PotentialField::zeros(4, 1950);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dest = choose_destination(&f, RelocationMode::MoveToUnoccupied, &w, &field, &params(), UtilityForm::Weighted, &mut rng);
        assert_eq!(dest, f.cell);
    }

    #[test]
    fn utility_examples() {
        let w = WorldState::build(vec![firm(1, 9, 0, 0)], GridGeometry::new(11, 1, 1.0).unwrap(), 1950).unwrap();
        let f = w.firm(FirmId(1)).unwrap().clone();
        let s = f.sector.index();
        let mut field = PotentialField::zeros(11, 1950);
        let l = CellId::new(10, 0);
        assert_eq!(location_utility(l, &f, &field, &params(), f.cell, &w, UtilityForm::Weighted), 0.0);
        field.mp[s][10] = 2.0;
        field.ap[s][10] = 4.0;
        field.cp[s][10] = 3.0;
        let p = params();
        assert_eq!((p.w_mp, p.w_ap, p.w_cp), (1.0, 0.5, -1.0));
        assert_eq!(location_utility(l, &f, &field, &p, f.cell, &w, UtilityForm::Weighted), 1.0);
        let p = SectorParams { delta: -0.01, ..p };
        let u = location_utility(l, &f, &field, &p, f.cell, &w, UtilityForm::Weighted);
        assert!((u - 0.9).abs() < 1e-12);
        let u = location_utility(l, &f, &field, &p, f.cell, &w, UtilityForm::Unweighted);
        assert!((u - 8.9).abs() < 1e-12);
    }

    #[test]
    fn argmax_picks_best_candidate() {
        let firms = vec![firm(1, 9, 0, 0), firm(2, 9, 1, 0), firm(3, 9, 2, 0)];
        let w = WorldState::build(firms, GridGeometry::new(3, 1, 1.0).unwrap(), 1950).unwrap();
        let f = w.firm(FirmId(1)).unwrap().clone();
        let mut field = PotentialField::zeros(3, 1950);
        let s = f.sector.index();
        field.mp[s][1] = 1.0;
        field.mp[s][2] = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = choose_destination(&f, RelocationMode::MoveToOccupied, &w, &field, &params(), UtilityForm::Weighted, &mut rng);
        assert_eq!(d, CellId::new(1, 0));
    }

    #[test]
    fn single_candidate_is_forced() {
        let firms = vec![firm(1, 9, 0, 0), firm(2, 9, 2, 0)];
        let w = WorldState::build(firms, GridGeometry::new(3, 1, 1.0).unwrap(), 1950).unwrap();
        let f = w.firm(FirmId(1)).unwrap().clone();
        let mut field = PotentialField::zeros(3, 1950);
        field.cp[f.sector.index()][2] = 100.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = choose_destination(&f, RelocationMode::MoveToOccupied, &w, &field, &params(), UtilityForm::Weighted, &mut rng);
        assert_eq!(d, CellId::new(2, 0));
    }

    #[test]
    fn ties_are_uniform() {
        let k = 4;
        let w = WorldState::build(vec![firm(1, 9, 0, 0)], GridGeometry::new(k + 1, 1, 1.0).unwrap(), 1950).unwrap();
        let f = w.firm(FirmId(1)).unwrap().clone();
        let field = PotentialField::zeros(k as usize + 1, 1950);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let mut counts = vec![0usize; k as usize + 1];
        for _ in 0..n {
            let d = choose_destination(&f, RelocationMode::MoveToUnoccupied, &w, &field, &params(), UtilityForm::Weighted, &mut rng);
            counts[d.col as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        let p = 1.0 / k as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn stay_only_means_no_moves() {
        let firms = (1..=50).map(|i| firm(i, 3, (i % 5) as u32, 0)).collect();
        let mut w = WorldState::build(firms, GridGeometry::new(5, 5, 1.0).unwrap(), 1950).unwrap();
        let field = PotentialField::zeros(25, 1950);
        let cfg = RelocationConfig { params: RelocationParams::new(1.0, 0.0, 0.0).unwrap(), form: UtilityForm::Weighted };
        assert!(step_relocation(&mut w, &field, &paper_2008_sectors(), &cfg, 3).is_empty());
    }

    #[test]
    fn newborns_sit_out() {
        let mut f = firm(1, 3, 0, 0);
        f.born_year = 1951;
        let mut w = WorldState::build(vec![f], GridGeometry::new(5, 5, 1.0).unwrap(), 1950).unwrap();
        let field = PotentialField::zeros(25, 1950);
        let cfg = RelocationConfig { params: RelocationParams::new(0.0, 0.0, 1.0).unwrap(), form: UtilityForm::Weighted };
        assert!(step_relocation(&mut w, &field, &paper_2008_sectors(), &cfg, 3).is_empty());
    }

    proptest! {
        #[test]
        fn candidate_sets_partition_grid(cells in proptest::collection::vec((0u32..6, 0u32..5, 1i64..4), 1..40), pick in 0usize..40) {
            let firms: Vec<Firm> = cells.iter().enumerate().map(|(i, &(c, r, s))| firm(i as u64 + 1, s, c, r)).collect();
            let f = firms[pick % firms.len()].clone();
            let w = WorldState::build(firms, GridGeometry::new(6, 5, 1.0).unwrap(), 1950).unwrap();
            let occ = candidate_cells(&w, f.sector, RelocationMode::MoveToOccupied, f.cell);
            let un = candidate_cells(&w, f.sector, RelocationMode::MoveToUnoccupied, f.cell);
            let mut all: Vec<CellId> = occ.iter().chain(&un).copied().chain(std::iter::once(f.cell)).collect();
            all.sort();
            let grid: Vec<CellId> = w.grid().cells().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            prop_assert_eq!(all, grid);
        }

        #[test]
        fn pruned_search_matches_full_scan(
            cells in proptest::collection::vec((0u32..9, 0u32..7, 1i64..4), 1..60),
            pick in 0usize..60,
            delta in prop_oneof![Just(0.0), -2.0f64..0.0],
            unoccupied in any::<bool>(),
            unweighted in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let firms: Vec<Firm> = cells.iter().enumerate().map(|(i, &(c, r, s))| firm(i as u64 + 1, s, c, r)).collect();
            let f = firms[pick % firms.len()].clone();
            let w = WorldState::build(firms, GridGeometry::new(9, 7, 1.0).unwrap(), 1950).unwrap();
            let p = SectorParams { delta, ..params() };
            let table = SectorTable::uniform(p);
            let field = crate::spatial::compute_fields(&w, &table, crate::spatial::PotentialMethod::Exact, crate::spatial::MassWeighting::Firms);
            let mode = if unoccupied { RelocationMode::MoveToUnoccupied } else { RelocationMode::MoveToOccupied };
            let form = if unweighted { UtilityForm::Unweighted } else { UtilityForm::Weighted };
            let ranked = RankedCells::new(&field, f.sector, &p, form, w.grid().ncells());
            let full = choose_destination(&f, mode, &w, &field, &p, form, &mut ChaCha8Rng::seed_from_u64(seed));
            let fast = choose_destination_ranked(&f, mode, &w, &field, &p, form, &ranked, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(full, fast);
        }
    }
}
