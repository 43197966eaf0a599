//! Rank-size metrics of cell-level firm counts.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::ingest::{parse_raster, parse_snapshot_firms, IngestError, FIRM_SNAPSHOT_HEADER, RASTER_HEADER};
use crate::world::{CellId, SectorId};

/// Firm counts per `(sector, cell)`; cells with no firms are absent.
pub type CellCounts = BTreeMap<SectorId, BTreeMap<CellId, u64>>;

/// Reads either snapshot format, recognised by its header.
pub fn read_counts<R: Read>(mut reader: R) -> Result<CellCounts, IngestError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| IngestError::Malformed { line: 0, message: e.to_string() })?;
    let header = text.lines().next().unwrap_or("").trim();
    let mut counts = CellCounts::new();
    if header == RASTER_HEADER {
        for e in parse_raster(text.as_bytes())? {
            *counts.entry(e.sector).or_default().entry(e.cell).or_default() += e.count;
        }
    } else if header == FIRM_SNAPSHOT_HEADER {
        for f in parse_snapshot_firms(text.as_bytes())? {
            *counts.entry(f.sector).or_default().entry(f.cell).or_default() += 1;
        }
    } else if !header.is_empty() {
        return Err(IngestError::Malformed { line: 1, message: format!("unrecognised snapshot header {header:?}") });
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorMetrics {
    pub sector: SectorId,
    pub firms: u64,
    pub occupied_cells: usize,
    /// `(cell, count)` by descending count, ties in cell order. Rank is position + 1.
    pub rank_size: Vec<(CellId, u64)>,
    /// Least-squares slope of `ln(count)` on `ln(rank)`; needs two occupied cells.
    pub zipf_slope: Option<f64>,
    /// Share of firms in the top `ceil(occupied / 10)` cells.
    pub top_decile_share: Option<f64>,
}

/// Slope of the least-squares line through `(ln rank, ln count)`.
pub fn zipf_slope(sorted_counts: &[u64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = sorted_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= 1)
        .map(|(i, &c)| (((i + 1) as f64).ln(), (c as f64).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

pub fn top_decile_share(sorted_counts: &[u64]) -> Option<f64> {
    let total: u64 = sorted_counts.iter().sum();
    if total == 0 {
        return None;
    }
    let k = sorted_counts.len().div_ceil(10);
    Some(sorted_counts[..k].iter().sum::<u64>() as f64 / total as f64)
}

pub fn sector_metrics(sector: SectorId, cells: &BTreeMap<CellId, u64>) -> SectorMetrics {
    let mut rank_size: Vec<(CellId, u64)> = cells.iter().filter(|(_, &c)| c > 0).map(|(&k, &c)| (k, c)).collect();
    rank_size.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let sorted: Vec<u64> = rank_size.iter().map(|r| r.1).collect();
    SectorMetrics {
        sector,
        firms: sorted.iter().sum(),
        occupied_cells: sorted.len(),
        zipf_slope: zipf_slope(&sorted),
        top_decile_share: top_decile_share(&sorted),
        rank_size,
    }
}

/// Metrics for every sector present in `counts`.
pub fn analyze(counts: &CellCounts) -> Vec<SectorMetrics> {
    counts.iter().map(|(&s, cells)| sector_metrics(s, cells)).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics<W: Write>(mut w: W, metrics: &[SectorMetrics]) -> std::io::Result<()> {
    writeln!(w, "sector,firms,occupied_cells,zipf_slope,top_decile_share")?;
    for m in metrics {
        writeln!(w, "{},{},{},{},{}", m.sector, m.firms, m.occupied_cells, opt(m.zipf_slope), opt(m.top_decile_share))?;
    }
    w.flush()
}

pub fn write_rank_size<W: Write>(mut w: W, metrics: &[SectorMetrics]) -> std::io::Result<()> {
    writeln!(w, "sector,rank,col,row,count")?;
    for m in metrics {
        for (i, (c, n)) in m.rank_size.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", m.sector, i + 1, c.col, c.row, n)?;
        }
    }
    w.flush()
}

/// One `(sector, cell)` whose count differs between two snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellDiff {
    pub sector: SectorId,
    pub cell: CellId,
    pub before: u64,
    pub after: u64,
}

impl CellDiff {
    pub fn change(&self) -> i64 {
        self.after as i64 - self.before as i64
    }
}

pub fn diff(before: &CellCounts, after: &CellCounts) -> Vec<CellDiff> {
    let mut keys: BTreeMap<(SectorId, CellId), (u64, u64)> = BTreeMap::new();
    for (&s, cells) in before {
        for (&c, &n) in cells {
            keys.entry((s, c)).or_default().0 = n;
        }
    }
    for (&s, cells) in after {
        for (&c, &n) in cells {
            keys.entry((s, c)).or_default().1 = n;
        }
    }
    keys.into_iter()
        .filter(|(_, (a, b))| a != b)
        .map(|((sector, cell), (before, after))| CellDiff { sector, cell, before, after })
        .collect()
}

pub fn write_diff<W: Write>(mut w: W, diffs: &[CellDiff]) -> std::io::Result<()> {
    writeln!(w, "sector,col,row,before,after,change")?;
    for d in diffs {
        writeln!(w, "{},{},{},{},{},{}", d.sector, d.cell.col, d.cell.row, d.before, d.after, d.change())?;
    }
    w.flush()
}
