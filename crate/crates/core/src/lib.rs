//! Agent-based simulation of the spatial distribution of firms.
//!
//! Firms in 21 sectors grow, close and spawn spin-offs each year, and a
//! fraction of them relocate to the cell with the highest utility computed
//! from market, agglomeration and congestion potentials. A deterministic
//! mean-field recursion calibrates the demographic parameters to aggregate
//! sector totals.
//!
//! Module map:
//! - [`world`]: domain types and the mutable [`world::WorldState`]
//! - [`ingest`]: registry/municipality CSVs, cell assignment, synthetic registries, snapshots
//! - [`demography`]: growth, closure and spin-off events
//! - [`spatial`]: exponential-decay potential fields, exact and truncated
//! - [`relocation`]: mode sampling and utility-maximising destination choice
//! - [`calibration`]: mean-field recursion and per-sector parameter fitting
//! - [`config`], [`runner`], [`analysis`]: scenario files, the yearly loop, rank-size metrics

pub mod analysis;
pub mod calibration;
pub mod config;
pub mod demography;
pub mod exact;
pub mod ingest;
pub mod preset;
pub mod relocation;
pub mod rng;
pub mod runner;
pub mod spatial;
pub mod world;

pub use exact::ExactSum;
pub use world::{
    CellId, Firm, FirmId, GridGeometry, RelocationParams, SectorId, SectorParams, SectorTable,
    WorldError, WorldState, NUM_SECTORS,
};
