//! Scenario files.
//!
//! A scenario is one TOML document. Every key is optional; missing values come
//! from the preset (`paper-2008` unless `preset = "none"`). Example:
//!
//! ```toml
//! preset = "paper-2008"
//! seed = 7
//! start_year = 1950
//! end_year = 2004
//! output_dir = "out"
//!
//! [grid]
//! ncols = 125
//! nrows = 106
//!
//! [potential]
//! method = "truncated"
//! radius = 30.0
//!
//! [all_sectors]
//! sigma_phi = 0.0
//!
//! [[sector]]
//! id = 9
//! delta = -0.05
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::calibration::SearchSpec;
use crate::demography::{DemographyConfig, Orientation};
use crate::ingest::SyntheticSpec;
use crate::preset::{paper_2008_relocation, paper_2008_sectors, sector_targets, PAPER_2008};
use crate::relocation::{RelocationConfig, UtilityForm};
use crate::rng::RNG_ALGORITHM;
use crate::spatial::{MassWeighting, PotentialMethod};
use crate::world::{GridGeometry, RelocationParams, SectorId, SectorParams, SectorTable};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Which of demography and relocation runs first within a year.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventOrder {
    #[default]
    DemographyFirst,
    RelocationFirst,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub start_year: Option<i32>,
    pub end_year: Option<i32>,
    pub snapshot_every: Option<u32>,
    pub rng: Option<String>,
    pub event_order: Option<EventOrder>,
    pub orientation: Option<Orientation>,
    pub min_firm_size: Option<f64>,
    pub mass_weighting: Option<MassWeighting>,
    pub utility_form: Option<UtilityForm>,
    pub output_dir: Option<PathBuf>,
    pub grid: Option<GridSection>,
    pub potential: Option<PotentialSection>,
    pub relocation: Option<RelocationSection>,
    pub input: Option<InputSection>,
    pub synthetic: Option<SyntheticSection>,
    pub all_sectors: Option<SectorOverride>,
    #[serde(default)]
    pub sector: Vec<SectorOverride>,
    pub calibration: Option<SearchSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub ncols: Option<u32>,
    pub nrows: Option<u32>,
    pub cell_size: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Exact,
    Truncated,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub method: Option<MethodName>,
    /// `inf` keeps every source.
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelocationSection {
    pub lambda: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub registry: PathBuf,
    pub municipalities: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub total_firms: Option<u64>,
    pub clustering: Option<f64>,
    /// Municipality tile `[cols, rows]`.
    pub block: Option<[u32; 2]>,
    pub size_sigma: Option<f64>,
}

/// Partial [`SectorParams`]. `id` is only read inside `[[sector]]`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorOverride {
    pub id: Option<i64>,
    pub epsilon: Option<f64>,
    pub theta: Option<f64>,
    pub spin_alpha: Option<f64>,
    pub spin_beta: Option<f64>,
    pub s_crit: Option<f64>,
    pub delta: Option<f64>,
    pub sigma_phi: Option<f64>,
    pub sigma_rho: Option<f64>,
    pub spin_mu: Option<f64>,
    pub spin_sigma: Option<f64>,
    /// Sets all three decay rates.
    pub decay: Option<f64>,
    pub decay_mp: Option<f64>,
    pub decay_ap: Option<f64>,
    pub decay_cp: Option<f64>,
    pub w_mp: Option<f64>,
    pub w_ap: Option<f64>,
    pub w_cp: Option<f64>,
    pub spin_rate: Option<f64>,
}

impl SectorOverride {
    pub fn apply(&self, p: &mut SectorParams) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { p.$f = v; })* };
        }
        if let Some(d) = self.decay {
            p.decay_mp = d;
            p.decay_ap = d;
            p.decay_cp = d;
        }
        set!(epsilon, theta, spin_alpha, spin_beta, s_crit, delta, sigma_phi, sigma_rho, spin_mu, spin_sigma);
        set!(decay_mp, decay_ap, decay_cp, w_mp, w_ap, w_cp);
        if self.spin_rate.is_some() {
            p.spin_rate = self.spin_rate;
        }
    }
}

/// Where the initial firms come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Registry { registry: PathBuf, municipalities: PathBuf },
    Synthetic(SyntheticSpec),
}

/// A fully resolved and validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub start_year: i32,
    pub end_year: i32,
    pub snapshot_every: u32,
    pub grid: GridGeometry,
    pub sectors: SectorTable,
    pub relocation: RelocationConfig,
    pub demography: DemographyConfig,
    pub event_order: EventOrder,
    pub potential: PotentialMethod,
    pub mass_weighting: MassWeighting,
    pub input: InputSource,
    pub output_dir: PathBuf,
    pub search: SearchSpec,
}

pub const DEFAULT_RADIUS: f64 = 30.0;
pub const DEFAULT_SYNTHETIC_FIRMS: u64 = 10_000;

/// Parameters with no dynamics, the base for `preset = "none"`.
fn neutral_sector() -> SectorParams {
    SectorParams {
        epsilon: 0.0,
        theta: 0.0,
        spin_alpha: 0.0,
        spin_beta: 0.0,
        s_crit: 1.0,
        delta: 0.0,
        sigma_phi: 0.0,
        sigma_rho: 0.0,
        spin_mu: 0.0,
        spin_sigma: 0.0,
        decay_mp: 0.6,
        decay_ap: 0.6,
        decay_cp: 0.6,
        w_mp: 1.0,
        w_ap: 0.5,
        w_cp: -1.0,
        spin_rate: Some(0.0),
    }
}

impl ScenarioConfig {
    /// The named preset with no file-level overrides.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        Self::resolve(ConfigFile { preset: Some(name.to_string()), ..Default::default() }, Path::new("."))
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        Self::resolve(toml::from_str(text)?, base_dir)
    }

    /// Reads a scenario file; relative paths inside it are taken relative to its directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn resolve(file: ConfigFile, base_dir: &Path) -> Result<Self, ConfigError> {
        let preset = file.preset.as_deref().unwrap_or(PAPER_2008);
        let (mut sectors, lambda) = match preset {
            PAPER_2008 => (paper_2008_sectors(), paper_2008_relocation()),
            "none" => (SectorTable::uniform(neutral_sector()), RelocationParams { lambda1: 1.0, lambda2: 0.0, lambda3: 0.0 }),
            other => return Err(invalid(format!("unknown preset {other:?}"))),
        };
        if let Some(rng) = &file.rng {
            if rng != RNG_ALGORITHM {
                return Err(invalid(format!("rng {rng:?} not supported, expected {RNG_ALGORITHM:?}")));
            }
        }

        if let Some(all) = &file.all_sectors {
            if all.id.is_some() {
                return Err(invalid("all_sectors takes no id"));
            }
            for s in SectorId::all() {
                all.apply(sectors.get_mut(s));
            }
        }
        for o in &file.sector {
            let id = o.id.ok_or_else(|| invalid("[[sector]] entry without id"))?;
            let s = SectorId::new(id).map_err(|e| invalid(e.to_string()))?;
            o.apply(sectors.get_mut(s));
        }
        sectors.validate().map_err(invalid)?;

        let params = match file.relocation.as_ref().and_then(|r| r.lambda) {
            Some([a, b, c]) => RelocationParams { lambda1: a, lambda2: b, lambda3: c },
            None => lambda,
        };
        params.validate().map_err(invalid)?;

        let g = file.grid.unwrap_or_default();
        let grid = GridGeometry::new(g.ncols.unwrap_or(125), g.nrows.unwrap_or(106), g.cell_size.unwrap_or(1.0))
            .map_err(|e| invalid(e.to_string()))?;

        let pot = file.potential.unwrap_or_default();
        let potential = match (pot.method.unwrap_or(MethodName::Truncated), pot.radius) {
            (MethodName::Exact, None) => PotentialMethod::Exact,
            (MethodName::Exact, Some(_)) => return Err(invalid("radius only applies to the truncated method")),
            (MethodName::Truncated, r) => {
                let radius = r.unwrap_or(DEFAULT_RADIUS);
                if radius.is_nan() || radius <= 0.0 {
                    return Err(invalid(format!("radius {radius} must be > 0")));
                }
                PotentialMethod::Truncated { radius }
            }
        };

        let min_size = file.min_firm_size.unwrap_or(DemographyConfig::default().min_size);
        if !(min_size.is_finite() && min_size >= 0.0) {
            return Err(invalid(format!("min_firm_size {min_size} must be >= 0")));
        }

        let start_year = file.start_year.unwrap_or(1950);
        let end_year = file.end_year.unwrap_or(2004);
        if start_year >= end_year {
            return Err(invalid(format!("start_year {start_year} must be before end_year {end_year}")));
        }
        let snapshot_every = file.snapshot_every.unwrap_or(6);
        if snapshot_every == 0 {
            return Err(invalid("snapshot_every must be >= 1"));
        }

        let input = match (file.input, file.synthetic) {
            (Some(_), Some(_)) => return Err(invalid("[input] and [synthetic] are mutually exclusive")),
            (Some(i), None) => {
                let registry = base_dir.join(i.registry);
                let municipalities = base_dir.join(i.municipalities);
                for p in [&registry, &municipalities] {
                    if !p.is_file() {
                        return Err(invalid(format!("input file {} does not exist", p.display())));
                    }
                }
                InputSource::Registry { registry, municipalities }
            }
            (None, syn) => {
                let syn = syn.unwrap_or_default();
                let reference: Vec<(u64, u64)> =
                    sector_targets().iter().map(|t| (t.firms_t0, t.employees_t0)).collect();
                let mut spec = SyntheticSpec::scaled(&reference, syn.total_firms.unwrap_or(DEFAULT_SYNTHETIC_FIRMS));
                if let Some(k) = syn.clustering {
                    spec.clustering = k;
                }
                if let Some([c, r]) = syn.block {
                    if c == 0 || r == 0 {
                        return Err(invalid("synthetic block dimensions must be >= 1"));
                    }
                    spec.block_cols = c;
                    spec.block_rows = r;
                }
                if let Some(s) = syn.size_sigma {
                    spec.size_sigma = s;
                }
                if !(spec.clustering.is_finite() && spec.clustering >= 0.0) {
                    return Err(invalid("synthetic clustering must be >= 0"));
                }
                if !(spec.size_sigma.is_finite() && spec.size_sigma >= 0.0) {
                    return Err(invalid("synthetic size_sigma must be >= 0"));
                }
                InputSource::Synthetic(spec)
            }
        };

        let search = file.calibration.unwrap_or_default();
        for (name, (lo, hi)) in [("epsilon", search.epsilon), ("theta", search.theta), ("spin_rate", search.spin_rate)] {
            if !(lo <= hi) {
                return Err(invalid(format!("calibration bounds for {name} are empty")));
            }
        }

        Ok(ScenarioConfig {
            seed: file.seed.unwrap_or(0),
            start_year,
            end_year,
            snapshot_every,
            grid,
            sectors,
            relocation: RelocationConfig { params, form: file.utility_form.unwrap_or_default() },
            demography: DemographyConfig { orientation: file.orientation.unwrap_or_default(), min_size },
            event_order: file.event_order.unwrap_or_default(),
            potential,
            mass_weighting: file.mass_weighting.unwrap_or_default(),
            input,
            output_dir: base_dir.join(file.output_dir.unwrap_or_else(|| PathBuf::from("out"))),
            search,
        })
    }
}
