//! Mean-field recursion for sector aggregates and per-sector parameter fitting.
//!
//! The recursion evolves `(firms, employees)` with expected event counts:
//!
//! ```text
//! firms'     = firms * (1 - theta) * (1 + p)
//! employees' = employees * (1 + epsilon) * (1 - theta)
//! ```
//!
//! where `p` is the spin-off probability of a surviving firm. Closures remove
//! firms of mean size, spin-offs move employees between firms and leave the
//! employee total alone. [`fit_sector`] searches `(epsilon, theta, p)` inside
//! bounds so that the recursion lands on observed end-of-horizon totals.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::demography::Orientation;
use crate::world::{SectorId, SectorParams};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("horizon must be at least one year")]
    InvalidHorizon,
    #[error("recursion produced invalid totals (firms {firms}, employees {employees}) after {year} years")]
    InvalidTotals { year: u32, firms: f64, employees: f64 },
    #[error("targets line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget {
    pub sector: SectorId,
    pub firms_t0: u64,
    pub employees_t0: u64,
    pub firms_t: u64,
    pub employees_t: u64,
    pub horizon_years: u32,
}

impl CalibrationTarget {
    pub fn start(&self) -> Totals {
        Totals { firms: self.firms_t0 as f64, employees: self.employees_t0 as f64 }
    }
}

/// Spin-off probability of a surviving firm in the recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpinoffRate {
    Constant(f64),
    /// Size logistic evaluated at the post-growth mean firm size.
    Logistic { alpha: f64, beta: f64, s_crit: f64, orientation: Orientation },
}

impl SpinoffRate {
    pub fn at(&self, mean_size: f64) -> f64 {
        match *self {
            SpinoffRate::Constant(p) => p,
            SpinoffRate::Logistic { alpha, beta, s_crit, orientation } => {
                1.0 / (1.0 + (orientation.sign() * (alpha * mean_size - beta) / s_crit).exp())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionParams {
    pub epsilon: f64,
    pub theta: f64,
    pub spinoff: SpinoffRate,
}

impl RecursionParams {
    /// Reads the demographic subset of a sector's parameters.
    pub fn from_sector(p: &SectorParams, orientation: Orientation) -> Self {
        let spinoff = match p.spin_rate {
            Some(rate) => SpinoffRate::Constant(rate),
            None => SpinoffRate::Logistic { alpha: p.spin_alpha, beta: p.spin_beta, s_crit: p.s_crit, orientation },
        };
        RecursionParams { epsilon: p.epsilon, theta: p.theta, spinoff }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Totals {
    pub firms: f64,
    pub employees: f64,
}

impl Totals {
    pub fn mean_size(&self) -> f64 {
        if self.firms > 0.0 {
            self.employees / self.firms
        } else {
            0.0
        }
    }
}

fn expected_step(params: &RecursionParams, t: Totals) -> Totals {
    let grown_mean = t.mean_size() * (1.0 + params.epsilon);
    let p = params.spinoff.at(grown_mean);
    Totals {
        firms: t.firms * (1.0 - params.theta) * (1.0 + p),
        employees: t.employees * (1.0 + params.epsilon) * (1.0 - params.theta),
    }
}

/// Totals after `horizon` years starting from `start`.
pub fn expected_totals(params: &RecursionParams, start: Totals, horizon: u32) -> Result<Totals, CalibrationError> {
    if horizon == 0 {
        return Err(CalibrationError::InvalidHorizon);
    }
    let mut t = start;
    for year in 1..=horizon {
        t = expected_step(params, t);
        if !(t.firms >= 0.0 && t.employees >= 0.0 && t.firms.is_finite() && t.employees.is_finite()) {
            return Err(CalibrationError::InvalidTotals { year, firms: t.firms, employees: t.employees });
        }
    }
    Ok(t)
}

/// `(xi, psi)`: absolute employee and firm errors at the horizon.
pub fn objective(params: &RecursionParams, target: &CalibrationTarget) -> Result<(f64, f64), CalibrationError> {
    let t = expected_totals(params, target.start(), target.horizon_years)?;
    Ok(((t.employees - target.employees_t as f64).abs(), (t.firms - target.firms_t as f64).abs()))
}

/// Bounds and stopping rule for [`fit_sector`].
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpec {
    pub epsilon: (f64, f64),
    pub theta: (f64, f64),
    pub spin_rate: (f64, f64),
    /// Starting closure probability; the firm balance is met by the spin-off rate first.
    pub theta_init: f64,
    /// Target for both relative objectives.
    pub tolerance: f64,
    pub max_iterations: u32,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            epsilon: (-0.1, 0.1),
            theta: (0.0, 0.05),
            spin_rate: (0.0, 0.15),
            theta_init: 0.01,
            tolerance: 1e-3,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub sector: SectorId,
    pub epsilon: f64,
    pub theta: f64,
    pub spin_rate: f64,
    pub firms_pred: f64,
    pub employees_pred: f64,
    pub xi: f64,
    pub psi: f64,
    pub rel_xi: f64,
    pub rel_psi: f64,
    pub iterations: u32,
    pub converged: bool,
    /// The observed totals lie outside what any parameters in the bounds can reach.
    pub infeasible: bool,
}

impl CalibrationResult {
    pub fn params(&self) -> RecursionParams {
        RecursionParams { epsilon: self.epsilon, theta: self.theta, spinoff: SpinoffRate::Constant(self.spin_rate) }
    }

    /// Copies the fitted values into a sector's parameters.
    pub fn apply_to(&self, p: &mut SectorParams) {
        p.epsilon = self.epsilon;
        p.theta = self.theta;
        p.spin_rate = Some(self.spin_rate);
    }
}

/// Root of a monotone function on `[lo, hi]` by bisection. When there is no
/// sign change the endpoint with the smaller residual is returned.
fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return lo;
    }
    if fhi == 0.0 {
        return hi;
    }
    if flo.signum() == fhi.signum() {
        return if flo.abs() <= fhi.abs() { lo } else { hi };
    }
    let (mut a, mut b, mut fa) = (lo, hi, flo);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    if f(a).abs() <= f(b).abs() {
        a
    } else {
        b
    }
}

/// Signed `(firms, employees)` errors; `NaN` when the recursion fails.
fn residuals(target: &CalibrationTarget, epsilon: f64, theta: f64, spin: f64) -> (f64, f64) {
    let p = RecursionParams { epsilon, theta, spinoff: SpinoffRate::Constant(spin) };
    match expected_totals(&p, target.start(), target.horizon_years) {
        Ok(t) => (t.firms - target.firms_t as f64, t.employees - target.employees_t as f64),
        Err(_) => (f64::NAN, f64::NAN),
    }
}

fn relative(err: f64, observed: u64) -> f64 {
    if observed == 0 {
        err.abs()
    } else {
        err.abs() / observed as f64
    }
}

/// Fits `(epsilon, theta, spin_rate)` for one sector by coordinate descent.
///
/// Each round first solves the spin-off rate for the firm count (moving the
/// closure probability only when the rate is pinned at a bound), then solves
/// epsilon for the employee count. Rounds repeat until both relative
/// objectives are within tolerance or the parameters stop changing.
pub fn fit_sector(target: &CalibrationTarget, spec: &SearchSpec) -> CalibrationResult {
    let tol = spec.tolerance;
    let mut theta = spec.theta_init.clamp(spec.theta.0, spec.theta.1);
    let mut spin = theta.clamp(spec.spin_rate.0, spec.spin_rate.1);
    let mut epsilon = 0.0f64.clamp(spec.epsilon.0, spec.epsilon.1);
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=spec.max_iterations {
        iterations = it;
        let previous = (epsilon, theta, spin);

        spin = bisect(|s| residuals(target, epsilon, theta, s).0, spec.spin_rate.0, spec.spin_rate.1);
        if relative(residuals(target, epsilon, theta, spin).0, target.firms_t) > tol {
            theta = bisect(|t| -residuals(target, epsilon, t, spin).0, spec.theta.0, spec.theta.1);
        }
        epsilon = bisect(|e| residuals(target, e, theta, spin).1, spec.epsilon.0, spec.epsilon.1);

        let (rf, re) = residuals(target, epsilon, theta, spin);
        if relative(rf, target.firms_t) <= tol && relative(re, target.employees_t) <= tol {
            converged = true;
            break;
        }
        if (epsilon, theta, spin) == previous {
            break;
        }
    }

    let (rf, re) = residuals(target, epsilon, theta, spin);
    let pred = expected_totals(
        &RecursionParams { epsilon, theta, spinoff: SpinoffRate::Constant(spin) },
        target.start(),
        target.horizon_years,
    )
    .unwrap_or(Totals { firms: f64::NAN, employees: f64::NAN });
    CalibrationResult {
        sector: target.sector,
        epsilon,
        theta,
        spin_rate: spin,
        firms_pred: pred.firms,
        employees_pred: pred.employees,
        xi: re.abs(),
        psi: rf.abs(),
        rel_xi: relative(re, target.employees_t),
        rel_psi: relative(rf, target.firms_t),
        iterations,
        converged,
        infeasible: !converged && outside_reach(target, spec),
    }
}

/// True when either observed total lies strictly outside the range spanned by
/// the corners of the search box.
fn outside_reach(target: &CalibrationTarget, spec: &SearchSpec) -> bool {
    let (e, t, s) = (spec.epsilon, spec.theta, spec.spin_rate);
    let firms_min = residuals(target, 0.0, t.1, s.0).0;
    let firms_max = residuals(target, 0.0, t.0, s.1).0;
    let emp_min = residuals(target, e.0, t.1, 0.0).1;
    let emp_max = residuals(target, e.1, t.0, 0.0).1;
    firms_min > 0.0 || firms_max < 0.0 || emp_min > 0.0 || emp_max < 0.0
}

/// Fits every target independently, in parallel. `spec_for` supplies per-sector search settings.
pub fn fit_all(targets: &[CalibrationTarget], spec_for: impl Fn(SectorId) -> SearchSpec + Sync) -> Vec<CalibrationResult> {
    targets.par_iter().map(|t| fit_sector(t, &spec_for(t.sector))).collect()
}

#[derive(Debug, Deserialize)]
struct TargetRow {
    sector: i64,
    firms_t0: u64,
    employees_t0: u64,
    #[serde(rename = "firms_T")]
    firms_t: u64,
    #[serde(rename = "employees_T")]
    employees_t: u64,
}

const TARGET_HEADER: [&str; 5] = ["sector", "firms_t0", "employees_t0", "firms_T", "employees_T"];

/// Parses `sector,firms_t0,employees_t0,firms_T,employees_T`.
pub fn parse_targets<R: Read>(reader: R, horizon_years: u32) -> Result<Vec<CalibrationTarget>, CalibrationError> {
    if horizon_years == 0 {
        return Err(CalibrationError::InvalidHorizon);
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let parse_err = |line: u64, message: String| CalibrationError::Parse { line, message };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header.iter().collect::<Vec<_>>() != TARGET_HEADER {
        return Err(parse_err(1, format!("expected header {}", TARGET_HEADER.join(","))));
    }
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for rec in rdr.deserialize::<TargetRow>() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = out.len() as u64 + 2;
        let sector = SectorId::new(rec.sector).map_err(|e| parse_err(line, e.to_string()))?;
        if !seen.insert(sector) {
            return Err(parse_err(line, format!("duplicate sector {sector}")));
        }
        out.push(CalibrationTarget {
            sector,
            firms_t0: rec.firms_t0,
            employees_t0: rec.employees_t0,
            firms_t: rec.firms_t,
            employees_t: rec.employees_t,
            horizon_years,
        });
    }
    Ok(out)
}

/// Writes one row per result.
pub fn write_results<W: Write>(writer: W, results: &[CalibrationResult]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(
        w,
        "sector,epsilon,theta,spin_rate,firms_pred,employees_pred,xi,psi,rel_xi,rel_psi,iterations,converged,infeasible"
    )?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.sector,
            r.epsilon,
            r.theta,
            r.spin_rate,
            r.firms_pred,
            r.employees_pred,
            r.xi,
            r.psi,
            r.rel_xi,
            r.rel_psi,
            r.iterations,
            r.converged,
            r.infeasible
        )?;
    }
    w.flush()
}
