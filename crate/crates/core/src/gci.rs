//! Grid convergence index (Celik/Roache three-grid procedure).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, GciError};
use crate::fvm::{run_simulation, Sample, Scenario};
use crate::mesh::build_quarter_cuboid;

pub const DEFAULT_SAFETY_FACTOR: f64 = 1.25;
const MAX_ITERATIONS: usize = 100;
const RELAXATION: f64 = 0.5;

/// One grid of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSample {
    /// Representative spacing in m.
    pub spacing: f64,
    /// Observed quantity of interest.
    pub value: f64,
}

impl GridSample {
    pub fn new(spacing: f64, value: f64) -> Self {
        GridSample { spacing, value }
    }

    /// Spacing `(V / N)^(1/3)` for `cells` control volumes in a fixed `volume`.
    pub fn from_cell_count(cells: usize, volume: f64, value: f64) -> Self {
        GridSample {
            spacing: (volume / cells as f64).cbrt(),
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GciReport {
    pub apparent_order: f64,
    pub extrapolated: f64,
    /// Relative GCI of the finest grid in percent.
    pub gci_fine_percent: f64,
    /// Absolute error window in units of the quantity.
    pub error_window: f64,
    pub safety_factor: f64,
    pub refinement_21: f64,
    pub refinement_32: f64,
    pub iterations: usize,
}

impl std::fmt::Display for GciReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "apparent order p      = {:.6}", self.apparent_order)?;
        writeln!(f, "extrapolated value    = {:.6}", self.extrapolated)?;
        writeln!(f, "GCI fine              = {:.6} %", self.gci_fine_percent)?;
        writeln!(f, "absolute error window = {:.6}", self.error_window)?;
        writeln!(f, "safety factor         = {}", self.safety_factor)?;
        write!(
            f,
            "refinement r21, r32   = {:.6}, {:.6}",
            self.refinement_21, self.refinement_32
        )
    }
}

/// Three-grid GCI. `samples` may be given in any order; with more than
/// three grids the three finest are used.
pub fn gci_three_grid(samples: &[GridSample], safety: f64) -> Result<GciReport, GciError> {
    if samples.len() < 3 {
        return Err(GciError::TooFewGrids(samples.len()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.spacing.total_cmp(&b.spacing));
    let [g1, g2, g3] = [sorted[0], sorted[1], sorted[2]];
    if !(g1.spacing > 0.0 && g1.spacing < g2.spacing && g2.spacing < g3.spacing) {
        return Err(GciError::NonMonotoneSpacing);
    }
    let r21 = g2.spacing / g1.spacing;
    let r32 = g3.spacing / g2.spacing;
    let e21 = g2.value - g1.value;
    let e32 = g3.value - g2.value;
    if e21 == 0.0 || e32 == 0.0 {
        return Err(GciError::ZeroDifference);
    }
    let ratio = e32 / e21;
    if ratio < 0.0 {
        return Err(GciError::OscillatoryConvergence { ratio });
    }
    let s = ratio.signum();
    let ln_r21 = r21.ln();

    let target = |p: f64| {
        let q = ((r21.powf(p) - s) / (r32.powf(p) - s)).ln();
        (ratio.abs().ln() + q).abs() / ln_r21
    };

    let mut p = 1.0_f64;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let t = target(p);
        if !t.is_finite() {
            break;
        }
        let next = (1.0 - RELAXATION) * p + RELAXATION * t;
        let change = (next - p).abs();
        p = next;
        if change <= 1e-13 * p.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        // Slow fixed-point contraction; fall back to bisection on p - target(p).
        let (p_bis, n) = bisect(|p| p - target(p), 1e-6, 50.0).ok_or(GciError::NotConverged(iterations))?;
        p = p_bis;
        iterations += n;
    }

    let rp = r21.powf(p);
    let extrapolated = (rp * g1.value - g2.value) / (rp - 1.0);
    let gci_fine_percent = safety * ((g1.value - g2.value) / g1.value).abs() / (rp - 1.0) * 100.0;
    Ok(GciReport {
        apparent_order: p,
        extrapolated,
        gci_fine_percent,
        error_window: gci_fine_percent * g1.value.abs() / 100.0,
        safety_factor: safety,
        refinement_21: r21,
        refinement_32: r32,
        iterations,
    })
}

/// Probe quantity extracted from a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    TCore,
    TSurface,
    TProbe,
    CMean,
}

impl Quantity {
    pub fn of(&self, s: &Sample) -> f64 {
        match self {
            Quantity::TCore => s.t_core_k,
            Quantity::TSurface => s.t_surface_k,
            Quantity::TProbe => s.t_probe_k,
            Quantity::CMean => s.c_mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantityOfInterest {
    pub quantity: Quantity,
    pub time_s: f64,
}

impl Default for QuantityOfInterest {
    fn default() -> Self {
        QuantityOfInterest {
            quantity: Quantity::TSurface,
            time_s: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridStudy {
    pub report: GciReport,
    pub samples: Vec<GridSample>,
    pub cell_counts: Vec<usize>,
}

/// Runs `base` once per interior spacing (first-layer height scaled along)
/// up to the QoI time and evaluates the GCI of the three finest grids.
pub fn run_grid_study(base: &Scenario, spacings: &[f64], qoi: QuantityOfInterest) -> Result<GridStudy, Error> {
    if spacings.len() < 3 {
        return Err(GciError::TooFewGrids(spacings.len()).into());
    }
    let runs: Vec<Result<(GridSample, usize), Error>> = spacings
        .par_iter()
        .map(|&h| {
            let mut sc = base.clone();
            sc.mesh = base.mesh.scaled(h / base.mesh.spacing_m);
            sc.duration_s = qoi.time_s;
            sc.output_interval_s = qoi.time_s;
            let mesh = build_quarter_cuboid(&sc.mesh)?;
            let (series, _) = run_simulation(&sc, None)?;
            let last = series.samples.last().expect("series holds the initial sample");
            Ok((
                GridSample::new(mesh.representative_spacing(), qoi.quantity.of(last)),
                mesh.n_cells(),
            ))
        })
        .collect();
    let mut samples = Vec::new();
    let mut cell_counts = Vec::new();
    for r in runs {
        let (s, n) = r?;
        samples.push(s);
        cell_counts.push(n);
    }
    let report = gci_three_grid(&samples, DEFAULT_SAFETY_FACTOR)?;
    Ok(GridStudy {
        report,
        samples,
        cell_counts,
    })
}

fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<(f64, usize)> {
    let mut g_lo = g(lo);
    let g_hi = g(hi);
    if !(g_lo.is_finite() && g_hi.is_finite()) || g_lo.signum() == g_hi.signum() {
        return None;
    }
    for n in 1..=200 {
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid);
        if !g_mid.is_finite() {
            return None;
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * mid.max(1.0) {
            return Some((0.5 * (lo + hi), n));
        }
    }
    Some((0.5 * (lo + hi), 200))
}
