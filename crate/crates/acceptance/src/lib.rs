//! Shared pieces of the acceptance run: verdict lines and the full-order
//! pan-fry data everything downstream is trained and scored on.

use std::fmt;
use std::path::PathBuf;

use ctwin::control::Disturbance;
use ctwin::fvm::{run_simulation, Scenario, TimeSeries};
use ctwin::rom::{trajectory_from_series, Trajectory};
use ctwin::shell::{read_timeseries_csv, write_timeseries_csv};
use ctwin::signals::ExcitationSignal;
use ctwin::Error;

/// Directory for reusing full-order runs between invocations. Unset by default.
pub const CACHE_ENV: &str = "CTWIN_ACCEPTANCE_CACHE";

/// ROM sample step in s.
pub const DT_ROM_S: f64 = 5.0;
/// Full-order samples per ROM step.
pub const INPUT_SUBSTEPS: usize = 5;

/// Outcome of one numbered criterion, built from named sub-checks.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: usize,
    pub title: &'static str,
    checks: Vec<(bool, String)>,
}

impl Verdict {
    pub fn new(id: usize, title: &'static str) -> Self {
        Verdict {
            id,
            title,
            checks: Vec::new(),
        }
    }

    pub fn check(&mut self, ok: bool, detail: impl Into<String>) -> &mut Self {
        self.checks.push((ok, detail.into()));
        self
    }

    /// Records an error that prevented the criterion from being evaluated.
    pub fn error(&mut self, err: impl fmt::Display) -> &mut Self {
        self.check(false, format!("error: {err}"))
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|(ok, _)| *ok)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} criterion {:>2} ({})", self.id, self.title)?;
        for (i, (ok, d)) in self.checks.iter().enumerate() {
            let sep = if i == 0 { ": " } else { "; " };
            let mark = if *ok { "" } else { "[x] " };
            write!(f, "{sep}{mark}{d}")?;
        }
        Ok(())
    }
}

/// Pan-fry scenario sampled every second so ROM inputs can be block-averaged.
pub fn pan_fry_scenario(signal: ExcitationSignal, disturbance: Option<Disturbance>) -> Scenario {
    Scenario {
        output_interval_s: DT_ROM_S / INPUT_SUBSTEPS as f64,
        disturbance,
        ..Scenario::pan_fry(signal)
    }
}

/// Runs full-order pan-fry scenarios, optionally through an on-disk cache.
#[derive(Debug, Clone, Default)]
pub struct FomLibrary {
    cache: Option<PathBuf>,
}

impl FomLibrary {
    pub fn from_env() -> Self {
        FomLibrary {
            cache: std::env::var_os(CACHE_ENV).map(PathBuf::from),
        }
    }

    pub fn run(&self, name: &str, scenario: &Scenario) -> Result<TimeSeries, Error> {
        let path = self.cache.as_ref().map(|d| d.join(format!("{name}.csv")));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            return read_timeseries_csv(p);
        }
        let (series, _) = run_simulation(scenario, None)?;
        if let Some(p) = &path {
            std::fs::create_dir_all(p.parent().unwrap()).map_err(|e| Error::io(p, e))?;
            write_timeseries_csv(&series, p)?;
        }
        Ok(series)
    }
}

/// ROM trajectory of a pan-fry series. With `convection` set, runs without a
/// recorded multiplier get a constant unit channel.
pub fn trajectory(name: &str, series: &TimeSeries, convection: bool) -> Result<Trajectory, Error> {
    let mut tr = trajectory_from_series(name, series, DT_ROM_S, INPUT_SUBSTEPS)?;
    if !convection {
        tr.w = None;
    } else if tr.w.is_none() {
        let n = tr.len();
        tr = tr.with_convection(vec![1.0; n]);
    }
    Ok(tr)
}
