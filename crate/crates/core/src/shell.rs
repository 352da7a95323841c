//! Scenario configuration, CSV and manifest I/O, and the command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::constitutive::MaterialModel;
use crate::control::{run_closed_loop, ClosedLoopResult, Disturbance, FomPlant, PiConfig, Plant, RomPlant};
use crate::error::{ConfigError, Error, RomError};
use crate::fvm::{
    run_simulation, DriveTemperature, InitialConditions, PatchBc, Sample, Scenario, SolverSettings,
    Throttle, TimeSeries,
};
use crate::gci::{gci_three_grid, run_grid_study, GridSample, QuantityOfInterest, DEFAULT_SAFETY_FACTOR};
use crate::mesh::{MeshSpec, ProbeSet};
use crate::rom::{
    rollout_trajectory, rom_error, train_lti, train_quadratic, trajectory_from_series, Orders, Rom, Trace,
    TrainingSet, DEFAULT_DT_ROM_S, DEFAULT_ORDER,
};
use crate::signals::{evaluation_signals, learning_signals, ExcitationSignal, DEFAULT_BASELINE_K};

/// Overrides the `--out` directory of every subcommand.
pub const OUT_DIR_ENV: &str = "CTWIN_OUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMESERIES_HEADER: [&str; 7] = ["t_s", "T_in_K", "T_core_K", "T_surface_K", "T_probe_K", "C_mean", "mass_balance"];
pub const CLOSED_LOOP_HEADER: [&str; 7] = ["t_s", "setpoint_K", "y_K", "u_K", "integral_Ks", "saturated", "alpha_mult"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// Convection oven, fixed 443.15 K air.
    #[default]
    Oven,
    /// Pan contact below, room air above.
    PanFry,
}

/// Per-patch overrides on top of the case defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_m_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_w_m2k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_ambient: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive_k: Option<DriveTemperature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throttle: Option<Throttle>,
}

impl PatchConfig {
    fn apply(&self, p: &mut PatchBc) {
        if let Some(v) = self.beta_m_s {
            p.beta_m_s = v;
        }
        if let Some(v) = self.alpha_w_m2k {
            p.alpha_w_m2k = v;
        }
        if let Some(v) = self.c_ambient {
            p.c_ambient = v;
        }
        if let Some(v) = &self.drive_k {
            p.drive_k = v.clone();
        }
        if let Some(v) = self.throttle {
            p.throttle = v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryConfig {
    pub bottom: PatchConfig,
    pub surface: PatchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GciConfig {
    /// Interior spacings in m, at least three.
    pub spacings_m: Vec<f64>,
    pub qoi: QuantityOfInterest,
    pub safety_factor: f64,
}

impl Default for GciConfig {
    fn default() -> Self {
        GciConfig {
            spacings_m: vec![1e-3, 1.5e-3, 2.25e-3],
            qoi: QuantityOfInterest::default(),
            safety_factor: DEFAULT_SAFETY_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RomKind {
    Lti,
    #[default]
    Quad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RomConfig {
    pub kind: RomKind,
    pub dt_rom_s: f64,
    pub na: usize,
    pub nb: usize,
    /// Ridge weight; chosen on the last training trajectory when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
}

impl Default for RomConfig {
    fn default() -> Self {
        RomConfig {
            kind: RomKind::Quad,
            dt_rom_s: DEFAULT_DT_ROM_S,
            na: DEFAULT_ORDER,
            nb: DEFAULT_ORDER,
            ridge: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub setpoint_k: f64,
    pub duration_s: f64,
    pub pi: PiConfig,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            setpoint_k: 330.0,
            duration_s: 4000.0,
            pi: PiConfig::default(),
        }
    }
}

/// One scenario document. Temperatures in K, lengths in m, times in s.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub case: Case,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_interval_s: Option<f64>,
    /// Replaces the case default mesh.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshSpec>,
    #[serde(default)]
    pub material: MaterialModel,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub initial: InitialConditions,
    #[serde(default)]
    pub solver: SolverSettings,
    /// Drives the bottom patch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<ExcitationSignal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<ProbeSet>,
    #[serde(default)]
    pub gci: GciConfig,
    #[serde(default)]
    pub rom: RomConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Disturbance>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable")
    }

    /// The resolved full-order scenario.
    pub fn scenario(&self) -> Scenario {
        let mut sc = match self.case {
            Case::Oven => Scenario::case_one(),
            Case::PanFry => Scenario::pan_fry(
                self.input
                    .unwrap_or_else(|| ExcitationSignal::constant(crate::fvm::ROOM_TEMPERATURE_K)),
            ),
        };
        if let Some(m) = &self.mesh {
            sc.mesh = m.clone();
        }
        sc.material = self.material.clone();
        if let Some(sig) = self.input {
            sc.boundary.bottom.drive_k = DriveTemperature::Signal(sig);
        }
        self.boundary.bottom.apply(&mut sc.boundary.bottom);
        self.boundary.surface.apply(&mut sc.boundary.surface);
        sc.initial = self.initial.clone();
        sc.solver = self.solver.clone();
        if let Some(d) = self.duration_s {
            sc.duration_s = d;
        }
        if let Some(d) = self.output_interval_s {
            sc.output_interval_s = d;
        }
        sc.probes = self.probes;
        sc.disturbance = self.disturbance;
        sc
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario().validate()?;
        if let Some(s) = &self.input {
            s.validate()?;
        }
        if self.gci.spacings_m.len() < 3 || self.gci.spacings_m.iter().any(|&h| !(h > 0.0)) {
            return Err(ConfigError::invalid("gci.spacings_m", "need at least three positive spacings"));
        }
        if !(self.gci.safety_factor > 0.0) {
            return Err(ConfigError::invalid("gci.safety_factor", "must be positive"));
        }
        if !(self.rom.dt_rom_s > 0.0) {
            return Err(ConfigError::invalid("rom.dt_rom_s", "must be positive"));
        }
        if self.rom.na == 0 || self.rom.nb == 0 {
            return Err(ConfigError::invalid("rom.na", "lag orders must be at least 1"));
        }
        if self.rom.ridge.is_some_and(|l| !(l >= 0.0)) {
            return Err(ConfigError::invalid("rom.ridge", "must be non-negative"));
        }
        if !(self.control.duration_s > 0.0) {
            return Err(ConfigError::invalid("control.duration_s", "must be positive"));
        }
        self.control.pi.validate()
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    ScenarioConfig::from_toml(&text, &path.display().to_string())
}

pub fn dump_config(cfg: &ScenarioConfig, path: &Path) -> Result<(), Error> {
    std::fs::write(path, cfg.to_toml()).map_err(|e| Error::io(path, e))
}

/// Significant digits of every number written to CSV.
pub const CSV_SIGNIFICANT_DIGITS: usize = 10;

/// Decimal text rounded to [`CSV_SIGNIFICANT_DIGITS`] significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.*e}", CSV_SIGNIFICANT_DIGITS - 1).parse().expect("formatted float parses");
    format!("{rounded}")
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv(format!("{}: {e}", path.display()))
}

/// Writes a probe series; an `alpha_mult` column is appended when every
/// sample records the convection multiplier.
pub fn write_timeseries_csv(series: &TimeSeries, path: &Path) -> Result<(), Error> {
    if series.is_empty() {
        return Err(csv_err(path, "empty series"));
    }
    let with_alpha = series.samples.iter().all(|s| s.alpha_mult.is_some());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<&str> = TIMESERIES_HEADER.to_vec();
    if with_alpha {
        header.push("alpha_mult");
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in &series.samples {
        let mut row: Vec<String> = [s.t_s, s.t_in_k, s.t_core_k, s.t_surface_k, s.t_probe_k, s.c_mean, s.mass_balance]
            .iter()
            .map(|&v| format_sig(v))
            .collect();
        if let (true, Some(a)) = (with_alpha, s.alpha_mult) {
            row.push(format_sig(a));
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_timeseries_csv(path: &Path) -> Result<TimeSeries, Error> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 7];
    for (i, name) in TIMESERIES_HEADER.iter().enumerate() {
        idx[i] = col(name).ok_or_else(|| csv_err(path, format!("missing column `{name}`")))?;
    }
    let alpha = col("alpha_mult");
    let mut series = TimeSeries::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let get = |i: usize| -> Result<f64, Error> {
            rec.get(i)
                .ok_or_else(|| csv_err(path, format!("row {} is short", line + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| csv_err(path, format!("row {}: {e}", line + 2)))
        };
        series.samples.push(Sample {
            t_s: get(idx[0])?,
            t_in_k: get(idx[1])?,
            t_core_k: get(idx[2])?,
            t_surface_k: get(idx[3])?,
            t_probe_k: get(idx[4])?,
            c_mean: get(idx[5])?,
            mass_balance: get(idx[6])?,
            alpha_mult: alpha.map(get).transpose()?,
        });
    }
    if series.is_empty() {
        return Err(csv_err(path, "no samples"));
    }
    Ok(series)
}

pub fn write_closed_loop_csv(result: &ClosedLoopResult, path: &Path) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(CLOSED_LOOP_HEADER).map_err(|e| csv_err(path, e))?;
    for s in &result.samples {
        w.write_record([
            format_sig(s.t_s),
            format_sig(s.setpoint_k),
            format_sig(s.y_k),
            format_sig(s.u_k),
            format_sig(s.integral_ks),
            u8::from(s.saturated).to_string(),
            format_sig(s.alpha_mult),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Record of one CLI run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub config: ScenarioConfig,
    pub wall_time_s: f64,
    pub statistics: serde_json::Value,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, Error> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Csv(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctwin", version, about = "Coupled heat and water transport in meat, ROMs and PI control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Scenario file (TOML); defaults to the oven case.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overridden by CTWIN_OUT_DIR).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlantKind {
    Rom,
    Fom,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full-order model and write the probe series.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Times at which to write field snapshots.
        #[arg(long, value_delimiter = ',')]
        snapshots: Vec<f64>,
    },
    /// Grid convergence index, from inline values or a grid study.
    Gci {
        #[command(flatten)]
        common: Common,
        /// Cell counts of the grids (with --values).
        #[arg(long, value_delimiter = ',', conflicts_with = "spacings")]
        cells: Vec<usize>,
        /// Representative spacings of the grids (with --values).
        #[arg(long, value_delimiter = ',')]
        spacings: Vec<f64>,
        /// Observed values, one per grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Domain volume for --cells; spacing is then (V/N)^(1/3).
        #[arg(long)]
        volume: Option<f64>,
    },
    /// Sample an excitation signal.
    Signals {
        #[command(flatten)]
        common: Common,
        /// Write the signal as CSV.
        #[arg(long)]
        dump: bool,
        /// Catalog name; defaults to the config input.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = 1500.0)]
        duration: f64,
    },
    /// Identify a ROM from full-order series CSVs.
    TrainRom {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: Option<RomKind>,
        /// Training series; the last one doubles as ridge validation set.
        #[arg(long, value_delimiter = ',', required = true)]
        data: Vec<PathBuf>,
    },
    /// Compare a ROM with full-order series driven by the same input.
    EvalRom {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rom: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        fom: Vec<PathBuf>,
    },
    /// Run the PI loop on a ROM or the full-order model.
    Control {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        plant: PlantKind,
        /// ROM file, required for --plant rom.
        #[arg(long)]
        rom: Option<PathBuf>,
    },
}

/// Parses `args` and runs the subcommand; returns the process exit code.
pub fn cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let started = Instant::now();
    match dispatch(parsed.command, started) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn out_dir(common: &Common) -> Result<PathBuf, Error> {
    let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| common.out.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn config_of(common: &Common) -> Result<ScenarioConfig, Error> {
    Ok(match &common.config {
        Some(p) => load_config(p)?,
        None => ScenarioConfig::default(),
    })
}

struct Finish<'a> {
    dir: &'a Path,
    command: Vec<String>,
    config: ScenarioConfig,
    started: Instant,
}

impl Finish<'_> {
    fn done(self, statistics: serde_json::Value, files: Vec<String>) -> Result<(), Error> {
        let m = RunManifest {
            tool: "ctwin",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: self.config,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            statistics,
            files,
        };
        m.write(self.dir)?;
        Ok(())
    }
}

fn catalog_signal(name: &str) -> Option<ExcitationSignal> {
    learning_signals(DEFAULT_BASELINE_K)
        .into_iter()
        .chain(evaluation_signals(DEFAULT_BASELINE_K))
        .find(|c| c.name == name)
        .map(|c| c.signal)
}

fn dispatch(cmd: Command, started: Instant) -> Result<(), Error> {
    match cmd {
        Command::Simulate { common, snapshots } => {
            let cfg = config_of(&common)?;
            let dir = out_dir(&common)?;
            let sc = cfg.scenario();
            let snaps = (!snapshots.is_empty()).then_some((dir.as_path(), snapshots.as_slice()));
            let (series, stats) = run_simulation(&sc, snaps)?;
            let csv = dir.join("timeseries.csv");
            write_timeseries_csv(&series, &csv)?;
            let mut files = vec!["timeseries.csv".to_string()];
            files.extend(snapshots.iter().map(|&t| crate::fvm::snapshot_name(t)));
            let last = series.samples.last().expect("series holds the initial sample");
            println!(
                "t = {} s: T_core = {:.3} K, T_surface = {:.3} K, C_mean = {:.4}",
                last.t_s, last.t_core_k, last.t_surface_k, last.c_mean
            );
            Finish {
                dir: &dir,
                command: vec!["simulate".into()],
                config: cfg,
                started,
            }
            .done(serde_json::to_value(&stats).unwrap_or_default(), files)
        }
        Command::Gci {
            common,
            cells,
            spacings,
            values,
            volume,
        } => {
            let cfg = config_of(&common)?;
            let dir = out_dir(&common)?;
            let (report, samples) = if values.is_empty() {
                let study = run_grid_study(&cfg.scenario(), &cfg.gci.spacings_m, cfg.gci.qoi)?;
                let report = gci_three_grid(&study.samples, cfg.gci.safety_factor)?;
                (report, study.samples)
            } else {
                let samples: Vec<GridSample> = if !cells.is_empty() {
                    if cells.len() != values.len() {
                        return Err(ConfigError::invalid("--cells", "needs one value per grid").into());
                    }
                    cells
                        .iter()
                        .zip(&values)
                        .map(|(&n, &v)| match volume {
                            Some(vol) => GridSample::from_cell_count(n, vol, v),
                            None => GridSample::new((n as f64).powf(-1.0 / 3.0), v),
                        })
                        .collect()
                } else {
                    if spacings.len() != values.len() {
                        return Err(ConfigError::invalid("--spacings", "needs one value per grid").into());
                    }
                    spacings.iter().zip(&values).map(|(&h, &v)| GridSample::new(h, v)).collect()
                };
                (gci_three_grid(&samples, cfg.gci.safety_factor)?, samples)
            };
            println!("{report}");
            Finish {
                dir: &dir,
                command: vec!["gci".into()],
                config: cfg,
                started,
            }
            .done(serde_json::json!({ "report": report, "samples": samples }), vec![])
        }
        Command::Signals {
            common,
            dump,
            name,
            dt,
            duration,
        } => {
            let cfg = config_of(&common)?;
            let dir = out_dir(&common)?;
            let signal = match &name {
                Some(n) => catalog_signal(n).ok_or_else(|| ConfigError::invalid("--name", format!("unknown signal `{n}`")))?,
                None => cfg
                    .input
                    .ok_or_else(|| ConfigError::invalid("input", "no signal configured; pass --name"))?,
            };
            signal.validate()?;
            if !(dt > 0.0 && duration >= 0.0) {
                return Err(ConfigError::invalid("--dt", "dt must be positive and duration non-negative").into());
            }
            let mut files = vec![];
            if dump {
                let path = dir.join("signal.csv");
                let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
                w.write_record(["t_s", "T_in_K"]).map_err(|e| csv_err(&path, e))?;
                for (t, v) in signal.sample(dt, duration) {
                    w.write_record([format_sig(t), format_sig(v)]).map_err(|e| csv_err(&path, e))?;
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
                files.push("signal.csv".into());
            }
            Finish {
                dir: &dir,
                command: vec!["signals".into()],
                config: cfg,
                started,
            }
            .done(serde_json::json!({ "signal": signal }), files)
        }
        Command::TrainRom { common, kind, data } => {
            let mut cfg = config_of(&common)?;
            if let Some(k) = kind {
                cfg.rom.kind = k;
            }
            let dir = out_dir(&common)?;
            let set = training_set_from_csv(&data, cfg.rom.dt_rom_s)?;
            let orders = Orders::new(cfg.rom.na, cfg.rom.nb);
            let (rom, fit): (Rom, _) = match cfg.rom.kind {
                RomKind::Lti => {
                    let (r, f) = train_lti(&set, orders)?;
                    (r.into(), f)
                }
                RomKind::Quad => {
                    let (r, f) = train_quadratic(&set, orders, cfg.rom.ridge)?;
                    (r.into(), f)
                }
            };
            let path = dir.join("rom.txt");
            rom.save(&path).map_err(|e| Error::io(&path, e))?;
            print!("{}", fit.rollout);
            Finish {
                dir: &dir,
                command: vec!["train-rom".into()],
                config: cfg,
                started,
            }
            .done(
                serde_json::json!({
                    "condition": fit.condition,
                    "one_step_rms_K": fit.one_step_rms,
                    "ridge": fit.ridge,
                    "training_E_max_K": fit.rollout.e_max,
                    "training_relative_error": fit.relative_error,
                }),
                vec!["rom.txt".into()],
            )
        }
        Command::EvalRom { common, rom, fom } => {
            let cfg = config_of(&common)?;
            let dir = out_dir(&common)?;
            let model = Rom::load(&rom)?;
            let mut parts = Vec::new();
            for path in &fom {
                let series = read_timeseries_csv(path)?;
                let (name, report) = compare_with_series(&model, path, &series)?;
                parts.push((name, report));
            }
            let report = crate::rom::RomErrorReport::combine(parts);
            print!("{report}");
            Finish {
                dir: &dir,
                command: vec!["eval-rom".into()],
                config: cfg,
                started,
            }
            .done(serde_json::json!({ "E_max_K": report.e_max, "E_rms_K": report.e_rms }), vec![])
        }
        Command::Control { common, plant, rom } => {
            let cfg = config_of(&common)?;
            let dir = out_dir(&common)?;
            let mut p: Box<dyn Plant> = match plant {
                PlantKind::Rom => {
                    let path = rom.ok_or_else(|| ConfigError::invalid("--rom", "required for --plant rom"))?;
                    Box::new(RomPlant::new(Arc::new(Rom::load(&path)?)))
                }
                PlantKind::Fom => {
                    let mut sc = cfg.scenario();
                    if cfg.case == Case::Oven && cfg.input.is_none() {
                        sc = Scenario {
                            mesh: sc.mesh.clone(),
                            ..Scenario::pan_fry(ExcitationSignal::constant(cfg.control.pi.bias_k))
                        };
                    }
                    Box::new(FomPlant::new(sc)?)
                }
            };
            let result = run_closed_loop(
                p.as_mut(),
                cfg.control.setpoint_k,
                &cfg.control.pi,
                cfg.disturbance.as_ref(),
                cfg.control.duration_s,
            )?;
            let path = dir.join("closed_loop.csv");
            write_closed_loop_csv(&result, &path)?;
            let last = result.samples.last().expect("loop records at least one sample");
            println!("t = {} s: y = {:.3} K, u = {:.3} K", last.t_s, last.y_k, last.u_k);
            Finish {
                dir: &dir,
                command: vec!["control".into()],
                config: cfg.clone(),
                started,
            }
            .done(
                serde_json::json!({
                    "final_y_K": last.y_k,
                    "settling_time_0p5K_s": result.settling_time(0.5),
                    "within_limits": result.within_limits(&cfg.control.pi),
                }),
                vec!["closed_loop.csv".into()],
            )
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn substeps_of(series: &TimeSeries, dt_rom_s: f64) -> Result<usize, RomError> {
    let s = &series.samples;
    if s.len() < 2 {
        return Err(RomError::InsufficientData("series has fewer than two samples".into()));
    }
    let m = dt_rom_s / (s[1].t_s - s[0].t_s);
    if (m - m.round()).abs() > 1e-6 || m.round() < 1.0 {
        return Err(RomError::Mismatch(format!("sample spacing does not divide dt_rom_s = {dt_rom_s}")));
    }
    Ok(m.round() as usize)
}

pub fn training_set_from_csv(paths: &[PathBuf], dt_rom_s: f64) -> Result<TrainingSet, Error> {
    let mut set: Option<TrainingSet> = None;
    for p in paths {
        let series = read_timeseries_csv(p)?;
        let m = substeps_of(&series, dt_rom_s)?;
        let s = set.get_or_insert_with(|| TrainingSet::new(dt_rom_s, m));
        if s.input_substeps != m {
            return Err(RomError::Mismatch("training series differ in sample spacing".into()).into());
        }
        s.push_series(&stem(p), &series)?;
    }
    set.ok_or_else(|| RomError::InsufficientData("no training files".into()).into())
}

fn compare_with_series(rom: &Rom, path: &Path, series: &TimeSeries) -> Result<(String, crate::rom::RomErrorReport), Error> {
    let tr = trajectory_from_series(&stem(path), series, rom.dt_rom_s(), substeps_of(series, rom.dt_rom_s())?)?;
    let y = rollout_trajectory(rom, &tr)?;
    let t: Vec<f64> = (0..y.len()).map(|k| k as f64 * rom.dt_rom_s()).collect();
    let report = rom_error(&Trace::new(t, y), &Trace::core(series))?;
    Ok((tr.name, report))
}
