//! Discrete PI control with limiter and closed-loop runners.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ControlError, SolverError};
use crate::fvm::{initialize, DriveTemperature, Scenario, SimulationState};
use crate::mesh::{build_quarter_cuboid, ProbeSet};
use crate::rom::{rom_step_with_convection, Rom, RomHistory};

/// Window of forced convection that multiplies the surface heat-transfer coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Disturbance {
    pub onset_s: f64,
    pub duration_s: f64,
    pub multiplier: f64,
}

impl Default for Disturbance {
    fn default() -> Self {
        Disturbance {
            onset_s: 400.0,
            duration_s: 500.0,
            multiplier: 2.0,
        }
    }
}

impl Disturbance {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.onset_s >= 0.0 && self.duration_s >= 0.0) {
            return Err(ConfigError::invalid("disturbance.onset_s", "onset and duration must be non-negative"));
        }
        if !(self.multiplier > 0.0 && self.multiplier.is_finite()) {
            return Err(ConfigError::invalid("disturbance.multiplier", "must be positive"));
        }
        Ok(())
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.onset_s && t < self.onset_s + self.duration_s
    }

    pub fn multiplier_at(&self, t: f64) -> f64 {
        if self.is_active(t) {
            self.multiplier
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiConfig {
    pub kp: f64,
    /// Integral gain in s⁻¹.
    pub ki: f64,
    pub dt_s: f64,
    pub u_min_k: f64,
    pub u_max_k: f64,
    /// Command at zero error and zero integral.
    pub bias_k: f64,
    pub anti_windup: bool,
}

impl Default for PiConfig {
    fn default() -> Self {
        PiConfig {
            kp: 10.0,
            ki: 0.01,
            dt_s: 1.0,
            u_min_k: 293.15,
            u_max_k: 500.0,
            bias_k: 293.15,
            anti_windup: true,
        }
    }
}

impl PiConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.u_min_k < self.u_max_k) {
            return Err(ConfigError::invalid("control.u_min_k", "must be below u_max_k"));
        }
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(ConfigError::invalid("control.dt_s", "must be positive"));
        }
        if ![self.kp, self.ki, self.bias_k, self.u_min_k, self.u_max_k].iter().all(|v| v.is_finite()) {
            return Err(ConfigError::invalid("control", "gains, bias and limits must be finite"));
        }
        Ok(())
    }
}

/// Integrator state of the controller.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiState {
    /// Accumulated error in K s.
    pub integral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiOutput {
    pub u_k: f64,
    pub saturated: bool,
}

/// One controller update. With anti-windup the integral is frozen on samples
/// where the output saturates and the error pushes further into the limit.
pub fn pi_step(state: &mut PiState, setpoint: f64, measurement: f64, config: &PiConfig) -> PiOutput {
    let e = setpoint - measurement;
    let candidate = state.integral + e * config.dt_s;
    let raw = |i: f64| config.bias_k + config.kp * e + config.ki * i;
    let mut u = raw(candidate);
    let winding = (u > config.u_max_k && e > 0.0) || (u < config.u_min_k && e < 0.0);
    if config.anti_windup && winding {
        u = raw(state.integral);
    } else {
        state.integral = candidate;
    }
    let clamped = u.clamp(config.u_min_k, config.u_max_k);
    PiOutput {
        u_k: clamped,
        saturated: clamped != u,
    }
}

/// Anything that maps a driving temperature to a measured core temperature.
pub trait Plant {
    fn measure(&self) -> f64;
    /// Advances by `dt_s` with pan temperature `u_k` and surface convection
    /// multiplier `convection`.
    fn advance(&mut self, u_k: f64, convection: f64, dt_s: f64) -> Result<(), ControlError>;
}

/// ROM plant stepped at its own rate. Control steps inside one ROM step
/// are averaged on input; the measurement in between is extrapolated
/// linearly from the last two ROM outputs.
#[derive(Debug, Clone)]
pub struct RomPlant {
    rom: Arc<Rom>,
    history: RomHistory,
    y_prev: f64,
    y_last: f64,
    elapsed: f64,
    u_sum: f64,
    w_sum: f64,
    count: usize,
}

impl RomPlant {
    pub fn new(rom: Arc<Rom>) -> Self {
        let history = rom.history();
        let y0 = history.last();
        RomPlant {
            rom,
            history,
            y_prev: y0,
            y_last: y0,
            elapsed: 0.0,
            u_sum: 0.0,
            w_sum: 0.0,
            count: 0,
        }
    }
}

impl Plant for RomPlant {
    fn measure(&self) -> f64 {
        let f = self.elapsed / self.rom.dt_rom_s();
        self.y_last + f * (self.y_last - self.y_prev)
    }

    fn advance(&mut self, u_k: f64, convection: f64, dt_s: f64) -> Result<(), ControlError> {
        let dt_rom = self.rom.dt_rom_s();
        let ratio = dt_rom / dt_s;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
            return Err(ConfigError::invalid("control.dt_s", "must divide the ROM step").into());
        }
        self.u_sum += u_k;
        self.w_sum += convection;
        self.count += 1;
        self.elapsed += dt_s;
        if self.elapsed >= dt_rom - 1e-9 {
            let n = self.count as f64;
            let y = rom_step_with_convection(&self.rom, &mut self.history, self.u_sum / n, self.w_sum / n)?;
            self.y_prev = self.y_last;
            self.y_last = y;
            self.elapsed = 0.0;
            self.u_sum = 0.0;
            self.w_sum = 0.0;
            self.count = 0;
        }
        Ok(())
    }
}

/// Full-order plant: the command drives the bottom patch and the multiplier
/// scales the surface heat-transfer coefficient.
#[derive(Debug, Clone)]
pub struct FomPlant {
    scenario: Scenario,
    state: SimulationState,
    probes: ProbeSet,
    base_alpha_multiplier: f64,
}

impl FomPlant {
    pub fn new(scenario: Scenario) -> Result<Self, ControlError> {
        scenario.validate()?;
        let mesh = Arc::new(build_quarter_cuboid(&scenario.mesh).map_err(SolverError::from)?);
        let probes = scenario.probes();
        probes.validate(&mesh).map_err(SolverError::from)?;
        let state = initialize(
            mesh,
            scenario.material.clone(),
            scenario.initial.temperature_k,
            scenario.initial.water_mass_fraction,
        )?;
        let base_alpha_multiplier = scenario.boundary.surface.alpha_multiplier;
        Ok(FomPlant {
            scenario,
            state,
            probes,
            base_alpha_multiplier,
        })
    }

    pub fn state(&self) -> &SimulationState {
        &self.state
    }
}

impl Plant for FomPlant {
    fn measure(&self) -> f64 {
        self.state.probe_t(self.probes.a).unwrap_or(f64::NAN)
    }

    fn advance(&mut self, u_k: f64, convection: f64, dt_s: f64) -> Result<(), ControlError> {
        let solver_dt = self.scenario.solver.dt_s;
        let ratio = dt_s / solver_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
            return Err(ConfigError::invalid("control.dt_s", "must be a multiple of solver.dt_s").into());
        }
        let bc = &mut self.scenario.boundary;
        bc.bottom.drive_k = DriveTemperature::Constant(u_k);
        bc.surface.alpha_multiplier = self.base_alpha_multiplier * convection;
        for _ in 0..ratio.round() as usize {
            self.state.step(&self.scenario.boundary, &self.scenario.solver)?;
        }
        Ok(())
    }
}

/// One control sample, recorded before the plant advances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopSample {
    pub t_s: f64,
    pub setpoint_k: f64,
    pub y_k: f64,
    pub u_k: f64,
    pub integral_ks: f64,
    pub saturated: bool,
    pub alpha_mult: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClosedLoopResult {
    pub samples: Vec<LoopSample>,
}

impl ClosedLoopResult {
    pub fn within_limits(&self, config: &PiConfig) -> bool {
        self.samples
            .iter()
            .all(|s| s.u_k >= config.u_min_k && s.u_k <= config.u_max_k)
    }

    /// Earliest time from which `|y - setpoint| < band` holds to the end.
    pub fn settling_time(&self, band: f64) -> Option<f64> {
        self.entry_after(band, f64::NEG_INFINITY)
    }

    /// Time after `after_s` until `|y - setpoint|` drops below `band` for good;
    /// zero if it never leaves the band, `None` if it has not re-entered by
    /// the end of the run.
    pub fn re_entry_time(&self, band: f64, after_s: f64) -> Option<f64> {
        self.entry_after(band, after_s).map(|t| (t - after_s).max(0.0))
    }

    fn entry_after(&self, band: f64, after_s: f64) -> Option<f64> {
        let tail: Vec<_> = self.samples.iter().filter(|s| s.t_s >= after_s).collect();
        let last = tail.last()?;
        if (last.y_k - last.setpoint_k).abs() >= band {
            return None;
        }
        let mut t = tail[0].t_s;
        for w in tail.windows(2) {
            if (w[0].y_k - w[0].setpoint_k).abs() >= band {
                t = w[1].t_s;
            }
        }
        Some(t)
    }

    /// Largest `|y_a - y_b|` over samples at matching times.
    pub fn max_output_difference(&self, other: &ClosedLoopResult) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a.y_k - b.y_k).abs())
            .fold(0.0, f64::max)
    }
}

/// Runs the PI loop for `duration_s` from the plant's current state.
pub fn run_closed_loop(
    plant: &mut dyn Plant,
    setpoint: f64,
    config: &PiConfig,
    disturbance: Option<&Disturbance>,
    duration_s: f64,
) -> Result<ClosedLoopResult, ControlError> {
    config.validate()?;
    if let Some(d) = disturbance {
        d.validate()?;
    }
    let steps = (duration_s / config.dt_s).round() as usize;
    let mut state = PiState::default();
    let mut out = ClosedLoopResult::default();
    for k in 0..=steps {
        let t = k as f64 * config.dt_s;
        let y = plant.measure();
        if !y.is_finite() {
            return Err(SolverError::NonFinite { field: "T_core", time: t }.into());
        }
        let cmd = pi_step(&mut state, setpoint, y, config);
        let w_next = disturbance.map_or(1.0, |d| d.multiplier_at(t + config.dt_s));
        out.samples.push(LoopSample {
            t_s: t,
            setpoint_k: setpoint,
            y_k: y,
            u_k: cmd.u_k,
            integral_ks: state.integral,
            saturated: cmd.saturated,
            alpha_mult: disturbance.map_or(1.0, |d| d.multiplier_at(t)),
        });
        if k < steps {
            plant.advance(cmd.u_k, w_next, config.dt_s)?;
        }
    }
    Ok(out)
}

/// Drives `plant` open loop with the commands recorded in `commands`, e.g. to
/// predict what a controller blind to the disturbance would produce.
pub fn replay_commands(
    plant: &mut dyn Plant,
    commands: &ClosedLoopResult,
    disturbance: Option<&Disturbance>,
) -> Result<ClosedLoopResult, ControlError> {
    let mut out = ClosedLoopResult::default();
    for (k, s) in commands.samples.iter().enumerate() {
        let y = plant.measure();
        out.samples.push(LoopSample {
            y_k: y,
            alpha_mult: disturbance.map_or(1.0, |d| d.multiplier_at(s.t_s)),
            ..*s
        });
        if let Some(next) = commands.samples.get(k + 1) {
            let dt = next.t_s - s.t_s;
            let w_next = disturbance.map_or(1.0, |d| d.multiplier_at(next.t_s));
            plant.advance(s.u_k, w_next, dt)?;
        }
    }
    Ok(out)
}
