//! Input-output reduced-order models of the core temperature.
//!
//! Sequences are sampled at `t_k = k·Δt_rom`. `y[k]` is the output at `t_k`;
//! `u[0]` is the input at `t = 0` and `u[k]` for `k ≥ 1` is the mean input over
//! `(t_{k-1}, t_k]`. A model predicts `y[k+1]` from the output lags
//! `y[k], …, y[k-na+1]` and the input lags `u[k+1], …, u[k-nb+2]`, so the
//! newest input is the one applied during the step. Indices before zero
//! repeat the first value (quiescent warm start).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::RomError;
use crate::fvm::TimeSeries;
use crate::signals::ExcitationSignal;

pub const DEFAULT_DT_ROM_S: f64 = 5.0;
pub const DEFAULT_ORDER: usize = 4;
/// Used when no held-out trajectory is available for selecting the ridge weight.
pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Candidate ridge weights for held-out selection.
pub const RIDGE_GRID: [f64; 9] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
const MAX_CONDITION: f64 = 1e10;
const DIVERGENCE_BOUND_K: f64 = 1e4;
const MAX_LAGS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orders {
    pub na: usize,
    pub nb: usize,
}

impl Default for Orders {
    fn default() -> Self {
        Orders {
            na: DEFAULT_ORDER,
            nb: DEFAULT_ORDER,
        }
    }
}

impl Orders {
    pub fn new(na: usize, nb: usize) -> Self {
        Orders { na, nb }
    }

    fn validate(&self) -> Result<(), RomError> {
        if self.na == 0 || self.nb == 0 {
            return Err(RomError::Mismatch("lag orders must be at least 1".into()));
        }
        if self.na + 2 * self.nb > MAX_LAGS {
            return Err(RomError::Mismatch(format!("at most {MAX_LAGS} lag variables are supported")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub name: String,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// Optional convection multiplier, laid out like `u`.
    pub w: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(name: impl Into<String>, u: Vec<f64>, y: Vec<f64>) -> Self {
        Trajectory {
            name: name.into(),
            u,
            y,
            w: None,
        }
    }

    pub fn with_convection(mut self, w: Vec<f64>) -> Self {
        self.w = Some(w);
        self
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn validate(&self) -> Result<(), RomError> {
        if self.y.len() < 2 {
            return Err(RomError::InsufficientData(format!("trajectory `{}` has fewer than two samples", self.name)));
        }
        if self.u.len() != self.y.len() || self.w.as_ref().is_some_and(|w| w.len() != self.y.len()) {
            return Err(RomError::Mismatch(format!("trajectory `{}` has channels of unequal length", self.name)));
        }
        let all = self.u.iter().chain(&self.y).chain(self.w.iter().flatten());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(RomError::NonFinite(format!("sample in trajectory `{}`", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub dt_rom_s: f64,
    /// Input sub-samples averaged per ROM step.
    pub input_substeps: usize,
    pub trajectories: Vec<Trajectory>,
}

impl TrainingSet {
    pub fn new(dt_rom_s: f64, input_substeps: usize) -> Self {
        TrainingSet {
            dt_rom_s,
            input_substeps: input_substeps.max(1),
            trajectories: Vec::new(),
        }
    }

    pub fn push(&mut self, trajectory: Trajectory) -> Result<(), RomError> {
        trajectory.validate()?;
        self.trajectories.push(trajectory);
        Ok(())
    }

    /// Resamples a full-order series onto the ROM grid. The series spacing
    /// must equal `dt_rom_s / input_substeps`.
    pub fn push_series(&mut self, name: &str, series: &TimeSeries) -> Result<(), RomError> {
        self.push(trajectory_from_series(name, series, self.dt_rom_s, self.input_substeps)?)
    }

    /// True when every trajectory carries the convection channel.
    pub fn has_convection(&self) -> bool {
        !self.trajectories.is_empty() && self.trajectories.iter().all(|t| t.w.is_some())
    }

    pub fn validate(&self) -> Result<(), RomError> {
        if !(self.dt_rom_s > 0.0 && self.dt_rom_s.is_finite()) {
            return Err(RomError::Mismatch("dt_rom_s must be positive".into()));
        }
        if self.trajectories.is_empty() {
            return Err(RomError::InsufficientData("no trajectories".into()));
        }
        let with_w = self.trajectories.iter().filter(|t| t.w.is_some()).count();
        if with_w != 0 && with_w != self.trajectories.len() {
            return Err(RomError::Mismatch("convection channel present on only some trajectories".into()));
        }
        self.trajectories.iter().try_for_each(Trajectory::validate)
    }
}

pub fn trajectory_from_series(
    name: &str,
    series: &TimeSeries,
    dt_rom_s: f64,
    input_substeps: usize,
) -> Result<Trajectory, RomError> {
    let s = &series.samples;
    if s.len() < 2 {
        return Err(RomError::InsufficientData(format!("series `{name}` is too short")));
    }
    let m = input_substeps.max(1);
    let spacing = dt_rom_s / m as f64;
    for (k, pair) in s.windows(2).enumerate() {
        if ((pair[1].t_s - pair[0].t_s) - spacing).abs() > 1e-6 * spacing {
            return Err(RomError::Mismatch(format!(
                "series `{name}` is not uniformly sampled at {spacing} s (gap after sample {k})"
            )));
        }
    }
    let steps = (s.len() - 1) / m;
    let has_w = s.iter().all(|x| x.alpha_mult.is_some());
    let mut u = vec![s[0].t_in_k];
    let mut y = vec![s[0].t_core_k];
    let mut w = vec![s[0].alpha_mult.unwrap_or(1.0)];
    for k in 1..=steps {
        let block = &s[(k - 1) * m + 1..=k * m];
        u.push(block.iter().map(|x| x.t_in_k).sum::<f64>() / m as f64);
        w.push(block.iter().map(|x| x.alpha_mult.unwrap_or(1.0)).sum::<f64>() / m as f64);
        y.push(s[k * m].t_core_k);
    }
    let traj = Trajectory::new(name, u, y);
    Ok(if has_w { traj.with_convection(w) } else { traj })
}

/// Lag window of a running rollout, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RomHistory {
    y: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
}

impl RomHistory {
    pub fn new(rom: &Rom, u0: f64, y0: f64, w0: f64) -> Self {
        let Orders { na, nb } = rom.orders();
        let nw = if rom.has_convection() { nb } else { 0 };
        RomHistory {
            y: vec![y0; na],
            u: vec![u0; nb],
            w: vec![w0; nw],
            z: Vec::with_capacity(na + nb + nw),
        }
    }

    /// Most recent output.
    pub fn last(&self) -> f64 {
        self.y[0]
    }

    fn push_inputs(&mut self, u: f64, w: f64) {
        push_front(&mut self.u, u);
        if !self.w.is_empty() {
            push_front(&mut self.w, w);
        }
        self.z.clear();
        self.z.extend_from_slice(&self.y);
        self.z.extend_from_slice(&self.u);
        self.z.extend_from_slice(&self.w);
    }
}

fn push_front(v: &mut [f64], x: f64) {
    v.rotate_right(1);
    v[0] = x;
}

/// Linear lag model on deviation variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiRom {
    pub orders: Orders,
    pub dt_rom_s: f64,
    pub input_substeps: usize,
    pub has_convection: bool,
    pub u_ref: f64,
    pub y_ref: f64,
    pub w_ref: f64,
    /// `[a_1..a_na, b_1..b_nb, c_1..c_nb]`.
    pub coefficients: Vec<f64>,
}

impl LtiRom {
    fn predict(&self, z: &[f64]) -> f64 {
        let na = self.orders.na;
        let nb = self.orders.nb;
        let mut acc = 0.0;
        for (i, (&c, &v)) in self.coefficients.iter().zip(z).enumerate() {
            let r = if i < na {
                self.y_ref
            } else if i < na + nb {
                self.u_ref
            } else {
                self.w_ref
            };
            acc += c * (v - r);
        }
        self.y_ref + acc
    }
}

/// Quadratic lag model: `y[k+1] = y[k] + s · θ·φ(ẑ)` with `ẑ` the lag vector
/// clamped to its training range and scaled to `[-1, 1]`, and
/// `φ = [1, ẑ, ẑ_i ẑ_j (i ≤ j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRom {
    pub orders: Orders,
    pub dt_rom_s: f64,
    pub input_substeps: usize,
    pub has_convection: bool,
    pub ridge: f64,
    pub y_initial: f64,
    pub u_initial: f64,
    pub z_min: Vec<f64>,
    pub z_max: Vec<f64>,
    pub dy_scale: f64,
    pub coefficients: Vec<f64>,
}

/// Coefficients of the quadratic model expanded into raw lag variables:
/// `y[k+1] = bias + Σ linear_i z_i + Σ_{i≤j} quadratic_ij z_i z_j`, valid
/// inside the clamp box.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPolynomial {
    pub bias: f64,
    pub linear: Vec<f64>,
    /// Upper triangle, row-major.
    pub quadratic: Vec<f64>,
}

impl RawPolynomial {
    pub fn quadratic_at(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let n = self.linear.len();
        self.quadratic[i * n - i * (i + 1) / 2 + j]
    }
}

impl QuadRom {
    fn n_z(&self) -> usize {
        self.z_min.len()
    }

    fn scale(&self, i: usize) -> (f64, f64) {
        let span = self.z_max[i] - self.z_min[i];
        if span > 0.0 {
            (2.0 / span, -(self.z_max[i] + self.z_min[i]) / span)
        } else {
            (0.0, 0.0)
        }
    }

    fn normalize(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..z.len() {
            let (s, o) = self.scale(i);
            out[i] = s * z[i].clamp(self.z_min[i], self.z_max[i]) + o;
        }
    }

    fn predict(&self, z: &[f64]) -> f64 {
        let n = self.n_z();
        let mut zn = [0.0; MAX_LAGS];
        let zn = &mut zn[..n];
        self.normalize(z, zn);
        let c = &self.coefficients;
        let mut acc = c[0];
        let mut q = 1 + n;
        for i in 0..n {
            acc += c[1 + i] * zn[i];
            let mut row = 0.0;
            for j in i..n {
                row += c[q] * zn[j];
                q += 1;
            }
            acc += zn[i] * row;
        }
        let y = z[0] + self.dy_scale * acc;
        y.clamp(self.z_min[0] - self.dy_scale, self.z_max[0] + self.dy_scale)
    }

    /// Coefficients in normalized feature space, bias first.
    pub fn raw_coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn raw_polynomial(&self) -> RawPolynomial {
        let n = self.n_z();
        let c = &self.coefficients;
        let d = self.dy_scale;
        let mut bias = c[0];
        let mut linear = vec![0.0; n];
        let mut quadratic = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            let (si, oi) = self.scale(i);
            bias += c[1 + i] * oi;
            linear[i] += c[1 + i] * si;
        }
        let mut q = 1 + n;
        for i in 0..n {
            let (si, oi) = self.scale(i);
            for j in i..n {
                let (sj, oj) = self.scale(j);
                let cij = c[q];
                quadratic[q - 1 - n] = cij * si * sj;
                linear[i] += cij * si * oj;
                linear[j] += cij * oi * sj;
                bias += cij * oi * oj;
                q += 1;
            }
        }
        bias *= d;
        linear.iter_mut().for_each(|v| *v *= d);
        quadratic.iter_mut().for_each(|v| *v *= d);
        linear[0] += 1.0;
        RawPolynomial {
            bias,
            linear,
            quadratic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rom {
    Lti(LtiRom),
    Quad(QuadRom),
}

impl From<LtiRom> for Rom {
    fn from(r: LtiRom) -> Self {
        Rom::Lti(r)
    }
}

impl From<QuadRom> for Rom {
    fn from(r: QuadRom) -> Self {
        Rom::Quad(r)
    }
}

impl Rom {
    pub fn orders(&self) -> Orders {
        match self {
            Rom::Lti(r) => r.orders,
            Rom::Quad(r) => r.orders,
        }
    }

    pub fn dt_rom_s(&self) -> f64 {
        match self {
            Rom::Lti(r) => r.dt_rom_s,
            Rom::Quad(r) => r.dt_rom_s,
        }
    }

    pub fn input_substeps(&self) -> usize {
        match self {
            Rom::Lti(r) => r.input_substeps,
            Rom::Quad(r) => r.input_substeps,
        }
    }

    pub fn has_convection(&self) -> bool {
        match self {
            Rom::Lti(r) => r.has_convection,
            Rom::Quad(r) => r.has_convection,
        }
    }

    /// Quiescent operating point `(u0, y0)` the model was trained from.
    pub fn initial_point(&self) -> (f64, f64) {
        match self {
            Rom::Lti(r) => (r.u_ref, r.y_ref),
            Rom::Quad(r) => (r.u_initial, r.y_initial),
        }
    }

    pub fn variant(&self) -> &'static str {
        match self {
            Rom::Lti(_) => "lti",
            Rom::Quad(_) => "quad",
        }
    }

    /// History warm-started at the training operating point.
    pub fn history(&self) -> RomHistory {
        let (u0, y0) = self.initial_point();
        RomHistory::new(self, u0, y0, 1.0)
    }

    fn predict(&self, z: &[f64]) -> f64 {
        match self {
            Rom::Lti(r) => r.predict(z),
            Rom::Quad(r) => r.predict(z),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: &Path) -> Result<Rom, crate::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(Rom::from_text(&text)?)
    }

    /// Plain-text form; numbers use the shortest representation that parses
    /// back to the same `f64`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "CTROM v1 {}", self.variant());
        let _ = writeln!(s, "dt_rom_s {:?}", self.dt_rom_s());
        let _ = writeln!(s, "input_substeps {}", self.input_substeps());
        let o = self.orders();
        let _ = writeln!(s, "orders {} {} {}", o.na, o.nb, u8::from(self.has_convection()));
        match self {
            Rom::Lti(r) => {
                let _ = writeln!(s, "reference {:?} {:?} {:?}", r.u_ref, r.y_ref, r.w_ref);
                let _ = writeln!(s, "coefficients {}", list(&r.coefficients));
            }
            Rom::Quad(r) => {
                let _ = writeln!(s, "initial {:?} {:?}", r.u_initial, r.y_initial);
                let _ = writeln!(s, "ridge {:?}", r.ridge);
                let _ = writeln!(s, "dy_scale {:?}", r.dy_scale);
                let _ = writeln!(s, "z_min {}", list(&r.z_min));
                let _ = writeln!(s, "z_max {}", list(&r.z_max));
                let _ = writeln!(s, "coefficients {}", list(&r.coefficients));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Rom, RomError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(RomError::Format {
            line: 1,
            message: "empty file".into(),
        })?;
        let variant = match header.trim() {
            "CTROM v1 lti" => "lti",
            "CTROM v1 quad" => "quad",
            other => {
                return Err(RomError::Format {
                    line: 1,
                    message: format!("unknown header `{other}`"),
                })
            }
        };
        let mut field = |key: &str| -> Result<(usize, Vec<String>), RomError> {
            let (i, line) = lines.next().ok_or(RomError::Format {
                line: 0,
                message: format!("missing `{key}`"),
            })?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(RomError::Format {
                    line: i + 1,
                    message: format!("expected `{key}`"),
                });
            }
            Ok((i + 1, parts.map(str::to_owned).collect()))
        };
        let nums = |(line, parts): (usize, Vec<String>), len: Option<usize>| -> Result<Vec<f64>, RomError> {
            let v = parts
                .iter()
                .map(|p| p.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| RomError::Format {
                    line,
                    message: e.to_string(),
                })?;
            if let Some(n) = len {
                if v.len() != n {
                    return Err(RomError::Format {
                        line,
                        message: format!("expected {n} values, found {}", v.len()),
                    });
                }
            }
            Ok(v)
        };
        let dt_rom_s = nums(field("dt_rom_s")?, Some(1))?[0];
        let subs = nums(field("input_substeps")?, Some(1))?[0] as usize;
        let (oline, o) = field("orders")?;
        let ord = nums((oline, o), Some(3))?;
        let orders = Orders::new(ord[0] as usize, ord[1] as usize);
        let has_convection = ord[2] != 0.0;
        orders.validate().map_err(|e| RomError::Format {
            line: oline,
            message: e.to_string(),
        })?;
        let nz = orders.na + orders.nb * (1 + usize::from(has_convection));
        if variant == "lti" {
            let r = nums(field("reference")?, Some(3))?;
            let coefficients = nums(field("coefficients")?, Some(nz))?;
            Ok(Rom::Lti(LtiRom {
                orders,
                dt_rom_s,
                input_substeps: subs,
                has_convection,
                u_ref: r[0],
                y_ref: r[1],
                w_ref: r[2],
                coefficients,
            }))
        } else {
            let init = nums(field("initial")?, Some(2))?;
            let ridge = nums(field("ridge")?, Some(1))?[0];
            let dy_scale = nums(field("dy_scale")?, Some(1))?[0];
            let z_min = nums(field("z_min")?, Some(nz))?;
            let z_max = nums(field("z_max")?, Some(nz))?;
            let coefficients = nums(field("coefficients")?, Some(1 + nz + nz * (nz + 1) / 2))?;
            Ok(Rom::Quad(QuadRom {
                orders,
                dt_rom_s,
                input_substeps: subs,
                has_convection,
                ridge,
                u_initial: init[0],
                y_initial: init[1],
                z_min,
                z_max,
                dy_scale,
                coefficients,
            }))
        }
    }
}

/// Advances the rollout by one ROM step with `u_next` applied during the step.
pub fn rom_step(rom: &Rom, history: &mut RomHistory, u_next: f64) -> Result<f64, RomError> {
    rom_step_with_convection(rom, history, u_next, 1.0)
}

/// As [`rom_step`] with an explicit convection multiplier; ignored by models
/// trained without that channel.
pub fn rom_step_with_convection(rom: &Rom, history: &mut RomHistory, u_next: f64, w_next: f64) -> Result<f64, RomError> {
    history.push_inputs(u_next, w_next);
    let y = rom.predict(&history.z);
    if !y.is_finite() || y.abs() > DIVERGENCE_BOUND_K {
        return Err(RomError::NonFinite(format!("ROM output {y}")));
    }
    push_front(&mut history.y, y);
    Ok(y)
}

/// Fit diagnostics returned by the trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Condition number of the column-equilibrated regressor matrix.
    pub condition: f64,
    /// Root-mean-square one-step residual in K.
    pub one_step_rms: f64,
    /// Rollout error per trained trajectory.
    pub rollout: RomErrorReport,
    /// Rollout `max |ŷ − y| / range(y)` per trajectory.
    pub relative_error: Vec<f64>,
    pub ridge: f64,
}

struct Regression {
    x: DMatrix<f64>,
    b: DVector<f64>,
}

/// Lag vectors `z_k` and one-step targets for every step of every trajectory.
fn lag_rows(data: &TrainingSet, orders: Orders) -> (Vec<Vec<f64>>, Vec<(f64, f64)>) {
    let use_w = data.has_convection();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for tr in &data.trajectories {
        let at = |v: &[f64], i: isize| v[i.max(0) as usize];
        for k in 0..tr.len() - 1 {
            let k = k as isize;
            let mut z = Vec::with_capacity(orders.na + 2 * orders.nb);
            z.extend((0..orders.na).map(|i| at(&tr.y, k - i as isize)));
            z.extend((0..orders.nb).map(|j| at(&tr.u, k + 1 - j as isize)));
            if use_w {
                let w = tr.w.as_ref().unwrap();
                z.extend((0..orders.nb).map(|j| at(w, k + 1 - j as isize)));
            }
            rows.push(z);
            targets.push((at(&tr.y, k), at(&tr.y, k + 1)));
        }
    }
    (rows, targets)
}

fn equilibrated_condition(x: &DMatrix<f64>) -> f64 {
    let mut xs = x.clone();
    for mut col in xs.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    let sv = xs.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn check_finite(reg: &Regression) -> Result<(), RomError> {
    if reg.x.iter().chain(reg.b.iter()).any(|v| !v.is_finite()) {
        return Err(RomError::NonFinite("regression feature".into()));
    }
    Ok(())
}

/// Ordinary least squares for the linear lag model on deviation variables
/// about the first trajectory's initial point.
pub fn train_lti(data: &TrainingSet, orders: Orders) -> Result<(LtiRom, FitReport), RomError> {
    data.validate()?;
    orders.validate()?;
    let first = &data.trajectories[0];
    let (u_ref, y_ref) = (first.u[0], first.y[0]);
    let w_ref = 1.0;
    let na = orders.na;
    let nb = orders.nb;
    let (rows, targets) = lag_rows(data, orders);
    let nz = rows[0].len();
    if rows.len() < nz {
        return Err(RomError::InsufficientData(format!("{} samples for {nz} coefficients", rows.len())));
    }
    let reference = |i: usize| {
        if i < na {
            y_ref
        } else if i < na + nb {
            u_ref
        } else {
            w_ref
        }
    };
    let reg = Regression {
        x: DMatrix::from_fn(rows.len(), nz, |r, c| rows[r][c] - reference(c)),
        b: DVector::from_iterator(targets.len(), targets.iter().map(|&(_, y1)| y1 - y_ref)),
    };
    check_finite(&reg)?;
    let condition = equilibrated_condition(&reg.x);
    if !(condition < MAX_CONDITION) {
        return Err(RomError::RankDeficient { condition });
    }
    let svd = reg.x.clone().svd(true, true);
    let theta = svd
        .solve(&reg.b, 0.0)
        .map_err(|e| RomError::NonFinite(e.to_string()))?;
    let rms = ((&reg.x * &theta - &reg.b).norm_squared() / rows.len() as f64).sqrt();
    let rom = LtiRom {
        orders,
        dt_rom_s: data.dt_rom_s,
        input_substeps: data.input_substeps,
        has_convection: data.has_convection(),
        u_ref,
        y_ref,
        w_ref,
        coefficients: theta.iter().copied().collect(),
    };
    let wrapped = Rom::Lti(rom);
    let (rollout, relative_error) = training_rollouts(&wrapped, data)?;
    let Rom::Lti(rom) = wrapped else { unreachable!() };
    Ok((
        rom,
        FitReport {
            condition,
            one_step_rms: rms,
            rollout,
            relative_error,
            ridge: 0.0,
        },
    ))
}

struct QuadDesign {
    z_min: Vec<f64>,
    z_max: Vec<f64>,
    dy_scale: f64,
    /// Features without the bias column.
    phi: DMatrix<f64>,
    target: DVector<f64>,
}

fn quad_design(data: &TrainingSet, orders: Orders) -> Result<QuadDesign, RomError> {
    let (rows, targets) = lag_rows(data, orders);
    let nz = rows[0].len();
    let mut z_min = vec![f64::INFINITY; nz];
    let mut z_max = vec![f64::NEG_INFINITY; nz];
    for r in &rows {
        for i in 0..nz {
            z_min[i] = z_min[i].min(r[i]);
            z_max[i] = z_max[i].max(r[i]);
        }
    }
    let dy_scale = targets.iter().map(|&(y0, y1)| (y1 - y0).abs()).fold(0.0, f64::max);
    if !(dy_scale > 0.0) {
        return Err(RomError::InsufficientData("outputs never change".into()));
    }
    let probe = QuadRom {
        orders,
        dt_rom_s: data.dt_rom_s,
        input_substeps: data.input_substeps,
        has_convection: data.has_convection(),
        ridge: 0.0,
        u_initial: 0.0,
        y_initial: 0.0,
        z_min: z_min.clone(),
        z_max: z_max.clone(),
        dy_scale,
        coefficients: Vec::new(),
    };
    let nf = nz + nz * (nz + 1) / 2;
    let mut phi = DMatrix::zeros(rows.len(), nf);
    let mut zn = vec![0.0; nz];
    for (r, z) in rows.iter().enumerate() {
        probe.normalize(z, &mut zn);
        let mut c = 0;
        for &v in &zn {
            phi[(r, c)] = v;
            c += 1;
        }
        for i in 0..nz {
            for j in i..nz {
                phi[(r, c)] = zn[i] * zn[j];
                c += 1;
            }
        }
    }
    let target = DVector::from_iterator(targets.len(), targets.iter().map(|&(y0, y1)| (y1 - y0) / dy_scale));
    Ok(QuadDesign {
        z_min,
        z_max,
        dy_scale,
        phi,
        target,
    })
}

/// Ridge solution with an unpenalized bias: minimizes
/// `‖Φθ + θ₀ − b‖² + n λ ‖θ‖²`. Returns `[θ₀, θ]`.
fn ridge_solve(phi: &DMatrix<f64>, b: &DVector<f64>, lambdas: &[f64]) -> Result<Vec<Vec<f64>>, RomError> {
    let n = phi.nrows();
    let means = DVector::from_iterator(phi.ncols(), phi.column_iter().map(|c| c.mean()));
    let b_mean = b.mean();
    let mut xc = phi.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let bc = b.add_scalar(-b_mean);
    let svd = xc.svd(true, true);
    let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let s = &svd.singular_values;
    let utb = u.transpose() * &bc;
    let s_max = s.max();
    let mut out = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let mut scaled = DVector::zeros(s.len());
        for i in 0..s.len() {
            let si = s[i];
            scaled[i] = if lam > 0.0 {
                si / (si * si + n as f64 * lam) * utb[i]
            } else if si > s_max * 1e-12 {
                utb[i] / si
            } else {
                0.0
            };
        }
        let theta = vt.transpose() * scaled;
        let bias = b_mean - means.dot(&theta);
        let mut coef = Vec::with_capacity(theta.len() + 1);
        coef.push(bias);
        coef.extend(theta.iter());
        if coef.iter().any(|v| !v.is_finite()) {
            return Err(RomError::NonFinite("ridge coefficient".into()));
        }
        out.push(coef);
    }
    Ok(out)
}

fn assemble_quad(data: &TrainingSet, orders: Orders, design: &QuadDesign, ridge: f64, coefficients: Vec<f64>) -> QuadRom {
    let first = &data.trajectories[0];
    QuadRom {
        orders,
        dt_rom_s: data.dt_rom_s,
        input_substeps: data.input_substeps,
        has_convection: data.has_convection(),
        ridge,
        u_initial: first.u[0],
        y_initial: first.y[0],
        z_min: design.z_min.clone(),
        z_max: design.z_max.clone(),
        dy_scale: design.dy_scale,
        coefficients,
    }
}

/// Ridge regression over the quadratic feature map. With `ridge = None` the
/// weight is chosen from [`RIDGE_GRID`] by the rollout error on the last
/// trajectory after fitting the others.
pub fn train_quadratic(data: &TrainingSet, orders: Orders, ridge: Option<f64>) -> Result<(QuadRom, FitReport), RomError> {
    data.validate()?;
    orders.validate()?;
    let design = quad_design(data, orders)?;
    let samples = design.phi.nrows();
    let features = design.phi.ncols() + 1;
    if let Some(l) = ridge {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(RomError::Mismatch("ridge weight must be non-negative".into()));
        }
        if l == 0.0 && features > samples {
            return Err(RomError::Underdetermined { features, samples });
        }
    }
    check_finite(&Regression {
        x: design.phi.clone(),
        b: design.target.clone(),
    })?;
    let lambda = match ridge {
        Some(l) => l,
        None if data.trajectories.len() < 2 => DEFAULT_RIDGE,
        None => select_ridge(data, orders)?,
    };
    let coefficients = ridge_solve(&design.phi, &design.target, &[lambda])?.remove(0);
    let rom = assemble_quad(data, orders, &design, lambda, coefficients);
    let mut x = design.phi.clone().insert_column(0, 1.0);
    x.column_mut(0).fill(1.0);
    let theta = DVector::from_column_slice(&rom.coefficients);
    let rms = design.dy_scale * ((&x * theta - &design.target).norm_squared() / samples as f64).sqrt();
    let condition = equilibrated_condition(&x);
    let wrapped = Rom::Quad(rom);
    let (rollout, relative_error) = training_rollouts(&wrapped, data)?;
    let Rom::Quad(rom) = wrapped else { unreachable!() };
    Ok((
        rom,
        FitReport {
            condition,
            one_step_rms: rms,
            rollout,
            relative_error,
            ridge: lambda,
        },
    ))
}

fn select_ridge(data: &TrainingSet, orders: Orders) -> Result<f64, RomError> {
    let (held, fit) = data.trajectories.split_last().unwrap();
    let fit_set = TrainingSet {
        trajectories: fit.to_vec(),
        ..data.clone()
    };
    let design = quad_design(&fit_set, orders)?;
    let candidates = ridge_solve(&design.phi, &design.target, &RIDGE_GRID)?;
    let mut best = (f64::INFINITY, DEFAULT_RIDGE);
    for (coef, &lam) in candidates.into_iter().zip(&RIDGE_GRID) {
        let rom = Rom::Quad(assemble_quad(&fit_set, orders, &design, lam, coef));
        let err = match rollout_trajectory(&rom, held) {
            Ok(y) => max_abs_diff(&y, &held.y),
            Err(_) => f64::INFINITY,
        };
        if err < best.0 {
            best = (err, lam);
        }
    }
    Ok(best.1)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Free rollout over a recorded input sequence, starting from its first sample.
pub fn rollout_trajectory(rom: &Rom, tr: &Trajectory) -> Result<Vec<f64>, RomError> {
    let w = tr.w.as_deref();
    let mut h = RomHistory::new(rom, tr.u[0], tr.y[0], w.map_or(1.0, |w| w[0]));
    let mut y = Vec::with_capacity(tr.len());
    y.push(tr.y[0]);
    for k in 1..tr.len() {
        let wk = w.map_or(1.0, |w| w[k]);
        y.push(rom_step_with_convection(rom, &mut h, tr.u[k], wk).map_err(|_| RomError::Diverged {
            time: k as f64 * rom.dt_rom_s(),
        })?);
    }
    Ok(y)
}

fn training_rollouts(rom: &Rom, data: &TrainingSet) -> Result<(RomErrorReport, Vec<f64>), RomError> {
    let mut parts = Vec::new();
    let mut rel = Vec::new();
    for tr in &data.trajectories {
        let y = rollout_trajectory(rom, tr)?;
        let t: Vec<f64> = (0..tr.len()).map(|k| k as f64 * data.dt_rom_s).collect();
        let rep = rom_error(&Trace::new(t.clone(), y), &Trace::new(t, tr.y.clone()))?;
        let range = tr.y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - tr.y.iter().cloned().fold(f64::INFINITY, f64::min);
        rel.push(if range > 0.0 { rep.e_max / range } else { 0.0 });
        parts.push((tr.name.clone(), rep));
    }
    Ok((RomErrorReport::combine(parts), rel))
}

/// Sampled scalar signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub t_s: Vec<f64>,
    pub value: Vec<f64>,
}

impl Trace {
    pub fn new(t_s: Vec<f64>, value: Vec<f64>) -> Self {
        Trace { t_s, value }
    }

    /// Core-temperature channel of a full-order series.
    pub fn core(series: &TimeSeries) -> Self {
        Trace {
            t_s: series.samples.iter().map(|s| s.t_s).collect(),
            value: series.samples.iter().map(|s| s.t_core_k).collect(),
        }
    }

    /// Linear interpolation; `None` outside the sampled range.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        let ts = &self.t_s;
        if ts.is_empty() || t < ts[0] || t > *ts.last().unwrap() {
            return None;
        }
        let i = ts.partition_point(|&x| x <= t);
        if i == 0 {
            return Some(self.value[0]);
        }
        if i == ts.len() {
            return Some(*self.value.last().unwrap());
        }
        let (t0, t1) = (ts[i - 1], ts[i]);
        let f = (t - t0) / (t1 - t0);
        Some(self.value[i - 1] + f * (self.value[i] - self.value[i - 1]))
    }

    fn points_in(&self, lo: f64, hi: f64) -> usize {
        self.t_s.iter().filter(|&&t| t >= lo && t <= hi).count()
    }
}

/// ROM output driven by a known input.
#[derive(Debug, Clone, PartialEq)]
pub struct RomRollout {
    pub t_s: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
}

impl RomRollout {
    pub fn trace(&self) -> Trace {
        Trace::new(self.t_s.clone(), self.y.clone())
    }
}

/// Rolls the ROM forward under `signal` from its quiescent operating point.
pub fn evaluate_rom(rom: &Rom, signal: &ExcitationSignal, duration_s: f64) -> Result<RomRollout, RomError> {
    evaluate_rom_with(rom, |t| signal.evaluate(t), |_| 1.0, duration_s)
}

/// As [`evaluate_rom`] with arbitrary input and convection-multiplier functions.
pub fn evaluate_rom_with(
    rom: &Rom,
    input: impl Fn(f64) -> f64,
    convection: impl Fn(f64) -> f64,
    duration_s: f64,
) -> Result<RomRollout, RomError> {
    let dt = rom.dt_rom_s();
    let m = rom.input_substeps().max(1);
    let steps = (duration_s / dt).round() as usize;
    let (_, y0) = rom.initial_point();
    let mean = |f: &dyn Fn(f64) -> f64, k: usize| {
        (1..=m).map(|j| f((k - 1) as f64 * dt + j as f64 * dt / m as f64)).sum::<f64>() / m as f64
    };
    let mut out = RomRollout {
        t_s: vec![0.0],
        u: vec![input(0.0)],
        w: vec![convection(0.0)],
        y: vec![y0],
    };
    let mut h = RomHistory::new(rom, out.u[0], y0, out.w[0]);
    for k in 1..=steps {
        let u = mean(&input, k);
        let w = mean(&convection, k);
        let t = k as f64 * dt;
        let y = rom_step_with_convection(rom, &mut h, u, w).map_err(|_| RomError::Diverged { time: t })?;
        out.t_s.push(t);
        out.u.push(u);
        out.w.push(w);
        out.y.push(y);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryError {
    pub name: String,
    pub e_max: f64,
    pub e_rms: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomErrorReport {
    pub e_max: f64,
    pub e_rms: f64,
    pub per_trajectory: Vec<TrajectoryError>,
}

impl RomErrorReport {
    /// Pools named reports; the pooled RMS weights every compared point equally.
    pub fn combine(parts: Vec<(String, RomErrorReport)>) -> RomErrorReport {
        let mut per = Vec::new();
        for (name, r) in parts {
            for mut t in r.per_trajectory {
                if t.name.is_empty() {
                    t.name = name.clone();
                }
                per.push(t);
            }
        }
        let points: usize = per.iter().map(|t| t.points).sum();
        let sq: f64 = per.iter().map(|t| t.e_rms * t.e_rms * t.points as f64).sum();
        RomErrorReport {
            e_max: per.iter().map(|t| t.e_max).fold(0.0, f64::max),
            e_rms: if points > 0 { (sq / points as f64).sqrt() } else { 0.0 },
            per_trajectory: per,
        }
    }
}

impl std::fmt::Display for RomErrorReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "E_max = {:.4} K, E_rms = {:.4} K", self.e_max, self.e_rms)?;
        for t in &self.per_trajectory {
            if !t.name.is_empty() {
                writeln!(f, "  {}: E_max = {:.4} K, E_rms = {:.4} K", t.name, t.e_max, t.e_rms)?;
            }
        }
        Ok(())
    }
}

/// Compares two traces on the grid of the sparser one over their common
/// time range, interpolating the denser one linearly.
pub fn rom_error(a: &Trace, b: &Trace) -> Result<RomErrorReport, RomError> {
    if a.t_s.is_empty() || b.t_s.is_empty() {
        return Err(RomError::DisjointTimeRanges);
    }
    let lo = a.t_s[0].max(b.t_s[0]);
    let hi = a.t_s.last().unwrap().min(*b.t_s.last().unwrap());
    if lo > hi {
        return Err(RomError::DisjointTimeRanges);
    }
    let (grid, dense) = if a.points_in(lo, hi) <= b.points_in(lo, hi) { (a, b) } else { (b, a) };
    let mut e_max = 0.0f64;
    let mut sq = 0.0;
    let mut n = 0usize;
    for (&t, &v) in grid.t_s.iter().zip(&grid.value) {
        if t < lo || t > hi {
            continue;
        }
        let d = dense.interpolate(t).unwrap() - v;
        e_max = e_max.max(d.abs());
        sq += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(RomError::DisjointTimeRanges);
    }
    let e_rms = (sq / n as f64).sqrt();
    Ok(RomErrorReport {
        e_max,
        e_rms,
        per_trajectory: vec![TrajectoryError {
            name: String::new(),
            e_max,
            e_rms,
            points: n,
        }],
    })
}
