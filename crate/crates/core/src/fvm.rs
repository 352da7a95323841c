//! Segregated implicit finite-volume solver for the coupled water
//! concentration `C` and temperature `T` fields.
//!
//! Mass: `dC/dt = div(D grad C) - div(C u)`.
//! Energy: `rho c_p dT/dt = div(lambda grad T) - rho c_p u . grad T`.
//! Darcy velocity: `u = -(kappa G'/mu_w) grad(C - C_eq(T))`.

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constitutive::MaterialModel;
use crate::control::Disturbance;
use crate::error::{ConfigError, SolverError};
use crate::linear::{LinearStats, StencilSystem};
use crate::mesh::{build_quarter_cuboid, probe_value, MeshSpec, Patch, ProbeSet, StructuredMesh};
use crate::signals::ExcitationSignal;

/// Cell-centred values in mesh linear-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField(pub Vec<f64>);

impl ScalarField {
    pub fn uniform(n: usize, value: f64) -> Self {
        ScalarField(vec![value; n])
    }

    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Deref for ScalarField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Smooth reduction of the thermal Robin flux once the face exceeds the
/// boiling range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Throttle {
    pub enabled: bool,
    pub onset_k: f64,
    pub full_k: f64,
    pub residual_fraction: f64,
}

impl Default for Throttle {
    fn default() -> Self {
        Throttle {
            enabled: true,
            onset_k: 371.0,
            full_k: 375.0,
            residual_fraction: 0.10,
        }
    }
}

impl Throttle {
    pub fn disabled() -> Self {
        Throttle {
            enabled: false,
            ..Throttle::default()
        }
    }

    /// Factor `f(T)`: 1 below onset, `residual_fraction` above full, cosine blend between.
    pub fn factor(&self, t: f64) -> f64 {
        if !self.enabled || t <= self.onset_k {
            1.0
        } else if t >= self.full_k {
            self.residual_fraction
        } else {
            let s = (t - self.onset_k) / (self.full_k - self.onset_k);
            self.residual_fraction + (1.0 - self.residual_fraction) * 0.5 * (1.0 + (PI * s).cos())
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if !self.enabled || t <= self.onset_k || t >= self.full_k {
            0.0
        } else {
            let w = self.full_k - self.onset_k;
            let s = (t - self.onset_k) / w;
            -(1.0 - self.residual_fraction) * 0.5 * PI / w * (PI * s).sin()
        }
    }

    pub fn validate(&self, key: &str) -> Result<(), ConfigError> {
        if !(self.residual_fraction > 0.0 && self.residual_fraction <= 1.0) {
            return Err(ConfigError::invalid(
                format!("{key}.residual_fraction"),
                "must lie within (0, 1]",
            ));
        }
        if !(self.full_k > self.onset_k) {
            return Err(ConfigError::invalid(format!("{key}.full_k"), "must exceed onset_k"));
        }
        Ok(())
    }
}

/// Ambient or driving temperature of a thermal patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DriveTemperature {
    Constant(f64),
    Signal(ExcitationSignal),
}

impl DriveTemperature {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            DriveTemperature::Constant(v) => *v,
            DriveTemperature::Signal(s) => s.evaluate(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchBc {
    /// Mass-transfer coefficient in m s⁻¹.
    pub beta_m_s: f64,
    /// Heat-transfer coefficient in W m⁻² K⁻¹.
    pub alpha_w_m2k: f64,
    #[serde(default = "default_c_ambient")]
    pub c_ambient: f64,
    pub drive_k: DriveTemperature,
    #[serde(default)]
    pub throttle: Throttle,
    /// Runtime factor on `alpha_w_m2k` (forced convection).
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub alpha_multiplier: f64,
}

fn default_c_ambient() -> f64 {
    0.05
}
fn one() -> f64 {
    1.0
}
fn is_one(v: &f64) -> bool {
    *v == 1.0
}

impl PatchBc {
    pub fn validate(&self, key: &str) -> Result<(), ConfigError> {
        if !(self.beta_m_s >= 0.0 && self.beta_m_s.is_finite()) {
            return Err(ConfigError::invalid(format!("{key}.beta_m_s"), "must be non-negative"));
        }
        if !(self.alpha_w_m2k >= 0.0 && self.alpha_w_m2k.is_finite()) {
            return Err(ConfigError::invalid(format!("{key}.alpha_w_m2k"), "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.c_ambient) {
            return Err(ConfigError::invalid(format!("{key}.c_ambient"), "must lie within [0, 1]"));
        }
        if !(self.alpha_multiplier > 0.0 && self.alpha_multiplier.is_finite()) {
            return Err(ConfigError::invalid(format!("{key}.alpha_multiplier"), "must be positive"));
        }
        if let DriveTemperature::Signal(s) = &self.drive_k {
            s.validate()?;
        } else if let DriveTemperature::Constant(v) = self.drive_k {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(format!("{key}.drive_k"), "must be a positive temperature"));
            }
        }
        self.throttle.validate(&format!("{key}.throttle"))
    }

    pub fn effective_alpha(&self) -> f64 {
        self.alpha_w_m2k * self.alpha_multiplier
    }

    /// Heat flux into the body, `f(T_face) alpha (T_drive - T_face)`.
    pub fn heat_flux(&self, t_face: f64, t_drive: f64) -> f64 {
        boundary_flux_t(t_face, self.effective_alpha(), t_drive, &self.throttle)
    }

    /// Outward water flux `beta (C_face - C_amb)`.
    pub fn mass_flux(&self, c_face: f64) -> f64 {
        boundary_flux_c(c_face, self.beta_m_s, self.c_ambient)
    }
}

/// Throttled Robin heat flux into the body in W m⁻².
pub fn boundary_flux_t(t_face: f64, alpha: f64, t_drive: f64, throttle: &Throttle) -> f64 {
    throttle.factor(t_face) * alpha * (t_drive - t_face)
}

/// Outward combined diffusive and convective water flux.
pub fn boundary_flux_c(c_face: f64, beta: f64, c_ambient: f64) -> f64 {
    beta * (c_face - c_ambient)
}

/// Robin conditions of the two physical patches; symmetry planes carry zero flux.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub bottom: PatchBc,
    pub surface: PatchBc,
}

impl BoundarySpec {
    /// Convection oven: hot air above, heated plate below.
    pub fn case_one() -> Self {
        BoundarySpec {
            bottom: PatchBc {
                beta_m_s: 1e-6,
                alpha_w_m2k: 59.0,
                c_ambient: 0.05,
                drive_k: DriveTemperature::Constant(443.15),
                throttle: Throttle::default(),
                alpha_multiplier: 1.0,
            },
            surface: PatchBc {
                beta_m_s: 1e-6,
                alpha_w_m2k: 44.0,
                c_ambient: 0.05,
                drive_k: DriveTemperature::Constant(443.15),
                throttle: Throttle::default(),
                alpha_multiplier: 1.0,
            },
        }
    }

    /// Pan contact below driven by `t_in`, still room air above.
    pub fn pan_fry(t_in: ExcitationSignal) -> Self {
        BoundarySpec {
            bottom: PatchBc {
                beta_m_s: 1e-6,
                alpha_w_m2k: PAN_ALPHA_W_M2K,
                c_ambient: 0.05,
                drive_k: DriveTemperature::Signal(t_in),
                throttle: Throttle::default(),
                alpha_multiplier: 1.0,
            },
            surface: PatchBc {
                beta_m_s: 1e-6,
                alpha_w_m2k: AIR_ALPHA_W_M2K,
                c_ambient: 0.05,
                drive_k: DriveTemperature::Constant(ROOM_TEMPERATURE_K),
                throttle: Throttle::default(),
                alpha_multiplier: 1.0,
            },
        }
    }

    /// Every flux switched off.
    pub fn sealed() -> Self {
        let mut bc = BoundarySpec::case_one();
        for p in [&mut bc.bottom, &mut bc.surface] {
            p.beta_m_s = 0.0;
            p.alpha_w_m2k = 0.0;
        }
        bc
    }

    pub fn patch(&self, patch: Patch) -> Option<&PatchBc> {
        match patch {
            Patch::Bottom => Some(&self.bottom),
            Patch::Surface => Some(&self.surface),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.bottom.validate("boundary.bottom")?;
        self.surface.validate("boundary.surface")
    }
}

pub const PAN_ALPHA_W_M2K: f64 = 150.0;
pub const AIR_ALPHA_W_M2K: f64 = 15.0;
pub const ROOM_TEMPERATURE_K: f64 = 293.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub dt_s: f64,
    pub residual_threshold: f64,
    pub max_outer_iterations: usize,
    pub max_linear_iterations: usize,
    pub linear_tolerance: f64,
    /// Darcy convection in both transport equations.
    pub darcy_convection: bool,
    /// The `rho c_p u . grad T` term alone; ignored without `darcy_convection`.
    pub energy_convection: bool,
    /// Second-order upwind deferred correction for the convective terms.
    pub second_order_upwind: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            dt_s: 1.0,
            residual_threshold: 1e-7,
            max_outer_iterations: 50,
            max_linear_iterations: 500,
            linear_tolerance: 1e-10,
            darcy_convection: true,
            energy_convection: true,
            second_order_upwind: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.1..=1.0).contains(&self.dt_s) {
            return Err(ConfigError::invalid("solver.dt_s", "must lie within [0.1, 1] s"));
        }
        if !(self.residual_threshold > 0.0) {
            return Err(ConfigError::invalid("solver.residual_threshold", "must be positive"));
        }
        if !(self.linear_tolerance > 0.0) {
            return Err(ConfigError::invalid("solver.linear_tolerance", "must be positive"));
        }
        if self.max_outer_iterations == 0 || self.max_linear_iterations == 0 {
            return Err(ConfigError::invalid("solver.max_outer_iterations", "iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Convergence record of one time step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub outer_iterations: usize,
    pub residual_c: f64,
    pub residual_t: f64,
    pub linear_iterations: usize,
}

/// One face on the bottom or surface patch.
#[derive(Debug, Clone, Copy)]
struct BoundaryFace {
    cell: usize,
    axis: usize,
    area: f64,
    /// Centre-to-face distance.
    delta: f64,
    patch: Patch,
}

/// Interior face between `lo` and `hi = lo + stride(axis)`.
#[derive(Debug, Clone, Copy)]
struct InteriorFace {
    lo: usize,
    hi: usize,
    axis: usize,
    area: f64,
    /// Centre distance.
    dist: f64,
    /// Distances from the two centres to the face.
    d_lo: f64,
    d_hi: f64,
}

/// Precomputed connectivity.
#[derive(Debug)]
struct Topology {
    volumes: Vec<f64>,
    widths: Vec<[f64; 3]>,
    interior: Vec<InteriorFace>,
    boundary: Vec<BoundaryFace>,
    /// Boundary face id per cell side `[axis][low/high]`, if any.
    side_face: Vec<[[u32; 2]; 3]>,
}

const INTERIOR_SIDE: u32 = u32::MAX;
const SYMMETRY_SIDE: u32 = u32::MAX - 1;

impl Topology {
    fn new(mesh: &StructuredMesh) -> Topology {
        let [nx, ny, nz] = mesh.dims();
        let n = mesh.n_cells();
        let mut widths = Vec::with_capacity(n);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    widths.push([mesh.axes[0].width(i), mesh.axes[1].width(j), mesh.axes[2].width(k)]);
                }
            }
        }
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let mut side_face = vec![[[INTERIOR_SIDE; 2]; 3]; n];
        let strides = [1, nx, nx * ny];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let c = mesh.index(i, j, k);
                    let idx = [i, j, k];
                    let dims = [nx, ny, nz];
                    for axis in 0..3 {
                        let ax = &mesh.axes[axis];
                        let pos = idx[axis];
                        let area = mesh.face_area(axis, i, j, k);
                        if pos + 1 < dims[axis] {
                            let d_lo = ax.faces[pos + 1] - ax.centers[pos];
                            let d_hi = ax.centers[pos + 1] - ax.faces[pos + 1];
                            interior.push(InteriorFace {
                                lo: c,
                                hi: c + strides[axis],
                                axis,
                                area,
                                dist: d_lo + d_hi,
                                d_lo,
                                d_hi,
                            });
                        }
                        for high in [false, true] {
                            let on_wall = if high { pos + 1 == dims[axis] } else { pos == 0 };
                            if !on_wall {
                                continue;
                            }
                            let patch = StructuredMesh::patch(axis, high);
                            if matches!(patch, Patch::SymmetryX | Patch::SymmetryY) {
                                side_face[c][axis][high as usize] = SYMMETRY_SIDE;
                                continue;
                            }
                            let delta = if high {
                                ax.faces[pos + 1] - ax.centers[pos]
                            } else {
                                ax.centers[pos] - ax.faces[pos]
                            };
                            side_face[c][axis][high as usize] = boundary.len() as u32;
                            boundary.push(BoundaryFace {
                                cell: c,
                                axis,
                                area,
                                delta,
                                patch,
                            });
                        }
                    }
                }
            }
        }
        Topology {
            volumes: mesh.volumes(),
            widths,
            interior,
            boundary,
            side_face,
        }
    }

    /// Green-Gauss gradient with linear interior face interpolation. Symmetry
    /// faces take the cell value, patch faces the supplied boundary value.
    fn gradient(&self, phi: &[f64], phi_b: &[f64], out: &mut [[f64; 3]]) {
        for g in out.iter_mut() {
            *g = [0.0; 3];
        }
        for f in &self.interior {
            let w = f.d_lo / f.dist;
            let phi_f = phi[f.lo] + w * (phi[f.hi] - phi[f.lo]);
            out[f.lo][f.axis] += phi_f;
            out[f.hi][f.axis] -= phi_f;
        }
        for (c, sides) in self.side_face.iter().enumerate() {
            for axis in 0..3 {
                for (high, &id) in sides[axis].iter().enumerate() {
                    let val = match id {
                        INTERIOR_SIDE => continue,
                        SYMMETRY_SIDE => phi[c],
                        id => phi_b[id as usize],
                    };
                    if high == 1 {
                        out[c][axis] += val;
                    } else {
                        out[c][axis] -= val;
                    }
                }
                out[c][axis] /= self.widths[c][axis];
            }
        }
    }
}

/// Full state of one simulation.
#[derive(Debug, Clone)]
pub struct SimulationState {
    pub time: f64,
    pub c: ScalarField,
    pub t: ScalarField,
    pub mesh: Arc<StructuredMesh>,
    pub material: MaterialModel,
    /// Cell Darcy velocity of the last sweep, m s⁻¹.
    pub velocity: Vec<[f64; 3]>,
    /// Water leaving through the patches since `t = 0`, in m³ of mass-fraction volume.
    pub cumulative_outflow: f64,
    pub initial_water: f64,
    pub last_step: StepStats,
    topo: Arc<Topology>,
    c_face: Vec<f64>,
    t_face: Vec<f64>,
}

/// Uniform initial state.
pub fn initialize(
    mesh: Arc<StructuredMesh>,
    material: MaterialModel,
    t0: f64,
    c0: f64,
) -> Result<SimulationState, SolverError> {
    material.validate()?;
    if !(0.0..=1.0).contains(&c0) {
        return Err(ConfigError::invalid("initial.water_mass_fraction", "must lie within [0, 1]").into());
    }
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(ConfigError::invalid("initial.temperature_k", "must be a positive temperature").into());
    }
    let topo = Arc::new(Topology::new(&mesh));
    let n = mesh.n_cells();
    let nb = topo.boundary.len();
    let initial_water = c0 * topo.volumes.iter().sum::<f64>();
    Ok(SimulationState {
        time: 0.0,
        c: ScalarField::uniform(n, c0),
        t: ScalarField::uniform(n, t0),
        mesh,
        material,
        velocity: vec![[0.0; 3]; n],
        cumulative_outflow: 0.0,
        initial_water,
        last_step: StepStats::default(),
        topo,
        c_face: vec![c0; nb],
        t_face: vec![t0; nb],
    })
}

impl SimulationState {
    pub fn total_water(&self) -> f64 {
        self.c.iter().zip(&self.topo.volumes).map(|(c, v)| c * v).sum()
    }

    pub fn total_volume(&self) -> f64 {
        self.topo.volumes.iter().sum()
    }

    pub fn mean_c(&self) -> f64 {
        self.total_water() / self.total_volume()
    }

    /// `(water + outflow - water(0)) / water(0)`.
    pub fn mass_balance(&self) -> f64 {
        (self.total_water() + self.cumulative_outflow - self.initial_water) / self.initial_water
    }

    pub fn probe_t(&self, p: [f64; 3]) -> Result<f64, SolverError> {
        Ok(probe_value(&self.mesh, &self.t, p)?)
    }

    pub fn probe_c(&self, p: [f64; 3]) -> Result<f64, SolverError> {
        Ok(probe_value(&self.mesh, &self.c, p)?)
    }

    /// Boundary face values `(patch, T_face, C_face)` of the latest iterate.
    pub fn boundary_values(&self) -> impl Iterator<Item = (Patch, f64, f64)> + '_ {
        self.topo
            .boundary
            .iter()
            .zip(self.t_face.iter().zip(&self.c_face))
            .map(|(f, (&t, &c))| (f.patch, t, c))
    }

    /// Cells whose Darcy velocity points towards the cuboid centre.
    pub fn inward_velocities(&self) -> Vec<(usize, f64)> {
        let ext = self.mesh.extent();
        let core = [0.0, 0.0, ext[2] / 2.0];
        let [nx, ny, nz] = self.mesh.dims();
        let mut out = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let n = self.mesh.index(i, j, k);
                    let x = self.mesh.center(i, j, k);
                    let u = self.velocity[n];
                    let towards: f64 = (0..3).map(|d| u[d] * (core[d] - x[d])).sum();
                    if towards > 0.0 {
                        out.push((n, (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()));
                    }
                }
            }
        }
        out
    }

    /// Advances by one implicit Euler step.
    pub fn step(&mut self, bc: &BoundarySpec, settings: &SolverSettings) -> Result<StepStats, SolverError> {
        let time = self.time;
        self.advance(bc, settings).map_err(|e| match e {
            SolverError::OuterNotConverged { .. } | SolverError::NonFinite { .. } => e,
            other => SolverError::AtTime {
                time: time + settings.dt_s,
                source: Box::new(other),
            },
        })
    }

    fn advance(&mut self, bc: &BoundarySpec, settings: &SolverSettings) -> Result<StepStats, SolverError> {
        let dt = settings.dt_s;
        let t_new = self.time + dt;
        let topo = self.topo.clone();
        let mat = self.material.clone();
        let n = self.mesh.n_cells();
        let nb = topo.boundary.len();
        let dims = self.mesh.dims();
        let rho = mat.water_density;
        let diff = mat.diffusion_coefficient;

        let c_old = self.c.0.clone();
        let t_old = self.t.0.clone();
        let drive: Vec<f64> = topo
            .boundary
            .iter()
            .map(|f| bc.patch(f.patch).unwrap().drive_k.at(t_new))
            .collect();

        let mut psi = vec![0.0; n];
        let mut psi_b = vec![0.0; nb];
        let mut grad_psi = vec![[0.0; 3]; n];
        let mut grad = vec![[0.0; 3]; n];
        let mut face_flux = vec![0.0; topo.interior.len()];
        let mut u_bn = vec![0.0; nb];
        let mut darcy_k = vec![0.0; n];
        let mut darcy_k_face = vec![0.0; nb];
        let mut lam = vec![[0.0; 3]; n];
        let mut cp = vec![0.0; n];
        let mut stats = StepStats::default();
        let mut history = Vec::new();
        let mut outflow_rate = 0.0;

        for sweep in 1..=settings.max_outer_iterations {
            // Darcy velocities from the latest iterate.
            if settings.darcy_convection {
                for i in 0..n {
                    darcy_k[i] = mat.darcy_coefficient(self.t[i]);
                }
                for b in 0..nb {
                    darcy_k_face[b] = mat.darcy_coefficient(self.t_face[b]);
                }
                for i in 0..n {
                    psi[i] = self.c[i] - mat.equilibrium_concentration(self.t[i]);
                }
                for b in 0..nb {
                    psi_b[b] = self.c_face[b] - mat.equilibrium_concentration(self.t_face[b]);
                }
                topo.gradient(&psi, &psi_b, &mut grad_psi);
                for i in 0..n {
                    self.velocity[i] = grad_psi[i].map(|g| -darcy_k[i] * g);
                }
                for (fi, f) in topo.interior.iter().enumerate() {
                    face_flux[fi] = 0.5 * (self.velocity[f.lo][f.axis] + self.velocity[f.hi][f.axis]) * f.area;
                }
                for (b, f) in topo.boundary.iter().enumerate() {
                    u_bn[b] = -darcy_k_face[b] * (psi_b[b] - psi[f.cell]) / f.delta;
                }
            } else {
                self.velocity.iter_mut().for_each(|u| *u = [0.0; 3]);
            }

            // Water concentration.
            let mut sys = StencilSystem::zeros(dims);
            for i in 0..n {
                let a = topo.volumes[i] / dt;
                sys.ap[i] = a;
                sys.b[i] = a * c_old[i];
            }
            for f in &topo.interior {
                let a = diff * f.area / f.dist;
                add_link(&mut sys, f, a, a);
            }
            if settings.darcy_convection {
                if settings.second_order_upwind {
                    topo.gradient(&self.c, &self.c_face, &mut grad);
                }
                for (fi, f) in topo.interior.iter().enumerate() {
                    let flux = face_flux[fi];
                    if flux >= 0.0 {
                        sys.ap[f.lo] += flux;
                        sys.anb[2 * f.axis][f.hi] += flux;
                    } else {
                        sys.anb[2 * f.axis + 1][f.lo] -= flux;
                        sys.ap[f.hi] -= flux;
                    }
                    if settings.second_order_upwind {
                        let corr = sou_correction(f, flux, &grad);
                        sys.b[f.lo] -= flux * corr;
                        sys.b[f.hi] += flux * corr;
                    }
                    // The Darcy flux carries -C K grad C. Its compact implicit
                    // counterpart is added on both sides so it cancels at
                    // convergence while damping the outer iteration.
                    let k_f = 0.5 * (darcy_k[f.lo] + darcy_k[f.hi]);
                    let c_f = 0.5 * (self.c[f.lo] + self.c[f.hi]);
                    let a = k_f * c_f.max(0.0) * f.area / f.dist;
                    add_link(&mut sys, f, a, a);
                    let jump = a * (self.c[f.lo] - self.c[f.hi]);
                    sys.b[f.lo] += jump;
                    sys.b[f.hi] -= jump;
                }
            }
            let mut c_coef = vec![(0.0, 0.0); nb];
            for (b, f) in topo.boundary.iter().enumerate() {
                let p = bc.patch(f.patch).unwrap();
                // Face balance -D dC/dn + u_n C_face = beta (C_face - C_amb) with
                // u_n = -K (psi_face - psi_P) / delta and C_face lagged in u_n C_face.
                let (kc, s_eq) = if settings.darcy_convection {
                    let k = darcy_k_face[b] * self.c_face[b].max(0.0);
                    let d_eq = mat.equilibrium_concentration(self.t_face[b])
                        - mat.equilibrium_concentration(self.t[f.cell]);
                    (k, k * d_eq / f.delta)
                } else {
                    (0.0, 0.0)
                };
                let g = (diff + kc) / f.delta;
                let den = g + p.beta_m_s;
                // C_face = a C_P + c0
                let a = g / den;
                let c0 = (p.beta_m_s * p.c_ambient + s_eq) / den;
                c_coef[b] = (a, c0);
                sys.ap[f.cell] += p.beta_m_s * a * f.area;
                sys.b[f.cell] -= p.beta_m_s * (c0 - p.c_ambient) * f.area;
            }
            let res_c = sys.scaled_residual(&self.c);
            let ls = solve(&sys, &mut self.c.0, settings, "C")?;
            stats.linear_iterations += ls.iterations;
            outflow_rate = 0.0;
            for (b, f) in topo.boundary.iter().enumerate() {
                let p = bc.patch(f.patch).unwrap();
                let (a, c0) = c_coef[b];
                self.c_face[b] = a * self.c[f.cell] + c0;
                outflow_rate += p.mass_flux(self.c_face[b]) * f.area;
            }

            // Temperature.
            for i in 0..n {
                let k = mat.effective_conductivity(self.c[i], self.t[i]);
                lam[i] = [k.parallel, k.orthogonal, k.orthogonal];
                cp[i] = mat.effective_heat_capacity(self.c[i], self.t[i]);
            }
            let mut sys = StencilSystem::zeros(dims);
            for i in 0..n {
                let a = rho * cp[i] * topo.volumes[i] / dt;
                sys.ap[i] = a;
                sys.b[i] = a * t_old[i];
            }
            for f in &topo.interior {
                let l = f.dist / (f.d_lo / lam[f.lo][f.axis] + f.d_hi / lam[f.hi][f.axis]);
                let a = l * f.area / f.dist;
                add_link(&mut sys, f, a, a);
            }
            if settings.darcy_convection && settings.energy_convection {
                if settings.second_order_upwind {
                    topo.gradient(&self.t, &self.t_face, &mut grad);
                }
                for (fi, f) in topo.interior.iter().enumerate() {
                    let flux = face_flux[fi];
                    let (rc_lo, rc_hi) = (rho * cp[f.lo], rho * cp[f.hi]);
                    if flux >= 0.0 {
                        sys.ap[f.hi] += rc_hi * flux;
                        sys.anb[2 * f.axis][f.hi] += rc_hi * flux;
                    } else {
                        sys.ap[f.lo] -= rc_lo * flux;
                        sys.anb[2 * f.axis + 1][f.lo] -= rc_lo * flux;
                    }
                    if settings.second_order_upwind {
                        let corr = sou_correction(f, flux, &grad);
                        sys.b[f.lo] -= rc_lo * flux * corr;
                        sys.b[f.hi] += rc_hi * flux * corr;
                    }
                }
                for (b, f) in topo.boundary.iter().enumerate() {
                    if u_bn[b] < 0.0 {
                        let a = -rho * cp[f.cell] * u_bn[b] * f.area;
                        sys.ap[f.cell] += a;
                        sys.b[f.cell] += a * self.t_face[b];
                    }
                }
            }
            let mut t_coef = vec![(0.0, 0.0); nb];
            for (b, f) in topo.boundary.iter().enumerate() {
                let p = bc.patch(f.patch).unwrap();
                let alpha = p.effective_alpha();
                if alpha == 0.0 {
                    continue;
                }
                let tb = self.t_face[b];
                let td = drive[b];
                let fac = p.throttle.factor(tb);
                let g = fac * alpha + p.throttle.derivative(tb).abs() * alpha * (td - tb).max(0.0);
                let q = fac * alpha * (td - tb);
                let t_eff = tb + q / g;
                let cond = lam[f.cell][f.axis] / f.delta;
                let u = 1.0 / (1.0 / g + 1.0 / cond);
                t_coef[b] = (g, t_eff);
                sys.ap[f.cell] += u * f.area;
                sys.b[f.cell] += u * f.area * t_eff;
            }
            let res_t = sys.scaled_residual(&self.t);
            let ls = solve(&sys, &mut self.t.0, settings, "T")?;
            stats.linear_iterations += ls.iterations;
            for (b, f) in topo.boundary.iter().enumerate() {
                let (g, t_eff) = t_coef[b];
                let cond = lam[f.cell][f.axis] / f.delta;
                self.t_face[b] = if g > 0.0 {
                    (g * t_eff + cond * self.t[f.cell]) / (g + cond)
                } else {
                    self.t[f.cell]
                };
            }

            if !self.c.is_finite() {
                return Err(SolverError::NonFinite { field: "C", time: t_new });
            }
            if !self.t.is_finite() {
                return Err(SolverError::NonFinite { field: "T", time: t_new });
            }
            history.push((res_c, res_t));
            stats.outer_iterations = sweep;
            stats.residual_c = res_c;
            stats.residual_t = res_t;
            if res_c < settings.residual_threshold && res_t < settings.residual_threshold {
                self.cumulative_outflow += outflow_rate * dt;
                self.time = t_new;
                self.last_step = stats;
                return Ok(stats);
            }
        }
        let _ = outflow_rate;
        Err(SolverError::OuterNotConverged {
            time: t_new,
            iterations: settings.max_outer_iterations,
            last_c: stats.residual_c,
            last_t: stats.residual_t,
            history,
        })
    }
}

fn add_link(sys: &mut StencilSystem, f: &InteriorFace, a_lo: f64, a_hi: f64) {
    sys.ap[f.lo] += a_lo;
    sys.anb[2 * f.axis + 1][f.lo] += a_lo;
    sys.ap[f.hi] += a_hi;
    sys.anb[2 * f.axis][f.hi] += a_hi;
}

/// Second-order upwind minus first-order upwind face value.
fn sou_correction(f: &InteriorFace, flux: f64, grad: &[[f64; 3]]) -> f64 {
    if flux >= 0.0 {
        grad[f.lo][f.axis] * f.d_lo
    } else {
        -grad[f.hi][f.axis] * f.d_hi
    }
}

fn solve(sys: &StencilSystem, x: &mut [f64], s: &SolverSettings, _field: &str) -> Result<LinearStats, SolverError> {
    sys.solve_bicgstab(x, s.linear_tolerance, s.max_linear_iterations)
}

/// Scaled residual of an assembled system for a field.
pub fn scaled_residual(system: &StencilSystem, field: &[f64]) -> f64 {
    system.scaled_residual(field)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConditions {
    pub temperature_k: f64,
    pub water_mass_fraction: f64,
}

impl Default for InitialConditions {
    fn default() -> Self {
        InitialConditions {
            temperature_k: 279.15,
            water_mass_fraction: 0.76,
        }
    }
}

/// Everything needed for one full-order run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mesh: MeshSpec,
    pub material: MaterialModel,
    pub boundary: BoundarySpec,
    pub initial: InitialConditions,
    pub solver: SolverSettings,
    pub duration_s: f64,
    pub output_interval_s: f64,
    /// Defaults to the standard sensor layout of the cuboid.
    pub probes: Option<ProbeSet>,
    /// Time window with a multiplied surface heat-transfer coefficient.
    pub disturbance: Option<Disturbance>,
}

impl Scenario {
    /// Convection oven with the default cuboid, 1200 s.
    pub fn case_one() -> Self {
        Scenario {
            mesh: MeshSpec::default(),
            material: MaterialModel::default(),
            boundary: BoundarySpec::case_one(),
            initial: InitialConditions::default(),
            solver: SolverSettings::default(),
            duration_s: 1200.0,
            output_interval_s: 10.0,
            probes: None,
            disturbance: None,
        }
    }

    /// Pan frying of a thinner fillet-sized cuboid, driven by `t_in`.
    pub fn pan_fry(t_in: ExcitationSignal) -> Self {
        Scenario {
            mesh: MeshSpec {
                dims_m: PAN_FRY_DIMS_M,
                spacing_m: 1e-3,
                ..MeshSpec::default()
            },
            boundary: BoundarySpec::pan_fry(t_in),
            duration_s: 1500.0,
            output_interval_s: 5.0,
            ..Scenario::case_one()
        }
    }

    pub fn probes(&self) -> ProbeSet {
        self.probes.unwrap_or_else(|| ProbeSet::for_cuboid(self.mesh.dims_m))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.material.validate()?;
        self.boundary.validate()?;
        self.solver.validate()?;
        if !(self.duration_s > 0.0) {
            return Err(ConfigError::invalid("duration_s", "must be positive"));
        }
        if !(self.output_interval_s > 0.0) {
            return Err(ConfigError::invalid("output_interval_s", "must be positive"));
        }
        let ratio = self.output_interval_s / self.solver.dt_s;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(ConfigError::invalid(
                "output_interval_s",
                "must be a whole multiple of solver.dt_s",
            ));
        }
        if let Some(d) = &self.disturbance {
            d.validate()?;
        }
        Ok(())
    }
}

pub const PAN_FRY_DIMS_M: [f64; 3] = [0.070, 0.040, 0.015];

/// One recorded output sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_s: f64,
    pub t_in_k: f64,
    pub t_core_k: f64,
    pub t_surface_k: f64,
    pub t_probe_k: f64,
    pub c_mean: f64,
    pub mass_balance: f64,
    /// Surface heat-transfer multiplier, recorded when a disturbance is active in the scenario.
    pub alpha_mult: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    pub samples: Vec<Sample>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t_s).collect()
    }

    pub fn at(&self, t: f64) -> Option<&Sample> {
        self.samples.iter().find(|s| (s.t_s - t).abs() < 1e-9)
    }
}

/// Summary returned alongside the series.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub max_outer_iterations: usize,
    pub mean_outer_iterations: f64,
    pub total_linear_iterations: usize,
    pub max_residual_c: f64,
    pub max_residual_t: f64,
    pub min_t_k: f64,
    pub max_t_k: f64,
    pub min_c: f64,
    pub max_c: f64,
}

pub fn sample(state: &SimulationState, probes: &ProbeSet, t_in: f64, alpha_mult: Option<f64>) -> Result<Sample, SolverError> {
    Ok(Sample {
        t_s: state.time,
        t_in_k: t_in,
        t_core_k: state.probe_t(probes.a)?,
        t_surface_k: state.probe_t(probes.b)?,
        t_probe_k: 0.5 * (state.probe_t(probes.c)? + state.probe_t(probes.d)?),
        c_mean: state.mean_c(),
        mass_balance: state.mass_balance(),
        alpha_mult,
    })
}

/// Runs a scenario and records the probes every `output_interval_s`.
/// Snapshots are written for every entry of `snapshot_times` that falls on
/// a step.
pub fn run_simulation(
    scenario: &Scenario,
    snapshots: Option<(&Path, &[f64])>,
) -> Result<(TimeSeries, RunStats), SolverError> {
    scenario.validate()?;
    let mesh = Arc::new(build_quarter_cuboid(&scenario.mesh)?);
    let probes = scenario.probes();
    probes.validate(&mesh)?;
    let mut state = initialize(
        mesh,
        scenario.material.clone(),
        scenario.initial.temperature_k,
        scenario.initial.water_mass_fraction,
    )?;
    let mut bc = scenario.boundary.clone();
    let base_mult = bc.surface.alpha_multiplier;
    let dt = scenario.solver.dt_s;
    let steps = (scenario.duration_s / dt).round() as usize;
    let every = (scenario.output_interval_s / dt).round() as usize;
    let mult_at = |t: f64| {
        scenario
            .disturbance
            .as_ref()
            .map(|d| base_mult * d.multiplier_at(t))
    };

    let mut series = TimeSeries::default();
    series
        .samples
        .push(sample(&state, &probes, bc.bottom.drive_k.at(0.0), mult_at(0.0))?);
    let mut stats = RunStats {
        min_t_k: state.t.min(),
        max_t_k: state.t.max(),
        min_c: state.c.min(),
        max_c: state.c.max(),
        ..RunStats::default()
    };
    let mut outer_sum = 0usize;
    if let Some((dir, times)) = snapshots {
        if times.iter().any(|&t| t.abs() < 0.5 * dt) {
            write_snapshot(&dir.join(snapshot_name(0.0)), &state).map_err(|e| ConfigError::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
        }
    }
    for s in 1..=steps {
        let t_new = s as f64 * dt;
        if let Some(m) = mult_at(t_new) {
            bc.surface.alpha_multiplier = m;
        }
        let st = state.step(&bc, &scenario.solver)?;
        stats.steps += 1;
        outer_sum += st.outer_iterations;
        stats.max_outer_iterations = stats.max_outer_iterations.max(st.outer_iterations);
        stats.total_linear_iterations += st.linear_iterations;
        stats.max_residual_c = stats.max_residual_c.max(st.residual_c);
        stats.max_residual_t = stats.max_residual_t.max(st.residual_t);
        stats.min_t_k = stats.min_t_k.min(state.t.min());
        stats.max_t_k = stats.max_t_k.max(state.t.max());
        stats.min_c = stats.min_c.min(state.c.min());
        stats.max_c = stats.max_c.max(state.c.max());
        if s % every == 0 || s == steps {
            series
                .samples
                .push(sample(&state, &probes, bc.bottom.drive_k.at(t_new), mult_at(t_new))?);
        }
        if let Some((dir, times)) = snapshots {
            if times.iter().any(|&t| (t - t_new).abs() < 0.5 * dt) {
                write_snapshot(&dir.join(snapshot_name(t_new)), &state).map_err(|e| ConfigError::Io {
                    path: dir.to_path_buf(),
                    source: e,
                })?;
            }
        }
    }
    stats.mean_outer_iterations = outer_sum as f64 / stats.steps.max(1) as f64;
    Ok((series, stats))
}

pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_{:08.1}s.ctsnap", t)
}

/// Text header followed by little-endian `f64` arrays of `T` then `C`.
pub fn write_snapshot(path: &Path, state: &SimulationState) -> std::io::Result<()> {
    let mesh = &state.mesh;
    let [nx, ny, nz] = mesh.dims();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "CTSNAP v1")?;
    writeln!(out, "dims {nx} {ny} {nz}")?;
    writeln!(
        out,
        "spacing_m {} first_layer_m {} layers {}",
        mesh.spec.spacing_m, mesh.spec.first_layer_height_m, mesh.spec.inflation_layers
    )?;
    let ext = mesh.extent();
    writeln!(out, "extent_m {} {} {}", ext[0], ext[1], ext[2])?;
    writeln!(out, "time_s {}", state.time)?;
    writeln!(out, "fields T_K C")?;
    writeln!(out, "END")?;
    for v in state.t.iter().chain(state.c.iter()) {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

/// Reads a snapshot back as `(dims, time, T, C)`.
pub fn read_snapshot(path: &Path) -> std::io::Result<([usize; 3], f64, Vec<f64>, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let end = bytes
        .windows(4)
        .position(|w| w == b"END\n")
        .ok_or_else(|| bad("missing END marker"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut dims = None;
    let mut time = None;
    for line in header.lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.first() {
            Some(&"dims") if parts.len() == 4 => {
                let p = |i: usize| parts[i].parse::<usize>().map_err(|_| bad("bad dims"));
                dims = Some([p(1)?, p(2)?, p(3)?]);
            }
            Some(&"time_s") if parts.len() == 2 => {
                time = Some(parts[1].parse::<f64>().map_err(|_| bad("bad time"))?);
            }
            _ => {}
        }
    }
    let dims = dims.ok_or_else(|| bad("missing dims"))?;
    let n = dims[0] * dims[1] * dims[2];
    let data = &bytes[end + 4..];
    if data.len() != 16 * n {
        return Err(bad("payload size does not match dims"));
    }
    let vals: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, time.ok_or_else(|| bad("missing time"))?, vals[..n].to_vec(), vals[n..].to_vec()))
}
