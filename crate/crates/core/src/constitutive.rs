//! Material laws of the coupled water-concentration / temperature model.
//!
//! Everything here is a pure function of local state `(C, T)`: the
//! Choi-Okos polynomials for water and protein, the water holding capacity
//! `C_eq(T)`, the storage modulus `G'(T)`, the swelling pressure and the
//! Darcy velocity that follows from it.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Offset between Kelvin and degrees Celsius.
pub const CELSIUS_OFFSET: f64 = 273.15;

/// Evaluation window for the Choi-Okos fits.
pub const CHOI_OKOS_MIN_K: f64 = 250.0;
pub const CHOI_OKOS_MAX_K: f64 = 500.0;

/// Sigmoid parameters of the water holding capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CeqParams {
    pub amplitude: f64,
    pub prefactor: f64,
    /// K⁻¹
    pub rate: f64,
    /// K
    pub t_sigma: f64,
}

impl Default for CeqParams {
    fn default() -> Self {
        CeqParams {
            amplitude: 0.31,
            prefactor: 30.0,
            rate: 0.17,
            t_sigma: 315.0,
        }
    }
}

/// Sigmoid parameters of the storage modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GPrimeParams {
    /// Pa
    pub g_max: f64,
    /// Pa
    pub g_0: f64,
    /// K
    pub t_bar: f64,
    /// K
    pub delta_t: f64,
}

impl Default for GPrimeParams {
    fn default() -> Self {
        GPrimeParams {
            g_max: 92_000.0,
            g_0: 13_500.0,
            t_bar: 342.15,
            delta_t: 4.0,
        }
    }
}

/// How the water volume fraction is obtained from the mass fraction `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VolumeFractionMode {
    /// Convert through the component densities.
    #[default]
    Densities,
    /// Use `phi_w = C` directly.
    MassAsVolume,
}

/// Pure-component properties at one temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentProperties {
    /// W m⁻¹ K⁻¹
    pub lambda_water: f64,
    /// W m⁻¹ K⁻¹
    pub lambda_protein: f64,
    /// J kg⁻¹ K⁻¹
    pub cp_water: f64,
    /// J kg⁻¹ K⁻¹
    pub cp_protein: f64,
}

/// Orthotropic effective conductivity. The fibre direction is the long
/// (x) axis of the cuboid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conductivity {
    pub parallel: f64,
    pub orthogonal: f64,
}

/// Choi-Okos correlations, evaluated on `T` clamped to
/// [`CHOI_OKOS_MIN_K`, `CHOI_OKOS_MAX_K`].
pub fn choi_okos(t: f64) -> ComponentProperties {
    let tc = t.clamp(CHOI_OKOS_MIN_K, CHOI_OKOS_MAX_K) - CELSIUS_OFFSET;
    let tc2 = tc * tc;
    ComponentProperties {
        lambda_water: 0.57109 + 1.7625e-3 * tc - 6.7036e-6 * tc2,
        lambda_protein: 0.17881 + 1.1958e-3 * tc - 2.7178e-6 * tc2,
        cp_protein: 2008.2 + 1.2089 * tc - 1.3129e-3 * tc2,
        cp_water: 4128.9 - 9.0864e-2 * tc + 5.4731e-3 * tc2,
    }
}

/// Volume-weighted (fibre-parallel) and harmonic (cross-fibre) mixing of
/// the two component conductivities for a water volume fraction `phi_w`.
pub fn mix_conductivity(phi_w: f64, props: &ComponentProperties) -> Conductivity {
    let phi_p = 1.0 - phi_w;
    let parallel = props.lambda_water * phi_w + props.lambda_protein * phi_p;
    let orthogonal = 1.0 / (phi_w / props.lambda_water + phi_p / props.lambda_protein);
    Conductivity {
        parallel,
        orthogonal,
    }
}

/// All constitutive parameters of the two-phase (water/protein) meat model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialModel {
    /// m² s⁻¹
    pub diffusion_coefficient: f64,
    /// m²
    pub permeability: f64,
    /// Pa s
    pub water_viscosity: f64,
    /// kg m⁻³, used as `rho` in the energy equation
    pub water_density: f64,
    pub initial_water_mass_fraction: f64,
    pub ceq: CeqParams,
    pub gprime: GPrimeParams,
    /// kg m⁻³, only used for volume fractions
    pub water_component_density: f64,
    /// kg m⁻³, only used for volume fractions
    pub protein_component_density: f64,
    pub volume_fraction_mode: VolumeFractionMode,
}

impl Default for MaterialModel {
    fn default() -> Self {
        MaterialModel {
            diffusion_coefficient: 3.0e-10,
            permeability: 3.0e-17,
            water_viscosity: 1.0e-3,
            water_density: 1000.0,
            initial_water_mass_fraction: 0.77,
            ceq: CeqParams::default(),
            gprime: GPrimeParams::default(),
            water_component_density: 1000.0,
            protein_component_density: 1330.0,
            volume_fraction_mode: VolumeFractionMode::Densities,
        }
    }
}

impl MaterialModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| Err(ConfigError::invalid(format!("material.{key}"), msg));
        if !(self.diffusion_coefficient > 0.0) {
            return bad("diffusion_coefficient", "must be positive");
        }
        if !(1e-19..=1e-16).contains(&self.permeability) {
            return bad("permeability", "must lie within [1e-19, 1e-16] m^2");
        }
        if !(self.water_viscosity > 0.0) {
            return bad("water_viscosity", "must be positive");
        }
        if !(self.water_density > 0.0) {
            return bad("water_density", "must be positive");
        }
        if !(self.water_component_density > 0.0 && self.protein_component_density > 0.0) {
            return bad("water_component_density", "component densities must be positive");
        }
        if !(0.0..=1.0).contains(&self.initial_water_mass_fraction) {
            return bad("initial_water_mass_fraction", "must lie within [0, 1]");
        }
        if !(self.gprime.delta_t > 0.0) {
            return bad("gprime.delta_t", "must be positive");
        }
        Ok(())
    }

    /// Water holding capacity `C_eq(T)`.
    pub fn equilibrium_concentration(&self, t: f64) -> f64 {
        let p = &self.ceq;
        self.initial_water_mass_fraction
            - p.amplitude / (1.0 + p.prefactor * (-p.rate * (t - p.t_sigma)).exp())
    }

    /// Storage modulus `G'(T)` in Pa.
    pub fn storage_modulus(&self, t: f64) -> f64 {
        let p = &self.gprime;
        p.g_max + (p.g_0 - p.g_max) / (1.0 + ((t - p.t_bar) / p.delta_t).exp())
    }

    /// Flory-Rehner swelling pressure `G'(T) (C - C_eq(T))` in Pa.
    pub fn swelling_pressure(&self, c: f64, t: f64) -> f64 {
        self.storage_modulus(t) * (c - self.equilibrium_concentration(t))
    }

    /// Water volume fraction for mass fraction `c`.
    pub fn water_volume_fraction(&self, c: f64) -> f64 {
        match self.volume_fraction_mode {
            VolumeFractionMode::MassAsVolume => c,
            VolumeFractionMode::Densities => {
                let vw = c / self.water_component_density;
                let vp = (1.0 - c) / self.protein_component_density;
                if vw + vp > 0.0 {
                    vw / (vw + vp)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn effective_conductivity(&self, c: f64, t: f64) -> Conductivity {
        mix_conductivity(self.water_volume_fraction(c), &choi_okos(t))
    }

    /// Concentration-weighted specific heat capacity.
    pub fn effective_heat_capacity(&self, c: f64, t: f64) -> f64 {
        let props = choi_okos(t);
        props.cp_water * c + props.cp_protein * (1.0 - c)
    }

    /// Scalar `kappa G'(T) / mu_w` in m² s⁻¹ that maps the gradient of
    /// `C - C_eq` to a velocity.
    pub fn darcy_coefficient(&self, t: f64) -> f64 {
        self.permeability * self.storage_modulus(t) / self.water_viscosity
    }

    /// Darcy velocity for a gradient of the excess concentration `C - C_eq`.
    pub fn darcy_velocity(&self, grad_excess: [f64; 3], t: f64) -> [f64; 3] {
        let k = self.darcy_coefficient(t);
        grad_excess.map(|g| -k * g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn choi_okos_spot_values() {
        let p = choi_okos(273.15);
        assert!(rel(p.lambda_water, 0.57109) < 1e-12);
        assert!(rel(p.cp_protein, 2008.2) < 1e-12);
        assert!(rel(p.cp_water, 4128.9) < 1e-12);
        let p = choi_okos(323.15);
        let expected = 0.57109 + 1.7625e-3 * 50.0 - 6.7036e-6 * 2500.0;
        assert!(rel(p.lambda_water, expected) < 1e-12);
        assert!(rel(p.lambda_water, 0.642456) < 1e-6);
    }

    #[test]
    fn choi_okos_is_clamped() {
        assert_eq!(choi_okos(100.0), choi_okos(CHOI_OKOS_MIN_K));
        assert_eq!(choi_okos(900.0), choi_okos(CHOI_OKOS_MAX_K));
    }

    #[test]
    fn ceq_values_and_limits() {
        let m = MaterialModel::default();
        assert!(rel(m.equilibrium_concentration(315.0), 0.76) < 1e-12);
        assert!(rel(m.equilibrium_concentration(-1e4), 0.77) < 1e-12);
        assert!(rel(m.equilibrium_concentration(1e4), 0.46) < 1e-12);
    }

    #[test]
    fn storage_modulus_values() {
        let m = MaterialModel::default();
        assert!(rel(m.storage_modulus(342.15), 52_750.0) < 1e-12);
        assert!(rel(m.storage_modulus(-1e4), 13_500.0) < 1e-12);
        let expected = 92_000.0 - 78_500.0 / (1.0 + (-15.75f64).exp());
        assert!(rel(m.storage_modulus(279.15), expected) < 1e-12);
        assert!((m.storage_modulus(279.15) - 13_500.01).abs() < 0.01);
    }

    #[test]
    fn swelling_pressure_zero_at_equilibrium() {
        let m = MaterialModel::default();
        for t in [280.0, 320.0, 350.0, 400.0] {
            assert_eq!(m.swelling_pressure(m.equilibrium_concentration(t), t), 0.0);
        }
        let p = m.swelling_pressure(0.76, 279.15);
        assert!((p + 134.7).abs() < 0.1, "p = {p}");
        let t = 342.15;
        let expected = 52_750.0 * (0.80 - m.equilibrium_concentration(t));
        assert!(rel(m.swelling_pressure(0.80, t), expected) < 1e-12);
    }

    #[test]
    fn conductivity_mixing() {
        let props = choi_okos(273.15);
        let k = mix_conductivity(0.5, &props);
        assert!(rel(k.parallel, 0.37495) < 1e-12);
        let harmonic = 1.0 / (0.5 / 0.57109 + 0.5 / 0.17881);
        assert!(rel(k.orthogonal, harmonic) < 1e-12);
        assert!(rel(k.orthogonal, 0.272347) < 1e-5);

        let m = MaterialModel::default();
        let pure = m.effective_conductivity(1.0, 300.0);
        let lw = choi_okos(300.0).lambda_water;
        assert!(rel(pure.parallel, lw) < 1e-14);
        assert!(rel(pure.orthogonal, lw) < 1e-14);
    }

    #[test]
    fn volume_fraction_modes() {
        let mut m = MaterialModel::default();
        let phi = m.water_volume_fraction(0.76);
        assert!(phi > 0.76 && phi < 1.0);
        m.volume_fraction_mode = VolumeFractionMode::MassAsVolume;
        assert_eq!(m.water_volume_fraction(0.76), 0.76);
    }

    #[test]
    fn heat_capacity_endpoints() {
        let m = MaterialModel::default();
        assert!(rel(m.effective_heat_capacity(1.0, 273.15), 4128.9) < 1e-12);
        assert!(rel(m.effective_heat_capacity(0.0, 273.15), 2008.2) < 1e-12);
        assert!(rel(m.effective_heat_capacity(0.5, 273.15), 3068.55) < 1e-12);
    }

    #[test]
    fn darcy_velocity_cases() {
        let m = MaterialModel::default();
        assert_eq!(m.darcy_velocity([0.0; 3], 300.0), [0.0; 3]);
        // At 279.15 K the modulus is 13500.01 Pa
        let u = m.darcy_velocity([1.0, 0.0, 0.0], 279.15);
        assert!((u[0] + 4.05e-10).abs() < 1e-15, "{u:?}");
        assert_eq!(u[1], 0.0);
        assert!(m.darcy_velocity([0.0, 2.0, 0.0], 350.0)[1] < 0.0);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let mut m = MaterialModel::default();
        assert!(m.validate().is_ok());
        m.diffusion_coefficient = -3e-10;
        assert!(m.validate().is_err());
        let mut m = MaterialModel::default();
        m.permeability = 1e-15;
        assert!(m.validate().is_err());
    }
}
