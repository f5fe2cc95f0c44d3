//! Closed-form physical quantities: particle mass, gas damping, Rayleigh
//! polarizability and the fields of a dual-beam standing-wave dipole trap.
//!
//! The trap is the coherent sum of two identical counter-propagating
//! Gaussian beams of power `P/2` each. In trap-local coordinates (`z'` along
//! the beam axis measured from the centre, `ρ` the distance from the axis)
//! the intensity is
//!
//! ```text
//! I = 4P/(π w0²) · cos²(k z') · exp(-2ρ²/w(z')²) / (1 + (z'/z_R)²)
//! ```
//!
//! and the gradient potential is `U = -α I / (2 ε0 c)`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::constants::{
    ATOMIC_MASS_UNIT, BOLTZMANN, EPSILON_0, PASCAL_PER_MBAR, SPEED_OF_LIGHT,
};
use crate::error::{invalid, Error, Result};

/// Temperature at which [`GasEnvironment::viscosity_ref`] is quoted, K.
pub const VISCOSITY_REFERENCE_TEMPERATURE: f64 = 300.0;

/// A dielectric nanosphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    /// Radius, m.
    pub radius: f64,
    /// Mass density, kg/m³.
    pub density: f64,
    /// Real refractive index at the trap wavelength.
    pub refractive_index: f64,
}

impl Particle {
    pub fn new(radius: f64, density: f64, refractive_index: f64) -> Result<Self> {
        let p = Self {
            radius,
            density,
            refractive_index,
        };
        p.validate()?;
        Ok(p)
    }

    /// 300 nm diameter silica sphere.
    pub fn silica_300nm() -> Self {
        Self {
            radius: 150e-9,
            density: 2000.0,
            refractive_index: 1.44,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid("radius", format!("must be > 0, got {}", self.radius)));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(invalid("density", format!("must be > 0, got {}", self.density)));
        }
        if !(self.refractive_index > 1.0 && self.refractive_index.is_finite()) {
            return Err(invalid(
                "refractive_index",
                format!("must be > 1, got {}", self.refractive_index),
            ));
        }
        Ok(())
    }

    pub fn mass(&self) -> f64 {
        particle_mass(self)
    }
}

impl Default for Particle {
    fn default() -> Self {
        Self::silica_300nm()
    }
}

/// Residual gas surrounding the particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasEnvironment {
    /// Pressure, Pa.
    pub pressure: f64,
    /// Temperature, K.
    pub temperature: f64,
    /// Molecular mass, kg.
    pub molecular_mass: f64,
    /// Dynamic viscosity at [`VISCOSITY_REFERENCE_TEMPERATURE`], Pa·s.
    pub viscosity_ref: f64,
}

impl GasEnvironment {
    pub fn new(pressure: f64, temperature: f64, molecular_mass: f64, viscosity_ref: f64) -> Result<Self> {
        let g = Self {
            pressure,
            temperature,
            molecular_mass,
            viscosity_ref,
        };
        g.validate()?;
        Ok(g)
    }

    /// Room-temperature air at the given pressure in mbar.
    pub fn air_mbar(pressure_mbar: f64) -> Result<Self> {
        Self::new(
            pressure_mbar * PASCAL_PER_MBAR,
            300.0,
            28.97 * ATOMIC_MASS_UNIT,
            1.85e-5,
        )
    }

    pub fn pressure_mbar(&self) -> f64 {
        self.pressure / PASCAL_PER_MBAR
    }

    pub fn with_pressure_mbar(mut self, pressure_mbar: f64) -> Self {
        self.pressure = pressure_mbar * PASCAL_PER_MBAR;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pressure >= 0.0 && self.pressure.is_finite()) {
            return Err(invalid("pressure", format!("must be >= 0, got {}", self.pressure)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid(
                "temperature",
                format!("must be > 0, got {}", self.temperature),
            ));
        }
        if !(self.molecular_mass > 0.0 && self.molecular_mass.is_finite()) {
            return Err(invalid(
                "molecular_mass",
                format!("must be > 0, got {}", self.molecular_mass),
            ));
        }
        if !(self.viscosity_ref > 0.0 && self.viscosity_ref.is_finite()) {
            return Err(invalid(
                "viscosity_ref",
                format!("must be > 0, got {}", self.viscosity_ref),
            ));
        }
        Ok(())
    }

    /// Thermal energy k_B T, J.
    pub fn thermal_energy(&self) -> f64 {
        BOLTZMANN * self.temperature
    }

    /// Dynamic viscosity at the configured temperature (hard-sphere √T scaling).
    pub fn viscosity(&self) -> f64 {
        self.viscosity_ref * (self.temperature / VISCOSITY_REFERENCE_TEMPERATURE).sqrt()
    }

    /// Kinetic-theory mean free path, m. Infinite in vacuum.
    pub fn mean_free_path(&self) -> f64 {
        if self.pressure == 0.0 {
            return f64::INFINITY;
        }
        let thermal = (PI * BOLTZMANN * self.temperature / (2.0 * self.molecular_mass)).sqrt();
        self.viscosity() / self.pressure * thermal
    }
}

impl Default for GasEnvironment {
    fn default() -> Self {
        Self::air_mbar(1.0).expect("default gas is valid")
    }
}

/// Dual-beam standing-wave trap geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    /// Vacuum wavelength, m.
    pub wavelength: f64,
    /// Beam waist (1/e² intensity radius) at focus, m.
    pub waist: f64,
    /// Total optical power of both beams, W.
    pub total_power: f64,
    /// Central antinode position, m.
    pub center: Vector3<f64>,
    /// Unit vector along the beams.
    pub axis: Vector3<f64>,
}

impl TrapConfig {
    pub fn new(wavelength: f64, waist: f64, total_power: f64) -> Result<Self> {
        let t = Self {
            wavelength,
            waist,
            total_power,
            center: Vector3::zeros(),
            axis: Vector3::z(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(invalid(
                "wavelength",
                format!("must be > 0, got {}", self.wavelength),
            ));
        }
        if !(self.waist > 0.0 && self.waist.is_finite()) {
            return Err(invalid("waist", format!("must be > 0, got {}", self.waist)));
        }
        if !(self.total_power >= 0.0 && self.total_power.is_finite()) {
            return Err(invalid(
                "total_power",
                format!("must be >= 0, got {}", self.total_power),
            ));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(invalid("center", "must be finite"));
        }
        if (self.axis.norm() - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "axis",
                format!("must be a unit vector, |axis| = {}", self.axis.norm()),
            ));
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist * self.waist / self.wavelength
    }

    /// On-axis intensity at the central antinode, W/m².
    pub fn peak_intensity(&self) -> f64 {
        4.0 * self.total_power / (PI * self.waist * self.waist)
    }

    /// Beam radius at axial offset `z'`.
    pub fn beam_radius(&self, axial: f64) -> f64 {
        let zeta = axial / self.rayleigh_range();
        self.waist * (1.0 + zeta * zeta).sqrt()
    }

    /// Splits `pos` into (axial coordinate z', radial vector ρ⃗ ⟂ axis).
    pub fn local_coordinates(&self, pos: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let d = pos - self.center;
        let axial = d.dot(&self.axis);
        (axial, d - self.axis * axial)
    }

    /// World position of the `site`-th antinode (site 0 is the centre).
    pub fn antinode_position(&self, site: i64) -> Vector3<f64> {
        self.center + self.axis * (site as f64 * self.wavelength / 2.0)
    }

    /// Index of the antinode nearest to `pos`.
    pub fn nearest_antinode(&self, pos: &Vector3<f64>) -> i64 {
        let (axial, _) = self.local_coordinates(pos);
        (axial / (self.wavelength / 2.0)).round() as i64
    }

    /// Intensity envelope without the standing-wave modulation, normalised
    /// to 1 at the focus: `exp(-2ρ²/w²) / (1 + ζ²)`.
    pub fn envelope(&self, pos: &Vector3<f64>) -> f64 {
        let (axial, radial) = self.local_coordinates(pos);
        let zeta = axial / self.rayleigh_range();
        let e = 1.0 / (1.0 + zeta * zeta);
        e * (-2.0 * radial.norm_squared() * e / (self.waist * self.waist)).exp()
    }

    /// Peak intensity of the `site`-th antinode relative to the central one.
    pub fn site_intensity_fraction(&self, site: i64) -> f64 {
        let zeta = site as f64 * self.wavelength / 2.0 / self.rayleigh_range();
        1.0 / (1.0 + zeta * zeta)
    }
}

impl Default for TrapConfig {
    fn default() -> Self {
        Self::new(1550e-9, 6e-6, 0.2).expect("default trap is valid")
    }
}

/// Intensity, potential and force at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub intensity: f64,
    pub potential: f64,
    pub force: Vector3<f64>,
}

pub fn particle_mass(p: &Particle) -> f64 {
    4.0 / 3.0 * PI * p.radius.powi(3) * p.density
}

/// Momentum damping rate Γ (s⁻¹) from a transition-regime drag law that
/// reduces to Epstein drag at large Knudsen number.
pub fn damping_rate(p: &Particle, g: &GasEnvironment) -> f64 {
    if g.pressure == 0.0 {
        return 0.0;
    }
    let kn = g.mean_free_path() / p.radius;
    let c_k = 0.31 * kn / (0.785 + 1.152 * kn + kn * kn);
    let stokes = 6.0 * PI * g.viscosity() * p.radius / particle_mass(p);
    stokes * 0.619 / (0.619 + kn) * (1.0 + c_k)
}

/// Clausius–Mossotti polarizability α = 4πε₀ r³ (n²−1)/(n²+2), C·m²/V.
pub fn polarizability(p: &Particle) -> f64 {
    let n2 = p.refractive_index * p.refractive_index;
    4.0 * PI * EPSILON_0 * p.radius.powi(3) * (n2 - 1.0) / (n2 + 2.0)
}

pub fn trap_intensity(t: &TrapConfig, pos: &Vector3<f64>) -> f64 {
    let (axial, _) = t.local_coordinates(pos);
    let c = (t.wavenumber() * axial).cos();
    t.peak_intensity() * c * c * t.envelope(pos)
}

pub fn trap_potential(t: &TrapConfig, p: &Particle, pos: &Vector3<f64>) -> f64 {
    -polarizability(p) / (2.0 * EPSILON_0 * SPEED_OF_LIGHT) * trap_intensity(t, pos)
}

pub fn trap_force(t: &TrapConfig, p: &Particle, pos: &Vector3<f64>) -> Vector3<f64> {
    OpticalTrap::new(t, p).force(pos)
}

/// Depth of the central antinode, J.
pub fn trap_depth(t: &TrapConfig, p: &Particle) -> f64 {
    polarizability(p) / (2.0 * EPSILON_0 * SPEED_OF_LIGHT) * t.peak_intensity()
}

/// Small-oscillation angular frequencies (axial, radial, radial) about the
/// central antinode, rad/s.
pub fn trap_frequencies(t: &TrapConfig, p: &Particle) -> Result<(f64, f64, f64)> {
    let depth = trap_depth(t, p);
    if depth <= 0.0 {
        return Err(Error::Domain(
            "trap has no confinement at zero optical power".into(),
        ));
    }
    let m = particle_mass(p);
    let k = t.wavenumber();
    let axial = (2.0 * depth * k * k / m).sqrt();
    let radial = (4.0 * depth / (t.waist * t.waist * m)).sqrt();
    Ok((axial, radial, radial))
}

/// Trap fields for one particle species with the constant prefactors
/// evaluated once. Used on the hot path of the integrators.
#[derive(Debug, Clone, Copy)]
pub struct OpticalTrap {
    pub config: TrapConfig,
    depth: f64,
    k: f64,
    z_r: f64,
    inv_w0_sq: f64,
}

impl OpticalTrap {
    pub fn new(t: &TrapConfig, p: &Particle) -> Self {
        Self {
            config: *t,
            depth: trap_depth(t, p),
            k: t.wavenumber(),
            z_r: t.rayleigh_range(),
            inv_w0_sq: 1.0 / (t.waist * t.waist),
        }
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn potential(&self, pos: &Vector3<f64>) -> f64 {
        let (axial, radial) = self.config.local_coordinates(pos);
        let zeta = axial / self.z_r;
        let e = 1.0 / (1.0 + zeta * zeta);
        let gauss = (-2.0 * radial.norm_squared() * e * self.inv_w0_sq).exp();
        let c = (self.k * axial).cos();
        -self.depth * c * c * e * gauss
    }

    /// Analytic −∇U.
    pub fn force(&self, pos: &Vector3<f64>) -> Vector3<f64> {
        self.sample_potential_force(pos).1
    }

    pub fn sample(&self, pos: &Vector3<f64>) -> FieldSample {
        let (potential, force) = self.sample_potential_force(pos);
        FieldSample {
            intensity: -potential / self.depth.max(f64::MIN_POSITIVE) * self.config.peak_intensity(),
            potential,
            force,
        }
    }

    pub(crate) fn sample_potential_force(&self, pos: &Vector3<f64>) -> (f64, Vector3<f64>) {
        if self.depth == 0.0 {
            return (0.0, Vector3::zeros());
        }
        let (axial, radial) = self.config.local_coordinates(pos);
        let zeta = axial / self.z_r;
        let e = 1.0 / (1.0 + zeta * zeta);
        let rho_sq = radial.norm_squared();
        let gauss = (-2.0 * rho_sq * e * self.inv_w0_sq).exp();
        let (s, c) = (self.k * axial).sin_cos();
        let cos_sq = c * c;
        let eg = self.depth * e * gauss;
        let potential = -eg * cos_sq;

        // d/dz' of cos²(kz')·E(z')·G(ρ,z')
        let d_env = 2.0 * zeta * e / self.z_r * (2.0 * rho_sq * e * self.inv_w0_sq - 1.0);
        let f_axial = eg * (-self.k * 2.0 * s * c + cos_sq * d_env);
        let f_radial = radial * (potential * 4.0 * e * self.inv_w0_sq);
        (potential, self.config.axis * f_axial + f_radial)
    }
}
