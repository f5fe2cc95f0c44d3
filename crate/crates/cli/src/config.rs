//! Run configuration file.
//!
//! TOML with unit-suffixed keys in laboratory units (mbar, K, u, W). Every
//! key is optional; omitted keys take the values below. Unknown keys are
//! rejected.
//!
//! ```toml
//! schema_version = 1
//!
//! [particle]
//! radius_m = 150e-9
//! density_kg_m3 = 2000.0
//! refractive_index = 1.44
//!
//! [gas]
//! pressure_mbar = 1.0
//! temperature_K = 300.0
//! molecular_mass_u = 28.97
//! viscosity_Pa_s = 1.85e-5     # at 300 K, scaled as √T
//!
//! [trap]
//! wavelength_m = 1550e-9
//! waist_m = 6e-6
//! power_W = 0.2                # both beams together
//!
//! [launch]
//! distance_m = 8e-3
//! spread_rad = 0.0             # half-angle of the launch cone
//! [launch.speed]
//! kind = "log_normal"          # or delta, gamma, empirical
//! median_mps = 15.0
//! geometric_sigma = 1.6
//!
//! [sim]
//! # dt_fine_s = 1e-7           # default: automatic from the trap period
//! t_max_s = 10.0
//! capture_hold_s = 5e-3
//! capture_radius_w0 = 3.0
//! far_field_radius_w0 = 4.0
//! trace_decimation = 8
//! seed = 0
//! events = 10000
//! ```

use std::path::Path;

use liad::constants::{ATOMIC_MASS_UNIT, PASCAL_PER_MBAR};
use liad::dynamics::PropagationConfig;
use liad::montecarlo::{LaunchDistribution, SimConfig, SpeedDistribution};
use liad::physics::{GasEnvironment, Particle, TrapConfig};
use liad::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub particle: ParticleSection,
    pub gas: GasSection,
    pub trap: TrapSection,
    pub launch: LaunchSection,
    pub sim: SimSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleSection {
    pub radius_m: f64,
    pub density_kg_m3: f64,
    pub refractive_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasSection {
    pub pressure_mbar: f64,
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    pub molecular_mass_u: f64,
    #[serde(rename = "viscosity_Pa_s")]
    pub viscosity_pa_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapSection {
    pub wavelength_m: f64,
    pub waist_m: f64,
    #[serde(rename = "power_W")]
    pub power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaunchSection {
    pub distance_m: f64,
    pub spread_rad: f64,
    pub speed: SpeedSection,
}

/// Launch speed law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedSection {
    Delta { speed_mps: f64 },
    LogNormal { median_mps: f64, geometric_sigma: f64 },
    Gamma { shape: f64, scale_mps: f64 },
    /// Histogram over `edges_mps` with relative `weights` per bin.
    Empirical { edges_mps: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_fine_s: Option<f64>,
    pub t_max_s: f64,
    pub capture_hold_s: f64,
    pub capture_radius_w0: f64,
    pub far_field_radius_w0: f64,
    pub trace_decimation: u32,
    pub seed: u64,
    pub events: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_sim_config(&SimConfig::default(), 10_000)
    }
}

impl Default for ParticleSection {
    fn default() -> Self {
        RunConfig::default().particle
    }
}

impl Default for GasSection {
    fn default() -> Self {
        RunConfig::default().gas
    }
}

impl Default for TrapSection {
    fn default() -> Self {
        RunConfig::default().trap
    }
}

impl Default for LaunchSection {
    fn default() -> Self {
        RunConfig::default().launch
    }
}

impl Default for SpeedSection {
    fn default() -> Self {
        RunConfig::default().launch.speed
    }
}

impl Default for SimSection {
    fn default() -> Self {
        RunConfig::default().sim
    }
}

impl RunConfig {
    /// Section values mirroring a library configuration.
    pub fn from_sim_config(c: &SimConfig, events: u64) -> Self {
        let speed = match &c.launch.speed {
            SpeedDistribution::Delta { speed } => SpeedSection::Delta { speed_mps: *speed },
            SpeedDistribution::LogNormal { median, geometric_sigma } => SpeedSection::LogNormal {
                median_mps: *median,
                geometric_sigma: *geometric_sigma,
            },
            SpeedDistribution::Gamma { shape, scale } => SpeedSection::Gamma {
                shape: *shape,
                scale_mps: *scale,
            },
            SpeedDistribution::Empirical { edges, weights } => SpeedSection::Empirical {
                edges_mps: edges.clone(),
                weights: weights.clone(),
            },
        };
        let p = &c.propagation;
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            particle: ParticleSection {
                radius_m: c.particle.radius,
                density_kg_m3: c.particle.density,
                refractive_index: c.particle.refractive_index,
            },
            gas: GasSection {
                pressure_mbar: c.gas.pressure / PASCAL_PER_MBAR,
                temperature_k: c.gas.temperature,
                molecular_mass_u: c.gas.molecular_mass / ATOMIC_MASS_UNIT,
                viscosity_pa_s: c.gas.viscosity_ref,
            },
            trap: TrapSection {
                wavelength_m: c.trap.wavelength,
                waist_m: c.trap.waist,
                power_w: c.trap.total_power,
            },
            launch: LaunchSection {
                distance_m: c.substrate_distance,
                spread_rad: c.launch.transverse_spread,
                speed,
            },
            sim: SimSection {
                dt_fine_s: p.dt_fine,
                t_max_s: p.t_max,
                capture_hold_s: p.capture_hold_time,
                capture_radius_w0: p.capture_radius,
                far_field_radius_w0: p.far_field_radius,
                trace_decimation: 8,
                seed: p.rng_seed,
                events,
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            key: "toml".into(),
            reason: e.to_string().trim_end().to_string(),
        })?;
        cfg.sim_config()?;
        Ok(cfg)
    }

    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            key: file.clone(),
            reason: format!("cannot read: {e}"),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config { key, reason } if key == "toml" => CliError::Config { key: file, reason },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// The validated library configuration.
    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Config {
                key: "schema_version".into(),
                reason: format!("unsupported version {}, expected {CONFIG_SCHEMA_VERSION}", self.schema_version),
            });
        }
        let particle = Particle {
            radius: self.particle.radius_m,
            density: self.particle.density_kg_m3,
            refractive_index: self.particle.refractive_index,
        };
        particle.validate().map_err(|e| keyed("particle", e))?;
        let g = &self.gas;
        let gas = GasEnvironment {
            pressure: g.pressure_mbar * PASCAL_PER_MBAR,
            temperature: g.temperature_k,
            molecular_mass: g.molecular_mass_u * ATOMIC_MASS_UNIT,
            viscosity_ref: g.viscosity_pa_s,
        };
        gas.validate().map_err(|e| keyed("gas", e))?;
        let trap = TrapConfig {
            wavelength: self.trap.wavelength_m,
            waist: self.trap.waist_m,
            total_power: self.trap.power_w,
            ..TrapConfig::default()
        };
        trap.validate().map_err(|e| keyed("trap", e))?;
        let speed = match &self.launch.speed {
            SpeedSection::Delta { speed_mps } => SpeedDistribution::Delta { speed: *speed_mps },
            SpeedSection::LogNormal { median_mps, geometric_sigma } => SpeedDistribution::LogNormal {
                median: *median_mps,
                geometric_sigma: *geometric_sigma,
            },
            SpeedSection::Gamma { shape, scale_mps } => SpeedDistribution::Gamma {
                shape: *shape,
                scale: *scale_mps,
            },
            SpeedSection::Empirical { edges_mps, weights } => SpeedDistribution::Empirical {
                edges: edges_mps.clone(),
                weights: weights.clone(),
            },
        };
        let launch = LaunchDistribution {
            speed,
            transverse_spread: self.launch.spread_rad,
            ..LaunchDistribution::default()
        };
        launch.validate().map_err(|e| keyed("launch", e))?;
        let s = &self.sim;
        if s.events == 0 {
            return Err(CliError::Config {
                key: "sim.events".into(),
                reason: "must be >= 1".into(),
            });
        }
        let propagation = PropagationConfig {
            dt_fine: s.dt_fine_s,
            far_field_radius: s.far_field_radius_w0,
            t_max: s.t_max_s,
            capture_hold_time: s.capture_hold_s,
            capture_radius: s.capture_radius_w0,
            rng_seed: s.seed,
            trace_decimation: Some(s.trace_decimation),
        };
        propagation.validate().map_err(|e| keyed("sim", e))?;
        propagation.resolve_dt_fine(&trap, &particle).map_err(|e| CliError::Config {
            key: "sim.dt_fine_s".into(),
            reason: e.to_string(),
        })?;
        let cfg = SimConfig {
            particle,
            gas,
            trap,
            launch,
            substrate_distance: self.launch.distance_m,
            propagation: PropagationConfig {
                trace_decimation: None,
                ..propagation
            },
        };
        cfg.validate().map_err(|e| keyed("launch", e))?;
        Ok(cfg)
    }
}

/// Maps a library validation error to the configuration key it came from.
fn keyed(section: &str, e: CoreError) -> CliError {
    let CoreError::InvalidParameter { name, reason } = &e else {
        return CliError::Config {
            key: section.into(),
            reason: e.to_string(),
        };
    };
    let key = match (section, *name) {
        ("particle", "radius") => "radius_m",
        ("particle", "density") => "density_kg_m3",
        ("gas", "pressure") => "pressure_mbar",
        ("gas", "temperature") => "temperature_K",
        ("gas", "molecular_mass") => "molecular_mass_u",
        ("gas", "viscosity_ref") => "viscosity_Pa_s",
        ("trap", "wavelength") => "wavelength_m",
        ("trap", "waist") => "waist_m",
        ("trap", "total_power") => "power_W",
        ("launch", "substrate_distance") => "distance_m",
        ("launch", "transverse_spread") => "spread_rad",
        ("launch", "speed") => "speed.speed_mps",
        ("launch", "median") => "speed.median_mps",
        ("launch", "geometric_sigma") => "speed.geometric_sigma",
        ("launch", "shape") => "speed.shape",
        ("launch", "scale") => "speed.scale_mps",
        ("launch", "edges") => "speed.edges_mps",
        ("launch", "weights") => "speed.weights",
        ("sim", "dt_fine") => "dt_fine_s",
        ("sim", "t_max") => "t_max_s",
        ("sim", "capture_hold_time") => "capture_hold_s",
        ("sim", "capture_radius") => "capture_radius_w0",
        ("sim", "far_field_radius") => "far_field_radius_w0",
        (_, other) => other,
    };
    // The library reports SI values, which need not match the file's units.
    let reason = reason.split(", got ").next().unwrap_or(reason);
    CliError::Config {
        key: format!("{section}.{key}"),
        reason: reason.to_string(),
    }
}
