//! Physical constants (CODATA 2018, SI).

/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Standard gravitational acceleration, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;
/// 1 mbar in Pa.
pub const PASCAL_PER_MBAR: f64 = 100.0;
