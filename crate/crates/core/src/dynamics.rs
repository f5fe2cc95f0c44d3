//! Single-particle propagation: closed-form drag trajectories, underdamped
//! Langevin stepping with an exact Ornstein–Uhlenbeck friction/noise
//! substep, the exact free transition density used far from the beams, and
//! the adaptive trajectory driver that decides capture.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::STANDARD_GRAVITY;
use crate::error::{invalid, Error, Result};
use crate::physics::{
    damping_rate, particle_mass, trap_frequencies, GasEnvironment, OpticalTrap, Particle,
    TrapConfig,
};

/// Below this value of Γt the closed-form drag trajectory is replaced by its
/// Taylor series.
pub const DRAG_SERIES_THRESHOLD: f64 = 1e-6;

/// Envelope level (relative to the focus) above which the near field is
/// integrated with fine Langevin steps. Corresponds to ρ = 1.5 w at the focus.
const CORE_ENVELOPE: f64 = 0.011_108_996_538_242_306; // exp(-4.5)

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub time: f64,
}

impl KineticState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self {
            position,
            velocity,
            time: 0.0,
        }
    }

    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self::new(position, Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|x| x.is_finite())
            && self.time.is_finite()
    }
}

/// Closed-form vertical position of a particle launched with vertical
/// velocity `u` under gravity and linear drag, neglecting diffusion:
///
/// `y(t) = (1 − e^{−Γt})(g/Γ² + u/Γ) − (g/Γ) t`
pub fn analytic_drag_position(u: f64, gamma: f64, t: f64) -> Result<f64> {
    if gamma < 0.0 || gamma.is_nan() {
        return Err(Error::Domain(format!("damping rate must be >= 0, got {gamma}")));
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    let g = STANDARD_GRAVITY;
    let x = gamma * t;
    if x < DRAG_SERIES_THRESHOLD {
        let t2 = t * t;
        let t3 = t2 * t;
        return Ok(u * t - 0.5 * g * t2 - 0.5 * u * gamma * t2
            + (g * gamma + u * gamma * gamma) * t3 / 6.0
            - g * gamma * gamma * t3 * t / 24.0);
    }
    Ok(-(-x).exp_m1() * (g / (gamma * gamma) + u / gamma) - g / gamma * t)
}

/// Long-time one-dimensional mean-square displacement 2k_BT t/(MΓ), m².
pub fn msd_free_diffusion(p: &Particle, g: &GasEnvironment, t: f64) -> Result<f64> {
    let gamma = damping_rate(p, g);
    if gamma <= 0.0 {
        return Err(Error::Domain("no diffusive limit without damping".into()));
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    Ok(2.0 * g.thermal_energy() / (particle_mass(p) * gamma) * t)
}

/// Anything that exerts a position-dependent conservative force.
pub trait ForceField {
    fn force(&self, pos: &Vector3<f64>) -> Vector3<f64>;
}

impl ForceField for OpticalTrap {
    fn force(&self, pos: &Vector3<f64>) -> Vector3<f64> {
        OpticalTrap::force(self, pos)
    }
}

/// The zero field.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoForce;

impl ForceField for NoForce {
    fn force(&self, _pos: &Vector3<f64>) -> Vector3<f64> {
        Vector3::zeros()
    }
}

/// Bath coupling and external acceleration for one particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Langevin {
    pub mass: f64,
    pub damping_rate: f64,
    /// k_B T, J.
    pub thermal_energy: f64,
    pub gravity: Vector3<f64>,
}

impl Langevin {
    /// Gravity points along −y.
    pub fn new(p: &Particle, g: &GasEnvironment) -> Self {
        Self {
            mass: particle_mass(p),
            damping_rate: damping_rate(p, g),
            thermal_energy: g.thermal_energy(),
            gravity: Vector3::new(0.0, -STANDARD_GRAVITY, 0.0),
        }
    }

    pub fn without_gravity(mut self) -> Self {
        self.gravity = Vector3::zeros();
        self
    }

    /// Velocity variance per axis in equilibrium, k_BT/M.
    pub fn thermal_velocity_sq(&self) -> f64 {
        self.thermal_energy / self.mass
    }
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// One BAOAB splitting step: half kick, half drift, exact OU velocity
/// update, half drift, half kick. Second order in `dt` for the
/// deterministic part, and exact in configuration for harmonic forces.
pub fn langevin_step<F: ForceField, R: Rng + ?Sized>(
    s: &KineticState,
    field: &F,
    lang: &Langevin,
    dt: f64,
    rng: &mut R,
) -> KineticState {
    let accel = field.force(&s.position) / lang.mass + lang.gravity;
    let mut out = *s;
    let (decay, sigma) = ou_coefficients(lang, dt);
    baoab(&mut out, accel, field, lang, dt, decay, sigma, rng);
    out
}

/// Velocity decay factor and noise amplitude of an exact OU update over `dt`.
fn ou_coefficients(lang: &Langevin, dt: f64) -> (f64, f64) {
    let decay = (-lang.damping_rate * dt).exp();
    let sigma = (lang.thermal_velocity_sq() * -(-2.0 * lang.damping_rate * dt).exp_m1()).sqrt();
    (decay, sigma)
}

/// Advances `s` by one step and returns the acceleration at the new position.
#[allow(clippy::too_many_arguments)]
fn baoab<F: ForceField, R: Rng + ?Sized>(
    s: &mut KineticState,
    accel: Vector3<f64>,
    field: &F,
    lang: &Langevin,
    dt: f64,
    decay: f64,
    sigma: f64,
    rng: &mut R,
) -> Vector3<f64> {
    let half = 0.5 * dt;
    s.velocity += accel * half;
    s.position += s.velocity * half;
    s.velocity *= decay;
    if sigma > 0.0 {
        s.velocity += gaussian3(rng) * sigma;
    }
    s.position += s.velocity * half;
    let next = field.force(&s.position) / lang.mass + lang.gravity;
    s.velocity += next * half;
    s.time += dt;
    next
}

/// Fixed-step Langevin integrator that reuses the force evaluated at the
/// end of the previous step.
#[derive(Debug, Clone)]
pub struct LangevinIntegrator<F> {
    field: F,
    lang: Langevin,
    dt: f64,
    decay: f64,
    kick_sigma: f64,
    accel: Option<(Vector3<f64>, Vector3<f64>)>,
}

impl<F: ForceField> LangevinIntegrator<F> {
    pub fn new(field: F, lang: Langevin, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be > 0, got {dt}")));
        }
        let (decay, kick_sigma) = ou_coefficients(&lang, dt);
        Ok(Self {
            decay,
            kick_sigma,
            field,
            lang,
            dt,
            accel: None,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn field(&self) -> &F {
        &self.field
    }

    pub fn step<R: Rng + ?Sized>(&mut self, s: &mut KineticState, rng: &mut R) {
        let accel = match self.accel {
            Some((pos, a)) if pos == s.position => a,
            _ => self.field.force(&s.position) / self.lang.mass + self.lang.gravity,
        };
        let next = baoab(s, accel, &self.field, &self.lang, self.dt, self.decay, self.kick_sigma, rng);
        self.accel = Some((s.position, next));
    }
}

/// (1 − e^{−x})/x
fn phi1(x: f64) -> f64 {
    if x < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// (x − 1 + e^{−x})/x²
fn phi2(x: f64) -> f64 {
    if x < 1e-3 {
        0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0
    } else {
        (x + (-x).exp_m1()) / (x * x)
    }
}

/// (2x − 3 + 4e^{−x} − e^{−2x})/x², the scaled position variance.
fn position_variance_factor(x: f64) -> f64 {
    if x < 1e-3 {
        x * (2.0 / 3.0 - x / 2.0 + 7.0 * x * x / 30.0 - x * x * x / 12.0)
    } else {
        (2.0 * x + 4.0 * (-x).exp_m1() - (-2.0 * x).exp_m1()) / (x * x)
    }
}

/// Moments of the free Langevin transition over `dt` under constant
/// acceleration `accel`, per axis: mean displacement, mean final velocity,
/// and the (position, cross, velocity) variances.
#[derive(Debug, Clone, Copy)]
struct FreeTransition {
    displacement: Vector3<f64>,
    velocity: Vector3<f64>,
    var_x: f64,
    cov_xv: f64,
    var_v: f64,
}

impl FreeTransition {
    fn new(v0: &Vector3<f64>, accel: &Vector3<f64>, lang: &Langevin, dt: f64) -> Self {
        let x = lang.damping_rate * dt;
        let p1 = phi1(x);
        let p2 = phi2(x);
        let s2 = lang.thermal_velocity_sq();
        let (var_x, cov_xv, var_v) = if lang.damping_rate > 0.0 {
            (
                s2 * dt * dt * position_variance_factor(x),
                s2 * dt * x * p1 * p1,
                -s2 * (-2.0 * x).exp_m1(),
            )
        } else {
            (0.0, 0.0, 0.0)
        };
        Self {
            displacement: v0 * (dt * p1) + accel * (dt * dt * p2),
            velocity: v0 * (-x).exp() + accel * (dt * p1),
            var_x,
            cov_xv,
            var_v,
        }
    }

    /// Conservative bound on the displacement magnitude.
    fn reach(&self) -> f64 {
        self.displacement.norm() + 5.0 * (3.0 * self.var_x).sqrt()
    }

    fn apply<R: Rng + ?Sized>(&self, s: &mut KineticState, dt: f64, rng: &mut R) {
        s.position += self.displacement;
        s.velocity = self.velocity;
        if self.var_v > 0.0 {
            let xi = gaussian3(rng);
            let eta = gaussian3(rng);
            if self.var_x > 0.0 {
                let sx = self.var_x.sqrt();
                let a = self.cov_xv / sx;
                let b = (self.var_v - a * a).max(0.0).sqrt();
                s.position += xi * sx;
                s.velocity += xi * a + eta * b;
            } else {
                s.velocity += eta * self.var_v.sqrt();
            }
        }
        s.time += dt;
    }
}

/// Exact transition of a free particle (gravity, drag and thermal noise,
/// no trap force) over `dt`.
pub fn far_field_propagate<R: Rng + ?Sized>(
    s: &KineticState,
    dt: f64,
    lang: &Langevin,
    rng: &mut R,
) -> KineticState {
    let mut out = *s;
    if dt > 0.0 {
        FreeTransition::new(&s.velocity, &lang.gravity, lang, dt).apply(&mut out, dt, rng);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    /// Upper bound on the near-field step, s. `None` selects 1/40 of the
    /// fastest trap period.
    pub dt_fine: Option<f64>,
    /// Near-field extent in units of the local beam radius (radially) and the
    /// Rayleigh range (axially).
    pub far_field_radius: f64,
    pub t_max: f64,
    pub capture_hold_time: f64,
    /// Containment radius around the capturing antinode, units of w0.
    pub capture_radius: f64,
    pub rng_seed: u64,
    /// Record every n-th step into the outcome trace.
    pub trace_decimation: Option<u32>,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            dt_fine: None,
            far_field_radius: 4.0,
            t_max: 10.0,
            capture_hold_time: 5e-3,
            capture_radius: 3.0,
            rng_seed: 0,
            trace_decimation: None,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(dt) = self.dt_fine {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(invalid("dt_fine", format!("must be > 0, got {dt}")));
            }
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(invalid("t_max", format!("must be > 0, got {}", self.t_max)));
        }
        if !(self.capture_hold_time > 0.0 && self.capture_hold_time.is_finite()) {
            return Err(invalid(
                "capture_hold_time",
                format!("must be > 0, got {}", self.capture_hold_time),
            ));
        }
        if !(self.capture_radius > 0.0) {
            return Err(invalid(
                "capture_radius",
                format!("must be > 0, got {}", self.capture_radius),
            ));
        }
        if !(self.far_field_radius > self.capture_radius && self.far_field_radius.is_finite()) {
            return Err(invalid(
                "far_field_radius",
                format!(
                    "must exceed capture_radius ({}), got {}",
                    self.capture_radius, self.far_field_radius
                ),
            ));
        }
        if self.trace_decimation == Some(0) {
            return Err(invalid("trace_decimation", "must be >= 1"));
        }
        Ok(())
    }

    /// The near-field step actually used for this trap and particle.
    pub fn resolve_dt_fine(&self, trap: &TrapConfig, p: &Particle) -> Result<f64> {
        let period = match trap_frequencies(trap, p) {
            Ok((axial, radial, _)) => Some(2.0 * PI / axial.max(radial)),
            Err(_) => None,
        };
        match (self.dt_fine, period) {
            (Some(dt), Some(period)) if dt > period / 20.0 => Err(Error::Configuration(format!(
                "dt_fine = {dt:e} s resolves fewer than 20 steps per trap period ({period:e} s)"
            ))),
            (Some(dt), _) => Ok(dt),
            (None, Some(period)) => Ok((period / 40.0).min(1e-6)),
            (None, None) => Ok(1e-6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Trapped,
    Escaped,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    /// Time at which the hold criterion was satisfied, s.
    pub time: f64,
    /// Antinode index along the axis, 0 = central.
    pub site_index: i64,
    /// Peak intensity of the capturing antinode relative to the central one.
    pub site_intensity_fraction: f64,
    /// Mechanical energy (kinetic + trap potential) at capture, J. Negative.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub kind: OutcomeKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub capture: Option<Capture>,
    /// First crossing of the horizontal plane through the trap centre, s.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub arrival_time: Option<f64>,
    /// Simulated time at termination, s.
    pub end_time: f64,
    #[serde(skip)]
    pub trace: Option<Vec<KineticState>>,
}

impl TrajectoryOutcome {
    pub fn is_trapped(&self) -> bool {
        self.kind == OutcomeKind::Trapped
    }

    pub fn capture_time(&self) -> Option<f64> {
        self.capture.map(|c| c.time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Core,
    Halo,
    Far,
}

/// Adaptive trajectory driver.
///
/// The space around the trap is split into three regions:
///  - far: outside `far_field_radius` beam radii of the axis (or that many
///    Rayleigh ranges along it); exact free transitions with the trap force
///    neglected.
///  - halo: inside the far-field boundary but where the intensity envelope is
///    below [`CORE_ENVELOPE`]; exact transitions with the (weak) trap force
///    frozen over the step.
///  - core: Langevin stepping with `dt_fine`, shortened so a moving particle
///    takes at least 20 steps per quarter wavelength.
///
/// Exact steps are sized so the particle cannot reach the next inner region
/// within one step; when that leaves less than a few fine steps, a fine
/// Langevin step is taken instead.
pub struct Propagator {
    trap: OpticalTrap,
    lang: Langevin,
    cfg: PropagationConfig,
    dt_fine: f64,
    fine_ou: (f64, f64),
    z_r: f64,
    has_field: bool,
    launch_scale: f64,
}

impl Propagator {
    pub fn new(
        p: &Particle,
        g: &GasEnvironment,
        t: &TrapConfig,
        cfg: &PropagationConfig,
    ) -> Result<Self> {
        Self::with_langevin(p, t, Langevin::new(p, g), cfg)
    }

    pub fn with_langevin(
        p: &Particle,
        t: &TrapConfig,
        lang: Langevin,
        cfg: &PropagationConfig,
    ) -> Result<Self> {
        p.validate()?;
        t.validate()?;
        cfg.validate()?;
        let dt_fine = cfg.resolve_dt_fine(t, p)?;
        let trap = OpticalTrap::new(t, p);
        Ok(Self {
            has_field: trap.depth() > 0.0,
            trap,
            lang,
            cfg: *cfg,
            dt_fine,
            fine_ou: ou_coefficients(&lang, dt_fine),
            z_r: t.rayleigh_range(),
            launch_scale: 1e-3,
        })
    }

    pub fn dt_fine(&self) -> f64 {
        self.dt_fine
    }

    pub fn langevin(&self) -> &Langevin {
        &self.lang
    }

    fn classify(&self, pos: &Vector3<f64>) -> (Region, f64) {
        let t = &self.trap.config;
        let (axial, radial) = t.local_coordinates(pos);
        let rho = radial.norm();
        let zeta = axial / self.z_r;
        let one_plus = 1.0 + zeta * zeta;
        let w = t.waist * one_plus.sqrt();
        let r = self.cfg.far_field_radius;
        let outside = (rho - r * w).max(axial.abs() - r * self.z_r);
        if outside >= 0.0 || !self.has_field {
            // The boundary ρ = R w(z') has slope below R λ/(π w0); 0.9 keeps the
            // estimate conservative for any sensible geometry.
            return (Region::Far, 0.9 * outside.max(0.0));
        }
        let env_log = 2.0 * rho * rho / (w * w) + one_plus.ln();
        let core_log = -CORE_ENVELOPE.ln();
        if env_log <= core_log {
            return (Region::Core, 0.0);
        }
        let rho_core = w * ((core_log - one_plus.ln()).max(0.0) / 2.0).sqrt();
        (Region::Halo, 0.9 * (rho - rho_core))
    }

    /// Largest exact step (halving from `upper`) whose displacement stays
    /// within `limit`.
    fn free_step(
        &self,
        v: &Vector3<f64>,
        accel: &Vector3<f64>,
        limit: f64,
        upper: f64,
        floor: f64,
    ) -> (f64, FreeTransition) {
        let mut dt = upper;
        loop {
            let tr = FreeTransition::new(v, accel, &self.lang, dt);
            if tr.reach() <= limit || dt < floor {
                return (dt, tr);
            }
            dt *= 0.5;
        }
    }

    fn energy(&self, s: &KineticState) -> f64 {
        0.5 * self.lang.mass * s.velocity.norm_squared() + self.trap.potential(&s.position)
    }

    pub fn run<R: Rng + ?Sized>(&self, init: &KineticState, rng: &mut R) -> TrajectoryOutcome {
        let cfg = &self.cfg;
        let t = &self.trap.config;
        let center = t.center;
        let launch = (init.position - center).norm().max(self.launch_scale);
        let capture_dist = cfg.capture_radius * t.waist;
        let quarter_wave = t.wavelength / 4.0;

        let mut s = *init;
        let mut accel: Option<(Vector3<f64>, Vector3<f64>)> = None;
        let mut hold: Option<(i64, f64)> = None;
        let mut arrival = None;
        let mut steps: u64 = 0;
        // last accepted exact step; the next one starts its search at twice this
        let mut last_exact = f64::INFINITY;
        let mut trace = cfg.trace_decimation.map(|_| vec![s]);

        let finish = |kind, capture, s: &KineticState, arrival, trace: Option<Vec<KineticState>>| {
            TrajectoryOutcome {
                kind,
                capture,
                arrival_time: arrival,
                end_time: s.time,
                trace,
            }
        };

        loop {
            // capture bookkeeping on the current state
            if self.has_field {
                let site = t.nearest_antinode(&s.position);
                let near_site = (s.position - t.antinode_position(site)).norm() < capture_dist;
                let energy = if near_site { self.energy(&s) } else { 0.0 };
                if near_site && energy < 0.0 {
                    match hold {
                        Some((held, since)) if held == site => {
                            if s.time - since >= cfg.capture_hold_time {
                                if let Some(tr) = trace.as_mut() {
                                    tr.push(s);
                                }
                                let capture = Capture {
                                    time: s.time,
                                    site_index: site,
                                    site_intensity_fraction: t.site_intensity_fraction(site),
                                    energy,
                                };
                                return finish(OutcomeKind::Trapped, Some(capture), &s, arrival, trace);
                            }
                        }
                        _ => hold = Some((site, s.time)),
                    }
                } else {
                    hold = None;
                }
            }

            let rel = s.position - center;
            if rel.y < -launch || rel.y > 2.0 * launch || rel.x.abs() > 10.0 * launch || rel.z.abs() > 10.0 * launch
            {
                if let Some(tr) = trace.as_mut() {
                    tr.push(s);
                }
                return finish(OutcomeKind::Escaped, None, &s, arrival, trace);
            }
            let remaining = cfg.t_max - s.time;
            if remaining <= 0.0 {
                if let Some(tr) = trace.as_mut() {
                    tr.push(s);
                }
                return finish(OutcomeKind::TimedOut, None, &s, arrival, trace);
            }

            let prev = s;
            let speed = s.velocity.norm();
            let mut fine = self.dt_fine.min(remaining);
            if speed > 0.0 {
                fine = fine.min(quarter_wave / (20.0 * speed));
            }
            let (region, limit) = self.classify(&s.position);
            let exact = match region {
                Region::Core => None,
                Region::Far => {
                    let a = self.lang.gravity;
                    let (dt, tr) = self.free_step(&s.velocity, &a, limit, remaining.min(2.0 * last_exact), fine);
                    (dt >= 4.0 * fine || dt >= remaining).then_some((dt, tr))
                }
                Region::Halo => {
                    let a = self.trap.force(&s.position) / self.lang.mass + self.lang.gravity;
                    let (dt, tr) = self.free_step(&s.velocity, &a, limit, remaining.min(2.0 * last_exact), fine);
                    (dt >= 4.0 * fine || dt >= remaining).then_some((dt, tr))
                }
            };
            match exact {
                Some((dt, tr)) => {
                    tr.apply(&mut s, dt, rng);
                    accel = None;
                    last_exact = dt;
                }
                None => {
                    let dt = fine;
                    last_exact = last_exact.max(fine);
                    let a = match accel {
                        Some((pos, a)) if pos == s.position => a,
                        _ => self.trap.force(&s.position) / self.lang.mass + self.lang.gravity,
                    };
                    let (decay, sigma) = if dt == self.dt_fine {
                        self.fine_ou
                    } else {
                        ou_coefficients(&self.lang, dt)
                    };
                    let next = baoab(&mut s, a, &self.trap, &self.lang, dt, decay, sigma, rng);
                    accel = Some((s.position, next));
                }
            }
            steps += 1;

            if arrival.is_none() {
                let y0 = prev.position.y - center.y;
                let y1 = s.position.y - center.y;
                if y0 > 0.0 && y1 <= 0.0 {
                    arrival = Some(prev.time + (s.time - prev.time) * y0 / (y0 - y1));
                }
            }
            if let (Some(tr), Some(every)) = (trace.as_mut(), cfg.trace_decimation) {
                if steps % every as u64 == 0 {
                    tr.push(s);
                }
            }
        }
    }
}

/// Runs one launch event to completion.
pub fn propagate_trajectory<R: Rng + ?Sized>(
    init: &KineticState,
    p: &Particle,
    g: &GasEnvironment,
    t: &TrapConfig,
    cfg: &PropagationConfig,
    rng: &mut R,
) -> Result<TrajectoryOutcome> {
    Ok(Propagator::new(p, g, t, cfg)?.run(init, rng))
}

/// Writes a trace as CSV with header `t_s,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps`.
pub fn write_trace_csv<W: std::io::Write>(mut w: W, trace: &[KineticState]) -> std::io::Result<()> {
    writeln!(w, "t_s,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps")?;
    for s in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.time, s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y, s.velocity.z
        )?;
    }
    Ok(())
}
