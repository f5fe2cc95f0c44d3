//! Launch sampling, seeded per-event simulation, parameter sweeps and shot
//! statistics.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma, LogNormal, WeightedIndex};
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{wilson_interval, Histogram};
use crate::dynamics::{KineticState, OutcomeKind, PropagationConfig, Propagator, TrajectoryOutcome};
use crate::error::{invalid, Error, Result};
use crate::physics::{GasEnvironment, Particle, TrapConfig};

pub const SWEEP_SCHEMA_VERSION: u32 = 1;

/// Default median launch speed, m/s. Not a measured value: chosen so that the
/// stopping distance u/Γ at about 1 mbar is comparable to the default
/// substrate distance.
pub const DEFAULT_LAUNCH_MEDIAN: f64 = 15.0;
pub const DEFAULT_LAUNCH_GEOMETRIC_SIGMA: f64 = 1.6;
pub const DEFAULT_SUBSTRATE_DISTANCE: f64 = 8e-3;

/// Launch speed distribution, m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedDistribution {
    Delta { speed: f64 },
    LogNormal { median: f64, geometric_sigma: f64 },
    Gamma { shape: f64, scale: f64 },
    /// Speeds are drawn at bin centres with probability proportional to the
    /// bin weight.
    Empirical { edges: Vec<f64>, weights: Vec<f64> },
}

impl SpeedDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Delta { speed } => {
                if !(*speed >= 0.0 && speed.is_finite()) {
                    return Err(invalid("speed", format!("must be >= 0, got {speed}")));
                }
            }
            Self::LogNormal { median, geometric_sigma } => {
                if !(*median > 0.0 && median.is_finite()) {
                    return Err(invalid("median", format!("must be > 0, got {median}")));
                }
                if !(*geometric_sigma >= 1.0 && geometric_sigma.is_finite()) {
                    return Err(invalid(
                        "geometric_sigma",
                        format!("must be >= 1, got {geometric_sigma}"),
                    ));
                }
            }
            Self::Gamma { shape, scale } => {
                if !(*shape > 0.0 && shape.is_finite()) {
                    return Err(invalid("shape", format!("must be > 0, got {shape}")));
                }
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(invalid("scale", format!("must be > 0, got {scale}")));
                }
            }
            Self::Empirical { edges, weights } => {
                if weights.is_empty() || edges.len() != weights.len() + 1 {
                    return Err(invalid(
                        "edges",
                        format!(
                            "need one more edge than weights, got {} edges and {} weights",
                            edges.len(),
                            weights.len()
                        ),
                    ));
                }
                if edges[0] < 0.0 || edges.iter().any(|e| !e.is_finite()) {
                    return Err(invalid("edges", "must be finite and >= 0"));
                }
                if edges.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("edges", "must be strictly increasing"));
                }
                if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                    return Err(invalid("weights", "must be finite and >= 0"));
                }
                if !(weights.iter().sum::<f64>() > 0.0) {
                    return Err(invalid("weights", "must not all be zero"));
                }
            }
        }
        Ok(())
    }

    /// Median of the distribution (exact except for Gamma, where the
    /// Wilson–Hilferty approximation is used).
    pub fn nominal_speed(&self) -> f64 {
        match self {
            Self::Delta { speed } => *speed,
            Self::LogNormal { median, .. } => *median,
            Self::Gamma { shape, scale } => shape * scale * (1.0 - 1.0 / (9.0 * shape)).powi(3),
            Self::Empirical { edges, weights } => {
                let total: f64 = weights.iter().sum();
                let mut acc = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if acc >= 0.5 * total {
                        return 0.5 * (edges[i] + edges[i + 1]);
                    }
                }
                0.5 * (edges[edges.len() - 2] + edges[edges.len() - 1])
            }
        }
    }

    /// Cumulative distribution function of the speed.
    pub fn cdf(&self, v: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Gamma as SGamma, LogNormal as SLogNormal};
        match self {
            Self::Delta { speed } => {
                if v >= *speed {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LogNormal { median, geometric_sigma } => {
                if v <= 0.0 {
                    return 0.0;
                }
                if *geometric_sigma == 1.0 {
                    return if v >= *median { 1.0 } else { 0.0 };
                }
                SLogNormal::new(median.ln(), geometric_sigma.ln())
                    .map(|d| d.cdf(v))
                    .unwrap_or(f64::NAN)
            }
            Self::Gamma { shape, scale } => SGamma::new(*shape, 1.0 / scale)
                .map(|d| d.cdf(v.max(0.0)))
                .unwrap_or(f64::NAN),
            Self::Empirical { edges, weights } => {
                let total: f64 = weights.iter().sum();
                let below: f64 = weights
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| 0.5 * (edges[*i] + edges[i + 1]) <= v)
                    .map(|(_, w)| w)
                    .sum();
                below / total
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Delta { speed } => *speed,
            Self::LogNormal { median, geometric_sigma } => LogNormal::new(median.ln(), geometric_sigma.ln())
                .expect("validated log-normal")
                .sample(rng),
            Self::Gamma { shape, scale } => Gamma::new(*shape, *scale).expect("validated gamma").sample(rng),
            Self::Empirical { edges, weights } => {
                let i = WeightedIndex::new(weights).expect("validated weights").sample(rng);
                0.5 * (edges[i] + edges[i + 1])
            }
        }
    }
}

/// Launch velocity distribution: a speed law and a direction cone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaunchDistribution {
    pub speed: SpeedDistribution,
    pub direction: Vector3<f64>,
    /// Half-angle of the cone around `direction`, rad.
    pub transverse_spread: f64,
}

impl Default for LaunchDistribution {
    fn default() -> Self {
        Self {
            speed: SpeedDistribution::LogNormal {
                median: DEFAULT_LAUNCH_MEDIAN,
                geometric_sigma: DEFAULT_LAUNCH_GEOMETRIC_SIGMA,
            },
            direction: Vector3::new(0.0, -1.0, 0.0),
            transverse_spread: 0.0,
        }
    }
}

impl LaunchDistribution {
    pub fn delta(speed: f64) -> Self {
        Self {
            speed: SpeedDistribution::Delta { speed },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.speed.validate()?;
        let n = self.direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid("direction", "must be a non-zero finite vector"));
        }
        if !(self.transverse_spread >= 0.0 && self.transverse_spread < 0.5 * PI) {
            return Err(invalid(
                "transverse_spread",
                format!("must lie in [0, π/2), got {}", self.transverse_spread),
            ));
        }
        Ok(())
    }

    /// A velocity drawn from the distribution, uniform over the solid angle
    /// of the cone.
    pub fn sample_velocity<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        let speed = self.speed.sample(rng);
        let axis = self.direction.normalize();
        if self.transverse_spread == 0.0 {
            return axis * speed;
        }
        let cos_max = self.transverse_spread.cos();
        let cos_t = 1.0 - rng.gen::<f64>() * (1.0 - cos_max);
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let phi = 2.0 * PI * rng.gen::<f64>();
        let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = axis.cross(&helper).normalize();
        let e2 = axis.cross(&e1);
        (axis * cos_t + (e1 * phi.cos() + e2 * phi.sin()) * sin_t) * speed
    }
}

/// Initial state of a launched particle: `substrate_distance` above the trap
/// centre with a velocity drawn from `d`.
pub fn sample_launch<R: Rng + ?Sized>(
    d: &LaunchDistribution,
    substrate_distance: f64,
    trap_center: &Vector3<f64>,
    rng: &mut R,
) -> KineticState {
    KineticState::new(
        trap_center + Vector3::y() * substrate_distance,
        d.sample_velocity(rng),
    )
}

/// Everything needed to simulate one launch event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub particle: Particle,
    pub gas: GasEnvironment,
    pub trap: TrapConfig,
    pub launch: LaunchDistribution,
    /// Height of the substrate above the trap centre, m.
    pub substrate_distance: f64,
    /// Propagation settings; `rng_seed` is the master seed.
    pub propagation: PropagationConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            particle: Particle::default(),
            gas: GasEnvironment::default(),
            trap: TrapConfig::default(),
            launch: LaunchDistribution::default(),
            substrate_distance: DEFAULT_SUBSTRATE_DISTANCE,
            propagation: PropagationConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.particle.validate()?;
        self.gas.validate()?;
        self.trap.validate()?;
        self.launch.validate()?;
        if !(self.substrate_distance > 0.0 && self.substrate_distance.is_finite()) {
            return Err(invalid(
                "substrate_distance",
                format!("must be > 0, got {}", self.substrate_distance),
            ));
        }
        self.propagation.validate()?;
        self.propagation.resolve_dt_fine(&self.trap, &self.particle)?;
        Ok(())
    }

    pub fn master_seed(&self) -> u64 {
        self.propagation.rng_seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.propagation.rng_seed = seed;
        self
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-event generator seed. Depends only on its arguments, so results do
/// not depend on which thread runs which event.
pub fn event_seed(master_seed: u64, event_index: u64, parameter_index: u64) -> u64 {
    let h = splitmix64(master_seed);
    let h = splitmix64(h ^ event_index);
    splitmix64(h ^ parameter_index.rotate_left(32))
}

pub fn event_rng(master_seed: u64, event_index: u64, parameter_index: u64) -> Pcg64Mcg {
    Pcg64Mcg::seed_from_u64(event_seed(master_seed, event_index, parameter_index))
}

/// A validated configuration with its propagator built once.
pub struct EventSimulator {
    cfg: SimConfig,
    propagator: Propagator,
    parameter_index: u64,
}

impl EventSimulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        Self::for_parameter(cfg, 0)
    }

    fn for_parameter(cfg: &SimConfig, parameter_index: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            propagator: Propagator::new(&cfg.particle, &cfg.gas, &cfg.trap, &cfg.propagation)?,
            cfg: cfg.clone(),
            parameter_index,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn launch_state(&self, event_index: u64) -> (KineticState, Pcg64Mcg) {
        let mut rng = event_rng(self.cfg.master_seed(), event_index, self.parameter_index);
        let init = sample_launch(
            &self.cfg.launch,
            self.cfg.substrate_distance,
            &self.cfg.trap.center,
            &mut rng,
        );
        (init, rng)
    }

    pub fn simulate(&self, event_index: u64) -> TrajectoryOutcome {
        let (init, mut rng) = self.launch_state(event_index);
        self.propagator.run(&init, &mut rng)
    }

    /// Simulates a contiguous range of events; the output order follows the
    /// event index whatever the thread count.
    pub fn simulate_range(&self, events: std::ops::Range<u64>, workers: usize) -> Result<Vec<TrajectoryOutcome>> {
        with_pool(workers, || events.into_par_iter().map(|i| self.simulate(i)).collect())
    }
}

/// Simulates a single launch event. Pure function of `(cfg, event_index)`.
pub fn simulate_launch_event(cfg: &SimConfig, event_index: u64) -> Result<TrajectoryOutcome> {
    Ok(EventSimulator::new(cfg)?.simulate(event_index))
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(invalid("workers", "must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Configuration(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Gas pressure, mbar.
    Pressure,
    /// Total trap power, W.
    Power,
    /// Launch speed, m/s. Replaces the launch distribution with a delta.
    LaunchSpeed,
    /// Substrate height above the trap, m.
    SubstrateDistance,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pressure => "pressure_mbar",
            Self::Power => "power_w",
            Self::LaunchSpeed => "launch_speed_mps",
            Self::SubstrateDistance => "substrate_distance_m",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(&self, base: &SimConfig, value: f64) -> SimConfig {
        let mut cfg = base.clone();
        match self {
            Self::Pressure => cfg.gas = cfg.gas.with_pressure_mbar(value),
            Self::Power => cfg.trap.total_power = value,
            Self::LaunchSpeed => cfg.launch.speed = SpeedDistribution::Delta { speed: value },
            Self::SubstrateDistance => cfg.substrate_distance = value,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    pub events_per_point: u64,
    pub base_config: SimConfig,
    pub master_seed: u64,
    /// Threads used for the events; never changes the result.
    #[serde(skip, default = "default_workers")]
    pub workers: usize,
    /// Wall-clock budget per grid point, s. A point that exhausts it is
    /// reported with fewer events and `complete = false`.
    #[serde(skip)]
    pub wall_clock_limit: Option<f64>,
}

fn default_workers() -> usize {
    1
}

impl SweepSpec {
    pub fn new(parameter: SweepParameter, grid: Vec<f64>, events_per_point: u64, base_config: SimConfig) -> Self {
        let master_seed = base_config.master_seed();
        Self {
            parameter,
            grid,
            events_per_point,
            base_config,
            master_seed,
            workers: 1,
            wall_clock_limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(invalid("grid", "must not be empty"));
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid", "values must be finite"));
        }
        let up = self.grid.windows(2).all(|w| w[1] > w[0]);
        let down = self.grid.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(invalid("grid", "must be strictly monotone"));
        }
        if self.events_per_point == 0 {
            return Err(invalid("events_per_point", "must be >= 1"));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be >= 1"));
        }
        if let Some(limit) = self.wall_clock_limit {
            if !(limit > 0.0) {
                return Err(invalid("wall_clock_limit", format!("must be > 0, got {limit}")));
            }
        }
        for v in &self.grid {
            self.point_config(*v).validate()?;
        }
        Ok(())
    }

    fn point_config(&self, value: f64) -> SimConfig {
        self.parameter
            .apply(&self.base_config, value)
            .with_seed(self.master_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// Events actually simulated.
    pub n: u64,
    pub trapped: u64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_capture_time_s: Option<f64>,
    pub timeouts: u64,
    pub escaped: u64,
    pub complete: bool,
}

impl SweepPoint {
    fn from_outcomes(value: f64, outcomes: &[TrajectoryOutcome], complete: bool) -> Result<Self> {
        let n = outcomes.len() as u64;
        let mut trapped = 0;
        let mut timeouts = 0;
        let mut escaped = 0;
        let mut capture_sum = 0.0;
        for o in outcomes {
            match o.kind {
                OutcomeKind::Trapped => {
                    trapped += 1;
                    capture_sum += o.capture_time().unwrap_or(o.end_time);
                }
                OutcomeKind::TimedOut => timeouts += 1,
                OutcomeKind::Escaped => escaped += 1,
            }
        }
        let (ci_lo, ci_hi) = wilson_interval(trapped, n, 0.95)?;
        Ok(Self {
            value,
            n,
            trapped,
            p: trapped as f64 / n as f64,
            ci_lo,
            ci_hi,
            mean_capture_time_s: (trapped > 0).then(|| capture_sum / trapped as f64),
            timeouts,
            escaped,
            complete,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub parameter: SweepParameter,
    pub events_per_point: u64,
    pub seed: u64,
    pub config: SimConfig,
    pub points: Vec<SweepPoint>,
}

const SWEEP_CHUNK: u64 = 512;

/// Runs every grid point of `spec`.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    run_sweep_with_progress(spec, |_, _| {})
}

/// As [`run_sweep`], calling `progress(point_index, point)` after each point.
pub fn run_sweep_with_progress<F: FnMut(usize, &SweepPoint)>(spec: &SweepSpec, mut progress: F) -> Result<SweepResult> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Configuration(format!("cannot start worker pool: {e}")))?;
    let mut points = Vec::with_capacity(spec.grid.len());
    for (k, value) in spec.grid.iter().enumerate() {
        let sim = EventSimulator::for_parameter(&spec.point_config(*value), k as u64)?;
        let started = Instant::now();
        let mut outcomes = Vec::with_capacity(spec.events_per_point as usize);
        let mut next = 0;
        let mut complete = true;
        while next < spec.events_per_point {
            let end = (next + SWEEP_CHUNK).min(spec.events_per_point);
            let chunk: Vec<TrajectoryOutcome> =
                pool.install(|| (next..end).into_par_iter().map(|i| sim.simulate(i)).collect());
            outcomes.extend(chunk);
            next = end;
            if let Some(limit) = spec.wall_clock_limit {
                if next < spec.events_per_point && started.elapsed().as_secs_f64() > limit {
                    complete = false;
                    break;
                }
            }
        }
        let point = SweepPoint::from_outcomes(*value, &outcomes, complete)?;
        progress(k, &point);
        points.push(point);
    }
    Ok(SweepResult {
        schema_version: SWEEP_SCHEMA_VERSION,
        parameter: spec.parameter,
        events_per_point: spec.events_per_point,
        seed: spec.master_seed,
        config: spec.base_config.clone().with_seed(spec.master_seed),
        points,
    })
}

impl SweepResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep result serializes")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "value,n,trapped,p,ci_lo,ci_hi,mean_capture_time_s,timeouts,escaped,complete"
        )?;
        for p in &self.points {
            let mct = p.mean_capture_time_s.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                p.value, p.n, p.trapped, p.p, p.ci_lo, p.ci_hi, mct, p.timeouts, p.escaped, p.complete
            )?;
        }
        Ok(())
    }

    /// Grid point with the largest capture probability (first on ties).
    pub fn peak(&self) -> Option<&SweepPoint> {
        self.points
            .iter()
            .fold(None, |best: Option<&SweepPoint>, p| match best {
                Some(b) if b.p >= p.p => Some(b),
                _ => Some(p),
            })
    }
}

/// Particles per shot and per-particle capture probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotModel {
    pub mean_particles_per_shot: f64,
    pub per_particle_capture_probability: f64,
}

impl ShotModel {
    pub fn new(lambda: f64, p: f64) -> Result<Self> {
        let m = Self {
            mean_particles_per_shot: lambda,
            per_particle_capture_probability: p,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.mean_particles_per_shot;
        if !(l >= 0.0 && l.is_finite()) {
            return Err(invalid("mean_particles_per_shot", format!("must be >= 0, got {l}")));
        }
        let p = self.per_particle_capture_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(
                "per_particle_capture_probability",
                format!("must lie in [0, 1], got {p}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotStatistics {
    pub p_none: f64,
    pub p_single: f64,
    pub p_multiple: f64,
}

impl ShotStatistics {
    /// Probability that a shot loads at least one particle.
    pub fn p_any(&self) -> f64 {
        self.p_single + self.p_multiple
    }
}

/// Outcome probabilities of one shot: the trapped count is Poisson with
/// mean λp.
pub fn shot_outcome_statistics(m: &ShotModel) -> ShotStatistics {
    let mu = m.mean_particles_per_shot * m.per_particle_capture_probability;
    let e = (-mu).exp();
    let p_single = mu * e;
    // 1 − e^{−μ} − μe^{−μ}, without cancellation at small μ
    let p_multiple = (-(-mu).exp_m1() - p_single).max(0.0);
    ShotStatistics {
        p_none: e,
        p_single,
        p_multiple,
    }
}

pub const DEFAULT_SIGNAL_BIN_WIDTH: f64 = 0.02;

/// Histogram of detector signal amplitudes of trapped particles, with the
/// amplitude taken proportional to the peak intensity at the capture site.
pub fn capture_site_signal(outcomes: &[TrajectoryOutcome], bin_width: f64) -> Result<Histogram> {
    let amplitudes: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.capture.map(|c| c.site_intensity_fraction))
        .collect();
    if amplitudes.is_empty() {
        return Err(Error::InsufficientData("no trapped outcomes".into()));
    }
    Histogram::from_values(&amplitudes, bin_width)
}
