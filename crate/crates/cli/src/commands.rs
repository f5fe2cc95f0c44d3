//! Subcommand bodies. Each returns the written artifacts and a summary line.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use liad::analysis::{arrival_times, lorentzian_fit, welch_psd, Histogram, LorentzianFit, TimeSeries};
use liad::dynamics::{
    write_trace_csv, Capture, KineticState, Langevin, LangevinIntegrator, OutcomeKind, TrajectoryOutcome,
};
use liad::montecarlo::{
    event_rng, run_sweep_with_progress, shot_outcome_statistics, EventSimulator, ShotModel, SimConfig,
    SweepParameter, SweepSpec,
};
use liad::physics::{damping_rate, trap_frequencies, OpticalTrap};
use serde::{Deserialize, Serialize};

use crate::{parse_band, parse_grid, CliError, Context, Format, ParamArg};

type Done = Result<(Vec<PathBuf>, String), CliError>;

const PROGRESS_CHUNK: u64 = 1000;

fn censoring_note(cfg: &SimConfig) -> String {
    format!(
        "t_max_s = {}: events neither captured nor escaped by then count as timeouts, so slow captures at high pressure are censored",
        cfg.propagation.t_max
    )
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// One line of a saved outcome table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub event: u64,
    #[serde(flatten)]
    pub outcome: TrajectoryOutcome,
}

pub const OUTCOME_CSV_HEADER: &str =
    "event,kind,arrival_time_s,capture_time_s,end_time_s,site_index,site_intensity_fraction,capture_energy_J";

fn kind_name(k: OutcomeKind) -> &'static str {
    match k {
        OutcomeKind::Trapped => "trapped",
        OutcomeKind::Escaped => "escaped",
        OutcomeKind::TimedOut => "timed_out",
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_outcomes_csv<W: Write>(mut w: W, records: &[OutcomeRecord]) -> std::io::Result<()> {
    writeln!(w, "{OUTCOME_CSV_HEADER}")?;
    for r in records {
        let o = &r.outcome;
        let c = o.capture.as_ref();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.event,
            kind_name(o.kind),
            opt(o.arrival_time),
            opt(c.map(|c| c.time)),
            o.end_time,
            opt(c.map(|c| c.site_index)),
            opt(c.map(|c| c.site_intensity_fraction)),
            opt(c.map(|c| c.energy)),
        )?;
    }
    Ok(())
}

pub fn read_outcomes(path: &Path) -> Result<Vec<OutcomeRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let fail = |why: String| CliError::Runtime(format!("{}: {why}", path.display()));
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| fail(e.to_string()));
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| fail(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != OUTCOME_CSV_HEADER {
        return Err(fail(format!("expected header `{OUTCOME_CSV_HEADER}`")));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| fail(e.to_string()))?;
        let at = |i: usize| row.get(i).unwrap_or("").trim();
        let bad = |col: &str| fail(format!("row {}: bad `{col}`", line + 1));
        let num = |i: usize, col: &str| -> Result<Option<f64>, CliError> {
            match at(i) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(col)),
            }
        };
        let kind = match at(1) {
            "trapped" => OutcomeKind::Trapped,
            "escaped" => OutcomeKind::Escaped,
            "timed_out" => OutcomeKind::TimedOut,
            _ => return Err(bad("kind")),
        };
        let capture = match num(3, "capture_time_s")? {
            Some(time) => Some(Capture {
                time,
                site_index: at(5).parse().map_err(|_| bad("site_index"))?,
                site_intensity_fraction: num(6, "site_intensity_fraction")?.ok_or_else(|| bad("site_intensity_fraction"))?,
                energy: num(7, "capture_energy_J")?.ok_or_else(|| bad("capture_energy_J"))?,
            }),
            None => None,
        };
        out.push(OutcomeRecord {
            event: at(0).parse().map_err(|_| bad("event"))?,
            outcome: TrajectoryOutcome {
                kind,
                capture,
                arrival_time: num(2, "arrival_time_s")?,
                end_time: num(4, "end_time_s")?.ok_or_else(|| bad("end_time_s"))?,
                trace: None,
            },
        });
    }
    Ok(out)
}

pub fn trajectory(ctx: &Context, first: u64, trace: bool, hold: Option<f64>) -> Done {
    let cfg = ctx.config.sim_config()?;
    if let Some(duration) = hold {
        return hold_in_trap(ctx, &cfg, first, duration);
    }
    let n = ctx.events_override.unwrap_or(1);
    let plain = EventSimulator::new(&cfg)?;
    let mut records = Vec::with_capacity(n as usize);
    let mut artifacts = Vec::new();
    let mut next = first;
    if trace {
        let mut traced = cfg.clone();
        traced.propagation.trace_decimation = Some(ctx.config.sim.trace_decimation);
        let o = EventSimulator::new(&traced)?.simulate(first);
        let path = ctx.path("trajectory_trace.csv");
        let mut w = create(&path)?;
        write_trace_csv(&mut w, o.trace.as_deref().unwrap_or(&[]))?;
        w.flush()?;
        artifacts.push(path);
        records.push(OutcomeRecord {
            event: first,
            outcome: TrajectoryOutcome { trace: None, ..o },
        });
        next += 1;
    }
    let end = first + n;
    while next < end {
        let stop = (next + PROGRESS_CHUNK).min(end);
        let chunk = plain.simulate_range(next..stop, ctx.workers)?;
        records.extend((next..stop).zip(chunk).map(|(event, outcome)| OutcomeRecord { event, outcome }));
        next = stop;
        if n > PROGRESS_CHUNK {
            eprintln!("[{}/{}] events", next - first, n);
        }
    }
    if ctx.writes(Format::Csv) {
        let path = ctx.path("trajectory_outcomes.csv");
        let mut w = create(&path)?;
        write_outcomes_csv(&mut w, &records)?;
        w.flush()?;
        artifacts.push(path);
    }
    if ctx.writes(Format::Json) {
        let path = ctx.path("trajectory_outcomes.json");
        write_json(&path, &records)?;
        artifacts.push(path);
    }
    let summary = if let [r] = records.as_slice() {
        let o = &r.outcome;
        match o.capture {
            Some(c) => format!(
                "event {}: trapped after {:.3} ms at site {} ({:.3} of peak intensity)",
                r.event,
                c.time * 1e3,
                c.site_index,
                c.site_intensity_fraction
            ),
            None => format!("event {}: {} at {:.4} s", r.event, kind_name(o.kind), o.end_time),
        }
    } else {
        let count = |k| records.iter().filter(|r| r.outcome.kind == k).count();
        let trapped = count(OutcomeKind::Trapped);
        format!(
            "{} events: {} trapped (p = {:.4}), {} escaped, {} timed out",
            records.len(),
            trapped,
            trapped as f64 / records.len() as f64,
            count(OutcomeKind::Escaped),
            count(OutcomeKind::TimedOut)
        )
    };
    let manifest = ctx.write_manifest("trajectory", "trajectory", &artifacts, vec![censoring_note(&cfg)])?;
    artifacts.push(manifest);
    Ok((artifacts, summary))
}

/// Thermal motion of a particle released at rest at the trap centre.
fn hold_in_trap(ctx: &Context, cfg: &SimConfig, event: u64, duration: f64) -> Done {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(CliError::argument("--hold-in-trap", "must be > 0"));
    }
    let dt = EventSimulator::new(cfg)?.propagator().dt_fine();
    let lang = Langevin::new(&cfg.particle, &cfg.gas);
    let mut it = LangevinIntegrator::new(OpticalTrap::new(&cfg.trap, &cfg.particle), lang, dt)?;
    let mut rng = event_rng(cfg.master_seed(), event, 0);
    let mut s = KineticState::at_rest(cfg.trap.center);
    let steps = (duration / dt).ceil() as u64;
    let decimation = u64::from(ctx.config.sim.trace_decimation);
    let mut samples = Vec::with_capacity((steps / decimation + 1) as usize);
    samples.push(s);
    let report = (steps / 10).max(1);
    for i in 1..=steps {
        it.step(&mut s, &mut rng);
        if i % decimation == 0 {
            samples.push(s);
        }
        if i % report == 0 {
            eprintln!("[{}%] {:.4} s simulated", 100 * i / steps, s.time);
        }
    }
    let path = ctx.path("trajectory_trace.csv");
    let mut w = create(&path)?;
    write_trace_csv(&mut w, &samples)?;
    w.flush()?;
    let rate = 1.0 / (dt * decimation as f64);
    let mut artifacts = vec![path];
    let notes = vec![format!(
        "released at rest at the trap centre; dt = {dt:e} s, every {decimation}th step recorded"
    )];
    artifacts.push(ctx.write_manifest("trajectory", "trajectory", &artifacts, notes)?);
    let summary = format!(
        "held {duration} s in the trap: {} samples at {:.4e} Hz",
        samples.len(),
        rate
    );
    Ok((artifacts, summary))
}

pub fn sweep(ctx: &Context, param: ParamArg, grid: &str, point_time_limit: Option<f64>) -> Done {
    let cfg = ctx.config.sim_config()?;
    let grid = parse_grid(grid)?;
    let parameter = match param {
        ParamArg::Pressure => SweepParameter::Pressure,
        ParamArg::Power => SweepParameter::Power,
        ParamArg::LaunchSpeed => SweepParameter::LaunchSpeed,
        ParamArg::SubstrateDistance => SweepParameter::SubstrateDistance,
    };
    if let Some(t) = point_time_limit {
        if !(t > 0.0) {
            return Err(CliError::argument("--point-time-limit", "must be > 0"));
        }
    }
    let mut spec = SweepSpec::new(parameter, grid, ctx.config.sim.events, cfg.clone());
    spec.workers = ctx.workers;
    spec.wall_clock_limit = point_time_limit;
    spec.validate().map_err(|e| CliError::argument("--grid", e))?;
    let points = spec.grid.len();
    let started = Instant::now();
    let result = run_sweep_with_progress(&spec, |k, p| {
        eprintln!(
            "[{}/{}] {} = {}: p = {:.4} ({}/{}){} [{:.1} s]",
            k + 1,
            points,
            parameter.name(),
            p.value,
            p.p,
            p.trapped,
            p.n,
            if p.complete { "" } else { " incomplete" },
            started.elapsed().as_secs_f64()
        );
    })?;
    let stem = format!("sweep_{}", param_stem(param));
    let mut artifacts = Vec::new();
    if ctx.writes(Format::Json) {
        let path = ctx.path(&format!("{stem}.json"));
        std::fs::write(&path, result.to_json() + "\n")?;
        artifacts.push(path);
    }
    if ctx.writes(Format::Csv) {
        let path = ctx.path(&format!("{stem}.csv"));
        let mut w = create(&path)?;
        result.write_csv(&mut w)?;
        w.flush()?;
        artifacts.push(path);
    }
    let mut notes = vec![censoring_note(&cfg)];
    let incomplete = result.points.iter().filter(|p| !p.complete).count();
    if incomplete > 0 {
        notes.push(format!("{incomplete} grid points stopped at the wall-clock limit"));
    }
    artifacts.push(ctx.write_manifest(&stem, "sweep", &artifacts, notes)?);
    let peak = result.peak().expect("validated grid is non-empty");
    let summary = format!(
        "{} sweep, {} points x {} events: peak p = {:.4} [{:.4}, {:.4}] at {} ({:.1} s)",
        parameter.name(),
        points,
        spec.events_per_point,
        peak.p,
        peak.ci_lo,
        peak.ci_hi,
        peak.value,
        started.elapsed().as_secs_f64()
    );
    Ok((artifacts, summary))
}

fn param_stem(p: ParamArg) -> &'static str {
    match p {
        ParamArg::Pressure => "pressure",
        ParamArg::Power => "power",
        ParamArg::LaunchSpeed => "launch_speed",
        ParamArg::SubstrateDistance => "substrate_distance",
    }
}

/// Reads `column` and `t_s` from a trace file.
fn read_trace_column(path: &Path, column: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let fail = |why: String| CliError::Runtime(format!("{}: {why}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| fail(e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let t_col = find("t_s").ok_or_else(|| fail("no `t_s` column".into()))?;
    let x_col = find(column).ok_or_else(|| {
        CliError::argument(
            "--column",
            format!("`{column}` not in {}; available: {}", path.display(), headers.iter().collect::<Vec<_>>().join(", ")),
        )
    })?;
    let (mut t, mut x) = (Vec::new(), Vec::new());
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| fail(e.to_string()))?;
        let get = |c: usize| -> Result<f64, CliError> {
            row.get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| fail(format!("row {}: unreadable value", i + 1)))
        };
        t.push(get(t_col)?);
        x.push(get(x_col)?);
    }
    Ok((t, x))
}

/// Samples on a uniform grid at the median spacing. Returns the series and
/// whether interpolation was needed.
fn uniform_series(t: &[f64], x: &[f64]) -> Result<(TimeSeries, bool), CliError> {
    if t.len() < 2 {
        return Err(CliError::Runtime("trace holds fewer than two samples".into()));
    }
    let mut dts: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if dts.iter().any(|d| !(*d > 0.0)) {
        return Err(CliError::Runtime("trace times are not strictly increasing".into()));
    }
    dts.sort_by(f64::total_cmp);
    let dt = dts[dts.len() / 2];
    let uniform = dts[0] >= dt * (1.0 - 1e-6) && dts[dts.len() - 1] <= dt * (1.0 + 1e-6);
    if uniform {
        return Ok((TimeSeries::new(1.0 / dt, x.to_vec())?, false));
    }
    let n = ((t[t.len() - 1] - t[0]) / dt).floor() as usize + 1;
    let mut j = 0;
    let samples = (0..n)
        .map(|i| {
            let ti = t[0] + i as f64 * dt;
            while j + 2 < t.len() && t[j + 1] < ti {
                j += 1;
            }
            let f = ((ti - t[j]) / (t[j + 1] - t[j])).clamp(0.0, 1.0);
            x[j] + f * (x[j + 1] - x[j])
        })
        .collect();
    Ok((TimeSeries::new(1.0 / dt, samples)?, true))
}

pub fn psd(
    ctx: &Context,
    input: &Path,
    column: &str,
    segment_length: usize,
    overlap: f64,
    band: Option<&str>,
) -> Done {
    let cfg = ctx.config.sim_config()?;
    if !(0.0..1.0).contains(&overlap) {
        return Err(CliError::argument("--overlap", "must lie in [0, 1)"));
    }
    if segment_length < 4 {
        return Err(CliError::argument("--segment-length", "must be >= 4"));
    }
    let explicit_band = band.map(parse_band).transpose()?;
    let (t, x) = read_trace_column(input, column)?;
    let (ts, resampled) = uniform_series(&t, &x)?;
    let est = welch_psd(&ts, segment_length, overlap)?;

    // Reference line for the trap axis the column belongs to.
    let (axial, radial, _) = trap_frequencies(&cfg.trap, &cfg.particle).unwrap_or((0.0, 0.0, 0.0));
    let coordinate = column.trim_start_matches('v').chars().next().unwrap_or('z');
    let omega = if coordinate == 'z' { axial } else { radial };
    let f_trap = omega / (2.0 * PI);
    let linewidth = damping_rate(&cfg.particle, &cfg.gas) / (2.0 * PI);
    let fit_band = explicit_band.unwrap_or((0.85 * f_trap, 1.1 * f_trap));

    let stem = format!("psd_{column}");
    let psd_path = ctx.path(&format!("{stem}.csv"));
    let mut w = create(&psd_path)?;
    est.write_csv(&mut w)?;
    w.flush()?;
    let mut artifacts = vec![psd_path];
    let mut notes = Vec::new();
    if resampled {
        notes.push("input times were not uniform; linearly resampled at the median spacing".into());
    }

    let fit = match lorentzian_fit(&est, fit_band) {
        Ok(f) => Some(f),
        Err(e) if explicit_band.is_some() => return Err(e.into()),
        Err(e) => {
            eprintln!("liadsim: no fit in the default band: {e}");
            notes.push(format!("fit skipped: {e}"));
            None
        }
    };
    #[derive(Serialize)]
    struct FitReport<'a> {
        input: String,
        column: &'a str,
        sample_rate_hz: f64,
        segments: usize,
        band_hz: (f64, f64),
        fit: Option<LorentzianFit>,
        trap_frequency_hz: f64,
        damping_linewidth_hz: f64,
    }
    let fit_path = ctx.path(&format!("{stem}_fit.json"));
    write_json(
        &fit_path,
        &FitReport {
            input: input.display().to_string(),
            column,
            sample_rate_hz: ts.sample_rate,
            segments: est.segments,
            band_hz: fit_band,
            fit,
            trap_frequency_hz: f_trap,
            damping_linewidth_hz: linewidth,
        },
    )?;
    artifacts.push(fit_path);
    artifacts.push(ctx.write_manifest(&stem, "psd", &artifacts, notes)?);
    let head = format!(
        "PSD of {column}: {} segments of {segment_length} at {:.4e} Hz",
        est.segments, ts.sample_rate
    );
    let summary = match fit {
        Some(f) => format!(
            "{head}; fit f0 = {:.1} Hz (trap {:.1} Hz), linewidth = {:.1} Hz (damping {:.1} Hz){}",
            f.center_frequency,
            f_trap,
            f.linewidth,
            linewidth,
            if f.converged { "" } else { ", not converged" }
        ),
        None => format!("{head}; no fit"),
    };
    Ok((artifacts, summary))
}

pub fn shots(ctx: &Context, lambda: f64, p: f64) -> Done {
    let model = ShotModel::new(lambda, p).map_err(|e| {
        let flag = match &e {
            liad::Error::InvalidParameter { name, .. } if name.starts_with("per_particle") => "--p",
            _ => "--lambda",
        };
        CliError::argument(flag, e)
    })?;
    let s = shot_outcome_statistics(&model);
    #[derive(Serialize)]
    struct Shots {
        lambda: f64,
        p: f64,
        p_none: f64,
        p_single: f64,
        p_multiple: f64,
        p_any: f64,
    }
    let row = Shots {
        lambda,
        p,
        p_none: s.p_none,
        p_single: s.p_single,
        p_multiple: s.p_multiple,
        p_any: s.p_any(),
    };
    let mut artifacts = Vec::new();
    if ctx.writes(Format::Json) {
        let path = ctx.path("shots.json");
        write_json(&path, &row)?;
        artifacts.push(path);
    }
    if ctx.writes(Format::Csv) {
        let path = ctx.path("shots.csv");
        std::fs::write(
            &path,
            format!(
                "lambda,p,p_none,p_single,p_multiple,p_any\n{},{},{},{},{},{}\n",
                row.lambda, row.p, row.p_none, row.p_single, row.p_multiple, row.p_any
            ),
        )?;
        artifacts.push(path);
    }
    artifacts.push(ctx.write_manifest("shots", "shots", &artifacts, Vec::new())?);
    let summary = format!(
        "lambda = {lambda}, p = {p}: P_none = {:.6}, P_single = {:.6}, P_multiple = {:.6}",
        s.p_none, s.p_single, s.p_multiple
    );
    Ok((artifacts, summary))
}

pub fn velocity(ctx: &Context, input: &Path, bin_width: Option<f64>) -> Done {
    let cfg = ctx.config.sim_config()?;
    if let Some(w) = bin_width {
        if !(w > 0.0) {
            return Err(CliError::argument("--bin-width", "must be > 0"));
        }
    }
    let outcomes: Vec<TrajectoryOutcome> = read_outcomes(input)?.into_iter().map(|r| r.outcome).collect();
    let times = arrival_times(&outcomes);
    if times.is_empty() {
        return Err(CliError::Runtime(format!("{}: no event reached the trap plane", input.display())));
    }
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = bin_width.unwrap_or(if hi > lo { (hi - lo) / 50.0 } else { hi * 1e-3 });
    let h = Histogram::from_values(&times, width)?;
    let d = cfg.substrate_distance;
    let mut speeds: Vec<f64> = times.iter().map(|t| d / t).collect();
    speeds.sort_by(f64::total_cmp);

    let mut artifacts = Vec::new();
    if ctx.writes(Format::Csv) {
        let path = ctx.path("velocity_arrivals.csv");
        let mut w = create(&path)?;
        writeln!(w, "t_lo_s,t_hi_s,count,v_hi_mps,v_lo_mps")?;
        for (i, c) in h.counts.iter().enumerate() {
            let (a, b) = (h.edges[i], h.edges[i + 1]);
            let v_hi = if a > 0.0 { (d / a).to_string() } else { String::new() };
            writeln!(w, "{a},{b},{c},{v_hi},{}", d / b)?;
        }
        w.flush()?;
        artifacts.push(path);
    }
    if ctx.writes(Format::Json) {
        #[derive(Serialize)]
        struct Report<'a> {
            events: usize,
            arrivals: usize,
            substrate_distance_m: f64,
            mean_arrival_s: f64,
            std_arrival_s: f64,
            median_speed_mps: f64,
            mean_speed_mps: f64,
            histogram: &'a Histogram,
        }
        let path = ctx.path("velocity.json");
        write_json(
            &path,
            &Report {
                events: outcomes.len(),
                arrivals: times.len(),
                substrate_distance_m: d,
                mean_arrival_s: h.mean,
                std_arrival_s: h.std_dev,
                median_speed_mps: speeds[speeds.len() / 2],
                mean_speed_mps: speeds.iter().sum::<f64>() / speeds.len() as f64,
                histogram: &h,
            },
        )?;
        artifacts.push(path);
    }
    let notes = vec![format!(
        "speeds are distance/arrival time with distance = {d} m; they equal launch speeds only for ballistic flight (mean free path well beyond the distance)"
    )];
    artifacts.push(ctx.write_manifest("velocity", "velocity", &artifacts, notes)?);
    let summary = format!(
        "{} of {} events arrived: median speed {:.3} m/s, mean arrival {:.4e} s",
        times.len(),
        outcomes.len(),
        speeds[speeds.len() / 2],
        h.mean
    );
    Ok((artifacts, summary))
}
