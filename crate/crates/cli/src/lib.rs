//! `liadsim`: command-line front end for the LIAD trap-loading simulator.
//!
//! Data goes to files in the output directory, progress to standard error
//! and a one-line summary to standard output. Exit codes: 0 success,
//! 1 runtime failure, 2 usage or configuration error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;

/// Environment variable that replaces the default output directory.
pub const OUT_DIR_ENV: &str = "LIADSIM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "liadsim-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) | CliError::Config { .. } => 2,
        }
    }

    /// An invalid command-line argument value.
    pub fn argument(flag: &str, reason: impl std::fmt::Display) -> Self {
        CliError::Config {
            key: flag.to_string(),
            reason: reason.to_string(),
        }
    }
}

impl From<liad::Error> for CliError {
    fn from(e: liad::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "liadsim", version, about = "Monte Carlo loading of an optical standing-wave trap by LIAD")]
pub struct Cli {
    /// Run configuration (TOML). Omitted keys take their documented defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `sim.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: $LIADSIM_OUT_DIR or ./liadsim-out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Launch events; overrides `sim.events` (sweeps) or the single event of `trajectory`.
    #[arg(long, global = true)]
    pub events: Option<u64>,
    /// Worker threads. Changes wall time only, never the output.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Write only this format where both CSV and JSON are available.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Simulation time limit per event in s; overrides `sim.t_max_s`.
    #[arg(long = "t-max", global = true, value_name = "SECONDS")]
    pub t_max: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamArg {
    Pressure,
    Power,
    LaunchSpeed,
    SubstrateDistance,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate launch events one by one; one event unless --events is given.
    Trajectory {
        /// Index of the first event (selects its random stream).
        #[arg(long, default_value_t = 0)]
        event: u64,
        /// Write the decimated trajectory of the first event.
        #[arg(long)]
        trace: bool,
        /// Start at rest at the trap centre and record for this long instead of launching.
        #[arg(long, value_name = "SECONDS")]
        hold_in_trap: Option<f64>,
    },
    /// Capture probability over a parameter grid.
    Sweep {
        #[arg(long, value_enum)]
        param: ParamArg,
        /// `start:stop:log|lin:count` or a comma-separated list, in the
        /// parameter's file units (mbar, W, m/s, m).
        #[arg(long)]
        grid: String,
        /// Stop a grid point after this much wall time and mark it incomplete.
        #[arg(long, value_name = "SECONDS")]
        point_time_limit: Option<f64>,
    },
    /// Welch spectrum of one trace column, with an oscillator fit.
    Psd {
        #[arg(long, value_name = "TRACE_CSV")]
        input: PathBuf,
        #[arg(long, default_value = "z_m")]
        column: String,
        #[arg(long, default_value_t = 8192)]
        segment_length: usize,
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        /// Fit band `lo:hi` in Hz [default: 0.85–1.1 × the trap frequency for the column].
        #[arg(long)]
        band: Option<String>,
    },
    /// Per-shot loading probabilities for Poisson-distributed particle numbers.
    Shots {
        /// Mean number of particles launched per shot.
        #[arg(long)]
        lambda: f64,
        /// Single-particle capture probability.
        #[arg(long)]
        p: f64,
    },
    /// Arrival-time histogram and implied launch speeds from saved outcomes.
    Velocity {
        #[arg(long, value_name = "OUTCOMES")]
        input: PathBuf,
        /// Arrival-time bin width in s [default: range/50].
        #[arg(long, value_name = "SECONDS")]
        bin_width: Option<f64>,
    },
}

/// Result of one invocation.
#[derive(Debug)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

/// Shared state for a subcommand run.
pub struct Context {
    pub argv: Vec<String>,
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub format: Option<Format>,
    pub events_override: Option<u64>,
    started: Instant,
}

impl Context {
    pub fn writes(&self, f: Format) -> bool {
        self.format.map_or(true, |only| only == f)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Writes `<stem>.manifest.json` next to the artifacts.
    pub fn write_manifest(
        &self,
        stem: &str,
        subcommand: &str,
        artifacts: &[PathBuf],
        notes: Vec<String>,
    ) -> Result<PathBuf, CliError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool: &'static str,
            version: &'static str,
            command: &'a [String],
            subcommand: &'a str,
            seed: u64,
            workers: usize,
            config: &'a RunConfig,
            config_toml: String,
            wall_time_s: f64,
            artifacts: Vec<String>,
            notes: Vec<String>,
        }
        let m = Manifest {
            tool: "liadsim",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.argv,
            subcommand,
            seed: self.config.sim.seed,
            workers: self.workers,
            config: &self.config,
            config_toml: self.config.to_toml(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
            notes,
        };
        let path = self.path(&format!("{stem}.manifest.json"));
        let json = serde_json::to_string_pretty(&m).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Usage and
/// help text go to standard error or standard output as clap prints them.
pub fn run<I, T>(argv: I) -> CommandOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 2 } else { 0 };
            return CommandOutcome {
                exit_code: code,
                artifacts: Vec::new(),
                summary: String::new(),
            };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok((artifacts, summary)) => CommandOutcome {
            exit_code: 0,
            artifacts,
            summary,
        },
        Err(e) => {
            eprintln!("liadsim: {e}");
            CommandOutcome {
                exit_code: e.exit_code(),
                artifacts: Vec::new(),
                summary: String::new(),
            }
        }
    }
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<(Vec<PathBuf>, String), CliError> {
    let started = Instant::now();
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.sim.seed = seed;
    }
    if let Some(events) = cli.events {
        config.sim.events = events;
    }
    if let Some(t) = cli.t_max {
        config.sim.t_max_s = t;
    }
    config.sim_config()?;
    let workers = match cli.workers {
        Some(0) => return Err(CliError::argument("--workers", "must be >= 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let out_dir = resolve_out_dir(cli.out_dir.as_deref());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let ctx = Context {
        argv,
        config,
        out_dir,
        workers,
        format: cli.format,
        events_override: cli.events,
        started,
    };
    match cli.command {
        Command::Trajectory {
            event,
            trace,
            hold_in_trap,
        } => commands::trajectory(&ctx, event, trace, hold_in_trap),
        Command::Sweep {
            param,
            grid,
            point_time_limit,
        } => commands::sweep(&ctx, param, &grid, point_time_limit),
        Command::Psd {
            input,
            column,
            segment_length,
            overlap,
            band,
        } => commands::psd(&ctx, &input, &column, segment_length, overlap, band.as_deref()),
        Command::Shots { lambda, p } => commands::shots(&ctx, lambda, p),
        Command::Velocity { input, bin_width } => commands::velocity(&ctx, &input, bin_width),
    }
}

fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

/// Parses `start:stop:log|lin:count` or `a,b,c`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::argument("--grid", format!("{why} in `{spec}`"));
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [start, stop, scale, count] => {
            let (a, b) = (number(start)?, number(stop)?);
            let n: usize = count.trim().parse().map_err(|_| bad("count is not a positive integer"))?;
            if n == 0 {
                return Err(bad("count must be >= 1"));
            }
            let at = |i: usize| if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            match scale.trim() {
                "lin" => Ok((0..n).map(|i| a + (b - a) * at(i)).collect()),
                "log" => {
                    if !(a > 0.0 && b > 0.0) {
                        return Err(bad("log grid needs positive bounds"));
                    }
                    let (la, lb) = (a.log10(), b.log10());
                    Ok((0..n).map(|i| 10f64.powf(la + (lb - la) * at(i))).collect())
                }
                other => Err(bad(&format!("scale `{other}` is neither log nor lin"))),
            }
        }
        [list] => list.split(',').map(number).collect(),
        _ => Err(bad("expected start:stop:log|lin:count or a comma-separated list")),
    }
}

/// Parses `lo:hi`.
pub fn parse_band(spec: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::argument("--band", format!("expected lo:hi in Hz, got `{spec}`"));
    let (lo, hi) = spec.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
        return Err(bad());
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_hits_decades() {
        let g = parse_grid("0.01:100:log:13").unwrap();
        assert_eq!(g.len(), 13);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert!((g[6] - 1.0).abs() < 1e-12);
        assert!((g[12] - 100.0).abs() < 1e-10);
    }

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("1:3:lin:3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("0.5,1,2").unwrap(), vec![0.5, 1.0, 2.0]);
        assert_eq!(parse_grid("7:7:log:1").unwrap(), vec![7.0]);
        for bad in ["", "1:2:cubic:3", "0:1:log:3", "1:2:lin:0", "a,b", "1:2:3"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn band_parsing() {
        assert_eq!(parse_band("100:200").unwrap(), (100.0, 200.0));
        assert!(parse_band("200:100").is_err());
        assert!(parse_band("100").is_err());
    }
}
