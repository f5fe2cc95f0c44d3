//! Post-processing of simulated or measured data: Welch spectra, damped
//! oscillator fits, arrival-time histograms and binomial intervals.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix4, Vector4};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dynamics::TrajectoryOutcome;
use crate::error::{invalid, Error, Result};

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(sample_rate: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(invalid("sample_rate", format!("must be > 0, got {sample_rate}")));
        }
        if samples.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "time series needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Hann,
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub frequencies: Vec<f64>,
    pub densities: Vec<f64>,
    pub segment_length: usize,
    pub overlap_fraction: f64,
    pub window: Window,
    pub segments: usize,
}

impl PsdEstimate {
    pub fn resolution(&self) -> f64 {
        self.frequencies[1] - self.frequencies[0]
    }

    /// Σ S(f) Δf — the mean-square of the windowed signal.
    pub fn integral(&self) -> f64 {
        self.densities.iter().sum::<f64>() * self.resolution()
    }

    /// CSV with a comment header recording the estimator settings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# window=hann segment_length={} overlap={} segments={}",
            self.segment_length, self.overlap_fraction, self.segments
        )?;
        writeln!(w, "f_hz,psd")?;
        for (f, s) in self.frequencies.iter().zip(&self.densities) {
            writeln!(w, "{f},{s}")?;
        }
        Ok(())
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch estimate with a periodic Hann window, scaled so that the integral
/// over frequency equals the mean-square of the signal.
pub fn welch_psd(ts: &TimeSeries, segment_length: usize, overlap_fraction: f64) -> Result<PsdEstimate> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(invalid(
            "overlap_fraction",
            format!("must lie in [0, 1), got {overlap_fraction}"),
        ));
    }
    if segment_length < 4 {
        return Err(invalid("segment_length", format!("must be >= 4, got {segment_length}")));
    }
    if segment_length > ts.len() {
        return Err(Error::InsufficientData(format!(
            "series of {} samples is shorter than one segment ({segment_length})",
            ts.len()
        )));
    }
    let n = segment_length;
    let step = ((n as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let window = hann(n);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut segments = 0;
    let mut start = 0;
    while start + n <= ts.len() {
        for ((b, x), w) in buf.iter_mut().zip(&ts.samples[start..start + n]).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (ts.sample_rate * window_power * segments as f64);
    let densities = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let df = ts.sample_rate / n as f64;
    Ok(PsdEstimate {
        frequencies: (0..bins).map(|k| k as f64 * df).collect(),
        densities,
        segment_length: n,
        overlap_fraction,
        window: Window::Hann,
        segments,
    })
}

/// Damped-oscillator displacement spectrum `A/((f0²−f²)² + (γf)²) + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    #[serde(rename = "f0_hz")]
    pub center_frequency: f64,
    /// Full width γ, Hz. Equals Γ/2π for a gas-damped oscillator.
    #[serde(rename = "linewidth_hz")]
    pub linewidth: f64,
    pub amplitude: f64,
    pub plateau: f64,
    /// RMS of the relative residuals over the fitted band.
    pub residual: f64,
    pub converged: bool,
}

impl LorentzianFit {
    pub fn evaluate(&self, f: f64) -> f64 {
        oscillator_psd(self.amplitude, self.center_frequency, self.linewidth, self.plateau, f)
    }
}

pub fn oscillator_psd(amplitude: f64, f0: f64, linewidth: f64, plateau: f64, f: f64) -> f64 {
    let d = f0 * f0 - f * f;
    amplitude / (d * d + linewidth * linewidth * f * f) + plateau
}

const MIN_FIT_BINS: usize = 10;
const MAX_FIT_ITERATIONS: usize = 500;

/// Least-squares fit of the damped-oscillator spectrum over `band`, with
/// residuals weighted by the data (relative error per bin).
pub fn lorentzian_fit(psd: &PsdEstimate, band: (f64, f64)) -> Result<LorentzianFit> {
    let (lo, hi) = band;
    if !(lo < hi) {
        return Err(invalid("band", format!("expected f_lo < f_hi, got ({lo}, {hi})")));
    }
    let pts: Vec<(f64, f64)> = psd
        .frequencies
        .iter()
        .zip(&psd.densities)
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(f, s)| (*f, *s))
        .collect();
    if pts.len() < MIN_FIT_BINS {
        return Err(Error::InsufficientData(format!(
            "band ({lo}, {hi}) Hz holds {} bins, need {MIN_FIT_BINS}",
            pts.len()
        )));
    }
    if pts.iter().any(|(_, s)| !(*s > 0.0)) {
        return Err(Error::InsufficientData("band contains non-positive densities".into()));
    }

    // Initial guess from the peak bin and its half-maximum width.
    let (ipk, &(fpk, speak)) = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .unwrap();
    let mut edge: Vec<f64> = pts.iter().map(|p| p.1).collect();
    edge.sort_by(f64::total_cmp);
    let floor = edge[edge.len() / 10];
    let half = floor + 0.5 * (speak - floor);
    let left = pts[..ipk].iter().rev().find(|p| p.1 < half).map_or(pts[0].0, |p| p.0);
    let right = pts[ipk..].iter().find(|p| p.1 < half).map_or(pts[pts.len() - 1].0, |p| p.0);
    let df = psd.resolution();
    let width = (right - left).max(df);
    let height = (speak - floor).max(speak * 1e-3);
    // parameters: [ln A, f0, ln γ, B]
    let mut params = Vector4::new(
        (height * (width * fpk).powi(2)).ln(),
        fpk,
        width.ln(),
        floor.max(0.0),
    );

    let model = |p: &Vector4<f64>, f: f64| oscillator_psd(p[0].exp(), p[1], p[2].exp(), p[3], f);
    let cost = |p: &Vector4<f64>| -> f64 {
        pts.iter()
            .map(|(f, s)| {
                let r = model(p, *f) / s - 1.0;
                r * r
            })
            .sum()
    };

    let mut lambda = 1e-3;
    let mut current = cost(&params);
    let mut converged = false;
    for _ in 0..MAX_FIT_ITERATIONS {
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (f, s) in &pts {
            let a = params[0].exp();
            let f0 = params[1];
            let g = params[2].exp();
            let d = f0 * f0 - f * f;
            let den = d * d + g * g * f * f;
            let lor = a / den;
            let r = (lor + params[3]) / s - 1.0;
            let jac = Vector4::new(
                lor,
                -lor / den * 4.0 * d * f0,
                -lor / den * 2.0 * g * g * f * f,
                1.0,
            ) / *s;
            jtj += jac * jac.transpose();
            jtr += jac * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for i in 0..4 {
                damped[(i, i)] *= 1.0 + lambda;
                damped[(i, i)] += 1e-300;
            }
            let Some(delta) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = params + delta;
            let c = cost(&trial);
            if c.is_finite() && c <= current {
                let rel_change = (current - c) / current.max(f64::MIN_POSITIVE);
                let step_small = delta[1].abs() <= 1e-14 * params[1].abs()
                    && delta[0].abs() <= 1e-13
                    && delta[2].abs() <= 1e-13;
                params = trial;
                current = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel_change < 1e-15 || step_small || c < 1e-28 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step at any damping: at a minimum to machine precision
            converged = true;
        }
        if converged {
            break;
        }
    }

    let fit = LorentzianFit {
        center_frequency: params[1],
        linewidth: params[2].exp(),
        amplitude: params[0].exp(),
        plateau: params[3],
        residual: (current / pts.len() as f64).sqrt(),
        converged,
    };
    Ok(LorentzianFit {
        converged: converged && peak_is_resolved(&fit, band, df),
        ..fit
    })
}

/// A fit only counts as a detection when its peak sits inside the band, is
/// narrower than the band but wider than a bin, and rises above the plateau
/// by more than the scatter of the data about the model.
fn peak_is_resolved(fit: &LorentzianFit, band: (f64, f64), df: f64) -> bool {
    let f0 = fit.center_frequency;
    let gamma = fit.linewidth;
    if !(f0 > band.0 && f0 < band.1 && gamma > 0.0 && gamma < band.1 - band.0) {
        return false;
    }
    let peak = fit.amplitude / (gamma * f0).powi(2);
    let contrast = peak / fit.plateau.abs().max(peak * 1e-300);
    gamma >= 0.5 * df && fit.residual.is_finite() && contrast > 10.0 * fit.residual.max(1e-12)
}

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub std_dev: f64,
}

impl Histogram {
    /// Bins `values` with the given width starting at the minimum value.
    /// Identical values produce a single zero-width bin.
    pub fn from_values(values: &[f64], bin_width: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData("histogram of no values".into()));
        }
        if !(bin_width > 0.0) {
            return Err(invalid("bin_width", format!("must be > 0, got {bin_width}")));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Ok(Self {
                edges: vec![lo, hi],
                counts: vec![values.len() as u64],
                mean,
                std_dev: var.sqrt(),
            });
        }
        let bins = ((hi - lo) / bin_width).floor() as usize + 1;
        let mut counts = vec![0u64; bins];
        for v in values {
            let i = (((v - lo) / bin_width).floor() as usize).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Self {
            edges: (0..=bins).map(|i| lo + i as f64 * bin_width).collect(),
            counts,
            mean,
            std_dev: var.sqrt(),
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Histogram of arrival times (first crossing of the trap plane), falling
/// back to the capture time for events without a recorded crossing.
pub fn arrival_histogram(outcomes: &[TrajectoryOutcome], bin_width: f64) -> Result<Histogram> {
    let times: Vec<f64> = arrival_times(outcomes);
    if times.is_empty() {
        return Err(Error::InsufficientData("no outcome has an arrival or capture time".into()));
    }
    Histogram::from_values(&times, bin_width)
}

pub fn arrival_times(outcomes: &[TrajectoryOutcome]) -> Vec<f64> {
    outcomes
        .iter()
        .filter_map(|o| o.arrival_time.or_else(|| o.capture_time()))
        .collect()
}

/// Mean launch speed implied by a transit of `substrate_distance` in
/// `arrival_time`. Only meaningful when the gas mean free path greatly
/// exceeds the transit distance.
pub fn velocity_from_arrival(arrival_time: f64, substrate_distance: f64) -> Result<f64> {
    if !(arrival_time > 0.0) {
        return Err(Error::Domain(format!("arrival time must be > 0, got {arrival_time}")));
    }
    Ok(substrate_distance / arrival_time)
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::Domain("Wilson interval needs at least one trial".into()));
    }
    if successes > trials {
        return Err(Error::Domain(format!("{successes} successes exceed {trials} trials")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + 0.5 * confidence);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2n = z * z / n;
    let center = (p + 0.5 * z2n) / (1.0 + z2n);
    let half = z / (1.0 + z2n) * (p * (1.0 - p) / n + z2n / (4.0 * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if successes == trials { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok((lo, hi))
}

/// Two-sample-free Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let c = cdf(*x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Capture, OutcomeKind};
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    use rand_pcg::Pcg64Mcg;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn tone_on_bin_center_integrates_to_half_amplitude_squared() {
        let fs = 1024.0;
        let n = 1 << 14;
        let f0 = 64.0; // bin 16 for 256-sample segments
        let amp = 3.0;
        let x = (0..n).map(|i| amp * (2.0 * PI * f0 * i as f64 / fs).sin()).collect();
        let psd = welch_psd(&TimeSeries::new(fs, x).unwrap(), 256, 0.5).unwrap();
        assert!(rel(psd.integral(), amp * amp / 2.0) < 5e-3);
        let peak = psd
            .densities
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(psd.frequencies[peak], f0);
    }

    #[test]
    fn white_noise_integrates_to_variance() {
        let mut rng = Pcg64Mcg::seed_from_u64(11);
        let sigma = 0.7;
        let x: Vec<f64> = (0..1_000_000).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let psd = welch_psd(&TimeSeries::new(5e3, x).unwrap(), 1024, 0.5).unwrap();
        assert!(rel(psd.integral(), sigma * sigma) < 0.03);
        assert!(psd.densities.iter().all(|d| *d >= 0.0));
        assert!(psd.frequencies.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn constant_signal_concentrates_at_dc() {
        let psd = welch_psd(&TimeSeries::new(100.0, vec![2.5; 4096]).unwrap(), 512, 0.5).unwrap();
        let dc = psd.densities[0];
        // Hann leakage reaches only the first neighbouring bin.
        assert!(psd.densities[1] < dc);
        assert!(psd.densities[2..].iter().all(|d| *d < 1e-20 * dc));
    }

    #[test]
    fn welch_rejects_bad_input() {
        let ts = TimeSeries::new(10.0, vec![0.0; 100]).unwrap();
        assert!(welch_psd(&ts, 128, 0.5).is_err());
        assert!(welch_psd(&ts, 64, 1.0).is_err());
        assert!(TimeSeries::new(10.0, vec![1.0]).is_err());
        assert!(TimeSeries::new(0.0, vec![1.0, 2.0]).is_err());
    }

    fn synthetic(a: f64, f0: f64, g: f64, b: f64, df: f64, n: usize) -> PsdEstimate {
        let frequencies: Vec<f64> = (0..n).map(|k| k as f64 * df).collect();
        PsdEstimate {
            densities: frequencies.iter().map(|f| oscillator_psd(a, f0, g, b, *f)).collect(),
            frequencies,
            segment_length: 2 * (n - 1),
            overlap_fraction: 0.5,
            window: Window::Hann,
            segments: 1,
        }
    }

    #[test]
    fn fit_recovers_noise_free_model() {
        let (a, f0, g, b) = (3.2e6, 62_000.0, 400.0, 1e-9);
        let psd = synthetic(a, f0, g, b, 25.0, 8193);
        let fit = lorentzian_fit(&psd, (55_000.0, 70_000.0)).unwrap();
        assert!(fit.converged);
        assert!(rel(fit.center_frequency, f0) < 1e-6);
        assert!(rel(fit.linewidth, g) < 1e-6);
        assert!(rel(fit.amplitude, a) < 1e-6);
    }

    #[test]
    fn fit_refuses_flat_noise() {
        let mut rng = Pcg64Mcg::seed_from_u64(3);
        let frequencies: Vec<f64> = (0..2000).map(|k| k as f64 * 10.0).collect();
        // χ² with 2·40 degrees of freedom, normalised: Welch scatter of a flat spectrum
        let densities = frequencies
            .iter()
            .map(|_| {
                let s: f64 = (0..80).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).sum();
                1e-3 * s / 80.0
            })
            .collect();
        let psd = PsdEstimate {
            frequencies,
            densities,
            segment_length: 4000,
            overlap_fraction: 0.5,
            window: Window::Hann,
            segments: 40,
        };
        let fit = lorentzian_fit(&psd, (2_000.0, 15_000.0)).unwrap();
        assert!(!fit.converged, "spurious peak {fit:?}");
    }

    #[test]
    fn fit_needs_enough_bins() {
        let psd = synthetic(1.0, 100.0, 5.0, 0.0, 1.0, 400);
        assert!(lorentzian_fit(&psd, (95.0, 100.0)).is_err());
    }

    #[test]
    fn wilson_reference_values() {
        // Evaluated independently with the closed-form score interval.
        let (lo, hi) = wilson_interval(8, 10, 0.95).unwrap();
        assert!((lo - 0.490_162_471_5).abs() < 1e-8, "{lo}");
        assert!((hi - 0.943_317_848_5).abs() < 1e-8, "{hi}");
        assert_eq!(wilson_interval(0, 25, 0.95).unwrap().0, 0.0);
        assert_eq!(wilson_interval(25, 25, 0.95).unwrap().1, 1.0);
        assert!(wilson_interval(3, 2, 0.95).is_err());
        assert!(wilson_interval(0, 0, 0.95).is_err());
        assert!(wilson_interval(1, 2, 1.0).is_err());
    }

    #[test]
    fn velocity_inversion() {
        assert!(rel(velocity_from_arrival(8e-3, 8e-3).unwrap(), 1.0) < 1e-15);
        assert!(rel(velocity_from_arrival(1e-3, 8e-3).unwrap(), 8.0) < 1e-15);
        assert!(velocity_from_arrival(0.0, 8e-3).is_err());
        assert!(velocity_from_arrival(-1.0, 8e-3).is_err());
    }

    fn arrived(t: f64) -> TrajectoryOutcome {
        TrajectoryOutcome {
            kind: OutcomeKind::Escaped,
            capture: None,
            arrival_time: Some(t),
            end_time: 2.0 * t,
            trace: None,
        }
    }

    #[test]
    fn single_arrival_histogram() {
        let h = arrival_histogram(&[arrived(3e-3)], 1e-4).unwrap();
        assert_eq!(h.counts, vec![1]);
        assert!(h.edges[0] <= 3e-3 && 3e-3 <= h.edges[1]);
        assert!(arrival_histogram(&[], 1e-4).is_err());
    }

    #[test]
    fn capture_time_used_without_arrival() {
        let o = TrajectoryOutcome {
            kind: OutcomeKind::Trapped,
            capture: Some(Capture { time: 0.5, site_index: 0, site_intensity_fraction: 1.0, energy: -1.0 }),
            arrival_time: None,
            end_time: 0.5,
            trace: None,
        };
        assert_eq!(arrival_times(&[o]), vec![0.5]);
    }

    #[test]
    fn histogram_counts_everything() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = Histogram::from_values(&v, 0.1).unwrap();
        assert_eq!(h.total(), 1000);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
    }

    #[test]
    fn ks_of_uniform_grid() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_statistic(&s, |x| x) - 0.005).abs() < 1e-12);
    }
}
