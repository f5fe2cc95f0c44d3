use liad::analysis::{
    ks_statistic, lorentzian_fit, oscillator_psd, velocity_from_arrival, welch_psd, wilson_interval, Histogram,
    PsdEstimate, TimeSeries, Window,
};
use proptest::prelude::*;

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn wilson_bounds_are_ordered(n in 1u64..5000, frac in 0.0f64..=1.0, conf in 0.5f64..0.999) {
        let k = (frac * n as f64).round() as u64;
        let (lo, hi) = wilson_interval(k, n, conf).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        let (lo2, hi2) = wilson_interval(k, n, (conf + 1.0) / 2.0).unwrap();
        prop_assert!(lo2 <= lo + 1e-15 && hi2 >= hi - 1e-15);
    }

    #[test]
    fn welch_integral_is_windowed_mean_square(
        samples in prop::collection::vec(-1e3f64..1e3, 64..600),
        seg_exp in 2u32..6,
        overlap in 0.0f64..0.9,
        rate in 1.0f64..1e6,
    ) {
        let n = 1usize << (seg_exp + 2);
        prop_assume!(n <= samples.len());
        let psd = welch_psd(&TimeSeries::new(rate, samples.clone()).unwrap(), n, overlap).unwrap();
        prop_assert!(psd.densities.iter().all(|s| *s >= 0.0));
        let w = periodic_hann(n);
        let wp: f64 = w.iter().map(|x| x * x).sum();
        let step = ((n as f64 * (1.0 - overlap)).round() as usize).max(1);
        let mut expected = 0.0;
        let mut segments = 0;
        let mut start = 0;
        while start + n <= samples.len() {
            expected += samples[start..start + n].iter().zip(&w).map(|(x, w)| (x * w).powi(2)).sum::<f64>() / wp;
            segments += 1;
            start += step;
        }
        expected /= segments as f64;
        prop_assert_eq!(psd.segments, segments);
        prop_assert!((psd.integral() - expected).abs() <= 1e-9 * expected.max(1e-300));
    }

    #[test]
    fn noise_free_line_is_recovered(
        f0 in 1e3f64..1e5,
        q in 5.0f64..100.0,
        log_a in -5.0f64..5.0,
        floor in 1e-4f64..1e-2,
    ) {
        let g = f0 / q;
        let df = g / 8.0;
        let a = 10f64.powf(log_a);
        let peak = a / (g * f0).powi(2);
        let b = floor * peak;
        let bins = (2.0 * f0 / df) as usize;
        let frequencies: Vec<f64> = (0..bins).map(|k| k as f64 * df).collect();
        let psd = PsdEstimate {
            densities: frequencies.iter().map(|f| oscillator_psd(a, f0, g, b, *f)).collect(),
            frequencies,
            segment_length: 2 * bins,
            overlap_fraction: 0.0,
            window: Window::Hann,
            segments: 1,
        };
        let fit = lorentzian_fit(&psd, (f0 - 4.0 * g, f0 + 4.0 * g)).unwrap();
        prop_assert!(fit.converged);
        prop_assert!((fit.center_frequency / f0 - 1.0).abs() < 1e-6);
        prop_assert!((fit.linewidth / g - 1.0).abs() < 1e-6);
        prop_assert!((fit.amplitude / a - 1.0).abs() < 1e-6);
    }

    #[test]
    fn arrival_velocity_inverts_flight_time(v in 1e-3f64..1e4, d in 1e-4f64..1.0) {
        let back = velocity_from_arrival(d / v, d).unwrap();
        prop_assert!((back / v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn histogram_accounts_for_every_value(
        values in prop::collection::vec(-1e3f64..1e3, 1..400),
        width in 1e-2f64..1e2,
    ) {
        let h = Histogram::from_values(&values, width).unwrap();
        prop_assert_eq!(h.total(), values.len() as u64);
        prop_assert_eq!(h.edges.len(), h.counts.len() + 1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(h.edges[0] == lo && *h.edges.last().unwrap() >= hi);
        prop_assert!(h.mean >= lo - 1e-9 && h.mean <= hi + 1e-9 && h.std_dev >= 0.0);
    }

    #[test]
    fn ks_distance_is_a_probability(values in prop::collection::vec(-5.0f64..5.0, 1..300)) {
        let d = ks_statistic(&values, |x| 1.0 / (1.0 + (-x).exp()));
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(d >= 0.5 / values.len() as f64 - 1e-12);
    }
}
