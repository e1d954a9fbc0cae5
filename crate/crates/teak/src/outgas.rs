//! Outgassing detection: a moving-window t-test over the zeroth-moment
//! series.
//!
//! An outgassing event releases extra gas, so the affected pulse's m⁰
//! stands above its neighbors. Each point is compared against the sample
//! mean and standard deviation of the `2·window_half_width` pulses around
//! it (the point itself excluded) with a one-sided prediction-interval
//! t-statistic; one-sided because outgassing only ever inflates m⁰.
//!
//! Detection runs twice: points flagged in the first pass are masked out of
//! every neighbor window in the second, so a large spike cannot inflate the
//! local std and hide an adjacent spike. Flags are advisory — the pipeline
//! excludes flagged pulses from series-level fits only when configured to.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

/// Default centered half-window width.
pub const DEFAULT_WINDOW_HALF_WIDTH: usize = 5;
/// Default one-sided significance level.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.01;

/// Flagged pulses and the statistics behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutgasReport {
    /// Sorted, deduplicated indices of flagged pulses.
    pub flagged_indices: Vec<usize>,
    /// Final-pass t-statistic per pulse.
    pub t_statistics: Vec<f64>,
    pub window_half_width: usize,
    pub significance: f64,
}

#[derive(Debug, Error)]
pub enum OutgasError {
    #[error("series of length {got} too short for half-width {half_width}; need at least {need}")]
    SeriesTooShort {
        got: usize,
        half_width: usize,
        need: usize,
    },
    #[error("significance must be in (0, 1), got {0}")]
    BadSignificance(f64),
    #[error("window_half_width must be >= 1")]
    ZeroWindow,
}

/// Flag pulses whose m⁰ is significantly above their neighborhood.
pub fn detect(
    m0_series: &[f64],
    window_half_width: usize,
    significance: f64,
) -> Result<OutgasReport, OutgasError> {
    if window_half_width == 0 {
        return Err(OutgasError::ZeroWindow);
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(OutgasError::BadSignificance(significance));
    }
    let n = m0_series.len();
    let need = 2 * window_half_width + 3;
    if n < need {
        return Err(OutgasError::SeriesTooShort {
            got: n,
            half_width: window_half_width,
            need,
        });
    }

    let first_pass = pass(m0_series, window_half_width, significance, &[]);
    let masked: Vec<bool> = {
        let mut m = vec![false; n];
        for &i in &first_pass.0 {
            m[i] = true;
        }
        m
    };
    let (flagged, t_statistics) = pass(m0_series, window_half_width, significance, &masked);

    Ok(OutgasReport {
        flagged_indices: flagged,
        t_statistics,
        window_half_width,
        significance,
    })
}

/// One detection sweep; `masked` entries are excluded from neighbor windows
/// (but still tested themselves).
fn pass(
    series: &[f64],
    half_width: usize,
    significance: f64,
    masked: &[bool],
) -> (Vec<usize>, Vec<f64>) {
    let n = series.len();
    let scale = series.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tiny = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut flagged = Vec::new();
    let mut t_statistics = vec![0.0; n];

    for i in 0..n {
        let lo = i.saturating_sub(half_width);
        let hi = (i + half_width).min(n - 1);
        let neighbors: Vec<f64> = (lo..=hi)
            .filter(|&j| j != i && !masked.get(j).copied().unwrap_or(false))
            .map(|j| series[j])
            .collect();
        let m = neighbors.len();
        if m < 3 {
            continue;
        }
        let mean = neighbors.iter().sum::<f64>() / m as f64;
        let var = neighbors.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (m - 1) as f64;
        let std = var.sqrt();
        let excess = series[i] - mean;

        if std <= tiny {
            // Degenerate neighborhood: any measurable excess is infinitely
            // significant.
            if excess > tiny {
                t_statistics[i] = f64::INFINITY;
                flagged.push(i);
            }
            continue;
        }
        // Prediction-interval form: the tested point is a new observation
        // against a sample of size m.
        let t = excess / (std * (1.0 + 1.0 / m as f64).sqrt());
        t_statistics[i] = t;
        let dist = StudentsT::new(0.0, 1.0, (m - 1) as f64).expect("valid dof");
        let p_value = 1.0 - dist.cdf(t);
        if p_value < significance {
            flagged.push(i);
        }
    }
    (flagged, t_statistics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::Distribution;

    #[test]
    fn constant_series_has_no_flags() {
        let series = vec![0.7; 50];
        let report = detect(&series, DEFAULT_WINDOW_HALF_WIDTH, DEFAULT_SIGNIFICANCE).unwrap();
        assert!(report.flagged_indices.is_empty());
    }

    #[test]
    fn doubled_pulses_in_flat_series_are_flagged_exactly() {
        let mut series = vec![1.0; 100];
        for &i in &[9usize, 16, 80] {
            series[i] = 2.0;
        }
        let report = detect(&series, DEFAULT_WINDOW_HALF_WIDTH, DEFAULT_SIGNIFICANCE).unwrap();
        assert_eq!(report.flagged_indices, vec![9, 16, 80]);
    }

    #[test]
    fn adjacent_spikes_survive_two_pass_masking() {
        // Spikes two apart sit in each other's windows; without masking the
        // first spike inflates the neighborhood std of the second.
        let mut series = vec![1.0; 60];
        series[20] = 2.0;
        series[22] = 1.9;
        let report = detect(&series, 5, 0.01).unwrap();
        assert_eq!(report.flagged_indices, vec![20, 22]);
    }

    #[test]
    fn false_positive_rate_is_calibrated() {
        let mut total = 0usize;
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dist = rand_distr::Normal::new(1.0, 0.02).unwrap();
            let series: Vec<f64> = (0..100).map(|_| dist.sample(&mut rng)).collect();
            let report = detect(&series, DEFAULT_WINDOW_HALF_WIDTH, 0.01).unwrap();
            total += report.flagged_indices.len();
        }
        let mean_fp = total as f64 / 20.0;
        assert!(mean_fp <= 3.0, "mean false positives {mean_fp}");
    }

    #[test]
    fn detects_spikes_in_noisy_series() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let dist = rand_distr::Normal::new(0.5, 0.005).unwrap();
        let mut series: Vec<f64> = (0..100).map(|_| dist.sample(&mut rng)).collect();
        for &i in &[9usize, 16, 80] {
            series[i] *= 2.0;
        }
        let report = detect(&series, DEFAULT_WINDOW_HALF_WIDTH, DEFAULT_SIGNIFICANCE).unwrap();
        for &i in &[9usize, 16, 80] {
            assert!(report.flagged_indices.contains(&i), "missed spike at {i}");
        }
    }

    #[test]
    fn short_series_is_rejected() {
        let series = vec![1.0; 12];
        assert!(matches!(
            detect(&series, 5, 0.01),
            Err(OutgasError::SeriesTooShort { .. })
        ));
        assert!(detect(&vec![1.0; 13], 5, 0.01).is_ok());
    }

    #[test]
    fn monotone_sensitivity() {
        // Growing an already-flagged spike must never un-flag it.
        let mut series = vec![1.0; 40];
        series[15] = 1.5;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let dist = rand_distr::Normal::new(0.0, 0.01).unwrap();
        for v in series.iter_mut() {
            *v += dist.sample(&mut rng);
        }
        let base = detect(&series, 5, 0.01).unwrap();
        assert!(base.flagged_indices.contains(&15));
        for bump in [0.2, 0.7, 2.0] {
            let mut grown = series.clone();
            grown[15] += bump;
            let report = detect(&grown, 5, 0.01).unwrap();
            assert!(report.flagged_indices.contains(&15), "lost flag at +{bump}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn flags_invariant_to_shift_and_scale(
            shift in -10.0..10.0f64,
            scale in 0.1..20.0f64,
            seed in 0u64..500,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dist = rand_distr::Normal::new(1.0, 0.05).unwrap();
            let mut series: Vec<f64> = (0..40).map(|_| dist.sample(&mut rng)).collect();
            series[12] *= 3.0;
            let base = detect(&series, 4, 0.01).unwrap();
            let transformed: Vec<f64> = series.iter().map(|v| scale * (v + shift)).collect();
            let moved = detect(&transformed, 4, 0.01).unwrap();
            prop_assert_eq!(base.flagged_indices, moved.flagged_indices);
        }
    }
}
