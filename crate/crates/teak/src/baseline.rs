//! Baseline correction: shift a flux so its tail matches the expected
//! Gamma-distribution tail, or the traditional tail-mean level.
//!
//! A voltage offset moves the whole flux up or down and corrupts every
//! moment. The Gamma-tail method estimates where the tail *should* sit:
//! assuming the ideal-reactor shape 1.5, the scale is `β̂ = 2·τ_p` from the
//! peak location (which an offset cannot move), the expected tail level is
//! the Gamma density at the end of the record scaled to flux units, and the
//! flux is shifted so its final sample lands exactly there. Unlike the
//! tail-mean method this stays unbiased for species that have not finished
//! eluting when the record ends.

use crate::flux::{gamma_pdf, moments, trapezoid_weights, Flux, FluxError, GammaParams};
use thiserror::Error;

/// Default shape parameter of an ideal reactor.
pub const IDEAL_SHAPE: f64 = 1.5;

/// A baseline-corrected flux plus what was done to it.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub corrected: Flux,
    /// Level subtracted from the input (volts).
    pub shift: f64,
    /// Expected tail value the last sample was pinned to; `None` for the
    /// tail-mean method, which targets zero.
    pub gamma_tail_value: Option<f64>,
    /// Peak residence time used for the scale estimate; `None` for tail-mean.
    pub tau_peak_used: Option<f64>,
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("flux maximum at grid boundary (index {0}); no interior peak to anchor the scale")]
    BoundaryPeak(usize),
    #[error("tail window {window} s must be positive and shorter than the record ({duration} s)")]
    BadTailWindow { window: f64, duration: f64 },
    #[error("invalid shape parameter {0}")]
    BadShape(f64),
    #[error(transparent)]
    Flux(#[from] FluxError),
}

/// Gamma-tail baseline correction with an explicit area scale.
///
/// `area_estimate` converts the unit-area Gamma density to flux units; use
/// [`baseline_gamma_auto`] to have it estimated from the data.
pub fn baseline_gamma(
    flux: &Flux,
    shape: f64,
    area_estimate: f64,
) -> Result<BaselineResult, BaselineError> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(BaselineError::BadShape(shape));
    }
    let peak_idx = flux.argmax();
    if peak_idx == 0 || peak_idx == flux.len() - 1 {
        return Err(BaselineError::BoundaryPeak(peak_idx));
    }
    let tau_peak = flux.grid.time_at(peak_idx);
    let beta_hat = 2.0 * tau_peak;
    let params = GammaParams::new(shape, beta_hat)?;
    let gamma_tail = area_estimate * gamma_pdf(flux.grid.t_end(), params)?;
    let last = *flux.values.last().expect("flux is never empty");
    let shift = last - gamma_tail;
    // v − last + gamma_tail pins the final sample to gamma_tail bit-exactly.
    let corrected =
        flux.with_values(flux.values.iter().map(|v| v - last + gamma_tail).collect())?;
    Ok(BaselineResult {
        corrected,
        shift,
        gamma_tail_value: Some(gamma_tail),
        tau_peak_used: Some(tau_peak),
    })
}

/// Gamma-tail baseline correction with the area scale estimated from the
/// flux itself.
///
/// The unit-area density must be scaled to flux units, so a provisional
/// area comes from a tail-mean shift (final 10% of the record), the
/// correction is applied, and one fixed-point refinement re-estimates the
/// area from the corrected flux. The tail correction is a small
/// perturbation of m⁰, so one pass settles it.
pub fn baseline_gamma_auto(flux: &Flux, shape: f64) -> Result<BaselineResult, BaselineError> {
    let prelim_window = 0.1 * flux.grid.duration();
    let prelim = baseline_tail_mean(flux, prelim_window)?;
    let area0 = moments(&prelim.corrected, 0).m0;
    let first = baseline_gamma(flux, shape, area0)?;
    let area1 = moments(&first.corrected, 0).m0;
    baseline_gamma(flux, shape, area1)
}

/// Traditional baseline: subtract the mean of the final `tail_window`
/// seconds of the record.
pub fn baseline_tail_mean(flux: &Flux, tail_window: f64) -> Result<BaselineResult, BaselineError> {
    let duration = flux.grid.duration();
    if !(tail_window > 0.0) || tail_window >= duration {
        return Err(BaselineError::BadTailWindow {
            window: tail_window,
            duration,
        });
    }
    let cutoff = flux.grid.t_end() - tail_window;
    let tail: Vec<f64> = (0..flux.len())
        .filter(|&i| flux.grid.time_at(i) >= cutoff)
        .map(|i| flux.values[i])
        .collect();
    let shift = tail.iter().sum::<f64>() / tail.len() as f64;
    let corrected = flux.with_values(flux.values.iter().map(|v| v - shift).collect())?;
    Ok(BaselineResult {
        corrected,
        shift,
        gamma_tail_value: None,
        tau_peak_used: None,
    })
}

/// Trapezoid m⁰ of raw values; tiny helper shared by tests.
#[allow(dead_code)]
fn quad_m0(values: &[f64], step: f64) -> f64 {
    trapezoid_weights(step, values.len())
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::{sample_gamma_flux, FluxUnits, TimeGrid};
    use approx::assert_abs_diff_eq;

    /// Gamma flux with unit area whose grid argmax lands on the true mode.
    fn gamma_flux(beta: f64, t_end: f64, n: usize) -> Flux {
        let grid = TimeGrid::new(0.0, t_end / (n - 1) as f64, n).unwrap();
        sample_gamma_flux(grid, GammaParams::new(IDEAL_SHAPE, beta).unwrap(), 1.0).unwrap()
    }

    fn offset(flux: &Flux, c: f64) -> Flux {
        flux.with_values(flux.values.iter().map(|v| v + c).collect())
            .unwrap()
    }

    #[test]
    fn exact_gamma_flux_is_a_fixed_point() {
        // Grid chosen so the argmax sits exactly on τ_p = (α−1)β = 1/6
        // (step 1/1200, index 200); then β̂ = 2τ_p is exact and the tail
        // already matches the density.
        let flux = gamma_flux(1.0 / 3.0, 4.0, 4801);
        let result = baseline_gamma(&flux, IDEAL_SHAPE, 1.0).unwrap();
        assert!(result.shift.abs() <= 1e-10, "shift {}", result.shift);
        for (a, b) in flux.values.iter().zip(&result.corrected.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn recovers_known_offset() {
        let flux = gamma_flux(1.0 / 3.0, 4.0, 4801);
        let c = 0.02;
        let result = baseline_gamma(&offset(&flux, c), IDEAL_SHAPE, 1.0).unwrap();
        assert_abs_diff_eq!(result.shift, c, epsilon = 1e-6);
        let m0 = moments(&result.corrected, 0).m0;
        let m0_true = moments(&flux, 0).m0;
        assert_abs_diff_eq!(m0, m0_true, epsilon = 1e-4);
    }

    #[test]
    fn auto_area_recovers_offsets_of_either_sign() {
        let flux = gamma_flux(1.0 / 3.0, 4.0, 4001);
        let peak = flux.max_abs();
        for frac in [-0.05, 0.02, 0.1] {
            let c = frac * peak;
            let result = baseline_gamma_auto(&offset(&flux, c), IDEAL_SHAPE).unwrap();
            assert!(
                (result.shift - c).abs() <= 1e-3 * peak,
                "offset {c}: recovered {}",
                result.shift
            );
        }
    }

    #[test]
    fn gamma_method_is_shift_equivariant() {
        let flux = gamma_flux(1.0 / 3.0, 4.0, 2001);
        let base = baseline_gamma_auto(&flux, IDEAL_SHAPE).unwrap();
        let peak = flux.max_abs();
        for c in [-3.0, -0.01, 0.004, 5.0] {
            let shifted = baseline_gamma_auto(&offset(&flux, c), IDEAL_SHAPE).unwrap();
            for (a, b) in base.corrected.values.iter().zip(&shifted.corrected.values) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12 * peak.max(c.abs()));
            }
            assert_abs_diff_eq!(shifted.shift - base.shift, c, epsilon = 1e-12 * c.abs().max(1.0));
        }
    }

    #[test]
    fn corrected_tail_equals_gamma_tail_exactly() {
        let flux = offset(&gamma_flux(0.25, 3.0, 1501), 0.07);
        let result = baseline_gamma(&flux, IDEAL_SHAPE, 0.9).unwrap();
        let last = *result.corrected.values.last().unwrap();
        assert_eq!(last, result.gamma_tail_value.unwrap());
    }

    #[test]
    fn boundary_peak_is_rejected() {
        let grid = TimeGrid::new(0.0, 0.1, 32).unwrap();
        let decaying: Vec<f64> = (0..32).map(|i| (-(i as f64) * 0.3).exp()).collect();
        let flux = Flux::new(grid, decaying, FluxUnits::Volts, "d", 0).unwrap();
        assert!(matches!(
            baseline_gamma(&flux, IDEAL_SHAPE, 1.0),
            Err(BaselineError::BoundaryPeak(0))
        ));
    }

    #[test]
    fn tail_mean_recovers_offset_on_decayed_flux() {
        let flux = gamma_flux(1.0 / 3.0, 5.0, 2501);
        let c = 0.013;
        let result = baseline_tail_mean(&offset(&flux, c), 0.5).unwrap();
        // The tail of a decayed flux is ~1e-5 of the peak, so the recovered
        // shift is c plus that residual signal level.
        assert_abs_diff_eq!(result.shift, c, epsilon = 1e-4);
    }

    #[test]
    fn tail_mean_zero_flux_stays_zero() {
        let grid = TimeGrid::new(0.0, 0.1, 64).unwrap();
        let flux = Flux::new(grid, vec![0.0; 64], FluxUnits::Volts, "z", 0).unwrap();
        let result = baseline_tail_mean(&flux, 1.0).unwrap();
        assert_eq!(result.shift, 0.0);
        assert!(result.corrected.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tail_mean_rejects_window_longer_than_record() {
        let flux = gamma_flux(0.3, 3.0, 301);
        assert!(matches!(
            baseline_tail_mean(&flux, 3.0),
            Err(BaselineError::BadTailWindow { .. })
        ));
    }

    #[test]
    fn tail_mean_underestimates_m0_on_slow_eluters() {
        // A slowly eluting species truncated by the collection window: the
        // tail mean subtracts genuine signal, biasing m0 down; the gamma
        // method pins the tail to its expected positive level instead.
        let flux = gamma_flux(1.0, 3.0, 3001); // mean residence 1.5 s, 3 s window
        let offsetted = offset(&flux, 0.05);
        let trad = baseline_tail_mean(&offsetted, 0.5).unwrap();
        let gam = baseline_gamma_auto(&offsetted, IDEAL_SHAPE).unwrap();
        let m0_true = moments(&flux, 0).m0;
        let m0_trad = moments(&trad.corrected, 0).m0;
        let m0_gam = moments(&gam.corrected, 0).m0;
        assert!(
            m0_trad < m0_true,
            "tail mean should bias m0 down: {m0_trad} vs {m0_true}"
        );
        assert!(
            (m0_gam - m0_true).abs() < (m0_trad - m0_true).abs(),
            "gamma method should be closer to truth: {m0_gam} vs {m0_trad} (true {m0_true})"
        );
    }

    #[test]
    fn methods_agree_on_fully_decayed_flux() {
        let flux = offset(&gamma_flux(1.0 / 3.0, 5.0, 5001), 0.02);
        let trad = baseline_tail_mean(&flux, 0.5).unwrap();
        let gam = baseline_gamma_auto(&flux, IDEAL_SHAPE).unwrap();
        let m0_trad = moments(&trad.corrected, 0).m0;
        let m0_gam = moments(&gam.corrected, 0).m0;
        assert!(
            (m0_gam - m0_trad).abs() <= 1e-3 * m0_trad.abs(),
            "m0 mismatch: {m0_gam} vs {m0_trad}"
        );
    }
}
