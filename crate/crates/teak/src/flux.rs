//! Core pulse-response types and residence-time-distribution math.
//!
//! A TAP pulse response is a time-resolved outlet flux on a uniform grid.
//! Its integral moments `m⁰..m³` summarize the number of molecules detected,
//! the mean residence time, and the dispersion of the transport. A purely
//! diffusive outlet response is well approximated by a Gamma density with
//! shape 1.5 and scale 1/3 in dimensionless time, which is what the baseline
//! and calibration stages lean on.
//!
//! Everything here is a pure function of immutable inputs; all units are
//! seconds, AMU, and volts (before calibration).

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

/// Shape/scale pair of the Gamma density used as the transport model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    /// Dimensionless shape, > 0.
    pub alpha: f64,
    /// Scale in seconds, > 0.
    pub beta: f64,
}

impl GammaParams {
    /// Shape/scale of the dimensionless standard diffusion curve.
    pub const STANDARD_DIFFUSION: GammaParams = GammaParams {
        alpha: 1.5,
        beta: 1.0 / 3.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self, FluxError> {
        if !(alpha > 0.0) || !(beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(FluxError::InvalidGammaParams { alpha, beta });
        }
        Ok(GammaParams { alpha, beta })
    }

    /// Mean residence time `αβ`.
    pub fn tau_mean(&self) -> f64 {
        self.alpha * self.beta
    }

    /// Residence-time variance `αβ²`.
    pub fn tau_var(&self) -> f64 {
        self.alpha * self.beta * self.beta
    }

    /// Peak (mode) residence time `(α−1)β`; zero when the mode is at the origin.
    pub fn tau_peak(&self) -> f64 {
        ((self.alpha - 1.0) * self.beta).max(0.0)
    }

    /// Area-normalizing coefficient `Γ(α)·β^α`.
    pub fn tau_area(&self) -> f64 {
        gamma(self.alpha) * self.beta.powf(self.alpha)
    }
}

/// Uniform time grid: `t_i = start + i·step`, `i = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

/// Minimum number of samples the spline and quadrature stages can work with.
pub const MIN_GRID_POINTS: usize = 8;

impl TimeGrid {
    pub fn new(start: f64, step: f64, count: usize) -> Result<Self, FluxError> {
        if !(start >= 0.0) || !start.is_finite() {
            return Err(FluxError::InvalidGrid(format!("start must be >= 0, got {start}")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(FluxError::InvalidGrid(format!("step must be > 0, got {step}")));
        }
        if count < MIN_GRID_POINTS {
            return Err(FluxError::InvalidGrid(format!(
                "count must be >= {MIN_GRID_POINTS}, got {count}"
            )));
        }
        Ok(TimeGrid { start, step, count })
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.start + index as f64 * self.step
    }

    /// Time of the final sample.
    pub fn t_end(&self) -> f64 {
        self.time_at(self.count - 1)
    }

    pub fn duration(&self) -> f64 {
        (self.count - 1) as f64 * self.step
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.time_at(i))
    }
}

/// Signal units of a flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxUnits {
    /// Raw instrument signal.
    Volts,
    /// Molecule-scale signal after calibration.
    Calibrated,
}

/// One pulse response: a uniform time grid plus signal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flux {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub units: FluxUnits,
    pub species_label: String,
    pub pulse_index: usize,
}

impl Flux {
    pub fn new(
        grid: TimeGrid,
        values: Vec<f64>,
        units: FluxUnits,
        species_label: impl Into<String>,
        pulse_index: usize,
    ) -> Result<Self, FluxError> {
        if values.len() != grid.count {
            return Err(FluxError::LengthMismatch {
                expected: grid.count,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(FluxError::NonFiniteValue { index: pos });
        }
        Ok(Flux {
            grid,
            values,
            units,
            species_label: species_label.into(),
            pulse_index,
        })
    }

    /// Same grid and metadata, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, FluxError> {
        Flux::new(
            self.grid,
            values,
            self.units,
            self.species_label.clone(),
            self.pulse_index,
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Trapezoid quadrature weights for this grid (h/2 at the ends, h inside).
    pub fn quad_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.grid.step, self.grid.count)
    }

    /// Earliest grid index attaining the maximum value.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Ordered collection of pulses for one gas species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSeries {
    pub label: String,
    pub pulses: Vec<Flux>,
}

impl PulseSeries {
    pub fn new(label: impl Into<String>, pulses: Vec<Flux>) -> Result<Self, FluxError> {
        let label = label.into();
        if let Some(first) = pulses.first() {
            for p in &pulses {
                if p.grid != first.grid {
                    return Err(FluxError::GridMismatch);
                }
            }
        }
        Ok(PulseSeries { label, pulses })
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    /// Zeroth moment of every pulse, in pulse order.
    pub fn m0_series(&self) -> Vec<f64> {
        self.pulses.iter().map(|p| moments(p, 0).m0).collect()
    }
}

/// Integral moments of a flux up to third order.
///
/// `m1_normalized` is `m¹/m⁰`, the mean residence time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m1_normalized: f64,
}

/// Gamma-model residence-time properties recovered from moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidenceProps {
    /// Mean residence time `m¹/m⁰ = αβ` (s).
    pub tau_mean: f64,
    /// Residence-time variance `m²/m⁰ − τ² = αβ²` (s²).
    pub tau_var: f64,
    /// Time of the grid maximum, `(α−1)β` under the Gamma model (s).
    pub tau_peak: f64,
    /// Area-normalizing coefficient `Γ(α)β^α`.
    pub tau_area: f64,
    /// Shape back-solved from the moments: `τ²/τ_σ²`.
    pub alpha: f64,
    /// Scale back-solved from the moments: `τ_σ²/τ`.
    pub beta: f64,
}

/// Conversion fraction with an out-of-range diagnostic.
///
/// The value is never clamped: an apparent conversion outside `[-0.05, 1]`
/// is the signal that calibration went wrong, so it is reported raw and
/// flagged instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    pub value: f64,
    pub out_of_range: bool,
}

#[derive(Debug, Error)]
pub enum FluxError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("values length {got} does not match grid count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid Gamma parameters: alpha={alpha}, beta={beta} (both must be > 0)")]
    InvalidGammaParams { alpha: f64, beta: f64 },
    #[error("gamma density evaluated at negative time t={0}")]
    NegativeTime(f64),
    #[error("degenerate flux: {0}")]
    DegenerateFlux(String),
    #[error("inert zeroth moment must be positive, got {0}")]
    NonPositiveInertMoment(f64),
    #[error("gas mass must be positive, got {0} AMU")]
    NonPositiveMass(f64),
    #[error("zero variance in series of length {0}")]
    ZeroVariance(usize),
    #[error("series too short: need at least {need}, got {got}")]
    SeriesTooShort { need: usize, got: usize },
    #[error("fluxes live on different grids")]
    GridMismatch,
    #[error("max_order must be in 0..=3, got {0}")]
    BadMomentOrder(usize),
}

/// Trapezoid weights for a uniform grid of `count` points spaced `step` apart.
pub fn trapezoid_weights(step: f64, count: usize) -> Vec<f64> {
    let mut w = vec![step; count];
    w[0] = 0.5 * step;
    w[count - 1] = 0.5 * step;
    w
}

/// Gamma density `t^(α−1)·e^(−t/β) / (Γ(α)·β^α)` in 1/seconds.
pub fn gamma_pdf(t: f64, params: GammaParams) -> Result<f64, FluxError> {
    if !(params.alpha > 0.0) || !(params.beta > 0.0) {
        return Err(FluxError::InvalidGammaParams {
            alpha: params.alpha,
            beta: params.beta,
        });
    }
    if t < 0.0 {
        return Err(FluxError::NegativeTime(t));
    }
    if t == 0.0 {
        // Limit of t^(α−1) at the origin.
        return Ok(match params.alpha {
            a if a > 1.0 => 0.0,
            a if a == 1.0 => 1.0 / params.beta,
            _ => f64::INFINITY,
        });
    }
    let norm = gamma(params.alpha) * params.beta.powf(params.alpha);
    Ok(t.powf(params.alpha - 1.0) * (-t / params.beta).exp() / norm)
}

/// Moments `mᵏ = ∫ tᵏ F(t) dt` for `k = 0..=max_order` by composite trapezoid.
///
/// Orders above `max_order` are left at zero.
pub fn moments(flux: &Flux, max_order: usize) -> Moments {
    debug_assert!(max_order <= 3);
    let max_order = max_order.min(3);
    let w = flux.quad_weights();
    let mut m = [0.0_f64; 4];
    for (i, (&v, &wi)) in flux.values.iter().zip(w.iter()).enumerate() {
        let t = flux.grid.time_at(i);
        let mut tk = 1.0;
        for mk in m.iter_mut().take(max_order + 1) {
            *mk += wi * tk * v;
            tk *= t;
        }
    }
    let m1_normalized = if m[0] != 0.0 { m[1] / m[0] } else { f64::NAN };
    Moments {
        m0: m[0],
        m1: m[1],
        m2: m[2],
        m3: m[3],
        m1_normalized,
    }
}

/// Residence-time properties via method-of-moments on the Gamma model.
///
/// Fails on degenerate input: non-positive area, non-positive variance, or a
/// maximum sitting on the grid boundary (no interior peak).
pub fn residence_props(flux: &Flux) -> Result<ResidenceProps, FluxError> {
    let m = moments(flux, 2);
    if !(m.m0 > 0.0) {
        return Err(FluxError::DegenerateFlux(format!(
            "m0 = {} is not positive",
            m.m0
        )));
    }
    let tau_mean = m.m1 / m.m0;
    let tau_var = m.m2 / m.m0 - tau_mean * tau_mean;
    if !(tau_var > 0.0) {
        return Err(FluxError::DegenerateFlux(format!(
            "residence-time variance {} is not positive",
            tau_var
        )));
    }
    let peak_idx = flux.argmax();
    if peak_idx == 0 || peak_idx == flux.len() - 1 {
        return Err(FluxError::DegenerateFlux(format!(
            "maximum at grid boundary (index {peak_idx})"
        )));
    }
    let alpha = tau_mean * tau_mean / tau_var;
    let beta = tau_var / tau_mean;
    Ok(ResidenceProps {
        tau_mean,
        tau_var,
        tau_peak: flux.grid.time_at(peak_idx),
        tau_area: gamma(alpha) * beta.powf(alpha),
        alpha,
        beta,
    })
}

/// Conversion `χ = 1 − m⁰_r / (blend_ratio · m⁰_I)`.
///
/// `blend_ratio` is the reactant:inert feed ratio (1.0 for a 50/50 blend).
pub fn conversion(
    reactant_m0: f64,
    inert_m0: f64,
    blend_ratio: f64,
) -> Result<Conversion, FluxError> {
    if !(inert_m0 > 0.0) {
        return Err(FluxError::NonPositiveInertMoment(inert_m0));
    }
    if !(blend_ratio > 0.0) {
        return Err(FluxError::NonPositiveInertMoment(blend_ratio));
    }
    let value = 1.0 - reactant_m0 / (blend_ratio * inert_m0);
    Ok(Conversion {
        value,
        out_of_range: !(-0.05..=1.0).contains(&value),
    })
}

/// Rescale a flux onto the transport timescale of a reference mass.
///
/// Knudsen diffusivity goes as 1/√mass, so a gas of mass `m_g` observed at
/// time `t` corresponds to the reference gas at `t·√(m_ref/m_g)`. Values are
/// scaled by `√(m_g/m_ref)` so the zeroth moment is preserved, and the result
/// is re-interpolated linearly onto the input grid.
pub fn graham_align(flux: &Flux, mass_gas: f64, mass_ref: f64) -> Result<Flux, FluxError> {
    if !(mass_gas > 0.0) {
        return Err(FluxError::NonPositiveMass(mass_gas));
    }
    if !(mass_ref > 0.0) {
        return Err(FluxError::NonPositiveMass(mass_ref));
    }
    if mass_gas == mass_ref {
        return Ok(flux.clone());
    }
    let time_scale = (mass_ref / mass_gas).sqrt();
    let value_scale = (mass_gas / mass_ref).sqrt();
    // Sample the rescaled curve v'(t) = s_v · F(t / s_t) on the original grid.
    // Beyond the recorded window the flux is taken as fully decayed (zero).
    let n = flux.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = flux.grid.time_at(i);
        let src = t / time_scale;
        out.push(value_scale * interp_linear(&flux.grid, &flux.values, src));
    }
    flux.with_values(out)
}

/// Linear interpolation; clamps to the first sample on the left and decays to
/// zero past the last sample.
fn interp_linear(grid: &TimeGrid, values: &[f64], t: f64) -> f64 {
    let pos = (t - grid.start) / grid.step;
    if pos <= 0.0 {
        return values[0];
    }
    let last = values.len() - 1;
    if pos > last as f64 {
        return 0.0;
    }
    if pos == last as f64 {
        return values[last];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    values[i] * (1.0 - frac) + values[i + 1] * frac
}

/// Center to mean 0 and scale to sample standard deviation 1.
pub fn standardize(values: &[f64]) -> Result<Vec<f64>, FluxError> {
    if values.len() < 2 {
        return Err(FluxError::SeriesTooShort {
            need: 2,
            got: values.len(),
        });
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    if var <= 0.0 {
        return Err(FluxError::ZeroVariance(values.len()));
    }
    let std = var.sqrt();
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// Sample a Gamma-density flux on a grid; convenience for tests and the
/// baseline stage's synthetic checks.
pub fn sample_gamma_flux(
    grid: TimeGrid,
    params: GammaParams,
    area: f64,
) -> Result<Flux, FluxError> {
    let values = grid
        .times()
        .map(|t| Ok(area * gamma_pdf(t, params)?))
        .collect::<Result<Vec<_>, FluxError>>()?;
    Flux::new(grid, values, FluxUnits::Volts, "gamma", 0)
}
