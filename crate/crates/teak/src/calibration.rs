//! Calibration between gas species.
//!
//! Two routes, each with its own strengths:
//!
//! * **Moment calibration** — the per-series linear model
//!   `m⁰_g = μ + ζ₁·τ_A + ζ₂·m⁰_I` fit by OLS, or by Huber-weighted IRLS
//!   when outgassing may have inflated individual pulses. The intercept μ
//!   should be zero on properly baselined data; ζ₂ is the volts-to-volts
//!   scale between species; ζ₁ absorbs the conversion-driven area change
//!   through the distribution-normalizing coefficient τ_A.
//! * **Transient calibration (TCCO)** — per-pulse constrained least squares
//!   of the full flux response against a reference (usually the inert),
//!   delegated to [`crate::cqp`].
//!
//! After calibration, the zeroth and normalized first moments of reactant,
//! products, and inert must satisfy the reversible/irreversible bookkeeping
//! rules; [`check_relationships`] classifies which regime the data is in.

use crate::cqp::{self, CqpError, TccoProblem, TccoSolution};
use crate::flux::{Flux, FluxError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Huber tuning constant: 95% efficiency under Gaussian noise.
pub const HUBER_TUNING: f64 = 1.345;

/// Fitted coefficients of the moment-calibration model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentCalibModel {
    /// Intercept; zero when the baseline was removed correctly.
    pub mu: f64,
    /// Coefficient on τ_A (conversion-driven area change).
    pub zeta1: f64,
    /// Inert-to-gas scale coefficient.
    pub zeta2: f64,
    /// Standard errors of (μ, ζ₁, ζ₂); NaN for coefficients a reduced
    /// model did not estimate.
    pub standard_errors: (f64, f64, f64),
    pub robust: bool,
}

/// Outcome of the post-calibration moment bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationshipCheck {
    /// Areas match and the reactant lingers longer than the inert.
    ReversibleConsistent,
    /// Reactant area below the inert with faster mean residence, and the
    /// mass balance closes (up to surface accumulation).
    IrreversibleConsistent,
    /// Equal areas and equal mean residence times.
    NoReaction,
    /// None of the consistent regimes fit.
    Violation,
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("series lengths differ or are shorter than {min}: gas {gas}, tau_area {tau}, inert {inert}")]
    BadSeriesLengths {
        min: usize,
        gas: usize,
        tau: usize,
        inert: usize,
    },
    #[error("design matrix is rank deficient (column {0} is collinear)")]
    RankDeficient(usize),
    #[error("IRLS did not converge within {0} iterations")]
    IrlsNonConvergence(usize),
    #[error("dependent and independent fluxes live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Solver(#[from] CqpError),
    #[error(transparent)]
    Flux(#[from] FluxError),
}

/// TCCO configuration knobs exposed to the pipeline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TccoConfig {
    pub enforce_pointwise: bool,
    pub enforce_moment: bool,
    /// Feasibility tolerance; `None` uses `1e-9·max|y|`.
    pub feas_tol: Option<f64>,
}

impl Default for TccoConfig {
    fn default() -> Self {
        TccoConfig {
            enforce_pointwise: true,
            enforce_moment: true,
            feas_tol: None,
        }
    }
}

/// Fit `m⁰_g = μ + ζ₁·τ_A + ζ₂·m⁰_I` by OLS, or by Huber IRLS when
/// `robust` is set.
pub fn fit_moment_calibration(
    m0_gas: &[f64],
    tau_area: &[f64],
    m0_inert: &[f64],
    robust: bool,
) -> Result<MomentCalibModel, CalibrationError> {
    let n = m0_gas.len();
    if n < 4 || tau_area.len() != n || m0_inert.len() != n {
        return Err(CalibrationError::BadSeriesLengths {
            min: 4,
            gas: n,
            tau: tau_area.len(),
            inert: m0_inert.len(),
        });
    }
    let mut design = DMatrix::zeros(n, 3);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = tau_area[i];
        design[(i, 2)] = m0_inert[i];
    }
    check_full_rank(&design)?;
    let y = DVector::from_column_slice(m0_gas);
    let (coeffs, se) = if robust {
        huber_irls(&design, &y)?
    } else {
        weighted_ls(&design, &y, None)
    };
    Ok(MomentCalibModel {
        mu: coeffs[0],
        zeta1: coeffs[1],
        zeta2: coeffs[2],
        standard_errors: (se[0], se[1], se[2]),
        robust,
    })
}

/// Reduced model `m⁰_g = μ + ζ₂·m⁰_I` for series where τ_A carries no
/// information (inert-only data makes the τ_A column constant and the full
/// design rank deficient).
pub fn fit_moment_calibration_reduced(
    m0_gas: &[f64],
    m0_inert: &[f64],
    robust: bool,
) -> Result<MomentCalibModel, CalibrationError> {
    let n = m0_gas.len();
    if n < 3 || m0_inert.len() != n {
        return Err(CalibrationError::BadSeriesLengths {
            min: 3,
            gas: n,
            tau: n,
            inert: m0_inert.len(),
        });
    }
    let mut design = DMatrix::zeros(n, 2);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = m0_inert[i];
    }
    check_full_rank(&design)?;
    let y = DVector::from_column_slice(m0_gas);
    let (coeffs, se) = if robust {
        huber_irls(&design, &y)?
    } else {
        weighted_ls(&design, &y, None)
    };
    Ok(MomentCalibModel {
        mu: coeffs[0],
        zeta1: 0.0,
        zeta2: coeffs[1],
        standard_errors: (se[0], f64::NAN, se[1]),
        robust,
    })
}

/// Column-scaled QR rank check; near-collinear columns are reported by index.
fn check_full_rank(design: &DMatrix<f64>) -> Result<(), CalibrationError> {
    let p = design.ncols();
    let mut scaled = design.clone();
    for j in 0..p {
        let norm = scaled.column(j).norm();
        if norm == 0.0 {
            return Err(CalibrationError::RankDeficient(j));
        }
        scaled.column_mut(j).scale_mut(1.0 / norm);
    }
    let qr = scaled.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0_f64, f64::max);
    for j in 0..p {
        if r[(j, j)].abs() < 1e-10 * max_diag.max(f64::MIN_POSITIVE) {
            return Err(CalibrationError::RankDeficient(j));
        }
    }
    Ok(())
}

/// Weighted least squares via the normal equations (tiny, well-conditioned
/// designs only). Returns coefficients and their standard errors.
fn weighted_ls(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&DVector<f64>>,
) -> (DVector<f64>, Vec<f64>) {
    let n = design.nrows();
    let p = design.ncols();
    let (xtx, xty) = match weights {
        None => (design.tr_mul(design), design.tr_mul(y)),
        Some(w) => {
            let mut xw = design.clone();
            for i in 0..n {
                for j in 0..p {
                    xw[(i, j)] *= w[i];
                }
            }
            (design.tr_mul(&xw), xw.tr_mul(y))
        }
    };
    let chol = xtx
        .clone()
        .cholesky()
        .expect("rank was checked before solving");
    let coeffs = chol.solve(&xty);
    let residuals = y - design * &coeffs;
    let dof = (n.saturating_sub(p)).max(1) as f64;
    let sigma2 = residuals.norm_squared() / dof;
    let cov = chol.inverse() * sigma2;
    let se = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    (coeffs, se)
}

/// Huber IRLS to 1e-8 coefficient convergence, 100 iterations max.
fn huber_irls(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<f64>), CalibrationError> {
    let n = design.nrows();
    let scale_floor = 1e-10 * y.amax().max(f64::MIN_POSITIVE);
    let (mut coeffs, _) = weighted_ls(design, y, None);
    for _ in 0..100 {
        let residuals = y - design * &coeffs;
        let scale = mad(residuals.as_slice()).max(scale_floor);
        let mut w = DVector::from_element(n, 1.0);
        for i in 0..n {
            let u = residuals[i].abs() / scale;
            if u > HUBER_TUNING {
                w[i] = HUBER_TUNING / u;
            }
        }
        let (next, next_se) = weighted_ls(design, y, Some(&w));
        let delta = (&next - &coeffs).amax();
        let converged = delta <= 1e-8 * (1.0 + coeffs.amax());
        coeffs = next;
        if converged {
            return Ok((coeffs, next_se));
        }
    }
    Err(CalibrationError::IrlsNonConvergence(100))
}

fn mad(values: &[f64]) -> f64 {
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    median(&dev) * 1.4826
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// TCCO-calibrate one pulse: regress the independent fluxes against the
/// dependent (reference) flux under the configured constraints.
///
/// All fluxes must already be smoothed, baseline-corrected, and
/// Graham-aligned onto the dependent flux's grid.
pub fn tcco_calibrate(
    dv: &Flux,
    ivs: &[&Flux],
    config: &TccoConfig,
) -> Result<TccoSolution, CalibrationError> {
    tcco_calibrate_floored(dv, ivs, config, 0.0)
}

/// [`tcco_calibrate`] with an absolute signal floor for pointwise-row
/// eligibility; the pipeline sets it from the smoothing noise estimate so
/// noise-dominated samples cannot clamp the coefficient.
pub fn tcco_calibrate_floored(
    dv: &Flux,
    ivs: &[&Flux],
    config: &TccoConfig,
    signal_floor: f64,
) -> Result<TccoSolution, CalibrationError> {
    for iv in ivs {
        if iv.grid != dv.grid {
            return Err(CalibrationError::GridMismatch);
        }
    }
    let columns: Vec<Vec<f64>> = ivs.iter().map(|f| f.values.clone()).collect();
    let problem = TccoProblem::new(
        dv.values.clone(),
        &columns,
        dv.quad_weights(),
        config.enforce_pointwise,
        config.enforce_moment,
        config.feas_tol,
    )?
    .with_signal_floor(signal_floor);
    Ok(cqp::solve(&problem)?)
}

/// Classify the post-calibration moment relationships.
///
/// `tol` is an absolute tolerance in m⁰ units (the pipeline default is 2%
/// of `blend·m⁰_I`); the residence-time comparison reuses the same relative
/// budget. `blend` scales the inert area to the reactant's feed share.
pub fn check_relationships(
    m0_r: f64,
    m0_p: &[f64],
    m0_i: f64,
    m1n_r: f64,
    m1n_i: f64,
    blend: f64,
    tol: f64,
) -> RelationshipCheck {
    let target = blend * m0_i;
    let m1_tol = if target > 0.0 {
        (tol / target) * m1n_i.abs()
    } else {
        tol
    };
    let areas_equal = (m0_r - target).abs() <= tol;
    let m1_equal = (m1n_r - m1n_i).abs() <= m1_tol;
    let product_sum: f64 = m0_p.iter().sum();

    if areas_equal {
        if m1n_r > m1n_i + m1_tol {
            return RelationshipCheck::ReversibleConsistent;
        }
        if m1_equal {
            return RelationshipCheck::NoReaction;
        }
        return RelationshipCheck::Violation;
    }
    if m0_r < target && m1n_r < m1n_i && m0_r + product_sum <= target + tol {
        return RelationshipCheck::IrreversibleConsistent;
    }
    RelationshipCheck::Violation
}
