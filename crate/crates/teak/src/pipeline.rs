//! The orchestrated preprocessing workflows.
//!
//! `run_teak` is the full physics-aware chain, per pulse:
//! smooth → Gamma-tail baseline → Graham-align to the inert → calibrate the
//! inert series against a reference pulse → calibrate every other species
//! against the same-pulse calibrated inert. Series-level steps (moments,
//! conversion, outgas detection, the moment-model cross-check, and the
//! reversible/irreversible bookkeeping) run after the per-pulse fan-out.
//!
//! `run_traditional` is the comparison path: tail-mean baseline and a fixed
//! prior calibration coefficient, reported in the same schema so the two
//! workflows can be diffed file-for-file.
//!
//! Per-pulse stages are pure and run in parallel; any stage error aborts the
//! run with the pulse index and stage named, while everything already
//! computed for earlier pulses is kept in the result next to the failure
//! marker.

use crate::baseline::{self, BaselineError, IDEAL_SHAPE};
use crate::calibration::{
    self, check_relationships, CalibrationError, MomentCalibModel, RelationshipCheck,
};
use crate::cqp::CqpError;
use crate::flux::{self, conversion, graham_align, moments, Flux, PulseSeries};
use crate::io::{
    emit_csv, BaselineMethod, ExperimentConfig, IoError, ReferenceDv, Role, SpeciesConfig,
};
use crate::outgas::{self, OutgasReport};
use crate::smoothing::{self, SmoothError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Where a run's inputs came from; goes into `summary.json` verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub version: String,
}

impl Provenance {
    pub fn new(config: &ExperimentConfig, seed: Option<u64>) -> Self {
        Provenance {
            config_sha256: config.sha256(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// How a stage failure should map onto a process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Numerical,
    InfeasibleCalibration,
}

/// Marker describing where a run aborted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageFailure {
    pub pulse_index: Option<usize>,
    pub stage: String,
    pub message: String,
    pub kind: FailureKind,
}

/// Per-pulse moment table row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentsRow {
    pub pulse_index: usize,
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m1_normalized: f64,
}

/// Per-pulse conversion table row (first reactant against the inert).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConversionRow {
    pub pulse_index: usize,
    pub reactant_m0: f64,
    pub inert_m0: f64,
    pub blend_ratio: f64,
    pub conversion: f64,
    pub out_of_range: bool,
    pub excluded: bool,
}

/// One species' calibrated output.
#[derive(Debug, Clone)]
pub struct SpeciesResult {
    pub label: String,
    pub role: Role,
    pub calibrated: PulseSeries,
    /// Calibration coefficient applied to each pulse (1.0 for the
    /// traditional inert path).
    pub coefficients: Vec<f64>,
    pub moments: Vec<MomentsRow>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: String,
    pub species: Vec<SpeciesResult>,
    pub conversion: Vec<ConversionRow>,
    pub moment_model: Option<MomentCalibModel>,
    pub moment_model_note: Option<String>,
    pub outgas: BTreeMap<String, OutgasReport>,
    /// Pulses excluded from series-level fits (populated when
    /// `outgas.auto_exclude` is set).
    pub excluded_pulses: Vec<usize>,
    pub relationship: Option<RelationshipCheck>,
    pub provenance: Provenance,
    pub failure: Option<StageFailure>,
}

impl RunResult {
    pub fn species_result(&self, label: &str) -> Option<&SpeciesResult> {
        self.species.iter().find(|s| s.label == label)
    }
}

/// Hard errors that prevent a run from even starting.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] IoError),
    #[error("species '{0}' configured but no series provided")]
    MissingSeries(String),
    #[error("series '{0}' has no pulses")]
    EmptySeries(String),
    #[error("series share neither grid nor pulse count")]
    MismatchedSeries,
}

struct StageError {
    stage: &'static str,
    message: String,
    kind: FailureKind,
}

impl StageError {
    fn new(stage: &'static str, message: String) -> Self {
        StageError {
            stage,
            message,
            kind: FailureKind::Numerical,
        }
    }
}

impl From<(&'static str, SmoothError)> for StageError {
    fn from((stage, e): (&'static str, SmoothError)) -> Self {
        StageError::new(stage, e.to_string())
    }
}

impl From<(&'static str, BaselineError)> for StageError {
    fn from((stage, e): (&'static str, BaselineError)) -> Self {
        StageError::new(stage, e.to_string())
    }
}

impl From<(&'static str, CalibrationError)> for StageError {
    fn from((stage, e): (&'static str, CalibrationError)) -> Self {
        let kind = match &e {
            CalibrationError::Solver(CqpError::Infeasible(_)) => {
                FailureKind::InfeasibleCalibration
            }
            _ => FailureKind::Numerical,
        };
        StageError {
            stage,
            message: e.to_string(),
            kind,
        }
    }
}

/// Run the full TEAK workflow.
pub fn run_teak(
    raw: &[PulseSeries],
    config: &ExperimentConfig,
    provenance: Provenance,
) -> Result<RunResult, PipelineError> {
    config.validate()?;
    let ordered = match_series(raw, config)?;
    let n_pulses = ordered[0].1.pulses.len();
    let inert_cfg = config.inert();

    // Per-pulse fan-out: smooth, baseline, align, for every species. Each
    // corrected flux is paired with its noise scale (the smoothing residual
    // std, rescaled by the alignment's value factor) so the calibration
    // stage can tell signal from noise.
    let per_pulse: Vec<Result<Vec<(Flux, f64)>, StageError>> = (0..n_pulses)
        .into_par_iter()
        .map(|i| {
            let mut corrected = Vec::with_capacity(ordered.len());
            for (cfg, series) in &ordered {
                let pulse = &series.pulses[i];
                let smoothed = smoothing::smooth(pulse, config.smoothing.factor())
                    .map_err(|e| StageError::from(("smooth", e)))?;
                let baselined = match config.baseline_method {
                    BaselineMethod::Gamma => {
                        baseline::baseline_gamma_auto(&smoothed.smoothed, IDEAL_SHAPE)
                            .map_err(|e| StageError::from(("baseline", e)))?
                    }
                    BaselineMethod::TailMean { window_s } => {
                        baseline::baseline_tail_mean(&smoothed.smoothed, window_s)
                            .map_err(|e| StageError::from(("baseline", e)))?
                    }
                };
                let (aligned, noise) = if cfg.role == Role::Inert {
                    (baselined.corrected, smoothed.residual_std)
                } else {
                    let value_scale = (cfg.mass_amu / inert_cfg.mass_amu).sqrt();
                    (
                        graham_align(&baselined.corrected, cfg.mass_amu, inert_cfg.mass_amu)
                            .map_err(|e| StageError::new("align", e.to_string()))?,
                        smoothed.residual_std * value_scale,
                    )
                };
                corrected.push((aligned, noise));
            }
            Ok(corrected)
        })
        .collect();

    let (per_pulse, failure) = split_failures(per_pulse);
    if let Some(f) = failure {
        return Ok(partial_result("teak", config, provenance, f));
    }
    let mut corrected: Vec<Vec<Flux>> = per_pulse
        .iter()
        .map(|pulse| pulse.iter().map(|(f, _)| f.clone()).collect())
        .collect();
    let noise_floors: Vec<Vec<f64>> = per_pulse
        .iter()
        .map(|pulse| pulse.iter().map(|(_, n)| *n).collect())
        .collect();
    drop(per_pulse);

    // Inert self-calibration against the reference pulse. The pointwise
    // constraint stays off here: inert-vs-inert residuals are noise
    // centered at zero, and clamping to them would bias every coefficient.
    let inert_pos = ordered
        .iter()
        .position(|(cfg, _)| cfg.role == Role::Inert)
        .expect("validated config");
    let inert_corrected: Vec<&Flux> = corrected.iter().map(|pulse| &pulse[inert_pos]).collect();
    let inert_m0s: Vec<f64> = inert_corrected.iter().map(|f| moments(f, 0).m0).collect();
    let dv_index = match config.reference_dv {
        ReferenceDv::AutoMedian => median_index(&inert_m0s),
        ReferenceDv::PulseIndex(i) => i.min(n_pulses - 1),
    };
    let dv_flux = inert_corrected[dv_index].clone();
    let inert_tcco = calibration::TccoConfig {
        enforce_pointwise: false,
        ..config.tcco
    };

    let calibrations: Vec<Result<Vec<(f64, Flux)>, StageError>> = (0..n_pulses)
        .into_par_iter()
        .map(|i| {
            let pulse_fluxes = &corrected[i];
            let mut out = Vec::with_capacity(pulse_fluxes.len());
            // Inert first: every other species calibrates against it.
            let inert_noise = noise_floors[i][inert_pos];
            let inert_sol = calibration::tcco_calibrate_floored(
                &dv_flux,
                &[&pulse_fluxes[inert_pos]],
                &inert_tcco,
                4.0 * inert_noise,
            )
            .map_err(|e| StageError::from(("calibrate-inert", e)))?;
            let c = inert_sol.b[0];
            let inert_cal = scale_flux(&pulse_fluxes[inert_pos], c);
            // Baseline model mismatch leaves the corrected inert a small
            // sub-zero floor near the pulse onset, and smoothing leaves a
            // residual noise band; unless the user pinned a tolerance,
            // widen feas_tol to cover both so the pointwise constraints
            // stay about signal, not artifacts.
            let species_tcco = match config.tcco.feas_tol {
                Some(_) => config.tcco,
                None => {
                    let floor = inert_cal.values.iter().cloned().fold(0.0_f64, f64::min);
                    let default = 1e-9 * inert_cal.max_abs();
                    calibration::TccoConfig {
                        feas_tol: Some(
                            default.max(-floor * (1.0 + 1e-6)).max(4.0 * c * inert_noise),
                        ),
                        ..config.tcco
                    }
                }
            };
            for (pos, (cfg, _)) in ordered.iter().enumerate() {
                if cfg.role == Role::Inert {
                    out.push((c, inert_cal.clone()));
                } else {
                    let sol = calibration::tcco_calibrate_floored(
                        &inert_cal,
                        &[&pulse_fluxes[pos]],
                        &species_tcco,
                        4.0 * noise_floors[i][pos],
                    )
                    .map_err(|e| StageError::from(("calibrate-species", e)))?;
                    out.push((sol.b[0], scale_flux(&pulse_fluxes[pos], sol.b[0])));
                }
            }
            Ok(out)
        })
        .collect();

    let (calibrated, failure) = split_failures(calibrations);
    if let Some(f) = failure {
        return Ok(partial_result("teak", config, provenance, f));
    }

    // Reassemble per-species results.
    let mut species_results = Vec::with_capacity(ordered.len());
    for (pos, (cfg, _)) in ordered.iter().enumerate() {
        let mut coefficients = Vec::with_capacity(n_pulses);
        let mut pulses = Vec::with_capacity(n_pulses);
        for (i, per_pulse) in calibrated.iter().enumerate() {
            let (c, flux) = &per_pulse[pos];
            coefficients.push(*c);
            let mut flux = flux.clone();
            flux.pulse_index = i;
            flux.units = flux::FluxUnits::Calibrated;
            pulses.push(flux);
        }
        let series = PulseSeries::new(cfg.label.clone(), pulses).expect("uniform grids");
        let moment_rows = moment_table(&series);
        species_results.push(SpeciesResult {
            label: cfg.label.clone(),
            role: cfg.role,
            calibrated: series,
            coefficients,
            moments: moment_rows,
        });
    }

    // The corrected (pre-calibration) fluxes feed the moment-model
    // cross-check below.
    let corrected_by_species: Vec<Vec<Flux>> = (0..ordered.len())
        .map(|pos| {
            corrected
                .iter_mut()
                .map(|pulse| std::mem::replace(&mut pulse[pos], dv_flux.clone()))
                .collect()
        })
        .collect();

    finalize_run(
        "teak",
        config,
        provenance,
        species_results,
        Some(corrected_by_species),
    )
}

/// Run the traditional comparison path: tail-mean baseline, fixed prior
/// calibration coefficient for every non-inert species, same report schema.
pub fn run_traditional(
    raw: &[PulseSeries],
    config: &ExperimentConfig,
    inert_calibration_coefficient: f64,
    provenance: Provenance,
) -> Result<RunResult, PipelineError> {
    config.validate()?;
    let ordered = match_series(raw, config)?;
    let n_pulses = ordered[0].1.pulses.len();
    let window = match config.baseline_method {
        BaselineMethod::TailMean { window_s } => window_s,
        // The traditional method always baselines from the tail; reuse a
        // tenth of the record when the config asked for the gamma method.
        BaselineMethod::Gamma => 0.1 * ordered[0].1.pulses[0].grid.duration(),
    };

    let per_pulse: Vec<Result<Vec<(f64, Flux)>, StageError>> = (0..n_pulses)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::with_capacity(ordered.len());
            for (cfg, series) in &ordered {
                let pulse = &series.pulses[i];
                let baselined = baseline::baseline_tail_mean(pulse, window)
                    .map_err(|e| StageError::from(("baseline", e)))?;
                let coefficient = if cfg.role == Role::Inert {
                    1.0
                } else {
                    inert_calibration_coefficient
                };
                out.push((coefficient, scale_flux(&baselined.corrected, coefficient)));
            }
            Ok(out)
        })
        .collect();

    let (calibrated, failure) = split_failures(per_pulse);
    if let Some(f) = failure {
        return Ok(partial_result("traditional", config, provenance, f));
    }

    let mut species_results = Vec::with_capacity(ordered.len());
    for (pos, (cfg, _)) in ordered.iter().enumerate() {
        let mut coefficients = Vec::with_capacity(n_pulses);
        let mut pulses = Vec::with_capacity(n_pulses);
        for (i, per_pulse) in calibrated.iter().enumerate() {
            let (c, flux) = &per_pulse[pos];
            coefficients.push(*c);
            let mut flux = flux.clone();
            flux.pulse_index = i;
            pulses.push(flux);
        }
        let series = PulseSeries::new(cfg.label.clone(), pulses).expect("uniform grids");
        let moment_rows = moment_table(&series);
        species_results.push(SpeciesResult {
            label: cfg.label.clone(),
            role: cfg.role,
            calibrated: series,
            coefficients,
            moments: moment_rows,
        });
    }
    finalize_run("traditional", config, provenance, species_results, None)
}

/// Series-level aggregation shared by both workflows.
fn finalize_run(
    method: &str,
    config: &ExperimentConfig,
    provenance: Provenance,
    species_results: Vec<SpeciesResult>,
    corrected_by_species: Option<Vec<Vec<Flux>>>,
) -> Result<RunResult, PipelineError> {
    let inert_cfg = config.inert();

    // Outgas detection per species. Detection runs on pre-calibration
    // moments when available: outgassing inflates the raw m⁰, but the
    // constrained calibration inverts that into a squashed coefficient, so
    // the calibrated series no longer shows the one-sided excess the test
    // looks for.
    let mut outgas_reports = BTreeMap::new();
    let mut excluded: Vec<usize> = Vec::new();
    for (pos, sr) in species_results.iter().enumerate() {
        let m0s: Vec<f64> = match &corrected_by_species {
            Some(corrected) => corrected[pos].iter().map(|f| moments(f, 0).m0).collect(),
            None => sr.moments.iter().map(|m| m.m0).collect(),
        };
        if let Ok(report) = outgas::detect(
            &m0s,
            config.outgas.window_half_width,
            config.outgas.significance,
        ) {
            if config.outgas.auto_exclude {
                excluded.extend(report.flagged_indices.iter().copied());
            }
            outgas_reports.insert(sr.label.clone(), report);
        }
    }
    excluded.sort_unstable();
    excluded.dedup();

    // Conversion of the first reactant against the inert, per pulse.
    let inert_res = species_results
        .iter()
        .find(|s| s.role == Role::Inert)
        .expect("validated config");
    let reactant_res = species_results.iter().find(|s| s.role == Role::Reactant);
    let mut conversion_rows = Vec::new();
    if let Some(reactant) = reactant_res {
        let reactant_cfg = config
            .species
            .iter()
            .find(|s| s.label == reactant.label)
            .expect("species match");
        let blend_ratio = reactant_cfg.blend_fraction / inert_cfg.blend_fraction;
        for (r_row, i_row) in reactant.moments.iter().zip(&inert_res.moments) {
            let chi = conversion(r_row.m0, i_row.m0, blend_ratio);
            let (value, out_of_range) = match chi {
                Ok(c) => (c.value, c.out_of_range),
                Err(_) => (f64::NAN, true),
            };
            conversion_rows.push(ConversionRow {
                pulse_index: r_row.pulse_index,
                reactant_m0: r_row.m0,
                inert_m0: i_row.m0,
                blend_ratio,
                conversion: value,
                out_of_range,
                excluded: excluded.contains(&r_row.pulse_index),
            });
        }
    }

    // Relationship bookkeeping on series means over the kept pulses.
    let kept = |rows: &[MomentsRow]| -> Vec<MomentsRow> {
        rows.iter()
            .filter(|r| !excluded.contains(&r.pulse_index))
            .copied()
            .collect()
    };
    let relationship = reactant_res.map(|reactant| {
        let r_rows = kept(&reactant.moments);
        let i_rows = kept(&inert_res.moments);
        let mean = |rows: &[MomentsRow], f: fn(&MomentsRow) -> f64| -> f64 {
            rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64
        };
        let m0_r = mean(&r_rows, |r| r.m0);
        let m0_i = mean(&i_rows, |r| r.m0);
        let m1n_r = mean(&r_rows, |r| r.m1_normalized);
        let m1n_i = mean(&i_rows, |r| r.m1_normalized);
        let m0_p: Vec<f64> = species_results
            .iter()
            .filter(|s| s.role == Role::Product)
            .map(|s| mean(&kept(&s.moments), |r| r.m0))
            .collect();
        let reactant_cfg = config
            .species
            .iter()
            .find(|s| s.label == reactant.label)
            .expect("species match");
        let blend = reactant_cfg.blend_fraction / inert_cfg.blend_fraction;
        let tol = 0.02 * blend * m0_i;
        check_relationships(m0_r, &m0_p, m0_i, m1n_r, m1n_i, blend, tol)
    });

    // Moment-calibration cross-check on the corrected (pre-calibration)
    // fluxes of the first non-inert species, when available.
    let mut moment_model = None;
    let mut moment_model_note = None;
    if let Some(corrected) = corrected_by_species {
        let inert_pos = config
            .species
            .iter()
            .position(|s| s.role == Role::Inert)
            .expect("validated config");
        let gas_pos = config.species.iter().position(|s| s.role != Role::Inert);
        if let Some(gas_pos) = gas_pos {
            let usable: Vec<usize> = (0..corrected[gas_pos].len())
                .filter(|i| !excluded.contains(i))
                .collect();
            let m0_gas: Vec<f64> = usable
                .iter()
                .map(|&i| moments(&corrected[gas_pos][i], 0).m0)
                .collect();
            let m0_inert: Vec<f64> = usable
                .iter()
                .map(|&i| moments(&corrected[inert_pos][i], 0).m0)
                .collect();
            let tau_area: Option<Vec<f64>> = usable
                .iter()
                .map(|&i| {
                    flux::residence_props(&corrected[gas_pos][i])
                        .ok()
                        .map(|p| p.tau_area)
                })
                .collect();
            let fitted = match tau_area {
                Some(tau) => calibration::fit_moment_calibration(&m0_gas, &tau, &m0_inert, true),
                None => Err(CalibrationError::RankDeficient(1)),
            };
            match fitted {
                Ok(model) => moment_model = Some(model),
                Err(CalibrationError::RankDeficient(_)) => {
                    match calibration::fit_moment_calibration_reduced(&m0_gas, &m0_inert, true) {
                        Ok(model) => {
                            moment_model = Some(model);
                            moment_model_note = Some(
                                "tau_area carried no information; reduced model fitted".into(),
                            );
                        }
                        Err(e) => moment_model_note = Some(e.to_string()),
                    }
                }
                Err(e) => moment_model_note = Some(e.to_string()),
            }
        }
    }

    Ok(RunResult {
        method: method.to_string(),
        species: species_results,
        conversion: conversion_rows,
        moment_model,
        moment_model_note,
        outgas: outgas_reports,
        excluded_pulses: excluded,
        relationship,
        provenance,
        failure: None,
    })
}

fn partial_result(
    method: &str,
    _config: &ExperimentConfig,
    provenance: Provenance,
    failure: (usize, StageError),
) -> RunResult {
    let (pulse_index, e) = failure;
    RunResult {
        method: method.to_string(),
        species: Vec::new(),
        conversion: Vec::new(),
        moment_model: None,
        moment_model_note: None,
        outgas: BTreeMap::new(),
        excluded_pulses: Vec::new(),
        relationship: None,
        provenance,
        failure: Some(StageFailure {
            pulse_index: Some(pulse_index),
            stage: e.stage.to_string(),
            message: e.message,
            kind: e.kind,
        }),
    }
}

/// First failing pulse (by index) wins, for deterministic reporting.
fn split_failures<T>(results: Vec<Result<T, StageError>>) -> (Vec<T>, Option<(usize, StageError)>) {
    let mut ok = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => return (ok, Some((i, e))),
        }
    }
    (ok, None)
}

fn match_series<'a>(
    raw: &'a [PulseSeries],
    config: &'a ExperimentConfig,
) -> Result<Vec<(&'a SpeciesConfig, &'a PulseSeries)>, PipelineError> {
    let mut ordered = Vec::with_capacity(config.species.len());
    for cfg in &config.species {
        let series = raw
            .iter()
            .find(|s| s.label == cfg.label)
            .ok_or_else(|| PipelineError::MissingSeries(cfg.label.clone()))?;
        if series.pulses.is_empty() {
            return Err(PipelineError::EmptySeries(cfg.label.clone()));
        }
        ordered.push((cfg, series));
    }
    let first = &ordered[0].1.pulses[0];
    for (_, series) in &ordered {
        if series.pulses.len() != ordered[0].1.pulses.len()
            || series.pulses[0].grid != first.grid
        {
            return Err(PipelineError::MismatchedSeries);
        }
    }
    Ok(ordered)
}

fn scale_flux(flux: &Flux, factor: f64) -> Flux {
    flux.with_values(flux.values.iter().map(|v| factor * v).collect())
        .expect("scaling preserves shape")
}

fn median_index(values: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    order[(values.len() - 1) / 2]
}

fn moment_table(series: &PulseSeries) -> Vec<MomentsRow> {
    series
        .pulses
        .iter()
        .map(|p| {
            let m = moments(p, 3);
            MomentsRow {
                pulse_index: p.pulse_index,
                m0: m.m0,
                m1: m.m1,
                m2: m.m2,
                m3: m.m3,
                m1_normalized: m.m1_normalized,
            }
        })
        .collect()
}

/// Serializable view of a run for `summary.json` (the bulky flux arrays
/// live in the CSVs next to it).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub provenance: Provenance,
    pub coefficients: BTreeMap<String, Vec<f64>>,
    pub moment_model: Option<MomentCalibModel>,
    pub moment_model_note: Option<String>,
    pub outgas: BTreeMap<String, OutgasReport>,
    pub excluded_pulses: Vec<usize>,
    pub relationship: Option<RelationshipCheck>,
    pub failure: Option<StageFailure>,
}

impl Summary {
    pub fn of(result: &RunResult) -> Self {
        Summary {
            method: result.method.clone(),
            provenance: result.provenance.clone(),
            coefficients: result
                .species
                .iter()
                .map(|s| (s.label.clone(), s.coefficients.clone()))
                .collect(),
            moment_model: result.moment_model.clone(),
            moment_model_note: result.moment_model_note.clone(),
            outgas: result.outgas.clone(),
            excluded_pulses: result.excluded_pulses.clone(),
            relationship: result.relationship,
            failure: result.failure.clone(),
        }
    }
}

/// Write the result file set: per-species calibrated CSVs, the moment and
/// conversion tables, the JSON summary, and a long-format CSV for plotting.
pub fn emit_results(result: &RunResult, out_dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(out_dir).map_err(|source| IoError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let write = |name: &str, contents: String| -> Result<(), IoError> {
        let path = out_dir.join(name);
        std::fs::write(&path, contents).map_err(|source| IoError::Io { path, source })
    };

    for sr in &result.species {
        emit_csv(
            &out_dir.join(format!("{}_calibrated.csv", sr.label)),
            &sr.calibrated,
        )?;
    }

    let mut moments_csv = String::from("species,pulse_index,m0,m1,m2,m3,m1_normalized\n");
    for sr in &result.species {
        for m in &sr.moments {
            moments_csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                sr.label, m.pulse_index, m.m0, m.m1, m.m2, m.m3, m.m1_normalized
            ));
        }
    }
    write("moments.csv", moments_csv)?;

    let mut conversion_csv =
        String::from("pulse_index,reactant_m0,inert_m0,blend_ratio,conversion,out_of_range,excluded\n");
    for row in &result.conversion {
        conversion_csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.pulse_index,
            row.reactant_m0,
            row.inert_m0,
            row.blend_ratio,
            row.conversion,
            row.out_of_range,
            row.excluded
        ));
    }
    write("conversion.csv", conversion_csv)?;

    let mut long_csv = String::from("pulse_index,time,species,value\n");
    for sr in &result.species {
        for pulse in &sr.calibrated.pulses {
            for (i, v) in pulse.values.iter().enumerate() {
                long_csv.push_str(&format!(
                    "{},{},{},{}\n",
                    pulse.pulse_index,
                    pulse.grid.time_at(i),
                    sr.label,
                    v
                ));
            }
        }
    }
    write("calibrated_long.csv", long_csv)?;

    let summary = serde_json::to_string_pretty(&Summary::of(result))
        .expect("summary serializes");
    write("summary.json", summary)?;
    Ok(())
}
