//! Shared fixtures: simulated experiment series with controlled distortions.

use std::collections::HashMap;
use teak::calibration::TccoConfig;
use teak::flux::{Flux, PulseSeries};
use teak::io::{
    BaselineMethod, ExperimentConfig, OutgasConfig, ReferenceDv, Role, SmoothingConfig,
    SpeciesConfig,
};
use teak::simulator::{apply_distortion, simulate_outlet_flux, DistortionSpec, SimScenario};

/// Stable per-pulse RNG stream derived from a run seed and species label.
pub fn pulse_seed(seed: u64, label: &str, pulse: usize) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01B3);
    }
    h ^ (pulse as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// One species to simulate: a rate-constant schedule plus distortions.
pub struct SimSpecies {
    pub label: String,
    pub mass_amu: f64,
    pub role: Role,
    pub blend_fraction: f64,
    /// Rate constant per pulse index (clamped to the last entry).
    pub rate_constants: Vec<f64>,
    pub distortion: DistortionSpec,
}

impl SimSpecies {
    pub fn inert(label: &str, blend: f64) -> Self {
        SimSpecies {
            label: label.into(),
            mass_amu: 40.0,
            role: Role::Inert,
            blend_fraction: blend,
            rate_constants: vec![0.0],
            distortion: DistortionSpec::default(),
        }
    }

    pub fn reactant(label: &str, blend: f64, k: f64) -> Self {
        SimSpecies {
            label: label.into(),
            mass_amu: 40.0,
            role: Role::Reactant,
            blend_fraction: blend,
            rate_constants: vec![k],
            distortion: DistortionSpec::default(),
        }
    }
}

/// Simulate a multi-species experiment; returns the distorted series plus
/// each species' clean (undistorted) series for ground-truth comparisons.
pub fn simulate_experiment(
    scenario: &SimScenario,
    species: &[SimSpecies],
    pulses: usize,
    seed: u64,
) -> (Vec<PulseSeries>, Vec<PulseSeries>) {
    let mut clean_cache: HashMap<u64, Flux> = HashMap::new();
    let mut distorted_out = Vec::new();
    let mut clean_out = Vec::new();
    for sp in species {
        let mut distorted_pulses = Vec::with_capacity(pulses);
        let mut clean_pulses = Vec::with_capacity(pulses);
        for pulse in 0..pulses {
            let k = *sp
                .rate_constants
                .get(pulse.min(sp.rate_constants.len() - 1))
                .expect("non-empty schedule");
            let clean = clean_cache
                .entry(k.to_bits())
                .or_insert_with(|| {
                    simulate_outlet_flux(&SimScenario {
                        rate_constant: k,
                        pulse_amount: scenario.pulse_amount,
                        ..scenario.clone()
                    })
                    .expect("scenario meets the accuracy budget")
                })
                .clone();
            let amount_scale = sp.blend_fraction
                / species
                    .iter()
                    .find(|s| s.role == Role::Inert)
                    .map(|s| s.blend_fraction)
                    .unwrap_or(1.0);
            // Feed share: species are pulsed in proportion to their blend.
            let mut clean = clean
                .with_values(clean.values.iter().map(|v| amount_scale * v).collect())
                .unwrap();
            clean.species_label = sp.label.clone();
            clean.pulse_index = pulse;
            let distorted = apply_distortion(
                &clean,
                &sp.distortion,
                pulse,
                pulse_seed(seed, &sp.label, pulse),
            )
            .expect("valid distortion");
            clean_pulses.push(clean);
            distorted_pulses.push(distorted);
        }
        distorted_out.push(PulseSeries::new(sp.label.clone(), distorted_pulses).unwrap());
        clean_out.push(PulseSeries::new(sp.label.clone(), clean_pulses).unwrap());
    }
    (distorted_out, clean_out)
}

pub fn config_for(species: &[SimSpecies]) -> ExperimentConfig {
    ExperimentConfig {
        species: species
            .iter()
            .map(|s| SpeciesConfig {
                label: s.label.clone(),
                mass_amu: s.mass_amu,
                role: s.role,
                blend_fraction: s.blend_fraction,
            })
            .collect(),
        reference_dv: ReferenceDv::AutoMedian,
        baseline_method: BaselineMethod::Gamma,
        smoothing: SmoothingConfig::Auto,
        tcco: TccoConfig::default(),
        outgas: OutgasConfig::default(),
    }
}

pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1).max(1) as f64;
    var.sqrt() / mean.abs()
}

pub fn variance(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1).max(1) as f64
}
