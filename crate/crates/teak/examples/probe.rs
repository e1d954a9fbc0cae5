use teak::flux::moments;
use teak::pipeline::{run_teak, Provenance};
use teak::simulator::{simulate_outlet_flux, Drift, OutgasEvent, SimScenario};
#[path = "../tests/common/mod.rs"]
mod helpers;
use helpers::*;

fn main() {
    let scenario = SimScenario { grid_points_time: 2000, ..SimScenario::thin_zone_default() };
    let clean_peak = simulate_outlet_flux(&scenario).unwrap().max_abs();
    let mut inert = SimSpecies::inert("argon", 1.0);
    inert.distortion.drift = Drift::Sinusoidal { amplitude: 0.2, period_pulses: 100.0 };
    inert.distortion.noise_std = clean_peak / 20.0;
    inert.distortion.outgas_pulses = vec![
        OutgasEvent { pulse_index: 9, extra_fraction: 1.0, delay_s: 0.4 },
        OutgasEvent { pulse_index: 16, extra_fraction: 1.0, delay_s: 0.6 },
        OutgasEvent { pulse_index: 80, extra_fraction: 1.0, delay_s: 0.5 },
    ];
    let species = vec![inert];
    let (raw, _) = simulate_experiment(&scenario, &species, 100, 100);
    let mut config = config_for(&species);
    config.outgas.auto_exclude = true;
    let r = run_teak(&raw, &config, Provenance::new(&config, Some(100))).unwrap();
    assert!(r.failure.is_none());
    println!("excluded: {:?}", r.excluded_pulses);
    let kept: Vec<(usize, f64)> = r.species[0].moments.iter()
        .filter(|m| !r.excluded_pulses.contains(&m.pulse_index))
        .map(|m| (m.pulse_index, m.m0)).collect();
    let vals: Vec<f64> = kept.iter().map(|(_, v)| *v).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    println!("kept n={} mean={:.4} cov={:.4}", vals.len(), mean, coefficient_of_variation(&vals));
    let mut dev: Vec<(usize, f64)> = kept.iter().map(|(i, v)| (*i, (v - mean)/mean)).collect();
    dev.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
    println!("worst deviations: {:?}", &dev[..8.min(dev.len())]);
    // raw m0 of corrected? compare coefficient series
    let coeffs = &r.species[0].coefficients;
    let mut cdev: Vec<(usize, f64)> = coeffs.iter().enumerate()
        .filter(|(i, _)| !r.excluded_pulses.contains(i))
        .map(|(i, c)| (i, *c)).collect();
    cdev.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    println!("coeff max: {:?}", &cdev[..4.min(cdev.len())]);
    println!("coeff min: {:?}", &cdev[cdev.len().saturating_sub(4)..]);
    // also raw (pre-calibration) m0 of pulse vs drift factor
    for &(i, d) in dev.iter().take(3) {
        let raw_m0 = moments(&raw[0].pulses[i], 0).m0;
        let drift = 1.0 + 0.2*(2.0*std::f64::consts::PI*i as f64/100.0).sin();
        println!("pulse {i}: rel dev {d:+.4} raw_m0 {raw_m0:.4} drift {drift:.4} coeff {:.4} coeff*drift {:.4}", coeffs[i], coeffs[i]*drift);
    }
}
