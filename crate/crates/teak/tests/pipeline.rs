//! End-to-end workflow tests on simulated experiments.

mod common;

use approx::assert_abs_diff_eq;
use common::*;
use teak::flux::moments;
use teak::io::{ingest_csv, BaselineMethod, Role};
use teak::pipeline::{emit_results, run_teak, run_traditional, Provenance, RunResult};
use teak::simulator::{Drift, SimScenario};

fn provenance(config: &teak::io::ExperimentConfig, seed: u64) -> Provenance {
    Provenance::new(config, Some(seed))
}

fn teak_run(species: &[SimSpecies], pulses: usize, seed: u64) -> RunResult {
    let scenario = SimScenario::thin_zone_default();
    let (raw, _) = simulate_experiment(&scenario, species, pulses, seed);
    let config = config_for(species);
    run_teak(&raw, &config, provenance(&config, seed)).unwrap()
}

#[test]
fn undistorted_inert_pair_calibrates_to_unity() {
    let species = vec![
        SimSpecies::inert("argon", 0.5),
        SimSpecies::reactant("helium", 0.5, 0.0),
    ];
    let result = teak_run(&species, 8, 1);
    assert!(result.failure.is_none(), "{:?}", result.failure);
    for sr in &result.species {
        for &c in &sr.coefficients {
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-9);
        }
    }
    for row in &result.conversion {
        assert!(row.conversion.abs() <= 1e-6, "chi = {}", row.conversion);
    }
}

#[test]
fn sinusoidal_drift_is_removed_by_teak_but_not_traditional() {
    let mut inert = SimSpecies::inert("argon", 1.0);
    inert.distortion.drift = Drift::Sinusoidal {
        amplitude: 0.2,
        period_pulses: 100.0,
    };
    let species = vec![inert];
    let scenario = SimScenario::thin_zone_default();
    let (raw, _) = simulate_experiment(&scenario, &species, 100, 3);
    let config = config_for(&species);

    let teak_result = run_teak(&raw, &config, provenance(&config, 3)).unwrap();
    assert!(teak_result.failure.is_none(), "{:?}", teak_result.failure);
    let trad_result =
        run_traditional(&raw, &config, 1.0, provenance(&config, 3)).unwrap();

    let teak_m0: Vec<f64> = teak_result.species[0].moments.iter().map(|m| m.m0).collect();
    let trad_m0: Vec<f64> = trad_result.species[0].moments.iter().map(|m| m.m0).collect();
    let teak_cov = coefficient_of_variation(&teak_m0);
    let trad_cov = coefficient_of_variation(&trad_m0);
    assert!(teak_cov <= 0.01, "teak CoV {teak_cov}");
    assert!(
        trad_cov >= 10.0 * teak_cov,
        "traditional CoV {trad_cov} vs teak {teak_cov}"
    );
}

#[test]
fn teak_beats_traditional_pulsewise_under_drift_and_stale_coefficient() {
    // Reaction experiment with sensitivity drift on the reactant channel
    // and a prior coefficient that is 15% stale. The drift never swings far
    // enough to cancel the staleness, which is the realistic regime (a
    // drift that exactly undoes a stale calibration is a coincidence, not
    // a method).
    let inert = SimSpecies::inert("argon", 0.5);
    let mut reactant = SimSpecies::reactant("oxygen", 0.5, 1.15);
    reactant.distortion.scale = 0.43;
    reactant.distortion.drift = Drift::Sinusoidal {
        amplitude: 0.05,
        period_pulses: 40.0,
    };
    let species = vec![inert, reactant];
    let scenario = SimScenario::thin_zone_default();
    let (raw, clean) = simulate_experiment(&scenario, &species, 40, 7);
    let config = config_for(&species);

    // Ground truth per pulse from the clean series.
    let chi_true: Vec<f64> = (0..40)
        .map(|i| {
            let r = moments(&clean[1].pulses[i], 0).m0;
            let inert_m0 = moments(&clean[0].pulses[i], 0).m0;
            1.0 - r / inert_m0
        })
        .collect();

    let teak_result = run_teak(&raw, &config, provenance(&config, 7)).unwrap();
    assert!(teak_result.failure.is_none(), "{:?}", teak_result.failure);
    // The stale prior coefficient: off the true 1/0.43 by 15%.
    let trad_result = run_traditional(
        &raw,
        &config,
        1.15 / 0.43,
        provenance(&config, 7),
    )
    .unwrap();

    let mut teak_not_worse = 0usize;
    for i in 0..40 {
        let teak_err = (teak_result.conversion[i].conversion - chi_true[i]).abs();
        let trad_err = (trad_result.conversion[i].conversion - chi_true[i]).abs();
        if teak_err <= trad_err {
            teak_not_worse += 1;
        }
    }
    assert!(
        teak_not_worse >= 36,
        "teak at least as accurate on only {teak_not_worse}/40 pulses"
    );
}

#[test]
fn stage_failure_names_pulse_and_stage_and_keeps_partials() {
    let species = vec![SimSpecies::inert("argon", 1.0)];
    let scenario = SimScenario::thin_zone_default();
    let (mut raw, _) = simulate_experiment(&scenario, &species, 5, 11);
    // Sabotage pulse 3 into a pure decay so the gamma baseline has no
    // interior peak to anchor on.
    let grid = raw[0].pulses[3].grid;
    let decay: Vec<f64> = (0..grid.count).map(|i| (-(i as f64) * 0.01).exp()).collect();
    raw[0].pulses[3] = raw[0].pulses[3].with_values(decay).unwrap();

    let config = config_for(&species);
    let result = run_teak(&raw, &config, provenance(&config, 11)).unwrap();
    let failure = result.failure.expect("run must carry a failure marker");
    assert_eq!(failure.pulse_index, Some(3));
    assert_eq!(failure.stage, "baseline");
}

#[test]
fn emitted_tables_are_self_consistent_and_deterministic() {
    let species = vec![
        SimSpecies::inert("argon", 0.5),
        SimSpecies::reactant("oxygen", 0.5, 1.15),
    ];
    let scenario = SimScenario {
        grid_points_time: 1500,
        ..SimScenario::thin_zone_default()
    };
    let (raw, _) = simulate_experiment(&scenario, &species, 6, 13);
    let config = config_for(&species);
    let result = run_teak(&raw, &config, provenance(&config, 13)).unwrap();
    assert!(result.failure.is_none(), "{:?}", result.failure);

    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    emit_results(&result, &out_a).unwrap();
    let result_again = run_teak(&raw, &config, provenance(&config, 13)).unwrap();
    emit_results(&result_again, &out_b).unwrap();

    for name in [
        "argon_calibrated.csv",
        "oxygen_calibrated.csv",
        "moments.csv",
        "conversion.csv",
        "summary.json",
        "calibrated_long.csv",
    ] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} not byte-identical across reruns");
        assert!(!a.is_empty());
    }

    // Conversion recomputes exactly from the emitted moment table.
    let moments_csv = std::fs::read_to_string(out_a.join("moments.csv")).unwrap();
    let mut m0: std::collections::HashMap<(String, usize), f64> = Default::default();
    for line in moments_csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        m0.insert(
            (cells[0].to_string(), cells[1].parse().unwrap()),
            cells[2].parse().unwrap(),
        );
    }
    let conversion_csv = std::fs::read_to_string(out_a.join("conversion.csv")).unwrap();
    for line in conversion_csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let pulse: usize = cells[0].parse().unwrap();
        let blend: f64 = cells[3].parse().unwrap();
        let chi: f64 = cells[4].parse().unwrap();
        let r = m0[&("oxygen".to_string(), pulse)];
        let i = m0[&("argon".to_string(), pulse)];
        assert_eq!(chi, 1.0 - r / (blend * i), "pulse {pulse}");
    }

    // Round trip of an emitted series is bit-exact.
    let (series, warnings) = ingest_csv(&out_a.join("argon_calibrated.csv")).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(series.pulses.len(), 6);
    for (read, orig) in series
        .pulses
        .iter()
        .zip(&result.species_result("argon").unwrap().calibrated.pulses)
    {
        assert_eq!(read.values, orig.values);
    }
}

#[test]
fn coefficients_are_discretization_robust() {
    // The TCCO coefficient must not depend on the grid at the 1% level.
    let species = vec![
        SimSpecies::inert("argon", 0.5),
        SimSpecies::reactant("oxygen", 0.5, 1.15),
    ];
    let coarse = SimScenario {
        grid_points_time: 1000,
        ..SimScenario::thin_zone_default()
    };
    let fine = SimScenario {
        grid_points_time: 2000,
        ..SimScenario::thin_zone_default()
    };
    let config = config_for(&species);
    let mut coeffs = Vec::new();
    for scenario in [&coarse, &fine] {
        let (raw, _) = simulate_experiment(scenario, &species, 3, 17);
        let result = run_teak(&raw, &config, provenance(&config, 17)).unwrap();
        assert!(result.failure.is_none(), "{:?}", result.failure);
        coeffs.push(result.species_result("oxygen").unwrap().coefficients[1]);
    }
    let rel = (coeffs[0] - coeffs[1]).abs() / coeffs[1].abs();
    assert!(rel <= 0.01, "coefficient moved {rel:.4} across grids");
}

#[test]
fn tail_mean_baseline_config_is_honored() {
    let species = vec![SimSpecies::inert("argon", 1.0)];
    let scenario = SimScenario {
        grid_points_time: 1500,
        ..SimScenario::thin_zone_default()
    };
    let (raw, _) = simulate_experiment(&scenario, &species, 4, 19);
    let mut config = config_for(&species);
    config.baseline_method = BaselineMethod::TailMean { window_s: 0.5 };
    let result = run_teak(&raw, &config, provenance(&config, 19)).unwrap();
    assert!(result.failure.is_none(), "{:?}", result.failure);
    assert_eq!(result.species[0].role, Role::Inert);
}
