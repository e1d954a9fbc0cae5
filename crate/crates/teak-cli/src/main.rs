//! Command-line front end for the TAP pulse preprocessing toolkit.
//!
//! Subcommands: `simulate` (synthetic experiments from a scenario file),
//! `teak` (the physics-aware pipeline), `traditional` (tail-mean baseline
//! with a fixed prior coefficient), `moments`, `detect-outgas`, and
//! `compare`. Exit codes: 0 success, 2 schema/config error, 3 numerical
//! failure, 4 infeasible calibration.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use teak::flux::{moments, Flux, PulseSeries};
use teak::io::{emit_csv, ingest_csv, ExperimentConfig, IngestWarning, IoError, Role};
use teak::outgas;
use teak::pipeline::{
    emit_results, run_teak, run_traditional, FailureKind, Provenance, RunResult,
};
use teak::simulator::{apply_distortion, simulate_outlet_flux, DistortionSpec, SimScenario};

const EXIT_SCHEMA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "teak", version, about = "TAP pulse-response preprocessing")]
struct Cli {
    /// Seed for simulated noise; recorded in provenance.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic experiment from a scenario file.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long)]
        out_dir: PathBuf,
    },
    /// Run the full smooth → baseline → calibrate workflow.
    Teak {
        config: PathBuf,
        #[command(flatten)]
        io: RunIo,
    },
    /// Run the traditional path: tail-mean baseline, fixed coefficient.
    Traditional {
        config: PathBuf,
        /// Prior inert-experiment calibration coefficient applied to every
        /// non-inert species.
        #[arg(long)]
        coefficient: f64,
        #[command(flatten)]
        io: RunIo,
    },
    /// Print the moment table of one species file.
    Moments {
        #[arg(short, long)]
        input: PathBuf,
    },
    /// Flag outgassing pulses in one species file.
    DetectOutgas {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, default_value_t = outgas::DEFAULT_WINDOW_HALF_WIDTH)]
        window_half_width: usize,
        #[arg(long, default_value_t = outgas::DEFAULT_SIGNIFICANCE)]
        significance: f64,
    },
    /// Compare two result directories (m0 spread and conversion gap).
    Compare {
        left_dir: PathBuf,
        right_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunIo {
    /// Directory holding one `<label>.csv` per configured species.
    #[arg(short, long)]
    input_dir: PathBuf,
    #[arg(short, long)]
    out_dir: PathBuf,
}

/// Scenario file for `simulate`.
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateSpec {
    /// Reactor geometry and discretization; its `rate_constant` is the
    /// default for species that do not set one.
    reactor: SimScenario,
    pulses: usize,
    #[serde(default)]
    seed: u64,
    species: Vec<SimSpeciesSpec>,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSpeciesSpec {
    label: String,
    mass_amu: f64,
    role: Role,
    blend_fraction: f64,
    #[serde(default)]
    rate_constant_per_s: Option<f64>,
    /// When set, the rate constant decays linearly to zero over this many
    /// pulses.
    #[serde(default)]
    rate_decay_pulses: Option<usize>,
    #[serde(default)]
    distortion: DistortionSpec,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { scenario, out_dir } => simulate(&scenario, &out_dir, cli.seed),
        Command::Teak { config, io } => {
            let (raw, cfg) = load_run_inputs(&config, &io.input_dir)?;
            let result = run_teak(&raw, &cfg, Provenance::new(&cfg, cli.seed))?;
            finish_run(result, &io.out_dir)
        }
        Command::Traditional {
            config,
            coefficient,
            io,
        } => {
            let (raw, cfg) = load_run_inputs(&config, &io.input_dir)?;
            let result =
                run_traditional(&raw, &cfg, coefficient, Provenance::new(&cfg, cli.seed))?;
            finish_run(result, &io.out_dir)
        }
        Command::Moments { input } => print_moments(&input),
        Command::DetectOutgas {
            input,
            window_half_width,
            significance,
        } => detect_outgas(&input, window_half_width, significance),
        Command::Compare {
            left_dir,
            right_dir,
        } => compare(&left_dir, &right_dir),
    }
}

fn simulate(scenario_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(scenario_path)
        .with_context(|| format!("reading {}", scenario_path.display()))?;
    let spec: SimulateSpec = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!(SchemaError(format!("{}: {e}", scenario_path.display()))))?;
    spec.reactor.validate()?;
    if spec.pulses == 0 || spec.species.is_empty() {
        return Err(SchemaError("need at least one pulse and one species".into()).into());
    }
    let inert = spec
        .species
        .iter()
        .find(|s| s.role == Role::Inert)
        .ok_or_else(|| SchemaError("scenario needs an inert species".into()))?;
    let seed = seed_override.unwrap_or(spec.seed);

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    // Clean solves are cached per (rate constant, diffusivity, amount).
    let mut cache: HashMap<(u64, u64, u64), Flux> = HashMap::new();
    let mut truth_rows = Vec::new();
    let mut scales = BTreeMap::new();

    for sp in &spec.species {
        scales.insert(sp.label.clone(), sp.distortion.scale);
        // Knudsen transport: diffusivity goes as 1/sqrt(mass).
        let diffusivity = spec.reactor.diffusivity * (inert.mass_amu / sp.mass_amu).sqrt();
        let amount = spec.reactor.pulse_amount * sp.blend_fraction
            / inert.blend_fraction.max(f64::MIN_POSITIVE);
        let k0 = sp.rate_constant_per_s.unwrap_or(spec.reactor.rate_constant);

        let mut distorted_pulses = Vec::with_capacity(spec.pulses);
        for pulse in 0..spec.pulses {
            let k = match sp.rate_decay_pulses {
                Some(decay) if decay > 0 => {
                    k0 * (decay.saturating_sub(pulse) as f64 / decay as f64)
                }
                _ => k0,
            };
            let key = (k.to_bits(), diffusivity.to_bits(), amount.to_bits());
            let clean = match cache.get(&key) {
                Some(f) => f.clone(),
                None => {
                    let f = simulate_outlet_flux(&SimScenario {
                        rate_constant: k,
                        diffusivity,
                        pulse_amount: amount,
                        ..spec.reactor.clone()
                    })?;
                    cache.insert(key, f.clone());
                    f
                }
            };
            let mut clean = clean;
            clean.species_label = sp.label.clone();
            clean.pulse_index = pulse;
            let distorted = apply_distortion(
                &clean,
                &sp.distortion,
                pulse,
                derive_seed(seed, &sp.label, pulse),
            )?;
            truth_rows.push(serde_json::json!({
                "species": sp.label,
                "pulse_index": pulse,
                "rate_constant": k,
                "true_m0": moments(&clean, 0).m0,
            }));
            distorted_pulses.push(distorted);
        }
        let series = PulseSeries::new(sp.label.clone(), distorted_pulses)?;
        emit_csv(&out_dir.join(format!("{}.csv", sp.label)), &series)?;
    }

    let truth = serde_json::json!({
        "seed": seed,
        "scale_factors": scales,
        "pulses": truth_rows,
    });
    let truth_path = out_dir.join("ground_truth.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)
        .with_context(|| format!("writing {}", truth_path.display()))?;
    println!(
        "simulated {} pulses x {} species into {}",
        spec.pulses,
        spec.species.len(),
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Stable per-pulse noise stream: seed mixed with the label and index.
fn derive_seed(seed: u64, label: &str, pulse: usize) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01B3);
    }
    h ^ (pulse as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

fn load_run_inputs(
    config_path: &Path,
    input_dir: &Path,
) -> Result<(Vec<PulseSeries>, ExperimentConfig)> {
    let config = ExperimentConfig::load(config_path)?;
    let mut raw = Vec::with_capacity(config.species.len());
    for sp in &config.species {
        let path = input_dir.join(format!("{}.csv", sp.label));
        let (series, warnings) = ingest_csv(&path)?;
        for w in warnings {
            match w {
                IngestWarning::Resampled {
                    max_deviation_steps,
                } => eprintln!(
                    "warning: {}: time grid deviated from uniform by {max_deviation_steps} steps; resampled",
                    path.display()
                ),
            }
        }
        raw.push(series);
    }
    Ok((raw, config))
}

fn finish_run(result: RunResult, out_dir: &Path) -> Result<ExitCode> {
    emit_results(&result, out_dir)?;
    match &result.failure {
        None => {
            println!("ok: results in {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Some(failure) => {
            eprintln!(
                "failed at pulse {:?}, stage '{}': {} (partial results in {})",
                failure.pulse_index,
                failure.stage,
                failure.message,
                out_dir.display()
            );
            Ok(ExitCode::from(match failure.kind {
                FailureKind::Numerical => EXIT_NUMERICAL,
                FailureKind::InfeasibleCalibration => EXIT_INFEASIBLE,
            }))
        }
    }
}

fn print_moments(input: &Path) -> Result<ExitCode> {
    let (series, _) = ingest_csv(input)?;
    println!("species,pulse_index,m0,m1,m2,m3,m1_normalized");
    for pulse in &series.pulses {
        let m = moments(pulse, 3);
        println!(
            "{},{},{},{},{},{},{}",
            series.label, pulse.pulse_index, m.m0, m.m1, m.m2, m.m3, m.m1_normalized
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn detect_outgas(input: &Path, window_half_width: usize, significance: f64) -> Result<ExitCode> {
    let (series, _) = ingest_csv(input)?;
    let m0s: Vec<f64> = series.pulses.iter().map(|p| moments(p, 0).m0).collect();
    let report = outgas::detect(&m0s, window_half_width, significance)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn compare(left_dir: &Path, right_dir: &Path) -> Result<ExitCode> {
    let left = read_moment_table(&left_dir.join("moments.csv"))?;
    let right = read_moment_table(&right_dir.join("moments.csv"))?;
    let mut report = BTreeMap::new();
    for (species, left_m0) in &left {
        let Some(right_m0) = right.get(species) else {
            continue;
        };
        let stats = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (v.len() - 1).max(1) as f64;
            (mean, var)
        };
        let (lm, lv) = stats(left_m0);
        let (rm, rv) = stats(right_m0);
        report.insert(
            species.clone(),
            serde_json::json!({
                "left":  { "m0_mean": lm, "m0_variance": lv, "m0_cov": lv.sqrt() / lm.abs() },
                "right": { "m0_mean": rm, "m0_variance": rv, "m0_cov": rv.sqrt() / rm.abs() },
                "variance_ratio_left_over_right": lv / rv,
            }),
        );
    }
    let conversion_gap = match (
        read_conversion_column(&left_dir.join("conversion.csv")),
        read_conversion_column(&right_dir.join("conversion.csv")),
    ) {
        (Ok(a), Ok(b)) if !a.is_empty() && a.len() == b.len() => Some(
            a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64,
        ),
        _ => None,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "species": report,
            "mean_abs_conversion_gap": conversion_gap,
        }))?
    );
    Ok(ExitCode::SUCCESS)
}

fn read_moment_table(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 3 {
            return Err(SchemaError(format!("{}:{}: short row", path.display(), i + 1)).into());
        }
        let m0: f64 = cells[2].parse().map_err(|_| {
            SchemaError(format!("{}:{}: bad m0 value", path.display(), i + 1))
        })?;
        out.entry(cells[0].to_string()).or_default().push(m0);
    }
    Ok(out)
}

fn read_conversion_column(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() >= 5 {
            out.push(cells[4].parse()?);
        }
    }
    Ok(out)
}

/// Marks an error as a schema/config problem for exit-code classification.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct SchemaError(String);

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<SchemaError>() {
            return EXIT_SCHEMA;
        }
        if let Some(io_err) = cause.downcast_ref::<IoError>() {
            return match io_err {
                IoError::Schema { .. }
                | IoError::Config(_)
                | IoError::NonMonotoneTime { .. }
                | IoError::Io { .. } => EXIT_SCHEMA,
                IoError::Flux(_) => EXIT_NUMERICAL,
            };
        }
        if let Some(cqp) = cause.downcast_ref::<teak::cqp::CqpError>() {
            return match cqp {
                teak::cqp::CqpError::Infeasible(_) => EXIT_INFEASIBLE,
                _ => EXIT_NUMERICAL,
            };
        }
        if cause
            .downcast_ref::<teak::pipeline::PipelineError>()
            .is_some()
        {
            return EXIT_SCHEMA;
        }
        if cause.downcast_ref::<teak::simulator::SimError>().is_some()
            || cause.downcast_ref::<teak::outgas::OutgasError>().is_some()
            || cause.downcast_ref::<teak::flux::FluxError>().is_some()
        {
            return EXIT_NUMERICAL;
        }
    }
    EXIT_NUMERICAL
}
