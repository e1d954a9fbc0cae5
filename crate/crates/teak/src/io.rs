//! File formats: the wide CSV pulse layout and the JSON experiment config.
//!
//! One CSV per species, header `time,pulse_0,pulse_1,...`, time in seconds
//! ascending, `.` decimal separator, UTF-8. Values are written with Rust's
//! shortest-round-trip float formatting, so emit → ingest reproduces every
//! bit.

use crate::calibration::TccoConfig;
use crate::flux::{Flux, FluxUnits, PulseSeries, TimeGrid, MIN_GRID_POINTS};
use crate::outgas::{DEFAULT_SIGNIFICANCE, DEFAULT_WINDOW_HALF_WIDTH};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Relative deviation from a uniform step that triggers resampling.
pub const UNIFORM_STEP_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: time column not strictly increasing")]
    NonMonotoneTime { path: PathBuf, line: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Flux(#[from] crate::flux::FluxError),
}

/// Species role in the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Inert,
    Reactant,
    Product,
    Fragment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub label: String,
    pub mass_amu: f64,
    pub role: Role,
    pub blend_fraction: f64,
}

/// Which inert pulse anchors the series self-calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceDv {
    /// The pulse whose m⁰ is the series median; resists outgassing.
    #[default]
    AutoMedian,
    PulseIndex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    #[default]
    Gamma,
    TailMean {
        window_s: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingConfig {
    #[default]
    Auto,
    Factor(f64),
}

impl SmoothingConfig {
    pub fn factor(&self) -> Option<f64> {
        match self {
            SmoothingConfig::Auto => None,
            SmoothingConfig::Factor(f) => Some(*f),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutgasConfig {
    pub window_half_width: usize,
    pub significance: f64,
    /// Exclude flagged pulses from series-level fits without confirmation.
    pub auto_exclude: bool,
}

impl Default for OutgasConfig {
    fn default() -> Self {
        OutgasConfig {
            window_half_width: DEFAULT_WINDOW_HALF_WIDTH,
            significance: DEFAULT_SIGNIFICANCE,
            auto_exclude: false,
        }
    }
}

/// Full experiment description consumed by the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub species: Vec<SpeciesConfig>,
    #[serde(default)]
    pub reference_dv: ReferenceDv,
    #[serde(default)]
    pub baseline_method: BaselineMethod,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub tcco: TccoConfig,
    #[serde(default)]
    pub outgas: OutgasConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), IoError> {
        if self.species.is_empty() {
            return Err(IoError::Config("no species configured".into()));
        }
        let inert_count = self
            .species
            .iter()
            .filter(|s| s.role == Role::Inert)
            .count();
        if inert_count != 1 {
            return Err(IoError::Config(format!(
                "exactly one inert species required, found {inert_count}"
            )));
        }
        let mut labels: Vec<&str> = self.species.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.species.len() {
            return Err(IoError::Config("species labels must be unique".into()));
        }
        for s in &self.species {
            if s.label.is_empty() {
                return Err(IoError::Config("empty species label".into()));
            }
            if !(s.mass_amu > 0.0) {
                return Err(IoError::Config(format!(
                    "species {}: mass must be positive",
                    s.label
                )));
            }
            if !(0.0..=1.0).contains(&s.blend_fraction) {
                return Err(IoError::Config(format!(
                    "species {}: blend fraction must be in [0, 1]",
                    s.label
                )));
            }
        }
        let blend_sum: f64 = self.species.iter().map(|s| s.blend_fraction).sum();
        if (blend_sum - 1.0).abs() > 1e-9 {
            return Err(IoError::Config(format!(
                "blend fractions must sum to 1, got {blend_sum}"
            )));
        }
        Ok(())
    }

    pub fn inert(&self) -> &SpeciesConfig {
        self.species
            .iter()
            .find(|s| s.role == Role::Inert)
            .expect("validated config has an inert species")
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| IoError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// SHA-256 of the canonical JSON serialization, for provenance.
    pub fn sha256(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

/// Warnings the ingest path can raise without failing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestWarning {
    /// Time column deviated from uniform by more than the tolerance; values
    /// were linearly resampled onto a uniform grid.
    Resampled { max_deviation_steps: String },
}

/// Read one species' pulse series from a wide-format CSV.
///
/// The species label is taken from the file stem.
pub fn ingest_csv(path: &Path) -> Result<(PulseSeries, Vec<IngestWarning>), IoError> {
    let file = File::open(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let schema_err = |line: usize, message: String| IoError::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "species".to_string());

    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(source))) => {
            return Err(IoError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
        None => return Err(schema_err(1, "empty file".into())),
    };
    let columns: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if columns.first() != Some(&"time") {
        return Err(schema_err(1, format!("first column must be 'time', got {:?}", columns.first())));
    }
    let n_pulses = columns.len() - 1;
    if n_pulses == 0 {
        return Err(schema_err(1, "no pulse columns".into()));
    }
    for (k, name) in columns.iter().skip(1).enumerate() {
        let expected = format!("pulse_{k}");
        if *name != expected {
            return Err(schema_err(
                1,
                format!("column {} must be '{expected}', got '{name}'", k + 1),
            ));
        }
    }

    let mut times: Vec<f64> = Vec::new();
    let mut columns_data: Vec<Vec<f64>> = vec![Vec::new(); n_pulses];
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_pulses + 1 {
            return Err(schema_err(
                line_no,
                format!("expected {} cells, got {}", n_pulses + 1, cells.len()),
            ));
        }
        let mut parsed = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                schema_err(
                    line_no,
                    format!(
                        "column '{}': cannot parse '{cell}' as a number",
                        columns[col]
                    ),
                )
            })?;
            if !value.is_finite() {
                return Err(schema_err(
                    line_no,
                    format!("column '{}': non-finite value", columns[col]),
                ));
            }
            parsed.push(value);
        }
        if let Some(&prev) = times.last() {
            if parsed[0] <= prev {
                return Err(IoError::NonMonotoneTime {
                    path: path.to_path_buf(),
                    line: line_no,
                });
            }
        }
        times.push(parsed[0]);
        for (k, v) in parsed[1..].iter().enumerate() {
            columns_data[k].push(*v);
        }
    }

    let n = times.len();
    if n < MIN_GRID_POINTS {
        return Err(schema_err(
            n + 1,
            format!("need at least {MIN_GRID_POINTS} rows, got {n}"),
        ));
    }

    let step = (times[n - 1] - times[0]) / (n - 1) as f64;
    let max_dev = times
        .iter()
        .enumerate()
        .map(|(i, t)| (t - (times[0] + i as f64 * step)).abs())
        .fold(0.0_f64, f64::max);
    let grid = TimeGrid::new(times[0].max(0.0), step, n)?;

    let mut warnings = Vec::new();
    if max_dev > UNIFORM_STEP_TOL * step {
        // Resample every pulse onto the uniform grid.
        for col in columns_data.iter_mut() {
            let resampled: Vec<f64> = (0..n)
                .map(|i| interp_at(&times, col, grid.time_at(i)))
                .collect();
            *col = resampled;
        }
        warnings.push(IngestWarning::Resampled {
            max_deviation_steps: format!("{:.3e}", max_dev / step),
        });
    }

    let pulses = columns_data
        .into_iter()
        .enumerate()
        .map(|(k, values)| Flux::new(grid, values, FluxUnits::Volts, label.clone(), k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((PulseSeries::new(label, pulses)?, warnings))
}

fn interp_at(times: &[f64], values: &[f64], t: f64) -> f64 {
    match times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
        Ok(i) => values[i],
        Err(0) => values[0],
        Err(i) if i >= times.len() => values[times.len() - 1],
        Err(i) => {
            let frac = (t - times[i - 1]) / (times[i] - times[i - 1]);
            values[i - 1] * (1.0 - frac) + values[i] * frac
        }
    }
}

/// Write a pulse series in the wide CSV format.
pub fn emit_csv(path: &Path, series: &PulseSeries) -> Result<(), IoError> {
    let io_err = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>, s: &str| w.write_all(s.as_bytes()).map_err(io_err);

    let mut header = String::from("time");
    for k in 0..series.pulses.len() {
        header.push_str(&format!(",pulse_{k}"));
    }
    header.push('\n');
    write(&mut w, &header)?;

    if let Some(first) = series.pulses.first() {
        for i in 0..first.len() {
            let mut row = format!("{}", first.grid.time_at(i));
            for pulse in &series.pulses {
                row.push(',');
                row.push_str(&format!("{}", pulse.values[i]));
            }
            row.push('\n');
            write(&mut w, &row)?;
        }
    }
    w.flush().map_err(io_err)
}
