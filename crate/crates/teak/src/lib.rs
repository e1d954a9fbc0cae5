//! Preprocessing toolkit for TAP (Temporal Analysis of Products) reactor
//! pulse-response data.
//!
//! The pipeline turns raw mass-spectrometer voltage traces into calibrated,
//! physically consistent flux responses in three stages — cubic-spline
//! smoothing, Gamma-tail baseline correction, and constrained least-squares
//! calibration between species (TCCO) — orchestrated as the TEAK workflow.
//! A Knudsen diffusion-reaction simulator generates ground-truth pulses for
//! validating every stage.
//!
//! Modules:
//! - [`flux`]: pulse/grid types, moments, residence-time properties.
//! - [`smoothing`]: cubic smoothing spline with automatic parameter choice.
//! - [`baseline`]: Gamma-tail and tail-mean baseline correction.
//! - [`cqp`]: the small constrained least-squares engine behind TCCO.
//! - [`calibration`]: moment-based and transient calibration between species.
//! - [`simulator`]: thin-zone diffusion-reaction pulse simulator + distortions.
//! - [`outgas`]: moving-window t-test over zeroth-moment series.
//! - [`pipeline`]: the TEAK / traditional workflows and run reports.
//! - [`io`]: CSV pulse format and JSON configs/results.

pub mod baseline;
pub mod calibration;
pub mod cqp;
pub mod flux;
pub mod io;
pub mod outgas;
pub mod pipeline;
pub mod simulator;
pub mod smoothing;

pub use flux::{Flux, FluxUnits, GammaParams, Moments, PulseSeries, ResidenceProps, TimeGrid};
