//! Kernel risk-sensitive loss (KRSL) and robust adaptive filtering.
//!
//! * [`similarity`]: Gaussian-kernel similarity measures, the KRSL and its
//!   analytical structure.
//! * [`filters`]: the MKRSL stochastic-gradient filter and baselines.
//! * [`batch_solver`]: performance surface, fixed-point solution and
//!   scalar robustness bounds.
//! * [`theory`]: transient and steady-state mean-square predictions.
//! * [`noise`]: reproducible noise and input generation.
//! * [`harness`]: Monte Carlo system-identification experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod batch_solver;
pub mod error;
pub mod filters;
pub mod harness;
pub mod noise;
pub mod par;
pub mod quadrature;
pub mod similarity;
pub mod theory;

pub use error::{KrslError, Result};
pub use noise::{NoiseModel, RngSpec};
pub use par::Parallelism;
pub use similarity::KrslParams;

/// Formats `v` with 17 significant digits, enough to round-trip any `f64`.
/// The output does not depend on locale.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}
