//! Tail-allocation conformalized quantile regression.
//!
//! The library fits conditional quantile families over a finite level set,
//! searches the lower-tail allocation for the shortest fixed-mass core at
//! each covariate value, and applies nonnegative additive split-conformal
//! calibration. Alongside the estimator it ships exact population oracles
//! for known conditional laws and a seeded Monte Carlo harness that checks
//! coverage, deterministic core comparisons, and length bounds.
//!
//! Modules:
//! - [`data`]: datasets, seeded splitting, CSV ingestion.
//! - [`quantile`]: k-NN and linear pinball quantile families.
//! - [`allocation`]: truncated allocation grids and core selection.
//! - [`conformal`]: scores, conformal radius, calibrated predictors.
//! - [`oracle`]: exact shortest intervals, HDRs, truncation costs.
//! - [`dgp`]: simulation mechanisms with exact conditional laws.
//! - [`evaluation`]: replicate orchestration and theory diagnostics.
//! - [`config`]: experiment configuration.

// Validation guards use negated comparisons (`!(x > 0.0)`) so that NaN
// inputs fail validation instead of slipping through a `x <= 0.0` test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod config;
pub mod conformal;
pub mod data;
pub mod dgp;
pub mod evaluation;
mod num;
pub mod oracle;
pub mod parallel;
pub mod quantile;

pub use allocation::{AllocationGrid, CoreSelection};
pub use config::{DiagnosticsOptions, EstimatorSpec, ExperimentConfig};
pub use conformal::{CalibratedPredictor, MethodKind, PredictionInterval};
pub use data::{Dataset, Seed, SplitIndices};
pub use dgp::DgpSpec;
pub use oracle::ConditionalLaw;
pub use quantile::{FittedQuantileFamily, QuantileLevelSet};
