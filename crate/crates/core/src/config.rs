//! Experiment configuration shared by the library harness and the CLI.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::MethodKind;
use crate::dgp::DgpSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field {field}: {detail}")]
    Invalid { field: &'static str, detail: String },
}

fn invalid(field: &'static str, detail: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        detail: detail.into(),
    }
}

/// Conditional quantile estimator selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// k-NN order-statistic quantiles. `k` defaults to `ceil(n_train^0.7)`
    /// clipped to `[10, n_train]`; `scale` turns on min-max feature scaling
    /// for the neighbor distance.
    Knn {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        scale: bool,
    },
    /// Per-level linear pinball regression by subgradient descent.
    LinearPinball {
        #[serde(default = "default_pinball_iterations")]
        iterations: usize,
        #[serde(default = "default_pinball_step")]
        step_scale: f64,
    },
    /// Zero-estimation-error family backed by the DGP's conditional law;
    /// available only for simulated data.
    LawBacked,
}

fn default_pinball_iterations() -> usize {
    50_000
}

fn default_pinball_step() -> f64 {
    1.0
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec::Knn {
            k: None,
            scale: false,
        }
    }
}

/// Options consumed by the diagnostics suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsOptions {
    /// Confidence budget for the calibrated-length check.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Radius of the endpoint neighborhoods used for local density floors.
    #[serde(default = "default_t_eps")]
    pub t_eps: f64,
    /// Number of covariate values sampled for per-x diagnostics.
    #[serde(default = "default_x_sample")]
    pub x_sample_size: usize,
    /// Fine grid size for oracle allocation searches.
    #[serde(default = "default_fine_grid")]
    pub fine_grid: usize,
    /// Truncation levels swept by the truncation-cost diagnostic.
    #[serde(default = "default_truncation_sweep")]
    pub truncation_sweep: Vec<f64>,
}

fn default_eta() -> f64 {
    0.05
}
fn default_t_eps() -> f64 {
    0.1
}
fn default_x_sample() -> usize {
    128
}
fn default_fine_grid() -> usize {
    512
}
fn default_truncation_sweep() -> Vec<f64> {
    vec![0.02, 0.01, 0.005]
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions {
            eta: default_eta(),
            t_eps: default_t_eps(),
            x_sample_size: default_x_sample(),
            fine_grid: default_fine_grid(),
            truncation_sweep: default_truncation_sweep(),
        }
    }
}

/// One experiment: data source, split protocol, methods, estimator,
/// calibration level, and output destination. Serializes losslessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Simulated data source; exactly one of `dgp` / `input_csv` is set.
    #[serde(default)]
    pub dgp: Option<DgpSpec>,
    /// CSV data source for fit-predict runs.
    #[serde(default)]
    pub input_csv: Option<String>,
    #[serde(default)]
    pub response_column: Option<String>,
    /// Covariate rows to predict intervals for (fit-predict runs).
    #[serde(default)]
    pub prediction_csv: Option<String>,
    /// Sample size per replicate (simulated runs).
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub alpha: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Insert `alpha/2` into the allocation grid.
    #[serde(default = "default_true")]
    pub include_half: bool,
    /// Train/calibration/test fractions.
    #[serde(default = "default_fractions")]
    pub fractions: (f64, f64, f64),
    pub methods: Vec<MethodKind>,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// Optional known response support for interval intersection.
    #[serde(default)]
    pub support: Option<(f64, f64)>,
    /// Covariate values for the oracle table command.
    #[serde(default)]
    pub oracle_xs: Option<Vec<f64>>,
    #[serde(default)]
    pub diagnostics: DiagnosticsOptions,
}

fn default_replicates() -> usize {
    100
}
fn default_epsilon() -> f64 {
    0.005
}
fn default_true() -> bool {
    true
}
fn default_fractions() -> (f64, f64, f64) {
    (0.5, 0.25, 0.25)
}
fn default_out_dir() -> String {
    "results".to_string()
}

impl ExperimentConfig {
    /// Field-level validation shared by every command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.alpha / 2.0) {
            return Err(invalid(
                "epsilon",
                format!(
                    "must lie in (0, alpha/2) = (0, {}), got {}",
                    self.alpha / 2.0,
                    self.epsilon
                ),
            ));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "must list at least one method"));
        }
        let (a, b, c) = self.fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "fractions",
                format!("must be positive and sum to 1, got ({a}, {b}, {c})"),
            ));
        }
        if let Some((lo, hi)) = self.support {
            if !(lo < hi) {
                return Err(invalid("support", format!("must satisfy lo < hi, got ({lo}, {hi})")));
            }
        }
        if let Some(dgp) = &self.dgp {
            dgp.validate()
                .map_err(|e| invalid("dgp", e.to_string()))?;
        }
        if !(self.diagnostics.eta > 0.0 && self.diagnostics.eta < 1.0) {
            return Err(invalid("diagnostics.eta", "must lie in (0,1)"));
        }
        Ok(())
    }

    /// Validation for simulation-style runs (simulate and diagnose).
    pub fn validate_simulation(&self) -> Result<(), ConfigError> {
        self.validate()?;
        if self.dgp.is_none() {
            return Err(invalid("dgp", "simulated runs need a dgp"));
        }
        let n = self
            .n
            .ok_or_else(|| invalid("n", "simulated runs need a sample size"))?;
        if n < 4 {
            return Err(invalid("n", "sample size must be at least 4"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be at least 1"));
        }
        if matches!(self.estimator, EstimatorSpec::LawBacked) && self.dgp.is_none() {
            return Err(invalid("estimator", "law-backed estimator needs a dgp"));
        }
        Ok(())
    }

    /// Validation for CSV-driven fit-predict runs.
    pub fn validate_fit_predict(&self) -> Result<(), ConfigError> {
        self.validate()?;
        if self.input_csv.is_none() {
            return Err(invalid("input_csv", "fit-predict runs need an input csv"));
        }
        if self.response_column.is_none() {
            return Err(invalid("response_column", "fit-predict runs need a response column"));
        }
        if self.prediction_csv.is_none() {
            return Err(invalid("prediction_csv", "fit-predict runs need a prediction csv"));
        }
        if matches!(self.estimator, EstimatorSpec::LawBacked) {
            return Err(invalid("estimator", "law-backed estimator requires simulated data"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            dgp: Some(DgpSpec::M1),
            input_csv: None,
            response_column: None,
            prediction_csv: None,
            n: Some(500),
            replicates: 10,
            alpha: 0.1,
            epsilon: 0.005,
            include_half: true,
            fractions: (0.5, 0.25, 0.25),
            methods: vec![MethodKind::TailAllocation, MethodKind::EqualTailCqr],
            estimator: EstimatorSpec::default(),
            seed: 7,
            out_dir: "results".into(),
            support: None,
            oracle_xs: None,
            diagnostics: DiagnosticsOptions::default(),
        }
    }

    #[test]
    fn round_trips_losslessly() {
        let cfg = base_config();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn defaults_fill_in() {
        let json = r#"{
            "dgp": {"kind": "m1"},
            "n": 500,
            "alpha": 0.1,
            "methods": ["tail_allocation"],
            "seed": 3
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.replicates, 100);
        assert_eq!(cfg.epsilon, 0.005);
        assert!(cfg.include_half);
        assert_eq!(cfg.fractions, (0.5, 0.25, 0.25));
        cfg.validate_simulation().unwrap();
    }

    #[test]
    fn rejects_bad_alpha_and_epsilon() {
        let mut cfg = base_config();
        cfg.alpha = 1.2;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.epsilon = 0.06;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.methods.clear();
        assert!(cfg.validate().is_err());
    }
}
