//! Conformity scores, the split-conformal quantile rank, and final interval
//! construction.
//!
//! All three methods share the same nonnegative additive calibration: score
//! each calibration point by its clamped distance outside the method's core,
//! take the `ceil((m+1)(1-alpha))`-th order statistic as the radius, and
//! inflate the core by that radius at prediction time. With fewer than
//! `(1-alpha)/alpha` calibration points the rank exceeds `m` and the radius
//! is `+inf` by convention, which keeps the interval valid but infinite.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{select_from_values, AllocationError, AllocationGrid, CoreSelection};
use crate::data::Dataset;
use crate::num::ceil_guarded;
use crate::oracle::{oracle_quantile, ConditionalLaw};
use crate::quantile::{FitError, FittedQuantileFamily, KnnMean};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("conformity scores must be finite")]
    NonFiniteScore,
    #[error("alpha must lie in (0,1), got {alpha}")]
    BadAlpha { alpha: f64 },
    #[error("support bounds must satisfy lo < hi, got ({lo}, {hi})")]
    BadSupport { lo: f64, hi: f64 },
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("law-backed center evaluation failed: {0}")]
    LawEvaluation(String),
}

/// Interval-construction method identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Tail-allocation CQR: searched allocation plus additive calibration.
    TailAllocation,
    /// Equal-tailed CQR: fixed allocation `alpha/2`.
    EqualTailCqr,
    /// Residual split conformal around a conditional-mean fit.
    ResidualSc,
}

impl MethodKind {
    /// Stable identifier used in result files.
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::TailAllocation => "tail_allocation",
            MethodKind::EqualTailCqr => "equal_tail_cqr",
            MethodKind::ResidualSc => "residual_sc",
        }
    }
}

/// Two-sided conformity score: distance outside `[lo, hi]` clamped at zero.
pub fn score_two_sided(lo: f64, hi: f64, y: f64) -> f64 {
    (lo - y).max(y - hi).max(0.0)
}

/// Split-conformal rank `ceil((m+1)(1-alpha))`; may equal `m + 1`.
pub fn conformal_rank(m: usize, alpha: f64) -> usize {
    ceil_guarded((m + 1) as f64 * (1.0 - alpha))
}

/// Nonnegative finite conformity scores, one per calibration point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformityScores {
    values: Vec<f64>,
}

impl ConformityScores {
    pub fn new(values: Vec<f64>) -> Result<Self, CalibrationError> {
        if values.is_empty() {
            return Err(CalibrationError::EmptyCalibration);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CalibrationError::NonFiniteScore);
        }
        Ok(ConformityScores { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The calibrated radius: the rank-`k` order statistic of the scores, or
/// `+inf` when the rank exceeds the calibration size.
pub fn conformal_quantile(scores: &ConformityScores, alpha: f64) -> f64 {
    let m = scores.len();
    let k = conformal_rank(m, alpha);
    if k > m {
        return f64::INFINITY;
    }
    let mut sorted = scores.values().to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted[k - 1]
}

/// A prediction interval with extended-real endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval {
    pub lo: f64,
    pub hi: f64,
}

impl PredictionInterval {
    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Center estimate for the residual baseline.
#[derive(Clone)]
pub enum CenterFit {
    KnnMean(KnnMean),
    /// Conditional median of a known law; the centering used when the
    /// baseline runs against a law-backed estimator.
    LawMedian {
        law: Arc<dyn ConditionalLaw>,
        tol: f64,
    },
}

impl std::fmt::Debug for CenterFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CenterFit::KnnMean(m) => f.debug_tuple("KnnMean").field(m).finish(),
            CenterFit::LawMedian { .. } => f.write_str("LawMedian"),
        }
    }
}

impl CenterFit {
    fn predict(&self, x: &[f64]) -> Result<f64, CalibrationError> {
        match self {
            CenterFit::KnnMean(m) => Ok(m.predict(x)?),
            CenterFit::LawMedian { law, tol } => {
                oracle_quantile(law.as_ref(), x[0], 0.5, *tol)
                    .map_err(|e| CalibrationError::LawEvaluation(e.to_string()))
            }
        }
    }
}

enum PredictorCore {
    TailAllocation {
        family: FittedQuantileFamily,
        grid: AllocationGrid,
        pairs: Vec<(usize, usize)>,
    },
    EqualTail {
        family: FittedQuantileFamily,
        lo_idx: usize,
        hi_idx: usize,
    },
    Residual {
        center: CenterFit,
    },
}

/// A fitted family (or center fit) together with its calibrated radius;
/// emits one interval per covariate value.
pub struct CalibratedPredictor {
    core: PredictorCore,
    alpha: f64,
    radius: f64,
    support: Option<(f64, f64)>,
}

impl std::fmt::Debug for CalibratedPredictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CalibratedPredictor")
            .field("method", &self.method().label())
            .field("alpha", &self.alpha)
            .field("radius", &self.radius)
            .finish()
    }
}

fn validate_support(support: Option<(f64, f64)>) -> Result<(), CalibrationError> {
    if let Some((lo, hi)) = support {
        if !(lo < hi) {
            return Err(CalibrationError::BadSupport { lo, hi });
        }
    }
    Ok(())
}

/// Calibrates the tail-allocation method: per calibration point, select the
/// allocation from the covariates alone, score the response against the
/// selected core, and take the conformal quantile of the scores.
pub fn calibrate_tail_allocation(
    family: &FittedQuantileFamily,
    grid: &AllocationGrid,
    calib: &Dataset,
    support: Option<(f64, f64)>,
) -> Result<CalibratedPredictor, CalibrationError> {
    validate_support(support)?;
    let pairs = grid.pair_indices(family.levels())?;
    let m = calib.n();
    if m == 0 {
        return Err(CalibrationError::EmptyCalibration);
    }
    let mut scores = Vec::with_capacity(m);
    for i in 0..m {
        let values = family.predict_levels(calib.row(i))?;
        let sel = select_from_values(&values, grid.levels(), &pairs);
        scores.push(score_two_sided(sel.lo, sel.hi, calib.y()[i]));
    }
    let radius = conformal_quantile(&ConformityScores::new(scores)?, grid.alpha());
    Ok(CalibratedPredictor {
        core: PredictorCore::TailAllocation {
            family: family.clone(),
            grid: grid.clone(),
            pairs,
        },
        alpha: grid.alpha(),
        radius,
        support,
    })
}

/// Calibrates equal-tailed CQR: the same score map with the allocation
/// fixed at `alpha/2`.
pub fn calibrate_equal_tail(
    family: &FittedQuantileFamily,
    alpha: f64,
    calib: &Dataset,
    support: Option<(f64, f64)>,
) -> Result<CalibratedPredictor, CalibrationError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CalibrationError::BadAlpha { alpha });
    }
    validate_support(support)?;
    let half = alpha / 2.0;
    let lo_idx = family
        .levels()
        .index_of(half)
        .ok_or(AllocationError::LevelNotFitted { level: half })?;
    let upper = 1.0 - half;
    let hi_idx = family
        .levels()
        .index_of(upper)
        .ok_or(AllocationError::LevelNotFitted { level: upper })?;
    let m = calib.n();
    if m == 0 {
        return Err(CalibrationError::EmptyCalibration);
    }
    let mut scores = Vec::with_capacity(m);
    for i in 0..m {
        let values = family.predict_levels(calib.row(i))?;
        scores.push(score_two_sided(values[lo_idx], values[hi_idx], calib.y()[i]));
    }
    let radius = conformal_quantile(&ConformityScores::new(scores)?, alpha);
    Ok(CalibratedPredictor {
        core: PredictorCore::EqualTail {
            family: family.clone(),
            lo_idx,
            hi_idx,
        },
        alpha,
        radius,
        support,
    })
}

/// Calibrates the residual baseline: scores are absolute residuals from the
/// center fit and the interval is `center(x) +/- radius`.
pub fn calibrate_residual(
    center: CenterFit,
    alpha: f64,
    calib: &Dataset,
    support: Option<(f64, f64)>,
) -> Result<CalibratedPredictor, CalibrationError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CalibrationError::BadAlpha { alpha });
    }
    validate_support(support)?;
    let m = calib.n();
    if m == 0 {
        return Err(CalibrationError::EmptyCalibration);
    }
    let mut scores = Vec::with_capacity(m);
    for i in 0..m {
        let mu = center.predict(calib.row(i))?;
        scores.push((calib.y()[i] - mu).abs());
    }
    let radius = conformal_quantile(&ConformityScores::new(scores)?, alpha);
    Ok(CalibratedPredictor {
        core: PredictorCore::Residual { center },
        alpha,
        radius,
        support,
    })
}

impl CalibratedPredictor {
    pub fn method(&self) -> MethodKind {
        match self.core {
            PredictorCore::TailAllocation { .. } => MethodKind::TailAllocation,
            PredictorCore::EqualTail { .. } => MethodKind::EqualTailCqr,
            PredictorCore::Residual { .. } => MethodKind::ResidualSc,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The conformal radius; `+inf` exactly when the rank exceeded the
    /// calibration size.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn radius_is_infinite(&self) -> bool {
        self.radius.is_infinite()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        self.support
    }

    /// The uncalibrated core at `x` and, for the tail-allocation method,
    /// the selected allocation.
    pub fn core_at(&self, x: &[f64]) -> Result<(f64, f64, Option<CoreSelection>), CalibrationError> {
        match &self.core {
            PredictorCore::TailAllocation { family, grid, pairs } => {
                let values = family.predict_levels(x)?;
                let sel = select_from_values(&values, grid.levels(), pairs);
                Ok((sel.lo, sel.hi, Some(sel)))
            }
            PredictorCore::EqualTail { family, lo_idx, hi_idx, .. } => {
                let values = family.predict_levels(x)?;
                Ok((values[*lo_idx], values[*hi_idx], None))
            }
            PredictorCore::Residual { center } => {
                let mu = center.predict(x)?;
                Ok((mu, mu, None))
            }
        }
    }

    /// The level `alpha/2` core at `x`, available whenever the family fits
    /// the equal-tailed endpoint levels; used by the core-comparison check.
    pub fn symmetric_core_at(&self, x: &[f64]) -> Result<Option<(f64, f64)>, CalibrationError> {
        let family = match &self.core {
            PredictorCore::TailAllocation { family, .. } => family,
            PredictorCore::EqualTail { family, .. } => family,
            PredictorCore::Residual { .. } => return Ok(None),
        };
        let half = self.alpha / 2.0;
        let (Some(lo_idx), Some(hi_idx)) = (
            family.levels().index_of(half),
            family.levels().index_of(1.0 - half),
        ) else {
            return Ok(None);
        };
        let values = family.predict_levels(x)?;
        Ok(Some((values[lo_idx], values[hi_idx])))
    }

    /// The final interval: the core inflated by the radius, intersected
    /// with the configured support when present.
    pub fn predict_interval(&self, x: &[f64]) -> Result<PredictionInterval, CalibrationError> {
        let (core_lo, core_hi, _) = self.core_at(x)?;
        let mut lo = core_lo - self.radius;
        let mut hi = core_hi + self.radius;
        if let Some((slo, shi)) = self.support {
            lo = lo.max(slo);
            hi = hi.min(shi);
            if lo > hi {
                // Core and support are disjoint; report the support endpoint
                // nearest the core as a degenerate interval.
                let point = if core_lo > shi { shi } else { slo };
                lo = point;
                hi = point;
            }
        }
        Ok(PredictionInterval { lo, hi })
    }
}
