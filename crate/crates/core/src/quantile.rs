//! Conditional quantile estimators over a finite level set.
//!
//! A [`FittedQuantileFamily`] maps `(x, level index)` to a fitted quantile
//! and guarantees non-crossing outputs by applying monotone rearrangement at
//! prediction time. Two data-driven estimators are provided (k-NN order
//! statistics and linear pinball regression) plus a law-backed family with
//! zero estimation error for diagnostics.

use std::sync::Arc;

use thiserror::Error;

use crate::data::Dataset;
use crate::num::ceil_guarded;
use crate::oracle::{oracle_quantile, ConditionalLaw};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("neighbor count {k} must lie in [1, {n}]")]
    InvalidNeighborCount { k: usize, n: usize },
    #[error("covariate dimension mismatch: fitted {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid level set: {0}")]
    InvalidLevels(String),
    #[error("pinball objective became non-finite at level {level}")]
    NonFiniteLoss { level: f64 },
    #[error("law-backed evaluation failed: {0}")]
    LawEvaluation(String),
}

/// Absolute tolerance for matching fitted levels; far below any grid mesh
/// used here, far above f64 drift in level arithmetic.
const LEVEL_MATCH_TOL: f64 = 1e-9;

/// A strictly increasing set of quantile levels in (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileLevelSet {
    levels: Vec<f64>,
}

impl QuantileLevelSet {
    pub fn new(levels: Vec<f64>) -> Result<Self, FitError> {
        if levels.is_empty() {
            return Err(FitError::InvalidLevels("level set is empty".into()));
        }
        for w in levels.windows(2) {
            if !(w[1] > w[0]) {
                return Err(FitError::InvalidLevels(format!(
                    "levels must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if levels[0] <= 0.0 || levels[levels.len() - 1] >= 1.0 {
            return Err(FitError::InvalidLevels("levels must lie strictly inside (0,1)".into()));
        }
        Ok(QuantileLevelSet { levels })
    }

    /// Sorts and deduplicates (tolerance `1e-12`) before validating.
    pub fn from_unsorted(mut levels: Vec<f64>) -> Result<Self, FitError> {
        levels.sort_unstable_by(f64::total_cmp);
        levels.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        QuantileLevelSet::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.levels[index]
    }

    /// Index of `level`, matched within an absolute tolerance so that level
    /// keys never depend on exact float equality.
    pub fn index_of(&self, level: f64) -> Option<usize> {
        let i = self
            .levels
            .partition_point(|&l| l < level - LEVEL_MATCH_TOL);
        if i < self.levels.len() && (self.levels[i] - level).abs() <= LEVEL_MATCH_TOL {
            Some(i)
        } else {
            None
        }
    }
}

/// Monotone rearrangement at a fixed covariate: sorts the per-level values
/// ascending, preserving the multiset.
pub fn rearrange_monotone(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    out.sort_unstable_by(f64::total_cmp);
    out
}

/// Default neighbor count `ceil(n^0.7)` clipped to `[10, n]`.
pub fn default_knn_k(n_train: usize) -> usize {
    let raw = ceil_guarded((n_train as f64).powf(0.7));
    raw.max(10).min(n_train.max(1))
}

/// Options for the linear pinball fit.
///
/// The optimizer is subgradient descent with step `step_scale / sqrt(t)`,
/// averaging the trailing half of the iterates and keeping the best
/// objective value seen at the periodic evaluations. It stops early when
/// the relative objective change between evaluations drops below `rel_tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct PinballOptions {
    pub iterations: usize,
    pub step_scale: f64,
    pub rel_tol: f64,
}

impl Default for PinballOptions {
    fn default() -> Self {
        PinballOptions {
            iterations: 50_000,
            step_scale: 1.0,
            rel_tol: 1e-6,
        }
    }
}

struct KnnState {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    p: usize,
    k: usize,
    /// Per-feature `(min, 1/range)` when min-max scaling is enabled.
    scaling: Option<Vec<(f64, f64)>>,
}

impl KnnState {
    fn scaled_sq_dist(&self, i: usize, q: &[f64]) -> f64 {
        let row = &self.x[i * self.p..(i + 1) * self.p];
        let mut d = 0.0;
        match &self.scaling {
            Some(scale) => {
                for j in 0..self.p {
                    let (min, inv) = scale[j];
                    let diff = (row[j] - min) * inv - (q[j] - min) * inv;
                    d += diff * diff;
                }
            }
            None => {
                for j in 0..self.p {
                    let diff = row[j] - q[j];
                    d += diff * diff;
                }
            }
        }
        d
    }

    /// Responses of the k nearest training points, sorted ascending.
    /// Distance ties break on the training index, so the neighbor set is
    /// deterministic.
    fn neighbor_responses(&self, q: &[f64]) -> Vec<f64> {
        let mut dist: Vec<(f64, usize)> = (0..self.n)
            .map(|i| (self.scaled_sq_dist(i, q), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        if self.k < self.n {
            dist.select_nth_unstable_by(self.k - 1, cmp);
        }
        let mut ys: Vec<f64> = dist[..self.k].iter().map(|&(_, i)| self.y[i]).collect();
        ys.sort_unstable_by(f64::total_cmp);
        ys
    }
}

struct LinearState {
    /// Per-level coefficient vectors, intercept first.
    coeffs: Vec<Vec<f64>>,
    objectives: Vec<f64>,
}

struct LawState {
    law: Arc<dyn ConditionalLaw>,
    tol: f64,
}

enum Estimator {
    Knn(KnnState),
    Linear(LinearState),
    Law(LawState),
}

struct FamilyInner {
    levels: QuantileLevelSet,
    dim: usize,
    estimator: Estimator,
}

/// A fitted monotone-in-level conditional quantile family. Cheap to clone
/// and safe to query from many threads.
#[derive(Clone)]
pub struct FittedQuantileFamily {
    inner: Arc<FamilyInner>,
}

impl std::fmt::Debug for FittedQuantileFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.inner.estimator {
            Estimator::Knn(_) => "knn",
            Estimator::Linear(_) => "linear_pinball",
            Estimator::Law(_) => "law_backed",
        };
        f.debug_struct("FittedQuantileFamily")
            .field("kind", &kind)
            .field("levels", &self.inner.levels.len())
            .field("dim", &self.inner.dim)
            .finish()
    }
}

impl FittedQuantileFamily {
    /// k-NN family: the level-`gamma` prediction at `x` is the
    /// `ceil(k * gamma)`-th order statistic of the responses of the `k`
    /// nearest training points in Euclidean covariate distance.
    pub fn fit_knn(train: &Dataset, levels: QuantileLevelSet, k: usize) -> Result<Self, FitError> {
        Self::fit_knn_impl(train, levels, k, false)
    }

    /// k-NN with per-feature min-max scaling of the distance.
    pub fn fit_knn_scaled(
        train: &Dataset,
        levels: QuantileLevelSet,
        k: usize,
    ) -> Result<Self, FitError> {
        Self::fit_knn_impl(train, levels, k, true)
    }

    fn fit_knn_impl(
        train: &Dataset,
        levels: QuantileLevelSet,
        k: usize,
        scale: bool,
    ) -> Result<Self, FitError> {
        let n = train.n();
        if n == 0 {
            return Err(FitError::EmptyTrainingSet);
        }
        if k == 0 || k > n {
            return Err(FitError::InvalidNeighborCount { k, n });
        }
        let p = train.p();
        let mut x = Vec::with_capacity(n * p);
        for i in 0..n {
            x.extend_from_slice(train.row(i));
        }
        let scaling = if scale {
            let mut s = Vec::with_capacity(p);
            for j in 0..p {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for i in 0..n {
                    let v = x[i * p + j];
                    min = min.min(v);
                    max = max.max(v);
                }
                let inv = if max > min { 1.0 / (max - min) } else { 0.0 };
                s.push((min, inv));
            }
            Some(s)
        } else {
            None
        };
        Ok(FittedQuantileFamily {
            inner: Arc::new(FamilyInner {
                dim: p,
                estimator: Estimator::Knn(KnnState {
                    x,
                    y: train.y().to_vec(),
                    n,
                    p,
                    k,
                    scaling,
                }),
                levels,
            }),
        })
    }

    /// Linear pinball family: per level, coefficients minimizing the mean
    /// check loss by deterministic subgradient descent. An intercept column
    /// is appended internally.
    pub fn fit_linear_pinball(
        train: &Dataset,
        levels: QuantileLevelSet,
        opts: PinballOptions,
    ) -> Result<Self, FitError> {
        let n = train.n();
        if n == 0 {
            return Err(FitError::EmptyTrainingSet);
        }
        let p = train.p();
        let mut coeffs = Vec::with_capacity(levels.len());
        let mut objectives = Vec::with_capacity(levels.len());
        let mut sorted_y = train.y().to_vec();
        sorted_y.sort_unstable_by(f64::total_cmp);
        for &gamma in levels.levels() {
            let (beta, obj) = fit_pinball_level(train, &sorted_y, gamma, &opts)?;
            coeffs.push(beta);
            objectives.push(obj);
        }
        Ok(FittedQuantileFamily {
            inner: Arc::new(FamilyInner {
                dim: p,
                estimator: Estimator::Linear(LinearState { coeffs, objectives }),
                levels,
            }),
        })
    }

    /// Family backed by an exact conditional law (zero estimation error up
    /// to quantile-inversion tolerance). Covariates are scalar.
    pub fn from_law(law: Arc<dyn ConditionalLaw>, levels: QuantileLevelSet, tol: f64) -> Self {
        FittedQuantileFamily {
            inner: Arc::new(FamilyInner {
                dim: 1,
                estimator: Estimator::Law(LawState { law, tol }),
                levels,
            }),
        }
    }

    pub fn levels(&self) -> &QuantileLevelSet {
        &self.inner.levels
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    /// Final mean pinball objectives per level, for the linear fit.
    pub fn final_objectives(&self) -> Option<&[f64]> {
        match &self.inner.estimator {
            Estimator::Linear(state) => Some(&state.objectives),
            _ => None,
        }
    }

    /// Fitted quantiles at `x`, one per level, monotone rearranged so the
    /// output is nondecreasing across levels.
    pub fn predict_levels(&self, x: &[f64]) -> Result<Vec<f64>, FitError> {
        if x.len() != self.inner.dim {
            return Err(FitError::DimensionMismatch {
                expected: self.inner.dim,
                got: x.len(),
            });
        }
        let levels = self.inner.levels.levels();
        let raw = match &self.inner.estimator {
            Estimator::Knn(state) => {
                let ys = state.neighbor_responses(x);
                levels
                    .iter()
                    .map(|&gamma| {
                        let rank = ceil_guarded(state.k as f64 * gamma).clamp(1, state.k);
                        ys[rank - 1]
                    })
                    .collect::<Vec<f64>>()
            }
            Estimator::Linear(state) => state
                .coeffs
                .iter()
                .map(|beta| beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
                .collect(),
            Estimator::Law(state) => {
                let mut out = Vec::with_capacity(levels.len());
                for &gamma in levels {
                    let q = oracle_quantile(state.law.as_ref(), x[0], gamma, state.tol)
                        .map_err(|e| FitError::LawEvaluation(e.to_string()))?;
                    out.push(q);
                }
                out
            }
        };
        Ok(rearrange_monotone(&raw))
    }
}

/// Mean pinball loss of `beta` on the training data.
fn pinball_objective(train: &Dataset, gamma: f64, beta: &[f64]) -> f64 {
    let n = train.n();
    let mut total = 0.0;
    for i in 0..n {
        let row = train.row(i);
        let fit = beta[0] + beta[1..].iter().zip(row).map(|(b, v)| b * v).sum::<f64>();
        let r = train.y()[i] - fit;
        total += if r >= 0.0 { gamma * r } else { (gamma - 1.0) * r };
    }
    total / n as f64
}

fn fit_pinball_level(
    train: &Dataset,
    sorted_y: &[f64],
    gamma: f64,
    opts: &PinballOptions,
) -> Result<(Vec<f64>, f64), FitError> {
    let n = train.n();
    let p = train.p();
    let dim = p + 1;
    const EVAL_EVERY: usize = 200;

    // Start at the constant empirical-quantile predictor.
    let rank = ceil_guarded(n as f64 * gamma).clamp(1, n);
    let mut beta = vec![0.0; dim];
    beta[0] = sorted_y[rank - 1];

    let mut best_obj = pinball_objective(train, gamma, &beta);
    let mut best_beta = beta.clone();
    let mut prev_obj = best_obj;

    let half = opts.iterations / 2;
    let mut suffix_sum = vec![0.0; dim];
    let mut suffix_count = 0usize;
    let mut grad = vec![0.0; dim];

    for t in 1..=opts.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let row = train.row(i);
            let fit = beta[0] + beta[1..].iter().zip(row).map(|(b, v)| b * v).sum::<f64>();
            let r = train.y()[i] - fit;
            let g = if r >= 0.0 { gamma } else { gamma - 1.0 };
            grad[0] += g;
            for j in 0..p {
                grad[j + 1] += g * row[j];
            }
        }
        let step = opts.step_scale / (t as f64).sqrt() / n as f64;
        for j in 0..dim {
            beta[j] += step * grad[j];
        }
        if t > half {
            for j in 0..dim {
                suffix_sum[j] += beta[j];
            }
            suffix_count += 1;
        }
        if t % EVAL_EVERY == 0 {
            let obj = pinball_objective(train, gamma, &beta);
            if !obj.is_finite() {
                return Err(FitError::NonFiniteLoss { level: gamma });
            }
            if obj < best_obj {
                best_obj = obj;
                best_beta.copy_from_slice(&beta);
            }
            if (prev_obj - obj).abs() <= opts.rel_tol * prev_obj.abs().max(1.0) && t > half {
                break;
            }
            prev_obj = obj;
        }
    }

    if suffix_count > 0 {
        let avg: Vec<f64> = suffix_sum.iter().map(|s| s / suffix_count as f64).collect();
        let avg_obj = pinball_objective(train, gamma, &avg);
        if !avg_obj.is_finite() {
            return Err(FitError::NonFiniteLoss { level: gamma });
        }
        if avg_obj < best_obj {
            return Ok((avg, avg_obj));
        }
    }
    Ok((best_beta, best_obj))
}

/// k-NN conditional mean, the center estimate for the residual baseline.
#[derive(Clone)]
pub struct KnnMean {
    inner: Arc<KnnState>,
}

impl std::fmt::Debug for KnnMean {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnnMean")
            .field("n", &self.inner.n)
            .field("k", &self.inner.k)
            .finish()
    }
}

impl KnnMean {
    pub fn fit(train: &Dataset, k: usize) -> Result<Self, FitError> {
        let n = train.n();
        if n == 0 {
            return Err(FitError::EmptyTrainingSet);
        }
        if k == 0 || k > n {
            return Err(FitError::InvalidNeighborCount { k, n });
        }
        let p = train.p();
        let mut x = Vec::with_capacity(n * p);
        for i in 0..n {
            x.extend_from_slice(train.row(i));
        }
        Ok(KnnMean {
            inner: Arc::new(KnnState {
                x,
                y: train.y().to_vec(),
                n,
                p,
                k,
                scaling: None,
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.p
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, FitError> {
        if x.len() != self.inner.p {
            return Err(FitError::DimensionMismatch {
                expected: self.inner.p,
                got: x.len(),
            });
        }
        let ys = self.inner.neighbor_responses(x);
        Ok(ys.iter().sum::<f64>() / ys.len() as f64)
    }
}
