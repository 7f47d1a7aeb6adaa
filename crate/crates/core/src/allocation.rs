//! Truncated allocation grids and per-covariate core selection.
//!
//! The allocation grid discretizes the lower-tail allocation range
//! `[epsilon, alpha - epsilon]`; for each covariate value the selected
//! allocation is the smallest minimizer of the fitted core length over the
//! grid, scanning left to right with strict improvement required to move
//! the minimizer.

use thiserror::Error;

use crate::num::ceil_guarded;
use crate::quantile::{FitError, FittedQuantileFamily, QuantileLevelSet};

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("truncation must satisfy 0 < epsilon < alpha/2, got epsilon {epsilon}, alpha {alpha}")]
    BadTruncation { epsilon: f64, alpha: f64 },
    #[error("alpha must lie in (0,1), got {alpha}")]
    BadAlpha { alpha: f64 },
    #[error("calibration size must be at least 1")]
    EmptyCalibration,
    #[error("level {level} is not fitted by the family")]
    LevelNotFitted { level: f64 },
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// The truncated lower-tail allocation grid.
///
/// Regular levels are `epsilon + j * mesh` for `j = 0..=subdivisions` with
/// `mesh = (alpha - 2 epsilon) / subdivisions` and
/// `subdivisions = ceil(m^(2/3))`; `alpha/2` is inserted (deduplicated)
/// when `include_half` is set. `mesh` always refers to the regular spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationGrid {
    alpha: f64,
    epsilon: f64,
    mesh: f64,
    subdivisions: usize,
    levels: Vec<f64>,
    include_half: bool,
}

impl AllocationGrid {
    pub fn build(
        alpha: f64,
        m: usize,
        epsilon: f64,
        include_half: bool,
    ) -> Result<Self, AllocationError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(AllocationError::BadAlpha { alpha });
        }
        if !(epsilon > 0.0 && epsilon < alpha / 2.0) {
            return Err(AllocationError::BadTruncation { epsilon, alpha });
        }
        if m == 0 {
            return Err(AllocationError::EmptyCalibration);
        }
        let subdivisions = ceil_guarded((m as f64).powf(2.0 / 3.0)).max(1);
        let mesh = (alpha - 2.0 * epsilon) / subdivisions as f64;
        let mut levels: Vec<f64> = (0..=subdivisions)
            .map(|j| {
                if j == subdivisions {
                    alpha - epsilon
                } else {
                    epsilon + j as f64 * mesh
                }
            })
            .collect();
        if include_half {
            let half = alpha / 2.0;
            let pos = levels.partition_point(|&l| l < half - 1e-12);
            if pos >= levels.len() || (levels[pos] - half).abs() > 1e-12 {
                levels.insert(pos, half);
            } else {
                // Snap the nearby regular level so alpha/2 is present exactly.
                levels[pos] = half;
            }
        }
        Ok(AllocationGrid {
            alpha,
            epsilon,
            mesh,
            subdivisions,
            levels,
            include_half,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn include_half(&self) -> bool {
        self.include_half
    }

    /// The endpoint levels used by the allocation search: the grid union
    /// its upper partners `1 - alpha + tau`.
    pub fn endpoint_levels(&self) -> Result<QuantileLevelSet, AllocationError> {
        let mut all = self.levels.clone();
        all.extend(self.levels.iter().map(|&t| 1.0 - self.alpha + t));
        Ok(QuantileLevelSet::from_unsorted(all)?)
    }

    /// For each grid allocation, the indices of its lower and upper
    /// endpoint levels inside `levels`. Levels are matched by index so real
    /// comparisons never depend on exact float equality.
    pub fn pair_indices(
        &self,
        levels: &QuantileLevelSet,
    ) -> Result<Vec<(usize, usize)>, AllocationError> {
        self.levels
            .iter()
            .map(|&tau| {
                let lo = levels
                    .index_of(tau)
                    .ok_or(AllocationError::LevelNotFitted { level: tau })?;
                let upper = 1.0 - self.alpha + tau;
                let hi = levels
                    .index_of(upper)
                    .ok_or(AllocationError::LevelNotFitted { level: upper })?;
                Ok((lo, hi))
            })
            .collect()
    }
}

/// The selected allocation and its fitted core at one covariate value.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreSelection {
    pub tau_index: usize,
    pub tau_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub length: f64,
}

/// Fitted core length `q_{1-alpha+tau}(x) - q_tau(x)`.
pub fn core_length(
    family: &FittedQuantileFamily,
    x: &[f64],
    tau: f64,
    alpha: f64,
) -> Result<f64, AllocationError> {
    let levels = family.levels();
    let lo_idx = levels
        .index_of(tau)
        .ok_or(AllocationError::LevelNotFitted { level: tau })?;
    let upper = 1.0 - alpha + tau;
    let hi_idx = levels
        .index_of(upper)
        .ok_or(AllocationError::LevelNotFitted { level: upper })?;
    let values = family.predict_levels(x)?;
    Ok(values[hi_idx] - values[lo_idx])
}

/// Selects the smallest minimizer of the fitted core length over the grid.
/// The selection reads only the fitted family and the covariates, never a
/// response value.
pub fn select_allocation(
    family: &FittedQuantileFamily,
    x: &[f64],
    grid: &AllocationGrid,
) -> Result<CoreSelection, AllocationError> {
    let pairs = grid.pair_indices(family.levels())?;
    let values = family.predict_levels(x)?;
    Ok(select_from_values(&values, grid.levels(), &pairs))
}

/// Argmin scan over precomputed per-level values; shared by calibration
/// and prediction loops that resolve the index pairs once.
pub(crate) fn select_from_values(
    values: &[f64],
    grid_levels: &[f64],
    pairs: &[(usize, usize)],
) -> CoreSelection {
    let mut best = 0usize;
    let mut best_len = f64::INFINITY;
    for (j, &(lo, hi)) in pairs.iter().enumerate() {
        let len = values[hi] - values[lo];
        if len < best_len {
            best_len = len;
            best = j;
        }
    }
    let (lo, hi) = pairs[best];
    CoreSelection {
        tau_index: best,
        tau_hat: grid_levels[best],
        lo: values[lo],
        hi: values[hi],
        length: values[hi] - values[lo],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Seed;
    use crate::dgp::{self, DgpSpec};
    use crate::quantile::QuantileLevelSet;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    #[test]
    fn grid_formulas_at_paper_scale() {
        let g = AllocationGrid::build(0.1, 1000, 0.005, false).unwrap();
        assert_eq!(g.subdivisions(), 100);
        assert_abs_diff_eq!(g.mesh(), 0.0009, epsilon = 1e-15);
        assert_eq!(g.levels().len(), 101);
        assert_abs_diff_eq!(g.levels()[0], 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(*g.levels().last().unwrap(), 0.095, epsilon = 1e-15);
    }

    #[test]
    fn grid_minimal_calibration() {
        let g = AllocationGrid::build(0.1, 1, 0.005, false).unwrap();
        assert_eq!(g.subdivisions(), 1);
        assert_eq!(g.levels(), &[0.005, 0.095]);
    }

    #[test]
    fn grid_half_alpha_inserted_once() {
        let g = AllocationGrid::build(0.1, 1000, 0.005, true).unwrap();
        let hits = g
            .levels()
            .iter()
            .filter(|&&l| (l - 0.05).abs() <= 1e-12)
            .count();
        assert_eq!(hits, 1);
        // m = 7 gives a coarse grid where 0.05 is not a regular level.
        let g2 = AllocationGrid::build(0.1, 7, 0.005, true).unwrap();
        let hits2 = g2
            .levels()
            .iter()
            .filter(|&&l| (l - 0.05).abs() <= 1e-12)
            .count();
        assert_eq!(hits2, 1);
        for w in g2.levels().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn grid_rejects_large_truncation() {
        assert!(matches!(
            AllocationGrid::build(0.1, 10, 0.05, false),
            Err(AllocationError::BadTruncation { .. })
        ));
    }

    #[test]
    fn endpoint_levels_pair_up() {
        let g = AllocationGrid::build(0.1, 50, 0.005, true).unwrap();
        let gamma = g.endpoint_levels().unwrap();
        let pairs = g.pair_indices(&gamma).unwrap();
        assert_eq!(pairs.len(), g.levels().len());
        for (j, &(lo, hi)) in pairs.iter().enumerate() {
            let diff = gamma.get(hi) - gamma.get(lo);
            assert_abs_diff_eq!(diff, 0.9, epsilon = 1e-9);
            assert_abs_diff_eq!(gamma.get(lo), g.levels()[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn selection_tie_breaks_to_smallest() {
        let lengths = [(0.03, 2.0), (0.05, 2.0), (0.07, 2.5)];
        let grid_levels: Vec<f64> = lengths.iter().map(|&(t, _)| t).collect();
        // Fabricate value vector: lower endpoints 0, upper = length.
        let values = vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.5];
        let pairs = vec![(0, 3), (1, 4), (2, 5)];
        let sel = select_from_values(&values, &grid_levels, &pairs);
        assert_eq!(sel.tau_hat, 0.03);
        assert_eq!(sel.length, 2.0);
    }

    #[test]
    fn oracle_backed_normal_selects_center() {
        let law = dgp::conditional_law(&crate::dgp::build_custom_mixture(vec![
            crate::dgp::WeightedComponent {
                weight: 1.0,
                component: crate::dgp::MixtureComponent::Normal { mean: 0.0, sd: 1.0 },
            },
        ])
        .unwrap())
        .unwrap();
        let grid = AllocationGrid::build(0.1, 1000, 0.005, true).unwrap();
        let levels = grid.endpoint_levels().unwrap();
        let fam = crate::quantile::FittedQuantileFamily::from_law(Arc::clone(&law), levels, 1e-10);
        let sel = select_allocation(&fam, &[0.0], &grid).unwrap();
        assert_abs_diff_eq!(sel.tau_hat, 0.05, epsilon = 1e-9);
        assert_abs_diff_eq!(sel.length, 3.2897, epsilon = 1e-3);
    }

    #[test]
    fn oracle_backed_exponential_selects_truncation_edge() {
        let law = dgp::conditional_law(&crate::dgp::build_custom_mixture(vec![
            crate::dgp::WeightedComponent {
                weight: 1.0,
                component: crate::dgp::MixtureComponent::Exponential { rate: 1.0, shift: 0.0 },
            },
        ])
        .unwrap())
        .unwrap();
        let grid = AllocationGrid::build(0.1, 400, 0.005, true).unwrap();
        let levels = grid.endpoint_levels().unwrap();
        let fam = crate::quantile::FittedQuantileFamily::from_law(Arc::clone(&law), levels, 1e-10);
        let sel = select_allocation(&fam, &[0.0], &grid).unwrap();
        assert_abs_diff_eq!(sel.tau_hat, 0.005, epsilon = 1e-9);
    }

    #[test]
    fn oracle_backed_core_lengths_match_closed_forms() {
        // Normal: 2 * 1.6449; exponential: ln(0.95/0.05).
        let norm = dgp::conditional_law(&crate::dgp::build_custom_mixture(vec![
            crate::dgp::WeightedComponent {
                weight: 1.0,
                component: crate::dgp::MixtureComponent::Normal { mean: 0.0, sd: 1.0 },
            },
        ])
        .unwrap())
        .unwrap();
        let exp = dgp::conditional_law(&crate::dgp::build_custom_mixture(vec![
            crate::dgp::WeightedComponent {
                weight: 1.0,
                component: crate::dgp::MixtureComponent::Exponential { rate: 1.0, shift: 0.0 },
            },
        ])
        .unwrap())
        .unwrap();
        let grid = AllocationGrid::build(0.1, 1000, 0.005, true).unwrap();
        let gamma = grid.endpoint_levels().unwrap();
        let fam_n = crate::quantile::FittedQuantileFamily::from_law(norm, gamma.clone(), 1e-10);
        let fam_e = crate::quantile::FittedQuantileFamily::from_law(exp, gamma, 1e-10);
        let ln = core_length(&fam_n, &[0.0], 0.05, 0.1).unwrap();
        assert_abs_diff_eq!(ln, 3.2897, epsilon = 1e-4);
        let le = core_length(&fam_e, &[0.0], 0.05, 0.1).unwrap();
        assert_abs_diff_eq!(le, 2.9444389791664403, epsilon = 1e-4);
    }

    #[test]
    fn degenerate_zero_length_core() {
        // Constant responses give identical quantiles at every level.
        let d = crate::data::Dataset::from_univariate(vec![0.0, 0.5, 1.0], vec![2.0, 2.0, 2.0])
            .unwrap();
        let grid = AllocationGrid::build(0.1, 3, 0.005, false).unwrap();
        let fam = crate::quantile::FittedQuantileFamily::fit_knn(
            &d,
            grid.endpoint_levels().unwrap(),
            3,
        )
        .unwrap();
        let len = core_length(&fam, &[0.2], grid.levels()[0], 0.1).unwrap();
        assert_eq!(len, 0.0);
    }

    #[test]
    fn missing_level_is_reported() {
        let d = crate::data::Dataset::from_univariate(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        let fam = crate::quantile::FittedQuantileFamily::fit_knn(
            &d,
            QuantileLevelSet::new(vec![0.1, 0.9]).unwrap(),
            2,
        )
        .unwrap();
        assert!(matches!(
            core_length(&fam, &[0.0], 0.05, 0.1),
            Err(AllocationError::LevelNotFitted { .. })
        ));
    }

    #[test]
    fn selection_ignores_responses() {
        // Perturbing responses of *other* points than the training set does
        // not exist here; instead check the selection is a pure function of
        // the family and x by comparing two calls.
        let data = dgp::sample(&DgpSpec::M1, 200, Seed::new(5)).unwrap();
        let grid = AllocationGrid::build(0.1, 50, 0.005, true).unwrap();
        let fam = crate::quantile::FittedQuantileFamily::fit_knn(
            &data,
            grid.endpoint_levels().unwrap(),
            20,
        )
        .unwrap();
        let a = select_allocation(&fam, &[0.3], &grid).unwrap();
        let b = select_allocation(&fam, &[0.3], &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn selected_core_never_longer_than_symmetric() {
        let data = dgp::sample(&DgpSpec::M1, 400, Seed::new(42)).unwrap();
        let grid = AllocationGrid::build(0.1, 100, 0.005, true).unwrap();
        let fam = crate::quantile::FittedQuantileFamily::fit_knn(
            &data,
            grid.endpoint_levels().unwrap(),
            40,
        )
        .unwrap();
        for i in 0..50 {
            let x = [i as f64 / 50.0];
            let sel = select_allocation(&fam, &x, &grid).unwrap();
            let sym = core_length(&fam, &x, 0.05, 0.1).unwrap();
            assert!(sel.length <= sym, "x={:?}: {} > {}", x, sel.length, sym);
        }
    }
}
