//! Exact population computations for known conditional laws.
//!
//! Given cdf/pdf access to the conditional distribution of `Y | X = x`, this
//! module computes quantiles by bisection, the shortest fixed-mass interval
//! via the lower-tail allocation search, highest-density regions, the
//! connectedness penalty for disconnected HDRs, and the cost of truncating
//! the allocation search range. These are the ground truth that the
//! evaluation diagnostics compare estimated quantities against.
//!
//! Two independent routes to the shortest interval are provided on purpose:
//! [`oracle_allocation`] searches the allocation scale, while
//! [`brute_force_shortest_interval`] scans interval lower endpoints on the
//! response scale. Agreement between them is itself a tested property.

use thiserror::Error;

/// Bisection iteration cap; a failure to converge signals a malformed cdf.
const MAX_BISECT_ITERS: usize = 200;

/// Default y-scale tolerance for quantile inversion.
pub const DEFAULT_INVERSION_TOL: f64 = 1e-9;

/// Scan resolution for locating HDR component boundaries.
const HDR_SCAN_POINTS: usize = 4096;

/// Mass clipped off each tail when bracketing an infinite support for scans.
const SUPPORT_CLIP: f64 = 5e-7;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("quantile inversion did not converge (level {level}, x {x})")]
    NoConvergence { level: f64, x: f64 },
    #[error("could not bracket level {level} within the expanding search range")]
    BracketFailure { level: f64 },
    #[error("all candidate core lengths are infinite")]
    AllInfinite,
    #[error("superlevel-set mass cannot reach the target on the scan grid")]
    MassUnreachable,
    #[error("gap bound requires exactly two HDR components, got {count}")]
    ComponentCount { count: usize },
    #[error("valley density exceeds the HDR level; gap bound is not applicable")]
    ValleyNotBelowLevel,
    #[error("component list is empty")]
    EmptyComponents,
}

/// Exact conditional cdf/pdf/quantile access for a known data-generating
/// process, conditioned on a scalar covariate.
pub trait ConditionalLaw: Send + Sync {
    /// `P(Y <= y | X = x)`.
    fn cdf(&self, y: f64, x: f64) -> f64;

    /// Conditional density at `y`.
    fn pdf(&self, y: f64, x: f64) -> f64;

    /// Support endpoints, possibly infinite.
    fn support(&self, x: f64) -> (f64, f64);

    /// Closed-form quantile when available; must invert `cdf` to within
    /// `1e-9` on the probability scale.
    fn quantile_closed_form(&self, tau: f64, x: f64) -> Option<f64> {
        let _ = (tau, x);
        None
    }

    /// True when the conditional law does not depend on `x`; lets callers
    /// hoist per-x oracle computations out of loops.
    fn x_invariant(&self) -> bool {
        false
    }
}

/// Conditional quantile `inf{y : F(y|x) >= tau}` by bisection to y-scale
/// width `tol`, using the law's closed form when it has one.
///
/// Infinite support endpoints are bracketed by expanding `[-2^j, 2^j]` until
/// the cdf straddles the target level.
pub fn oracle_quantile(
    law: &dyn ConditionalLaw,
    x: f64,
    tau: f64,
    tol: f64,
) -> Result<f64, OracleError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(OracleError::BadInput(format!(
            "quantile level must lie in (0,1), got {tau}"
        )));
    }
    if !(tol > 0.0) {
        return Err(OracleError::BadInput(format!("tolerance must be positive, got {tol}")));
    }
    if let Some(q) = law.quantile_closed_form(tau, x) {
        return Ok(q);
    }
    let (slo, shi) = law.support(x);

    // Invariant: cdf(lo) < tau <= cdf(hi).
    let mut hi = if shi.is_finite() {
        shi
    } else {
        expand_until(x, |y| law.cdf(y, x) >= tau, 1.0, tau)?
    };
    let mut lo = if slo.is_finite() {
        slo
    } else {
        expand_until(x, |y| law.cdf(y, x) < tau, -1.0, tau)?
    };
    if lo > hi {
        return Err(OracleError::BadInput(format!(
            "support is inverted at x = {x}: ({lo}, {hi})"
        )));
    }

    let mut iters = 0;
    while hi - lo > tol {
        if iters >= MAX_BISECT_ITERS {
            return Err(OracleError::NoConvergence { level: tau, x });
        }
        let mid = 0.5 * (lo + hi);
        if law.cdf(mid, x) >= tau {
            hi = mid;
        } else {
            lo = mid;
        }
        iters += 1;
    }
    Ok(hi)
}

fn expand_until(
    x: f64,
    pred: impl Fn(f64) -> bool,
    direction: f64,
    level: f64,
) -> Result<f64, OracleError> {
    let _ = x;
    let mut magnitude = 1.0;
    for _ in 0..64 {
        let y = direction * magnitude;
        if pred(y) {
            return Ok(y);
        }
        magnitude *= 2.0;
    }
    Err(OracleError::BracketFailure { level })
}

/// Endpoints `(q_tau, q_{1-alpha+tau})` of the allocation-`tau` core, with
/// the boundary conventions: level 0 maps to the lower support endpoint and
/// level 1 to the upper one, either of which may be infinite.
pub fn oracle_core(
    law: &dyn ConditionalLaw,
    x: f64,
    tau: f64,
    alpha: f64,
    tol: f64,
) -> Result<(f64, f64), OracleError> {
    let lo = if tau <= 1e-12 {
        law.support(x).0
    } else {
        oracle_quantile(law, x, tau, tol)?
    };
    let upper_level = 1.0 - alpha + tau;
    let hi = if upper_level >= 1.0 - 1e-12 {
        law.support(x).1
    } else {
        oracle_quantile(law, x, upper_level, tol)?
    };
    Ok((lo, hi))
}

/// Core length `q_{1-alpha+tau}(x) - q_tau(x)`, infinite when the relevant
/// support endpoint is infinite.
pub fn oracle_core_length(
    law: &dyn ConditionalLaw,
    x: f64,
    tau: f64,
    alpha: f64,
    tol: f64,
) -> Result<f64, OracleError> {
    let (lo, hi) = oracle_core(law, x, tau, alpha, tol)?;
    if lo.is_infinite() || hi.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok(hi - lo)
}

/// The shortest fixed-mass core found by the allocation search, together
/// with the smallest allocation that attains it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleInterval {
    pub tau_star: f64,
    pub lo: f64,
    pub hi: f64,
    pub length: f64,
}

/// Searches allocations over `[0, alpha]`: a uniform scan with
/// `fine_grid_size` cells, golden-section refinement of the best cell, and a
/// smallest-allocation tie-break at resolution.
pub fn oracle_allocation(
    law: &dyn ConditionalLaw,
    x: f64,
    alpha: f64,
    fine_grid_size: usize,
) -> Result<OracleInterval, OracleError> {
    allocation_search(law, x, alpha, 0.0, alpha, fine_grid_size)
}

/// Same search restricted to `[epsilon, alpha - epsilon]`.
pub fn oracle_allocation_restricted(
    law: &dyn ConditionalLaw,
    x: f64,
    alpha: f64,
    epsilon: f64,
    fine_grid_size: usize,
) -> Result<OracleInterval, OracleError> {
    if !(epsilon > 0.0 && epsilon < alpha / 2.0) {
        return Err(OracleError::BadInput(format!(
            "truncation must satisfy 0 < epsilon < alpha/2, got epsilon {epsilon}, alpha {alpha}"
        )));
    }
    allocation_search(law, x, alpha, epsilon, alpha - epsilon, fine_grid_size)
}

fn allocation_search(
    law: &dyn ConditionalLaw,
    x: f64,
    alpha: f64,
    lo_t: f64,
    hi_t: f64,
    fine_grid_size: usize,
) -> Result<OracleInterval, OracleError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(OracleError::BadInput(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if fine_grid_size < 2 {
        return Err(OracleError::BadInput(format!(
            "fine grid must have at least 2 cells, got {fine_grid_size}"
        )));
    }
    let tol = DEFAULT_INVERSION_TOL;
    let length_at = |tau: f64| oracle_core_length(law, x, tau, alpha, tol);

    let step = (hi_t - lo_t) / fine_grid_size as f64;
    let mut best_len = f64::INFINITY;
    let mut best_j = usize::MAX;
    for j in 0..=fine_grid_size {
        let tau = if j == fine_grid_size { hi_t } else { lo_t + j as f64 * step };
        let len = length_at(tau)?;
        if len < best_len {
            best_len = len;
            best_j = j;
        }
    }
    if best_j == usize::MAX {
        return Err(OracleError::AllInfinite);
    }

    // Refine one cell to each side of the discrete minimizer; within this
    // window the objective is assumed unimodal.
    let a = if best_j == 0 { lo_t } else { lo_t + (best_j - 1) as f64 * step };
    let b = if best_j >= fine_grid_size { hi_t } else { lo_t + (best_j + 1) as f64 * step };
    let (tau_g, len_g) = golden_section_min(&length_at, a, b, 1e-10)?;

    // Candidates share the window; whenever lengths tie at resolution, take
    // the smallest allocation.
    let len_a = length_at(a)?;
    let len_b = length_at(b)?;
    let min_len = len_g.min(len_a).min(len_b);
    let tie = 1e-8 * (1.0 + min_len.abs());
    let mut tau_star = b;
    let mut length = len_b;
    for (t, l) in [(a, len_a), (tau_g, len_g), (b, len_b)] {
        if l <= min_len + tie && t < tau_star {
            tau_star = t;
            length = l;
        }
    }

    let (lo, hi) = oracle_core(law, x, tau_star, alpha, tol)?;
    Ok(OracleInterval {
        tau_star,
        lo,
        hi,
        length: if lo.is_infinite() || hi.is_infinite() { f64::INFINITY } else { length },
    })
}

/// Golden-section minimization on `[a, b]` to window width `xtol`.
fn golden_section_min(
    f: &impl Fn(f64) -> Result<f64, OracleError>,
    mut a: f64,
    mut b: f64,
    xtol: f64,
) -> Result<(f64, f64), OracleError> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if b - a <= xtol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Result of checking the balanced-density first-order condition at a
/// candidate optimal allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedDensityCheck {
    /// Interior case: `|f(lo|x) - f(hi|x)|`. Boundary case: the one-sided
    /// derivative of the core length whose sign certifies optimality.
    pub residual: f64,
    pub holds: bool,
    pub boundary: bool,
}

/// Verifies the first-order optimality condition at `tau_star`: equal
/// endpoint densities for interior allocations, or the one-sided derivative
/// sign condition at the search boundary.
pub fn check_balanced_density(
    law: &dyn ConditionalLaw,
    x: f64,
    tau_star: f64,
    alpha: f64,
    tol: f64,
) -> Result<BalancedDensityCheck, OracleError> {
    const BOUNDARY_TOL: f64 = 1e-5;
    let inv_tol = DEFAULT_INVERSION_TOL;
    if tau_star <= BOUNDARY_TOL {
        // dL/dtau at 0+ is 1/f(upper) - 1/f(lower); optimality needs >= 0.
        let h = BOUNDARY_TOL;
        let (lo, hi) = oracle_core(law, x, h, alpha, inv_tol)?;
        let d = inv_density(law.pdf(hi, x)) - inv_density(law.pdf(lo, x));
        return Ok(BalancedDensityCheck {
            residual: d,
            holds: d >= -tol,
            boundary: true,
        });
    }
    if tau_star >= alpha - BOUNDARY_TOL {
        let h = BOUNDARY_TOL;
        let (lo, hi) = oracle_core(law, x, alpha - h, alpha, inv_tol)?;
        let d = inv_density(law.pdf(hi, x)) - inv_density(law.pdf(lo, x));
        return Ok(BalancedDensityCheck {
            residual: d,
            holds: d <= tol,
            boundary: true,
        });
    }
    let (lo, hi) = oracle_core(law, x, tau_star, alpha, inv_tol)?;
    let residual = (law.pdf(lo, x) - law.pdf(hi, x)).abs();
    Ok(BalancedDensityCheck {
        residual,
        holds: residual <= tol,
        boundary: false,
    })
}

fn inv_density(f: f64) -> f64 {
    if f <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / f
    }
}

/// A mass-`1-alpha` highest-density region: the density threshold, its
/// ordered disjoint component intervals, and their total mass and length.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrResult {
    pub level: f64,
    pub components: Vec<(f64, f64)>,
    pub total_mass: f64,
    pub total_length: f64,
}

/// Computes the highest-density region of conditional mass `1 - alpha` by
/// bisecting the density threshold.
///
/// When the superlevel-set mass jumps over the target (density plateaus),
/// the region at the critical level is trimmed: components that are already
/// above the level are kept whole and the remaining mass is filled from the
/// left ends of the critical pieces, which makes the reported region
/// deterministic among the equally valid choices.
pub fn hdr(
    law: &dyn ConditionalLaw,
    x: f64,
    alpha: f64,
    tol: f64,
) -> Result<HdrResult, OracleError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(OracleError::BadInput(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let target = 1.0 - alpha;
    let (grid, fs) = density_scan(law, x)?;
    let peak = fs.iter().cloned().fold(0.0_f64, f64::max);
    if peak <= 0.0 {
        return Err(OracleError::MassUnreachable);
    }

    let components_at = |lambda: f64| -> Result<Vec<(f64, f64)>, OracleError> {
        Ok(components_above(law, x, &grid, &fs, lambda))
    };
    let mass_of = |comps: &[(f64, f64)]| -> f64 {
        comps.iter().map(|&(a, b)| law.cdf(b, x) - law.cdf(a, x)).sum()
    };

    let mut lam_lo = 0.0;
    let mut lam_hi = peak * (1.0 + 1e-9);
    let mut comps_lo = components_at(lam_lo)?;
    let mut comps_hi: Vec<(f64, f64)> = Vec::new();
    if mass_of(&comps_lo) < target - tol {
        return Err(OracleError::MassUnreachable);
    }

    for _ in 0..80 {
        let lam = 0.5 * (lam_lo + lam_hi);
        let comps = components_at(lam)?;
        let mass = mass_of(&comps);
        if (mass - target).abs() <= tol {
            let total_length = comps.iter().map(|&(a, b)| b - a).sum();
            return Ok(HdrResult {
                level: lam,
                components: comps,
                total_mass: mass,
                total_length,
            });
        }
        if mass >= target {
            lam_lo = lam;
            comps_lo = comps;
        } else {
            lam_hi = lam;
            comps_hi = comps;
        }
        if lam_hi - lam_lo <= peak * 1e-12 {
            break;
        }
    }

    // Mass jumps across the target at the critical level: trim.
    let kept_mass = mass_of(&comps_hi);
    let mut deficit = target - kept_mass;
    if deficit < -tol {
        return Err(OracleError::MassUnreachable);
    }
    let mut result = comps_hi.clone();
    for piece in subtract_intervals(&comps_lo, &comps_hi) {
        if deficit <= tol {
            break;
        }
        let piece_mass = law.cdf(piece.1, x) - law.cdf(piece.0, x);
        if piece_mass <= deficit + tol {
            result.push(piece);
            deficit -= piece_mass;
        } else {
            let cut_level = law.cdf(piece.0, x) + deficit;
            let cut = oracle_quantile(law, x, cut_level.min(1.0 - 1e-12), DEFAULT_INVERSION_TOL)?;
            result.push((piece.0, cut.min(piece.1)));
            deficit = 0.0;
        }
    }
    if deficit > tol {
        return Err(OracleError::MassUnreachable);
    }
    let components = merge_intervals(result);
    let total_mass = mass_of(&components);
    let total_length = components.iter().map(|&(a, b)| b - a).sum();
    Ok(HdrResult {
        level: 0.5 * (lam_lo + lam_hi),
        components,
        total_mass,
        total_length,
    })
}

/// Scan grid over the support truncated to interior mass `1 - 1e-6`.
fn density_scan(law: &dyn ConditionalLaw, x: f64) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    let (slo, shi) = law.support(x);
    let ylo = if slo.is_finite() {
        slo
    } else {
        oracle_quantile(law, x, SUPPORT_CLIP, DEFAULT_INVERSION_TOL)?
    };
    let yhi = if shi.is_finite() {
        shi
    } else {
        oracle_quantile(law, x, 1.0 - SUPPORT_CLIP, DEFAULT_INVERSION_TOL)?
    };
    let step = (yhi - ylo) / (HDR_SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..HDR_SCAN_POINTS).map(|i| ylo + i as f64 * step).collect();
    let fs: Vec<f64> = grid.iter().map(|&y| law.pdf(y, x)).collect();
    Ok((grid, fs))
}

/// Contiguous runs of `f >= lambda` on the scan grid, with boundaries
/// refined by bisection on the density predicate.
fn components_above(
    law: &dyn ConditionalLaw,
    x: f64,
    grid: &[f64],
    fs: &[f64],
    lambda: f64,
) -> Vec<(f64, f64)> {
    let refine = |mut below: f64, mut above: f64| {
        for _ in 0..60 {
            let mid = 0.5 * (below + above);
            if law.pdf(mid, x) >= lambda {
                above = mid;
            } else {
                below = mid;
            }
        }
        0.5 * (below + above)
    };
    let mut comps = Vec::new();
    let mut start: Option<f64> = None;
    for i in 0..grid.len() {
        let inside = fs[i] >= lambda;
        match (inside, start) {
            (true, None) => {
                let a = if i == 0 { grid[0] } else { refine(grid[i - 1], grid[i]) };
                start = Some(a);
            }
            (false, Some(a)) => {
                // Falling edge between i-1 and i; bisect with roles swapped.
                let mut above = grid[i - 1];
                let mut below = grid[i];
                for _ in 0..60 {
                    let mid = 0.5 * (above + below);
                    if law.pdf(mid, x) >= lambda {
                        above = mid;
                    } else {
                        below = mid;
                    }
                }
                comps.push((a, 0.5 * (above + below)));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        comps.push((a, grid[grid.len() - 1]));
    }
    comps
}

/// Pieces of `minuend` not covered by `subtrahend`; both ordered, disjoint.
fn subtract_intervals(minuend: &[(f64, f64)], subtrahend: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(a, b) in minuend {
        let mut cursor = a;
        for &(c, d) in subtrahend {
            if d <= cursor || c >= b {
                continue;
            }
            if c > cursor {
                out.push((cursor, c));
            }
            cursor = cursor.max(d);
        }
        if cursor < b {
            out.push((cursor, b));
        }
    }
    out.retain(|&(a, b)| b - a > 0.0);
    out
}

fn merge_intervals(mut intervals: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    intervals.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in intervals {
        match out.last_mut() {
            Some(last) if a <= last.1 + 1e-9 * (1.0 + last.1.abs()) => {
                last.1 = last.1.max(b);
            }
            _ => out.push((a, b)),
        }
    }
    out
}

/// Lower bound on the length of any valid single interval when the HDR has
/// two components: `|H| + (1 - beta) * (a2 - b1)` where `beta` is the peak
/// valley density relative to the HDR level.
pub fn gap_lower_bound(
    hdr: &HdrResult,
    law: &dyn ConditionalLaw,
    x: f64,
) -> Result<f64, OracleError> {
    if hdr.components.len() != 2 {
        return Err(OracleError::ComponentCount {
            count: hdr.components.len(),
        });
    }
    let (_, b1) = hdr.components[0];
    let (a2, _) = hdr.components[1];
    let gap = a2 - b1;
    const VALLEY_SCAN: usize = 2048;
    let mut valley_peak = 0.0_f64;
    for i in 0..VALLEY_SCAN {
        let y = b1 + (i as f64 + 0.5) / VALLEY_SCAN as f64 * gap;
        valley_peak = valley_peak.max(law.pdf(y, x));
    }
    let beta = valley_peak / hdr.level;
    if beta >= 1.0 {
        return Err(OracleError::ValleyNotBelowLevel);
    }
    Ok(hdr.total_length + (1.0 - beta) * gap)
}

/// Smallest interval containing every component: `[min lower, max upper]`.
pub fn connected_hull(components: &[(f64, f64)]) -> Result<(f64, f64), OracleError> {
    if components.is_empty() {
        return Err(OracleError::EmptyComponents);
    }
    let lo = components.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let hi = components.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Monte Carlo average over `xs` of the oracle length lost by restricting
/// the allocation search to `[epsilon, alpha - epsilon]`. Nonnegative.
pub fn truncation_cost(
    law: &dyn ConditionalLaw,
    xs: &[f64],
    alpha: f64,
    epsilon: f64,
) -> Result<f64, OracleError> {
    if xs.is_empty() {
        return Err(OracleError::BadInput("covariate sample is empty".into()));
    }
    const GRID: usize = 512;
    if law.x_invariant() {
        let full = oracle_allocation(law, xs[0], alpha, GRID)?.length;
        let restricted = oracle_allocation_restricted(law, xs[0], alpha, epsilon, GRID)?.length;
        return Ok((restricted - full).max(0.0));
    }
    let mut total = 0.0;
    for &x in xs {
        let full = oracle_allocation(law, x, alpha, GRID)?.length;
        let restricted = oracle_allocation_restricted(law, x, alpha, epsilon, GRID)?.length;
        total += (restricted - full).max(0.0);
    }
    Ok(total / xs.len() as f64)
}

/// A shortest mass-`1-alpha` interval found by scanning lower endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestInterval {
    pub lo: f64,
    pub hi: f64,
    pub length: f64,
}

/// Independent route to the shortest valid interval: scan lower endpoints
/// `u` over the support, set `v = q_{F(u)+1-alpha}`, minimize `v - u`, and
/// refine the best cell by golden section.
pub fn brute_force_shortest_interval(
    law: &dyn ConditionalLaw,
    x: f64,
    alpha: f64,
    endpoint_grid_size: usize,
) -> Result<ShortestInterval, OracleError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(OracleError::BadInput(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if endpoint_grid_size < 2 {
        return Err(OracleError::BadInput(format!(
            "endpoint grid must have at least 2 cells, got {endpoint_grid_size}"
        )));
    }
    let tol = DEFAULT_INVERSION_TOL;
    let (slo, shi) = law.support(x);
    let u_lo = if slo.is_finite() {
        slo
    } else {
        oracle_quantile(law, x, 1e-7, tol)?
    };
    let u_hi = oracle_quantile(law, x, alpha, tol)?;

    let length_at = |u: f64| -> Result<f64, OracleError> {
        let target = law.cdf(u, x) + 1.0 - alpha;
        let v = if target >= 1.0 - 1e-12 {
            shi
        } else {
            oracle_quantile(law, x, target, tol)?
        };
        Ok(if v.is_finite() { v - u } else { f64::INFINITY })
    };

    let step = (u_hi - u_lo) / endpoint_grid_size as f64;
    let mut best_len = f64::INFINITY;
    let mut best_j = usize::MAX;
    for j in 0..=endpoint_grid_size {
        let u = if j == endpoint_grid_size { u_hi } else { u_lo + j as f64 * step };
        let len = length_at(u)?;
        if len < best_len {
            best_len = len;
            best_j = j;
        }
    }
    if best_j == usize::MAX {
        return Err(OracleError::AllInfinite);
    }
    let a = if best_j == 0 { u_lo } else { u_lo + (best_j - 1) as f64 * step };
    let b = if best_j >= endpoint_grid_size { u_hi } else { u_lo + (best_j + 1) as f64 * step };
    let (u_g, len_g) = golden_section_min(&length_at, a, b, 1e-10)?;

    let len_a = length_at(a)?;
    let len_b = length_at(b)?;
    let min_len = len_g.min(len_a).min(len_b);
    let tie = 1e-8 * (1.0 + min_len.abs());
    let mut u_star = b;
    for (u, l) in [(a, len_a), (u_g, len_g), (b, len_b)] {
        if l <= min_len + tie && u < u_star {
            u_star = u;
        }
    }
    let target = law.cdf(u_star, x) + 1.0 - alpha;
    let v_star = if target >= 1.0 - 1e-12 {
        shi
    } else {
        oracle_quantile(law, x, target, tol)?
    };
    Ok(ShortestInterval {
        lo: u_star,
        hi: v_star,
        length: v_star - u_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};

    struct StdNormalLaw;

    impl ConditionalLaw for StdNormalLaw {
        fn cdf(&self, y: f64, _x: f64) -> f64 {
            Normal::new(0.0, 1.0).unwrap().cdf(y)
        }
        fn pdf(&self, y: f64, _x: f64) -> f64 {
            Normal::new(0.0, 1.0).unwrap().pdf(y)
        }
        fn support(&self, _x: f64) -> (f64, f64) {
            (f64::NEG_INFINITY, f64::INFINITY)
        }
        fn x_invariant(&self) -> bool {
            true
        }
    }

    struct ExpLaw;

    impl ConditionalLaw for ExpLaw {
        fn cdf(&self, y: f64, _x: f64) -> f64 {
            if y <= 0.0 {
                0.0
            } else {
                1.0 - (-y).exp()
            }
        }
        fn pdf(&self, y: f64, _x: f64) -> f64 {
            if y < 0.0 {
                0.0
            } else {
                (-y).exp()
            }
        }
        fn support(&self, _x: f64) -> (f64, f64) {
            (0.0, f64::INFINITY)
        }
        fn x_invariant(&self) -> bool {
            true
        }
    }

    struct LogNormalLaw;

    impl ConditionalLaw for LogNormalLaw {
        fn cdf(&self, y: f64, _x: f64) -> f64 {
            if y <= 0.0 {
                0.0
            } else {
                Normal::new(0.0, 1.0).unwrap().cdf(y.ln())
            }
        }
        fn pdf(&self, y: f64, _x: f64) -> f64 {
            if y <= 0.0 {
                0.0
            } else {
                Normal::new(0.0, 1.0).unwrap().pdf(y.ln()) / y
            }
        }
        fn support(&self, _x: f64) -> (f64, f64) {
            (0.0, f64::INFINITY)
        }
        fn x_invariant(&self) -> bool {
            true
        }
    }

    /// Two-height uniform mixture: density 0.6 on [0,1] and 0.4 on [2,3].
    struct TwoHeightMixture;

    impl ConditionalLaw for TwoHeightMixture {
        fn cdf(&self, y: f64, _x: f64) -> f64 {
            if y <= 0.0 {
                0.0
            } else if y <= 1.0 {
                0.6 * y
            } else if y <= 2.0 {
                0.6
            } else if y <= 3.0 {
                0.6 + 0.4 * (y - 2.0)
            } else {
                1.0
            }
        }
        fn pdf(&self, y: f64, _x: f64) -> f64 {
            if (0.0..=1.0).contains(&y) {
                0.6
            } else if (2.0..=3.0).contains(&y) {
                0.4
            } else {
                0.0
            }
        }
        fn support(&self, _x: f64) -> (f64, f64) {
            (0.0, 3.0)
        }
        fn x_invariant(&self) -> bool {
            true
        }
    }

    #[test]
    fn quantile_normal_by_bisection() {
        let q = oracle_quantile(&StdNormalLaw, 0.0, 0.95, 1e-9).unwrap();
        assert_abs_diff_eq!(q, 1.6449, epsilon = 1e-4);
    }

    #[test]
    fn quantile_exponential_matches_closed_form() {
        let q = oracle_quantile(&ExpLaw, 0.0, 0.9, 1e-9).unwrap();
        assert_abs_diff_eq!(q, std::f64::consts::LN_10, epsilon = 1e-6);
    }

    #[test]
    fn quantile_median_of_symmetric_law() {
        let q = oracle_quantile(&StdNormalLaw, 0.0, 0.5, 1e-9).unwrap();
        assert_abs_diff_eq!(q, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn allocation_normal_is_equal_tailed() {
        let o = oracle_allocation(&StdNormalLaw, 0.0, 0.1, 512).unwrap();
        assert_abs_diff_eq!(o.tau_star, 0.05, epsilon = 1e-4);
        assert_abs_diff_eq!(o.length, 3.2897, epsilon = 1e-3);
    }

    #[test]
    fn allocation_exponential_sits_at_zero() {
        let o = oracle_allocation(&ExpLaw, 0.0, 0.1, 512).unwrap();
        assert!(o.tau_star.abs() <= 1e-6, "tau_star = {}", o.tau_star);
        assert_abs_diff_eq!(o.lo, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(o.length, std::f64::consts::LN_10, epsilon = 1e-3);
    }

    #[test]
    fn restricted_allocation_exponential_hits_truncation_edge() {
        let o = oracle_allocation_restricted(&ExpLaw, 0.0, 0.1, 0.005, 512).unwrap();
        assert_abs_diff_eq!(o.tau_star, 0.005, epsilon = 1e-6);
        assert_abs_diff_eq!(o.length, 2.348865845558052, epsilon = 1e-3);
    }

    #[test]
    fn balanced_density_normal_interior() {
        let c = check_balanced_density(&StdNormalLaw, 0.0, 0.05, 0.1, 1e-3).unwrap();
        assert!(!c.boundary);
        assert!(c.holds, "residual {}", c.residual);
    }

    #[test]
    fn balanced_density_lognormal_at_brute_force_minimizer() {
        let best = brute_force_shortest_interval(&LogNormalLaw, 0.0, 0.1, 2000).unwrap();
        let tau_star = LogNormalLaw.cdf(best.lo, 0.0);
        let c = check_balanced_density(&LogNormalLaw, 0.0, tau_star, 0.1, 1e-3).unwrap();
        assert!(!c.boundary);
        assert!(c.holds, "residual {}", c.residual);
    }

    #[test]
    fn balanced_density_exponential_boundary_condition() {
        let c = check_balanced_density(&ExpLaw, 0.0, 0.0, 0.1, 1e-3).unwrap();
        assert!(c.boundary);
        assert!(c.holds);
        // Closed form of the one-sided derivative at zero: 1/alpha - 1.
        assert_abs_diff_eq!(c.residual, 9.0, epsilon = 1e-2);
    }

    #[test]
    fn hdr_normal_single_component() {
        let h = hdr(&StdNormalLaw, 0.0, 0.1, 1e-6).unwrap();
        assert_eq!(h.components.len(), 1);
        let (a, b) = h.components[0];
        assert_abs_diff_eq!(a, -1.6449, epsilon = 1e-3);
        assert_abs_diff_eq!(b, 1.6449, epsilon = 1e-3);
        assert_abs_diff_eq!(h.total_mass, 0.9, epsilon = 1e-5);
    }

    #[test]
    fn hdr_two_height_mixture_trims_critical_component() {
        let h = hdr(&TwoHeightMixture, 0.0, 0.1, 1e-6).unwrap();
        assert_eq!(h.components.len(), 2);
        assert_abs_diff_eq!(h.level, 0.4, epsilon = 1e-3);
        let (a1, b1) = h.components[0];
        let (a2, b2) = h.components[1];
        assert_abs_diff_eq!(a1, 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(b1, 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(a2, 2.0, epsilon = 1e-3);
        assert_abs_diff_eq!(b2, 2.75, epsilon = 1e-3);
        assert_abs_diff_eq!(h.total_length, 1.75, epsilon = 2e-3);
    }

    #[test]
    fn gap_bound_on_two_height_mixture() {
        let h = hdr(&TwoHeightMixture, 0.0, 0.1, 1e-6).unwrap();
        let bound = gap_lower_bound(&h, &TwoHeightMixture, 0.0).unwrap();
        assert_abs_diff_eq!(bound, 2.75, epsilon = 5e-3);
    }

    #[test]
    fn gap_bound_formula_with_raised_valley() {
        // Formula check on a synthetic valley: density 0.2 between the
        // components against level 0.4 gives beta = 0.5.
        struct RaisedValley;
        impl ConditionalLaw for RaisedValley {
            fn cdf(&self, _y: f64, _x: f64) -> f64 {
                0.0
            }
            fn pdf(&self, y: f64, _x: f64) -> f64 {
                if (1.0..=2.0).contains(&y) {
                    0.2
                } else {
                    0.6
                }
            }
            fn support(&self, _x: f64) -> (f64, f64) {
                (0.0, 3.0)
            }
        }
        let h = HdrResult {
            level: 0.4,
            components: vec![(0.0, 1.0), (2.0, 2.75)],
            total_mass: 0.9,
            total_length: 1.75,
        };
        let bound = gap_lower_bound(&h, &RaisedValley, 0.0).unwrap();
        assert_abs_diff_eq!(bound, 1.75 + 0.5 * 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gap_bound_rejects_wrong_component_count() {
        let h = HdrResult {
            level: 0.4,
            components: vec![(0.0, 1.0)],
            total_mass: 0.9,
            total_length: 1.0,
        };
        assert!(matches!(
            gap_lower_bound(&h, &TwoHeightMixture, 0.0),
            Err(OracleError::ComponentCount { count: 1 })
        ));
    }

    #[test]
    fn hull_basics() {
        assert_eq!(connected_hull(&[(0.0, 1.0), (2.0, 2.75)]).unwrap(), (0.0, 2.75));
        assert_eq!(connected_hull(&[(1.5, 2.5)]).unwrap(), (1.5, 2.5));
        assert!(connected_hull(&[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn hull_dominates_component_lengths(raw in proptest::collection::vec((0.0_f64..10.0, 0.01_f64..2.0), 1..6)) {
            // Build ordered disjoint components from gaps and widths.
            let mut comps = Vec::new();
            let mut cursor = 0.0;
            for (gap, width) in raw {
                let a = cursor + gap;
                comps.push((a, a + width));
                cursor = a + width;
            }
            let hull = connected_hull(&comps).unwrap();
            let total: f64 = comps.iter().map(|&(a, b)| b - a).sum();
            proptest::prop_assert!(hull.1 - hull.0 >= total - 1e-12);
        }
    }

    #[test]
    fn truncation_cost_exponential_closed_form() {
        let cost = truncation_cost(&ExpLaw, &[0.0], 0.1, 0.005).unwrap();
        assert_abs_diff_eq!(cost, 0.0462807525640061, epsilon = 1e-3);
    }

    #[test]
    fn truncation_cost_nonincreasing_in_epsilon() {
        let costs: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&e| truncation_cost(&ExpLaw, &[0.0], 0.1, e).unwrap())
            .collect();
        assert!(costs[0] >= costs[1] && costs[1] >= costs[2], "{costs:?}");
    }

    #[test]
    fn truncation_cost_zero_for_interior_oracle() {
        let cost = truncation_cost(&StdNormalLaw, &[0.0], 0.1, 0.005).unwrap();
        assert!(cost <= 1e-6, "cost = {cost}");
    }

    #[test]
    fn brute_force_normal() {
        let b = brute_force_shortest_interval(&StdNormalLaw, 0.0, 0.1, 2000).unwrap();
        assert_abs_diff_eq!(b.length, 3.2897, epsilon = 2e-3);
    }

    #[test]
    fn brute_force_exponential() {
        let b = brute_force_shortest_interval(&ExpLaw, 0.0, 0.1, 2000).unwrap();
        assert_abs_diff_eq!(b.lo, 0.0, epsilon = 2e-3);
        assert_abs_diff_eq!(b.hi, std::f64::consts::LN_10, epsilon = 2e-3);
    }

    #[test]
    fn brute_force_agrees_with_allocation_search() {
        for law in [&StdNormalLaw as &dyn ConditionalLaw, &ExpLaw, &LogNormalLaw] {
            let a = oracle_allocation(law, 0.0, 0.1, 512).unwrap();
            let b = brute_force_shortest_interval(law, 0.0, 0.1, 2000).unwrap();
            assert!(
                (a.length - b.length).abs() <= 2e-3,
                "allocation {} vs brute force {}",
                a.length,
                b.length
            );
            assert!((a.lo - b.lo).abs() <= 5e-3, "lo {} vs {}", a.lo, b.lo);
            assert!((a.hi - b.hi).abs() <= 5e-3, "hi {} vs {}", a.hi, b.hi);
        }
    }

    #[test]
    fn brute_force_mixture_meets_gap_bound() {
        let h = hdr(&TwoHeightMixture, 0.0, 0.1, 1e-6).unwrap();
        let bound = gap_lower_bound(&h, &TwoHeightMixture, 0.0).unwrap();
        let b = brute_force_shortest_interval(&TwoHeightMixture, 0.0, 0.1, 2000).unwrap();
        assert_abs_diff_eq!(b.lo, 0.0, epsilon = 2e-3);
        assert_abs_diff_eq!(b.hi, 2.75, epsilon = 2e-3);
        assert!(b.length >= bound - 5e-3);
    }

    #[test]
    fn shortest_interval_has_exact_mass() {
        for law in [&StdNormalLaw as &dyn ConditionalLaw, &ExpLaw, &LogNormalLaw] {
            let b = brute_force_shortest_interval(law, 0.0, 0.1, 2000).unwrap();
            let mass = law.cdf(b.hi, 0.0) - law.cdf(b.lo, 0.0);
            assert!((mass - 0.9).abs() <= 1e-4, "mass = {mass}");
        }
    }
}
