//! Rounding guards for arithmetic on decimal-valued levels.
//!
//! Products such as `(m + 1) * (1 - alpha)` are exact integers in decimal
//! arithmetic for common levels (`alpha = 0.1`, `m = 99` gives 90) but land
//! a few ulps above the integer in binary, which would push a plain `ceil`
//! one step too far. The guards below absorb representation drift up to
//! `1e-9`, which is far above f64 rounding error at the magnitudes used here
//! and far below any meaningful difference between levels.

const DRIFT_TOL: f64 = 1e-9;

pub(crate) fn ceil_guarded(x: f64) -> usize {
    (x - DRIFT_TOL).ceil().max(0.0) as usize
}

pub(crate) fn floor_guarded(x: f64) -> usize {
    (x + DRIFT_TOL).floor().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guarded_ceil_absorbs_drift() {
        assert_eq!(ceil_guarded(100.0 * (1.0 - 0.1)), 90);
        assert_eq!(ceil_guarded(6.0 * 0.9), 6);
        assert_eq!(ceil_guarded(90.0 + 8.0 * f64::EPSILON * 90.0), 90);
        assert_eq!(ceil_guarded(90.1), 91);
        assert_eq!(ceil_guarded(-1.0), 0);
    }

    #[test]
    fn guarded_floor_absorbs_drift() {
        assert_eq!(floor_guarded(99.99999999999997), 100);
        assert_eq!(floor_guarded(99.9), 99);
        assert_eq!(floor_guarded(1000.0 * 0.25), 250);
    }
}
