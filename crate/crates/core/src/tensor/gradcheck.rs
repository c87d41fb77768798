//! Finite-difference gradient oracle.
//!
//! Central differences on a scalar-valued function of a flat input vector.
//! Independent of the tape's backward pass; tests compare the two routes.

/// Central finite differences of `f` at `x`.
pub fn central_diff<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let hi = f(&probe);
        probe[i] = x[i] - step;
        let lo = f(&probe);
        probe[i] = x[i];
        grad[i] = (hi - lo) / (2.0 * step);
    }
    grad
}

/// Worst relative disagreement between two gradient vectors. Entries where
/// both magnitudes fall below `1e-6` are treated as agreeing (the
/// finite-difference signal is pure round-off there).
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0_f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs());
        if denom < 1e-6 {
            continue;
        }
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}
