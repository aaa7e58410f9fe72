//! Central finite-difference gradient oracle.
//!
//! Used throughout the test suite to verify every hand-written backward
//! pass. Lives in the library (not test code) so integration tests and
//! the acceptance suite can share it; it never participates in training.

/// Central differences: `g_i = (f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let hi = f(&probe);
        probe[i] = orig - h;
        let lo = f(&probe);
        probe[i] = orig;
        grad.push((hi - lo) / (2.0 * h));
    }
    grad
}

/// Largest symmetric relative error `|a - b| / (|a| + |b| + 1e-8)` over
/// the two gradient vectors.
pub fn max_sym_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / (a.abs() + b.abs() + 1e-8))
        .fold(0.0, f64::max)
}
