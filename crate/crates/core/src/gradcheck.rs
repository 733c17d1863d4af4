//! Central finite differences, used to validate backward rules.
//!
//! These helpers only ever evaluate forward values, so they are independent
//! of the reverse sweep they check.

use crate::tensor::Array;

/// Step used by the gradient checks throughout the crate.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
///
/// Central differences with `h = 1e-5` carry an absolute error of roughly
/// `1e-10`; below this floor a relative comparison only measures that noise.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `∂f/∂x` by central differences `(f(x + h e_k) − f(x − h e_k)) / 2h`.
pub fn numeric_gradient<F>(mut f: F, x: &Array, h: f64) -> Array
where
    F: FnMut(&Array) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Array::zeros(x.dim());
    for (idx, g) in grad.indexed_iter_mut() {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let plus = f(&probe);
        probe[idx] = orig - h;
        let minus = f(&probe);
        probe[idx] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    grad
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest entrywise [`relative_error`] between two equally shaped arrays.
pub fn max_relative_error(a: &Array, b: &Array, floor: f64) -> f64 {
    assert_eq!(a.dim(), b.dim(), "shape mismatch in max_relative_error");
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| relative_error(x, y, floor))
        .fold(0.0, f64::max)
}
