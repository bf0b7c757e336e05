//! Central finite differences for checking hand-written backward passes.
//!
//! Independent of every layer implementation: it only ever calls a scalar
//! function of a perturbed copy of the input.

use crate::tensor::Tensor;

/// `∂f/∂x` estimated as `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every entry.
pub fn numeric_gradient<F>(x: &Tensor<f64>, h: f64, mut f: F) -> Tensor<f64>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// `|a − b| / max(|a|, |b|, floor)`.
///
/// `floor` keeps entries whose true gradient is (near) zero from dividing
/// rounding noise by a vanishing magnitude.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over paired slices.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

/// Panics with the worst offending index if any pair exceeds `tol`.
pub fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64, floor: f64) {
    assert_eq!(analytic.len(), numeric.len(), "length mismatch");
    let worst = analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (&a, &n))| (i, a, n, relative_error(a, n, floor)))
        .max_by(|l, r| l.3.total_cmp(&r.3));
    if let Some((i, a, n, err)) = worst {
        assert!(
            err < tol,
            "entry {i}: analytic {a:e} vs numeric {n:e} (relative error {err:e} >= {tol:e})"
        );
    }
}
