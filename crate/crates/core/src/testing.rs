//! Finite-difference helpers shared by the unit tests.

use ndarray::Array2;

use crate::model::relative_error;

/// Central differences of `f` at `x`, one entry at a time.
pub fn numeric_grad(x: &Array2<f64>, step: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut probe = x.clone();
    let mut out = Array2::zeros(x.raw_dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let base = x[[r, c]];
        probe[[r, c]] = base + step;
        let plus = f(&probe);
        probe[[r, c]] = base - step;
        let minus = f(&probe);
        probe[[r, c]] = base;
        out[[r, c]] = (plus - minus) / (2.0 * step);
    }
    out
}

pub fn assert_grad_close(analytic: &Array2<f64>, numeric: &Array2<f64>, what: &str) {
    assert_eq!(analytic.dim(), numeric.dim(), "{what}: shape");
    for (a, n) in analytic.iter().zip(numeric) {
        let err = relative_error(*a, *n, 1e-6);
        assert!(err <= 1e-4, "{what}: analytic {a} vs numeric {n} (rel {err})");
    }
}
