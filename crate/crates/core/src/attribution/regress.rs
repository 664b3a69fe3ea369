//! Weighted ridge regression as an augmented least-squares problem.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimizes `Σ wₛ (yₛ − b − xₛ·β)² + λ‖β‖²` (the intercept `b` is not
/// penalized; omitted entirely when `intercept` is false). Returns `(b, β)`.
///
/// Solved by SVD on the `√w`-scaled design stacked over `√λ·I`, which keeps
/// the conditioning of the design instead of squaring it.
pub fn weighted_ridge(rows: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64, intercept: bool) -> Result<(f64, Vec<f64>)> {
    let n = rows.len();
    assert_eq!(y.len(), n, "one target per row");
    assert_eq!(w.len(), n, "one weight per row");
    let p = rows.first().map_or(0, Vec::len);
    let off = usize::from(intercept);
    let dim = p + off;
    if dim == 0 {
        return Ok((0.0, Vec::new()));
    }
    let ridge_rows = if lambda > 0.0 { p } else { 0 };
    let mut a = DMatrix::<f64>::zeros(n + ridge_rows, dim);
    let mut rhs = DVector::<f64>::zeros(n + ridge_rows);
    for (s, ((row, &yi), &wi)) in rows.iter().zip(y).zip(w).enumerate() {
        let sw = wi.sqrt();
        if intercept {
            a[(s, 0)] = sw;
        }
        for (j, &x) in row.iter().enumerate() {
            a[(s, off + j)] = sw * x;
        }
        rhs[s] = sw * yi;
    }
    let sl = lambda.sqrt();
    for j in 0..ridge_rows {
        a[(n + j, off + j)] = sl;
    }
    let svd = a.svd(true, true);
    let top = svd.singular_values.max();
    let tol = top * 1e-13 * (n + ridge_rows).max(dim) as f64;
    if top == 0.0 || svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::Estimator("regression system is singular".into()));
    }
    let sol = svd.solve(&rhs, 0.0).map_err(|e| Error::Estimator(e.to_owned()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimator("regression produced non-finite coefficients".into()));
    }
    let b = if intercept { sol[0] } else { 0.0 };
    Ok((b, sol.iter().skip(off).copied().collect()))
}
