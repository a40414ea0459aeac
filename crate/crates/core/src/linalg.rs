use nalgebra::{DMatrix, DVector};

/// Solve `a x = b` for a symmetric positive semi-definite `a`.
///
/// Tries a Cholesky factorization first and falls back to the SVD
/// pseudo-inverse (minimum-norm solution) when `a` is singular.
pub fn solve_psd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let scale = a.diagonal().amax().max(1e-300);
    let x = a.clone().svd(true, true).solve(b, scale * 1e-12).ok()?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}
