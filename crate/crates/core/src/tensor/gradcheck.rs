//! Central finite differences, the oracle for every backward rule.

/// `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h` for each coordinate `i`.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut theta = params.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = theta[i];
            theta[i] = orig + step;
            let plus = f(&theta);
            theta[i] = orig - step;
            let minus = f(&theta);
            theta[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Worst disagreement between two gradient vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradError {
    pub max_rel: f64,
    pub max_abs: f64,
    /// Coordinates that fail both the relative and the absolute bound.
    pub failures: usize,
}

impl GradError {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn merge(self, other: GradError) -> GradError {
        GradError {
            max_rel: self.max_rel.max(other.max_rel),
            max_abs: self.max_abs.max(other.max_abs),
            failures: self.failures + other.failures,
        }
    }
}

/// Compares analytic and numeric gradients. A coordinate passes when its
/// relative error is below `rel_tol`, or its absolute error is below
/// `abs_tol` (for values near zero where the relative measure blows up).
pub fn grad_error(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_tol: f64) -> GradError {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut err = GradError::default();
    for (&a, &n) in analytic.iter().zip(numeric) {
        let abs = (a - n).abs();
        let denom = a.abs().max(n.abs());
        let rel = if denom == 0.0 { 0.0 } else { abs / denom };
        err.max_abs = err.max_abs.max(abs);
        if abs > abs_tol {
            err.max_rel = err.max_rel.max(rel);
        }
        if rel >= rel_tol && abs >= abs_tol {
            err.failures += 1;
        }
    }
    err
}
