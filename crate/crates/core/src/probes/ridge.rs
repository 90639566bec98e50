use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge regression with an unpenalised intercept.
///
/// Centres features and targets, solves `(XᵀX + λI) w = Xᵀy` by Cholesky and
/// recovers the intercept as `ȳ − x̄·w`.
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::Input(
            "hidden matrix and targets must be nonempty and aligned".into(),
        ));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Input(format!(
            "ridge strength must be ≥ 0, got {lambda}"
        )));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Input("ragged hidden matrix".into()));
    }
    if lambda == 0.0 && d >= n {
        return Err(Error::Conditioning(format!(
            "{d} features with {n} examples needs a positive ridge strength"
        )));
    }
    let mean_x: Vec<f64> = (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean_x[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - mean_y));

    let mut gram = xc.transpose() * &xc;
    for j in 0..d {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * yc;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Conditioning("normal equations are singular".into()))?;
    if lambda == 0.0 {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
            (lo.min(v.abs()), hi.max(v.abs()))
        });
        if hi == 0.0 || (lo / hi).powi(2) < 1e-14 {
            return Err(Error::Conditioning(
                "normal equations are ill-conditioned".into(),
            ));
        }
    }
    let w = chol.solve(&rhs);
    let bias = mean_y - w.iter().zip(&mean_x).map(|(a, b)| a * b).sum::<f64>();
    Ok((w.iter().copied().collect(), bias))
}
