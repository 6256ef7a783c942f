//! Ridge regression (L2-penalized least squares).
//!
//! Features are standardized to zero mean and unit standard deviation before
//! the penalized solve; the intercept is the label mean in that space and is
//! never penalized. Constant features get a forced zero coefficient instead
//! of a division by a zero standard deviation. The normal system
//! (X'X + lambda I) beta = X'y is solved by Cholesky factorization.

use crate::error::{Error, Result};
use crate::ml::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// Coefficients in original feature units.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// Standardization parameters (per-feature mean and stddev; stddev 1 for
    /// constant features).
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    /// Coefficients in standardized space: the vector the penalty acts on.
    pub std_coefficients: Vec<f64>,
}

impl RidgeModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.coefficients)
                .map(|(x, c)| x * c)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.n_rows()).map(|r| self.predict_row(x.row(r))).collect()
    }

    /// L2 norm of the penalized (standardized) coefficient vector.
    pub fn penalized_norm(&self) -> f64 {
        self.std_coefficients.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Solve (X'X + lambda I) beta = X'y directly, with no standardization or
/// intercept. The building block under `fit_ridge`, exposed for callers that
/// manage their own scaling.
pub fn solve_ridge_system(x: &Matrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if x.n_rows() != y.len() {
        return Err(Error::Model(format!(
            "ridge solve: {} rows vs {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    let p = x.n_cols();
    let n = x.n_rows();
    let mut gram = vec![0.0f64; p * p];
    let mut xty = vec![0.0f64; p];
    for r in 0..n {
        let row = x.row(r);
        for i in 0..p {
            xty[i] += row[i] * y[r];
            for j in i..p {
                gram[i * p + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        gram[i * p + i] += lambda;
        for j in 0..i {
            gram[i * p + j] = gram[j * p + i];
        }
    }
    cholesky_solve(&mut gram, &xty, p).ok_or_else(|| {
        Error::Model(
            "singular ridge system: the design matrix is rank deficient, use lambda > 0".into(),
        )
    })
}

/// In-place Cholesky factorization and solve of a symmetric positive
/// definite system. Returns `None` when a pivot falls below a relative
/// tolerance (rank deficiency, possibly masked by rounding).
fn cholesky_solve(a: &mut [f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    let max_diag = (0..p).map(|i| a[i * p + i]).fold(0.0f64, f64::max);
    let tol = max_diag * 1e-12;
    // factor A = L L^T, storing L in the lower triangle
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[i * p + j];
            for k in 0..j {
                sum -= a[i * p + k] * a[j * p + k];
            }
            if i == j {
                if sum <= tol || !sum.is_finite() {
                    return None;
                }
                a[i * p + i] = sum.sqrt();
            } else {
                a[i * p + j] = sum / a[j * p + j];
            }
        }
    }
    // forward substitution L z = b
    let mut z = vec![0.0f64; p];
    for i in 0..p {
        let mut sum = b[i];
        for k in 0..i {
            sum -= a[i * p + k] * z[k];
        }
        z[i] = sum / a[i * p + i];
    }
    // back substitution L^T beta = z
    let mut beta = vec![0.0f64; p];
    for i in (0..p).rev() {
        let mut sum = z[i];
        for k in (i + 1)..p {
            sum -= a[k * p + i] * beta[k];
        }
        beta[i] = sum / a[i * p + i];
    }
    Some(beta)
}

pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n != y.len() || n < 2 {
        return Err(Error::Model(format!(
            "ridge fit needs at least 2 aligned rows, got {} rows and {} labels",
            n,
            y.len()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }

    let mut means = vec![0.0f64; p];
    let mut stds = vec![0.0f64; p];
    for j in 0..p {
        let mean = (0..n).map(|r| x.at(r, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (x.at(r, j) - mean).powi(2)).sum::<f64>() / n as f64;
        means[j] = mean;
        stds[j] = var.sqrt();
    }
    let active: Vec<usize> = (0..p).filter(|&j| stds[j] > 0.0).collect();

    let y_mean = y.iter().sum::<f64>() / n as f64;
    let standardized: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            active
                .iter()
                .map(|&j| (x.at(r, j) - means[j]) / stds[j])
                .collect()
        })
        .collect();
    let centered_y: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let beta_active = solve_ridge_system(&Matrix::from_rows(&standardized)?, &centered_y, lambda)?;

    let mut std_coefficients = vec![0.0f64; p];
    for (slot, &j) in active.iter().enumerate() {
        std_coefficients[j] = beta_active[slot];
    }
    let feature_stds: Vec<f64> = stds.iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect();
    let coefficients: Vec<f64> = std_coefficients
        .iter()
        .zip(&feature_stds)
        .map(|(b, s)| b / s)
        .collect();
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&means)
            .map(|(c, m)| c * m)
            .sum::<f64>();

    Ok(RidgeModel {
        coefficients,
        intercept,
        lambda,
        feature_means: means,
        feature_stds,
        std_coefficients,
    })
}
