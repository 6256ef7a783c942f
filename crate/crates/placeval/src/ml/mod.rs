//! From-scratch regression stack: CART trees, bagged forests, ridge
//! regression, and the two-forest stacked ensemble with a ridge meta-learner.

mod forest;
pub mod persist;
mod ridge;
mod stacked;
mod tree;

pub use forest::{fit_forest, ForestModel, ForestParams};
pub use ridge::{fit_ridge, solve_ridge_system, RidgeModel};
pub use stacked::{fit_stacked, SecondInput, StackedModel, StackedParams};
pub use tree::{fit_tree, Node, Tree, TreeParams};

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Data(format!(
                    "ragged matrix: row of width {} in a matrix of width {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: n, cols, data })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Rows selected by index, in index order.
    pub fn select(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &r in indices {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Evaluation metrics in label space. `r2` is NaN when the label variance of
/// the evaluation set is zero (undefined sentinel).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub r2: f64,
}

/// Mean squared error and R^2 of predictions against labels, with R^2
/// computed about the evaluation-set label mean.
pub fn metrics(predictions: &[f64], labels: &[f64]) -> Result<Metrics> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Model(format!(
            "metrics need matching non-empty slices, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let sse: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    let sst: f64 = labels.iter().map(|y| (y - mean) * (y - mean)).sum();
    let r2 = if sst == 0.0 { f64::NAN } else { 1.0 - sse / sst };
    Ok(Metrics { mse: sse / n, r2 })
}

/// Seeded uniform shuffle; the first ceil(n * test_fraction) indices form
/// the test set. Disjoint and exhaustive by construction.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Data(format!("cannot split {n} rows")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::rng(seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_test = ((n as f64) * test_fraction).ceil() as usize;
    let test = order[..n_test].to_vec();
    let train = order[n_test..].to_vec();
    Ok((train, test))
}

/// Seeded sample of up to `k` distinct indices from `0..n`, ascending.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::rng(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_perfect_and_mean_predictor() {
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let m = metrics(&y, &y).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.r2, 1.0);

        let mean = vec![2.5; 4];
        let m = metrics(&mean, &y).unwrap();
        assert!((m.r2 - 0.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_direct_formula_on_random_data() {
        use rand::Rng;
        let mut rng = crate::rng::rng(5);
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-10.0..10.0)).collect();
        let p: Vec<f64> = (0..50).map(|_| rng.random_range(-10.0..10.0)).collect();
        let m = metrics(&p, &y).unwrap();
        let mut sse = 0.0;
        for i in 0..50 {
            sse += (p[i] - y[i]).powi(2);
        }
        let mean = y.iter().sum::<f64>() / 50.0;
        let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        assert!((m.mse - sse / 50.0).abs() < 1e-12);
        assert!((m.r2 - (1.0 - sse / sst)).abs() < 1e-12);
    }

    #[test]
    fn metrics_constant_labels_give_nan_r2() {
        let y = vec![3.0; 5];
        let p = vec![2.0; 5];
        let m = metrics(&p, &y).unwrap();
        assert!(m.r2.is_nan());
        assert_eq!(m.mse, 1.0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (train, test) = split_indices(10, 0.1, 3).unwrap();
        assert_eq!(test.len(), 1);
        assert_eq!(train.len(), 9);
        let (train2, test2) = split_indices(10, 0.1, 3).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        assert!(split_indices(1, 0.1, 3).is_err());
        assert!(split_indices(10, 0.0, 3).is_err());
    }

    #[test]
    fn split_partitions_exactly() {
        use rand::Rng;
        let mut rng = crate::rng::rng(9);
        for trial in 0..100 {
            let n = rng.random_range(2..200);
            let frac = rng.random_range(0.05..0.95);
            let (train, test) = split_indices(n, frac, trial).unwrap();
            let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
            all.sort_unstable();
            let want: Vec<usize> = (0..n).collect();
            assert_eq!(all, want);
        }
    }
}
