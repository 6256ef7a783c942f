//! Bagged random forest regressor.
//!
//! Each tree trains on a bootstrap sample drawn from its own rng, seeded
//! from (forest seed, tree index). Trees are therefore independent of
//! thread count and of each other, and fitting parallelizes freely.

use rand::Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::ml::tree::{fit_tree, Tree, TreeParams};
use crate::ml::Matrix;
use crate::rng::{rng, sub_seed_n};

#[derive(Debug, Clone, Copy)]
pub struct ForestParams {
    pub n_estimators: usize,
    /// Features per split; `None` means ceil(p / 3).
    pub mtry: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 300,
            mtry: None,
            min_samples_leaf: 5,
            max_depth: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub mtry: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl ForestModel {
    /// Mean prediction over all trees.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.n_rows())
            .into_par_iter()
            .map(|r| self.predict_row(x.row(r)))
            .collect()
    }
}

/// Regression-forest default for features per split: ceil(p / 3).
pub fn default_mtry(p: usize) -> usize {
    p.div_ceil(3).max(1)
}

pub fn fit_forest(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<ForestModel> {
    let n = x.n_rows();
    let mtry = params.mtry.unwrap_or_else(|| default_mtry(x.n_cols()));
    let tree_params = TreeParams {
        mtry: Some(mtry),
        min_samples_leaf: params.min_samples_leaf,
        max_depth: params.max_depth,
    };
    let trees: Vec<Tree> = (0..params.n_estimators)
        .into_par_iter()
        .map(|i| {
            let mut tree_rng = rng(sub_seed_n(params.seed, "tree", i as u64));
            let sample: Vec<usize> = (0..n).map(|_| tree_rng.random_range(0..n)).collect();
            fit_tree(x, y, &sample, &tree_params, &mut tree_rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        n_features: x.n_cols(),
        mtry,
        min_samples_leaf: params.min_samples_leaf,
        max_depth: params.max_depth,
        seed: params.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::{metrics, split_indices};
    use rand::Rng;

    #[test]
    fn constant_labels_predict_the_constant() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = vec![4.0; 30];
        let forest = fit_forest(
            &x,
            &y,
            &ForestParams {
                n_estimators: 10,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        for r in 0..30 {
            assert_eq!(forest.predict_row(x.row(r)), 4.0);
        }
    }

    #[test]
    fn same_seed_reproduces_identical_models() {
        let mut data_rng = crate::rng::rng(2);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| data_rng.random_range(0.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..60).map(|_| data_rng.random_range(0.0..1.0)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let params = ForestParams {
            n_estimators: 20,
            seed: 33,
            ..Default::default()
        };
        let a = fit_forest(&x, &y, &params).unwrap();
        let b = fit_forest(&x, &y, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predict(&x), b.predict(&x));
    }

    #[test]
    fn learns_a_noiseless_linear_signal() {
        let mut rng = crate::rng::rng(4);
        let rows: Vec<Vec<f64>> = (0..700)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] + r[1]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let (train, test) = split_indices(700, 200.0 / 700.0, 8).unwrap();
        let x_train = x.select(&train);
        let y_train: Vec<f64> = train.iter().map(|&r| y[r]).collect();
        let forest = fit_forest(
            &x_train,
            &y_train,
            &ForestParams {
                n_estimators: 200,
                min_samples_leaf: 2,
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let preds: Vec<f64> = test.iter().map(|&r| forest.predict_row(x.row(r))).collect();
        let labels: Vec<f64> = test.iter().map(|&r| y[r]).collect();
        let m = metrics(&preds, &labels).unwrap();
        assert!(m.r2 > 0.9, "r2 = {}", m.r2);
    }

    #[test]
    fn prediction_invariant_to_tree_order() {
        let mut data_rng = crate::rng::rng(6);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..2).map(|_| data_rng.random_range(0.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..40).map(|_| data_rng.random_range(0.0..1.0)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let mut forest = fit_forest(
            &x,
            &y,
            &ForestParams {
                n_estimators: 15,
                seed: 7,
                ..Default::default()
            },
        )
        .unwrap();
        let before = forest.predict_row(x.row(0));
        forest.trees.reverse();
        let after = forest.predict_row(x.row(0));
        assert!((before - after).abs() < 1e-9);
    }
}
