//! Two-forest stacked ensemble with a ridge meta-learner.
//!
//! One forest reads the static block, the second reads either the dynamic
//! block or (for the baseline variant) the static block again. The meta
//! ridge is trained on out-of-fold base predictions: in-sample forest
//! predictions are near-zero-error and would corrupt the meta weights.

use crate::error::{Error, Result};
use crate::features::FeatureRow;
use crate::ml::forest::{fit_forest, ForestModel, ForestParams};
use crate::ml::ridge::{fit_ridge, RidgeModel};
use crate::ml::{metrics, Matrix, Metrics};
use crate::rng::{sub_seed, sub_seed_n};
use rand::Rng;

/// Which feature block feeds the second forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondInput {
    Static,
    Dynamic,
}

impl SecondInput {
    pub fn as_str(self) -> &'static str {
        match self {
            SecondInput::Static => "static",
            SecondInput::Dynamic => "dynamic",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StackedParams {
    pub n_estimators: usize,
    pub mtry: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub lambda: f64,
    pub k_folds: usize,
    pub seed: u64,
    pub second_input: SecondInput,
}

impl Default for StackedParams {
    fn default() -> Self {
        StackedParams {
            n_estimators: 300,
            mtry: None,
            min_samples_leaf: 5,
            max_depth: None,
            lambda: 1.0,
            k_folds: 5,
            seed: 0,
            second_input: SecondInput::Dynamic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    pub static_forest: ForestModel,
    pub second_forest: ForestModel,
    pub second_input: SecondInput,
    pub meta: RidgeModel,
    pub k_folds: usize,
}

impl StackedModel {
    pub fn predict_row(&self, row: &FeatureRow) -> f64 {
        let a = self.static_forest.predict_row(&row.static_features);
        let b = self.second_forest.predict_row(self.second_block(row));
        self.meta.predict_row(&[a, b])
    }

    fn second_block<'a>(&self, row: &'a FeatureRow) -> &'a [f64] {
        match self.second_input {
            SecondInput::Static => &row.static_features,
            SecondInput::Dynamic => &row.dynamic_features,
        }
    }

    pub fn predict(&self, rows: &[FeatureRow]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn evaluate(&self, rows: &[FeatureRow]) -> Result<Metrics> {
        if rows.is_empty() {
            return Err(Error::Model("cannot evaluate on zero rows".into()));
        }
        let predictions = self.predict(rows);
        let labels: Vec<f64> = rows.iter().map(|r| r.label).collect();
        metrics(&predictions, &labels)
    }
}

fn block_matrix(rows: &[FeatureRow], input: SecondInput) -> Result<Matrix> {
    let vecs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| match input {
            SecondInput::Static => r.static_features.clone(),
            SecondInput::Dynamic => r.dynamic_features.clone(),
        })
        .collect();
    Matrix::from_rows(&vecs)
}

fn forest_params(p: &StackedParams, seed: u64) -> ForestParams {
    ForestParams {
        n_estimators: p.n_estimators,
        mtry: p.mtry,
        min_samples_leaf: p.min_samples_leaf,
        max_depth: p.max_depth,
        seed,
    }
}

/// Seeded shuffle of row indices dealt into k folds of near-equal size.
fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::rng(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[at..at + size].to_vec());
        at += size;
    }
    folds
}

pub fn fit_stacked(rows: &[FeatureRow], params: &StackedParams) -> Result<StackedModel> {
    let n = rows.len();
    if n < params.k_folds {
        return Err(Error::Model(format!(
            "stacking needs at least k_folds = {} rows, got {n}",
            params.k_folds
        )));
    }
    if params.k_folds < 2 {
        return Err(Error::Config(format!(
            "k_folds must be at least 2, got {}",
            params.k_folds
        )));
    }
    let labels: Vec<f64> = rows.iter().map(|r| r.label).collect();
    let x_static = block_matrix(rows, SecondInput::Static)?;
    let x_second = block_matrix(rows, params.second_input)?;

    // out-of-fold base predictions form the meta design
    let folds = fold_assignment(n, params.k_folds, sub_seed(params.seed, "stacked.folds"));
    let mut oof = vec![[0.0f64; 2]; n];
    for (f, fold) in folds.iter().enumerate() {
        let in_fold = {
            let mut mask = vec![false; n];
            for &r in fold {
                mask[r] = true;
            }
            mask
        };
        let train_idx: Vec<usize> = (0..n).filter(|&r| !in_fold[r]).collect();
        let y_train: Vec<f64> = train_idx.iter().map(|&r| labels[r]).collect();

        let forest_a = fit_forest(
            &x_static.select(&train_idx),
            &y_train,
            &forest_params(params, sub_seed_n(params.seed, "stacked.fold.a", f as u64)),
        )?;
        let forest_b = fit_forest(
            &x_second.select(&train_idx),
            &y_train,
            &forest_params(params, sub_seed_n(params.seed, "stacked.fold.b", f as u64)),
        )?;
        for &r in fold {
            oof[r] = [
                forest_a.predict_row(x_static.row(r)),
                forest_b.predict_row(x_second.row(r)),
            ];
        }
    }
    let meta_design: Vec<Vec<f64>> = oof.iter().map(|p| p.to_vec()).collect();
    let meta = fit_ridge(&Matrix::from_rows(&meta_design)?, &labels, params.lambda)?;

    // base forests refit on every training row
    let static_forest = fit_forest(
        &x_static,
        &labels,
        &forest_params(params, sub_seed(params.seed, "stacked.full.a")),
    )?;
    let second_forest = fit_forest(
        &x_second,
        &labels,
        &forest_params(params, sub_seed(params.seed, "stacked.full.b")),
    )?;

    Ok(StackedModel {
        static_forest,
        second_forest,
        second_input: params.second_input,
        meta,
        k_folds: params.k_folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, static_features: Vec<f64>, dynamic_features: Vec<f64>, label: f64) -> FeatureRow {
        FeatureRow {
            property_id: format!("p{id:04}"),
            static_features,
            dynamic_features,
            label,
        }
    }

    /// Discrete levels with constant labels per level: a forest can fit this
    /// exactly, so both base models are perfect.
    fn perfect_rows() -> Vec<FeatureRow> {
        let mut rows = Vec::new();
        for i in 0..200 {
            let level = (i % 10) as f64;
            rows.push(row(i, vec![level], vec![level], 10.0 * level));
        }
        rows
    }

    #[test]
    fn perfect_base_models_get_unit_meta_weight_and_zero_mse() {
        let rows = perfect_rows();
        let params = StackedParams {
            n_estimators: 30,
            min_samples_leaf: 1,
            seed: 5,
            ..Default::default()
        };
        let model = fit_stacked(&rows, &params).unwrap();
        let coef_sum: f64 = model.meta.coefficients.iter().sum();
        assert!((coef_sum - 1.0).abs() < 0.05, "coef sum {coef_sum}");
        let m = model.evaluate(&rows).unwrap();
        let var = 825.0; // variance of 10 * level over levels 0..9
        assert!(m.mse < 0.01 * var, "mse {}", m.mse);
    }

    #[test]
    fn noise_dynamic_block_gets_less_meta_weight() {
        use rand::Rng;
        let mut rng = crate::rng::rng(13);
        let mut rows = Vec::new();
        for i in 0..200 {
            let level = (i % 10) as f64;
            let noise: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            rows.push(row(i, vec![level], noise, 10.0 * level));
        }
        let params = StackedParams {
            n_estimators: 30,
            min_samples_leaf: 1,
            seed: 6,
            ..Default::default()
        };
        let model = fit_stacked(&rows, &params).unwrap();
        assert!(
            model.meta.coefficients[1].abs() < model.meta.coefficients[0].abs(),
            "meta coefficients {:?}",
            model.meta.coefficients
        );
    }

    #[test]
    fn same_seed_same_meta() {
        let rows = perfect_rows();
        let params = StackedParams {
            n_estimators: 10,
            min_samples_leaf: 1,
            seed: 9,
            ..Default::default()
        };
        let a = fit_stacked(&rows, &params).unwrap();
        let b = fit_stacked(&rows, &params).unwrap();
        assert_eq!(a.meta.coefficients, b.meta.coefficients);
        assert_eq!(a.meta.intercept, b.meta.intercept);
    }

    #[test]
    fn baseline_variant_reads_static_twice() {
        let rows = perfect_rows();
        let params = StackedParams {
            n_estimators: 10,
            min_samples_leaf: 1,
            seed: 9,
            second_input: SecondInput::Static,
            ..Default::default()
        };
        let model = fit_stacked(&rows, &params).unwrap();
        assert_eq!(model.second_forest.n_features, 1);
        assert_eq!(model.second_input, SecondInput::Static);
    }

    #[test]
    fn too_few_rows_for_folds_is_an_error() {
        let rows = perfect_rows()[..4].to_vec();
        let params = StackedParams {
            k_folds: 5,
            ..Default::default()
        };
        assert!(fit_stacked(&rows, &params).is_err());
    }

    #[test]
    fn fold_assignment_partitions() {
        let folds = fold_assignment(23, 5, 3);
        assert_eq!(folds.len(), 5);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        let mut all: Vec<usize> = folds.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }
}
