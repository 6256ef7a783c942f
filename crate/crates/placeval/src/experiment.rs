//! The two experiment drivers: list-price model comparison (static+dynamic
//! stack vs static-only stack) and the tax-assessment study (per-kind
//! dynamic-only forests with Shapley attribution).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::explain::{top_k_report, AttributionReport};
use crate::features::{
    assemble_dataset, AggregationContext, FeatureRow, LabelTransform, PropertyKind,
    PropertyRecord,
};
use crate::home::CbgDemographics;
use crate::ml::{
    fit_forest, fit_stacked, metrics, sample_indices, split_indices, ForestParams, Matrix,
    Metrics, SecondInput, StackedParams,
};
use crate::rng::sub_seed;

/// Reference results from the original tax-assessment study (proprietary
/// data); recorded for comparison, never asserted.
pub const TAX_REFERENCE_METRICS: [(&str, f64, f64); 2] =
    [("commercial", 1.77, 0.45), ("residential", 0.30, 0.48)];

fn stacked_params(cfg: &RunConfig, second_input: SecondInput) -> StackedParams {
    StackedParams {
        n_estimators: cfg.n_estimators,
        mtry: cfg.mtry_option(),
        min_samples_leaf: cfg.min_samples_leaf,
        max_depth: cfg.max_depth_option(),
        lambda: cfg.lambda,
        k_folds: cfg.k_folds,
        seed: sub_seed(cfg.seed, "stacked"),
        second_input,
    }
}

fn params_digest(p: &StackedParams) -> String {
    use sha2::{Digest, Sha256};
    let text = format!(
        "n_estimators={} mtry={:?} min_samples_leaf={} max_depth={:?} lambda={} k_folds={} seed={} second_input={}",
        p.n_estimators, p.mtry, p.min_samples_leaf, p.max_depth, p.lambda, p.k_folds, p.seed,
        p.second_input.as_str(),
    );
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    crate::config::hex(&hasher.finalize())
}

#[derive(Debug, Clone)]
pub struct ListpriceReport {
    pub n_train: usize,
    pub n_test: usize,
    pub dynamic_metrics: Metrics,
    pub baseline_metrics: Metrics,
    /// (baseline mse - dynamic mse) / baseline mse.
    pub relative_mse_improvement: f64,
    pub dynamic_params_digest: String,
    pub baseline_params_digest: String,
}

impl ListpriceReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_train = {}", self.n_train);
        let _ = writeln!(out, "n_test = {}", self.n_test);
        let _ = writeln!(out, "mse_dynamic = {}", self.dynamic_metrics.mse);
        let _ = writeln!(out, "r2_dynamic = {}", self.dynamic_metrics.r2);
        let _ = writeln!(out, "mse_baseline = {}", self.baseline_metrics.mse);
        let _ = writeln!(out, "r2_baseline = {}", self.baseline_metrics.r2);
        let _ = writeln!(
            out,
            "relative_mse_improvement = {}",
            self.relative_mse_improvement
        );
        let _ = writeln!(out, "stacked_params_dynamic = {}", self.dynamic_params_digest);
        let _ = writeln!(out, "stacked_params_baseline = {}", self.baseline_params_digest);
        out
    }
}

/// Train the static+dynamic stack and the static-only baseline on one
/// identical train split, evaluate both on the identical holdout.
pub fn run_listprice(rows: &[FeatureRow], cfg: &RunConfig) -> Result<ListpriceReport> {
    if rows.len() < 50 {
        return Err(Error::Data(format!(
            "list-price comparison needs at least 50 rows, got {}",
            rows.len()
        )));
    }
    let (train_idx, test_idx) = split_indices(rows.len(), cfg.test_fraction, sub_seed(cfg.seed, "split"))?;
    let train: Vec<FeatureRow> = train_idx.iter().map(|&r| rows[r].clone()).collect();
    let test: Vec<FeatureRow> = test_idx.iter().map(|&r| rows[r].clone()).collect();

    let dynamic_params = stacked_params(cfg, SecondInput::Dynamic);
    let baseline_params = stacked_params(cfg, SecondInput::Static);
    let dynamic_model = fit_stacked(&train, &dynamic_params)?;
    let baseline_model = fit_stacked(&train, &baseline_params)?;
    let dynamic_metrics = dynamic_model.evaluate(&test)?;
    let baseline_metrics = baseline_model.evaluate(&test)?;

    Ok(ListpriceReport {
        n_train: train.len(),
        n_test: test.len(),
        dynamic_metrics,
        baseline_metrics,
        relative_mse_improvement: (baseline_metrics.mse - dynamic_metrics.mse)
            / baseline_metrics.mse,
        dynamic_params_digest: params_digest(&dynamic_params),
        baseline_params_digest: params_digest(&baseline_params),
    })
}

#[derive(Debug)]
pub struct TaxKindResult {
    pub kind: PropertyKind,
    pub n_rows: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    pub attribution: AttributionReport,
}

#[derive(Debug)]
pub struct TaxReport {
    pub results: Vec<TaxKindResult>,
    /// Kinds skipped for having fewer than the minimum usable records.
    pub skipped: Vec<(PropertyKind, usize)>,
}

impl TaxReport {
    pub fn render_metrics(&self, top_k: usize) -> String {
        let mut out = String::new();
        for r in &self.results {
            let kind = r.kind.as_str();
            let _ = writeln!(out, "{kind}_n = {}", r.n_rows);
            let _ = writeln!(out, "{kind}_n_test = {}", r.n_test);
            let _ = writeln!(out, "{kind}_mse = {}", r.metrics.mse);
            let _ = writeln!(out, "{kind}_r2 = {}", r.metrics.r2);
            for (rank, (feature, value)) in r.attribution.top_k(top_k).iter().enumerate() {
                let _ = writeln!(out, "{kind}_top{} = {feature} {value}", rank + 1);
            }
        }
        for (kind, count) in &self.skipped {
            let _ = writeln!(out, "{}_skipped_records = {count}", kind.as_str());
        }
        // external reference benchmarks (proprietary-data study); informational only
        for (kind, mse, r2) in TAX_REFERENCE_METRICS {
            let _ = writeln!(out, "reference_{kind}_mse = {mse}");
            let _ = writeln!(out, "reference_{kind}_r2 = {r2}");
        }
        out
    }
}

const TAX_MIN_RECORDS: usize = 100;

/// Per-kind tax-assessment models: filter to assessments at or above the
/// price floor, sample up to the per-kind cap, train a dynamic-only forest
/// on log price, and attribute it.
pub fn run_tax(
    properties: &[PropertyRecord],
    ctx: &AggregationContext,
    demographics: &BTreeMap<String, CbgDemographics>,
    cfg: &RunConfig,
) -> Result<TaxReport> {
    let mut report = TaxReport {
        results: Vec::new(),
        skipped: Vec::new(),
    };
    for kind in [PropertyKind::Residential, PropertyKind::Commercial] {
        let eligible: Vec<PropertyRecord> = properties
            .iter()
            .filter(|p| p.kind == kind && p.price >= cfg.tax_price_floor)
            .cloned()
            .collect();
        if eligible.len() < TAX_MIN_RECORDS {
            report.skipped.push((kind, eligible.len()));
            continue;
        }
        let sample_seed = sub_seed(cfg.seed, &format!("tax.sample.{}", kind.as_str()));
        let picked = sample_indices(eligible.len(), cfg.tax_per_kind_sample, sample_seed);
        let sampled: Vec<PropertyRecord> = picked.into_iter().map(|i| eligible[i].clone()).collect();

        let split_seed = sub_seed(cfg.seed, &format!("tax.split.{}", kind.as_str()));
        let (rows, manifest, _) = assemble_dataset(
            &sampled,
            ctx,
            demographics,
            &cfg.aggregation_params(),
            LabelTransform::Log,
            cfg.test_fraction,
            split_seed,
        )?;
        let (train_idx, test_idx) = split_indices(rows.len(), cfg.test_fraction, split_seed)?;

        let dynamic_rows: Vec<Vec<f64>> =
            rows.iter().map(|r| r.dynamic_features.clone()).collect();
        let x = Matrix::from_rows(&dynamic_rows)?;
        let labels: Vec<f64> = rows.iter().map(|r| r.label).collect();
        let x_train = x.select(&train_idx);
        let y_train: Vec<f64> = train_idx.iter().map(|&r| labels[r]).collect();
        let forest = fit_forest(
            &x_train,
            &y_train,
            &ForestParams {
                n_estimators: cfg.tax_n_estimators,
                mtry: cfg.mtry_option(),
                min_samples_leaf: cfg.min_samples_leaf,
                max_depth: cfg.max_depth_option(),
                seed: sub_seed(cfg.seed, &format!("tax.forest.{}", kind.as_str())),
            },
        )?;

        let test_preds: Vec<f64> = test_idx.iter().map(|&r| forest.predict_row(x.row(r))).collect();
        let test_labels: Vec<f64> = test_idx.iter().map(|&r| labels[r]).collect();
        let kind_metrics = metrics(&test_preds, &test_labels)?;

        let background_seed = sub_seed(cfg.seed, &format!("tax.background.{}", kind.as_str()));
        let background_rows = sample_indices(
            train_idx.len(),
            cfg.shapley_background,
            background_seed,
        )
        .into_iter()
        .map(|i| train_idx[i])
        .collect::<Vec<_>>();
        let eval_seed = sub_seed(cfg.seed, &format!("tax.eval.{}", kind.as_str()));
        let eval_rows = sample_indices(test_idx.len(), cfg.shapley_eval_rows, eval_seed)
            .into_iter()
            .map(|i| test_idx[i])
            .collect::<Vec<_>>();

        let f = |row: &[f64]| forest.predict_row(row);
        let attribution = top_k_report(
            &f,
            &x.select(&eval_rows),
            &x.select(&background_rows),
            &manifest.dynamic_names,
            cfg.shapley_samples,
            sub_seed(cfg.seed, &format!("tax.shapley.{}", kind.as_str())),
        )?;

        report.results.push(TaxKindResult {
            kind,
            n_rows: rows.len(),
            n_test: test_idx.len(),
            metrics: kind_metrics,
            attribution,
        });
    }
    Ok(report)
}
