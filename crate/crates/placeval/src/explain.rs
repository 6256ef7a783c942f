//! Model-agnostic attribution: permutation-sampling Shapley values and
//! permutation importance.
//!
//! The Shapley estimator walks random feature permutations: starting from a
//! random background row, features flip one at a time to the explained
//! instance's values, and each feature accumulates the prediction change it
//! caused. Attributions are exact in expectation and verifiable against full
//! enumeration at tiny scale.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ml::Matrix;
use crate::rng::{rng, sub_seed_n};

/// One instance's Shapley estimate plus the sampling diagnostics needed for
/// the efficiency check: sum(phi) - (f(x) - baseline) differs from zero only
/// through the background sampling error.
#[derive(Debug, Clone)]
pub struct ShapleyEstimate {
    pub phi: Vec<f64>,
    pub fx: f64,
    /// Mean of f over the sampled background rows.
    pub sampled_background_mean: f64,
    /// Standard deviation of f over the sampled background rows.
    pub sampled_background_sd: f64,
    pub n_samples: usize,
}

impl ShapleyEstimate {
    /// Standard error of the efficiency residual.
    pub fn efficiency_se(&self) -> f64 {
        self.sampled_background_sd / (self.n_samples as f64).sqrt()
    }

    /// |sum(phi) - (f(x) - baseline)| for a given baseline.
    pub fn efficiency_residual(&self, baseline: f64) -> f64 {
        (self.phi.iter().sum::<f64>() - (self.fx - baseline)).abs()
    }
}

/// Permutation-sampling Shapley attribution of `f(x)` against a background
/// set. Deterministic for a given seed.
pub fn shapley_mc<F>(
    f: &F,
    x: &[f64],
    background: &Matrix,
    n_samples: usize,
    seed: u64,
) -> Result<ShapleyEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if background.n_rows() == 0 {
        return Err(Error::Model("shapley needs a non-empty background set".into()));
    }
    if background.n_cols() != x.len() {
        return Err(Error::Model(format!(
            "background width {} does not match instance width {}",
            background.n_cols(),
            x.len()
        )));
    }
    if n_samples == 0 {
        return Err(Error::Model("shapley needs n_samples >= 1".into()));
    }
    let p = x.len();
    let mut rng = rng(seed);
    let mut phi = vec![0.0f64; p];
    let mut perm: Vec<usize> = (0..p).collect();
    let mut bg_sum = 0.0;
    let mut bg_sum2 = 0.0;
    for _ in 0..n_samples {
        for i in (1..p).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let z = background.row(rng.random_range(0..background.n_rows()));
        let mut hybrid = z.to_vec();
        let mut prev = f(&hybrid);
        bg_sum += prev;
        bg_sum2 += prev * prev;
        for &j in &perm {
            hybrid[j] = x[j];
            let cur = f(&hybrid);
            phi[j] += cur - prev;
            prev = cur;
        }
    }
    let n = n_samples as f64;
    for v in phi.iter_mut() {
        *v /= n;
    }
    let bg_mean = bg_sum / n;
    let bg_var = (bg_sum2 / n - bg_mean * bg_mean).max(0.0);
    Ok(ShapleyEstimate {
        phi,
        fx: f(x),
        sampled_background_mean: bg_mean,
        sampled_background_sd: bg_var.sqrt(),
        n_samples,
    })
}

/// Global attribution report: per-feature mean |phi| over an evaluation
/// sample, plus the per-instance vectors behind it.
#[derive(Debug, Clone)]
pub struct AttributionReport {
    pub feature_names: Vec<String>,
    pub mean_abs: Vec<f64>,
    pub per_instance: Vec<Vec<f64>>,
    /// Mean model prediction over the full background set.
    pub baseline: f64,
    pub n_mc_samples: usize,
    pub seed: u64,
}

impl AttributionReport {
    /// Feature indices ranked by importance descending; name breaks ties so
    /// the ordering is total.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.feature_names.len()).collect();
        order.sort_by(|&a, &b| {
            self.mean_abs[b]
                .total_cmp(&self.mean_abs[a])
                .then_with(|| self.feature_names[a].cmp(&self.feature_names[b]))
        });
        order
    }

    pub fn top_k(&self, k: usize) -> Vec<(String, f64)> {
        self.ranking()
            .into_iter()
            .take(k)
            .map(|j| (self.feature_names[j].clone(), self.mean_abs[j]))
            .collect()
    }

    /// `rank,feature,mean_abs_shapley` rows, full ranking capped at `k`.
    pub fn write_csv(&self, path: &Path, k: usize) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["rank", "feature", "mean_abs_shapley"])?;
        for (rank, (name, value)) in self.top_k(k).into_iter().enumerate() {
            writer.write_record([&(rank + 1).to_string(), &name, &value.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Per-instance attribution matrix: one row per explained instance.
    pub fn write_instances_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["instance".to_string()];
        header.extend(self.feature_names.iter().cloned());
        writer.write_record(&header)?;
        for (i, phi) in self.per_instance.iter().enumerate() {
            let mut record = vec![i.to_string()];
            record.extend(phi.iter().map(f64::to_string));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Attribute every evaluation row and aggregate global importance.
/// Instances are independent and run in parallel under per-instance seeds.
pub fn top_k_report<F>(
    f: &F,
    eval_rows: &Matrix,
    background: &Matrix,
    feature_names: &[String],
    n_samples: usize,
    seed: u64,
) -> Result<AttributionReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if feature_names.len() != eval_rows.n_cols() {
        return Err(Error::Model(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            eval_rows.n_cols()
        )));
    }
    let per_instance: Vec<Vec<f64>> = (0..eval_rows.n_rows())
        .into_par_iter()
        .map(|i| {
            shapley_mc(
                f,
                eval_rows.row(i),
                background,
                n_samples,
                sub_seed_n(seed, "shapley.instance", i as u64),
            )
            .map(|est| est.phi)
        })
        .collect::<Result<Vec<_>>>()?;
    let p = eval_rows.n_cols();
    let mut mean_abs = vec![0.0f64; p];
    for phi in &per_instance {
        for (acc, v) in mean_abs.iter_mut().zip(phi) {
            *acc += v.abs();
        }
    }
    let n = per_instance.len().max(1) as f64;
    for v in mean_abs.iter_mut() {
        *v /= n;
    }
    let baseline = (0..background.n_rows())
        .map(|r| f(background.row(r)))
        .sum::<f64>()
        / background.n_rows().max(1) as f64;
    Ok(AttributionReport {
        feature_names: feature_names.to_vec(),
        mean_abs,
        per_instance,
        baseline,
        n_mc_samples: n_samples,
        seed,
    })
}

/// Mean MSE increase when one feature column is shuffled, averaged over
/// `repetitions` seeded shuffles. A cheap cross-check on the Shapley ranking.
pub fn permutation_importance<F>(
    f: &F,
    rows: &Matrix,
    labels: &[f64],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = rows.n_rows();
    if n < 2 || labels.len() != n {
        return Err(Error::Model(format!(
            "permutation importance needs >= 2 aligned rows, got {n} rows and {} labels",
            labels.len()
        )));
    }
    let baseline_mse = (0..n)
        .map(|r| (f(rows.row(r)) - labels[r]).powi(2))
        .sum::<f64>()
        / n as f64;
    let p = rows.n_cols();
    let mut delta = vec![0.0f64; p];
    for rep in 0..repetitions {
        for j in 0..p {
            let mut order: Vec<usize> = (0..n).collect();
            let mut shuffle_rng = rng(sub_seed_n(seed, "permimp", (rep * p + j) as u64));
            for i in (1..n).rev() {
                let k = shuffle_rng.random_range(0..=i);
                order.swap(i, k);
            }
            let mse = (0..n)
                .map(|r| {
                    let mut row = rows.row(r).to_vec();
                    row[j] = rows.at(order[r], j);
                    (f(&row) - labels[r]).powi(2)
                })
                .sum::<f64>()
                / n as f64;
            delta[j] += mse - baseline_mse;
        }
    }
    for v in delta.iter_mut() {
        *v /= repetitions as f64;
    }
    Ok(delta)
}
