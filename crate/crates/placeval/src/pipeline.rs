//! File-based pipeline stages and the run manifest.
//!
//! Each stage reads its predecessor's persisted files and writes its own
//! under `out/<stage>/`, so a pipeline can restart at any point. Every stage
//! records a manifest block (config digest, input digests, output digests);
//! the manifest carries no timestamps, keeping reruns byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{file_digest, RunConfig};
use crate::error::{Error, Result};
use crate::experiment::{run_listprice, run_tax};
use crate::explain::top_k_report;
use crate::features::{
    assemble_dataset, manifest_sidecar_path, read_features_csv, write_features_csv,
    write_manifest_csv, AggregationContext, FeatureRow,
};
use crate::home::{attach_demographics, infer_homes_all, load_demographics_csv, read_homes_csv, write_homes_csv};
use crate::ml::persist::{load_model, save_model};
use crate::ml::{fit_stacked, split_indices, Matrix, SecondInput, StackedParams};
use crate::rng::sub_seed;
use crate::synth::{generate_city, write_city};
use crate::trajectory::{detect_stops_all, parse_pings_file, read_stops_csv, write_stops_csv};

pub const STAGES: [&str; 9] = [
    "synth",
    "detect-stops",
    "infer-homes",
    "build-features",
    "train",
    "evaluate",
    "explain",
    "run-listprice",
    "run-tax",
];

/// What a stage did, for operator-facing summaries.
#[derive(Debug, Default)]
pub struct StageSummary {
    pub stage: &'static str,
    pub lines: Vec<String>,
}

impl StageSummary {
    fn note(&mut self, line: String) {
        self.lines.push(line);
    }
}

struct ManifestBlock {
    stage: String,
    body: Vec<String>,
}

fn manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("manifest.txt")
}

fn read_manifest_blocks(path: &Path) -> Vec<ManifestBlock> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    let mut blocks = Vec::new();
    for line in text.lines() {
        if let Some(stage) = line.strip_prefix("[stage ").and_then(|s| s.strip_suffix(']')) {
            blocks.push(ManifestBlock {
                stage: stage.to_string(),
                body: Vec::new(),
            });
        } else if let Some(block) = blocks.last_mut() {
            if !line.is_empty() {
                block.body.push(line.to_string());
            }
        }
    }
    blocks
}

/// Record a stage run: config digest, input digests, output digests. The
/// stage's previous block (if any) is replaced; blocks stay in canonical
/// stage order.
fn record_stage(
    cfg: &RunConfig,
    stage: &'static str,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let path = manifest_path(cfg);
    let mut blocks = read_manifest_blocks(&path);
    blocks.retain(|b| b.stage != stage);

    let mut body = vec![
        format!("pipeline_version = {}", crate::features::PIPELINE_VERSION),
        format!("seed = {}", cfg.seed),
        format!("config_digest = {}", cfg.digest()),
    ];
    for input in inputs {
        body.push(format!("input {} = {}", input.display(), file_digest(input)?));
    }
    for output in outputs {
        body.push(format!("output {} = {}", output.display(), file_digest(output)?));
    }
    blocks.push(ManifestBlock {
        stage: stage.to_string(),
        body,
    });
    blocks.sort_by_key(|b| STAGES.iter().position(|s| *s == b.stage).unwrap_or(usize::MAX));

    let mut text = String::new();
    for block in &blocks {
        let _ = writeln!(text, "[stage {}]", block.stage);
        for line in &block.body {
            let _ = writeln!(text, "{line}");
        }
        let _ = writeln!(text);
    }
    fs::create_dir_all(cfg.out_dir())?;
    fs::write(path, text)?;
    Ok(())
}

fn stage_dir(cfg: &RunConfig, stage: &str) -> Result<PathBuf> {
    let dir = cfg.out_dir().join(stage);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn stage_synth(cfg: &RunConfig) -> Result<StageSummary> {
    let mut summary = StageSummary {
        stage: "synth",
        ..Default::default()
    };
    let city = generate_city(&cfg.synth_spec())?;
    let dir = stage_dir(cfg, "synth")?;
    let files = write_city(&city, &dir)?;
    let n_pings: usize = city.pings.values().map(Vec::len).sum();
    summary.note(format!(
        "generated {} users, {} properties, {} pings",
        city.truth.users.len(),
        city.properties.len(),
        n_pings
    ));
    record_stage(
        cfg,
        "synth",
        &[],
        &[
            &files.pings,
            &files.polygons,
            &files.demographics,
            &files.properties,
            &files.truth_users,
            &files.truth_properties,
        ],
    )?;
    Ok(summary)
}

pub fn stops_file(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("stops").join("stops.csv")
}

pub fn stage_detect_stops(cfg: &RunConfig) -> Result<StageSummary> {
    let mut summary = StageSummary {
        stage: "detect-stops",
        ..Default::default()
    };
    let pings_path = cfg.pings_file();
    let (streams, report) = parse_pings_file(&pings_path)?;
    summary.note(format!(
        "parsed {} rows from {} users ({} skipped)",
        report.rows_ok, report.users, report.rows_skipped()
    ));
    let stops = detect_stops_all(&streams, &cfg.stop_params());
    summary.note(format!("detected {} stops", stops.len()));
    stage_dir(cfg, "stops")?;
    let out = stops_file(cfg);
    write_stops_csv(&out, &stops)?;
    record_stage(cfg, "detect-stops", &[&pings_path], &[&out])?;
    Ok(summary)
}

pub fn homes_file(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("homes").join("homes.csv")
}

pub fn stage_infer_homes(cfg: &RunConfig) -> Result<StageSummary> {
    let mut summary = StageSummary {
        stage: "infer-homes",
        ..Default::default()
    };
    let stops_path = stops_file(cfg);
    let polygons_path = cfg.polygons_file();
    let demographics_path = cfg.demographics_file();
    let stops = read_stops_csv(&stops_path)?;
    let polygons = crate::geo::load_cbg_polygons(&polygons_path)?;
    let demographics = load_demographics_csv(&demographics_path)?;
    let mut homes = infer_homes_all(&stops, &cfg.home_params());
    let report = attach_demographics(&mut homes, &polygons, &demographics);
    summary.note(format!(
        "inferred {} homes ({} without cbg, {} without demographics)",
        homes.len(),
        report.no_cbg,
        report.no_demographics_row
    ));
    stage_dir(cfg, "homes")?;
    let out = homes_file(cfg);
    write_homes_csv(&out, &homes)?;
    record_stage(
        cfg,
        "infer-homes",
        &[&stops_path, &polygons_path, &demographics_path],
        &[&out],
    )?;
    Ok(summary)
}

pub fn features_file(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("features").join("features.csv")
}

/// Load the stage inputs shared by feature assembly and the tax experiment.
struct AssemblyInputs {
    properties: Vec<crate::features::PropertyRecord>,
    ctx: AggregationContext,
    demographics: BTreeMap<String, crate::home::CbgDemographics>,
    input_paths: Vec<PathBuf>,
}

fn load_assembly_inputs(cfg: &RunConfig) -> Result<AssemblyInputs> {
    let stops_path = stops_file(cfg);
    let homes_path = homes_file(cfg);
    let polygons_path = cfg.polygons_file();
    let demographics_path = cfg.demographics_file();
    let properties_path = cfg.properties_file();

    let stops = read_stops_csv(&stops_path)?;
    let polygons = crate::geo::load_cbg_polygons(&polygons_path)?;
    let demographics = load_demographics_csv(&demographics_path)?;
    let homes = read_homes_csv(&homes_path, &demographics)?;
    let properties = crate::features::load_properties_csv(&properties_path, &polygons)?;
    let ctx = AggregationContext::build(&stops, homes, cfg.grid_cell_deg)?;
    Ok(AssemblyInputs {
        properties,
        ctx,
        demographics,
        input_paths: vec![
            stops_path,
            homes_path,
            polygons_path,
            demographics_path,
            properties_path,
        ],
    })
}

pub fn stage_build_features(cfg: &RunConfig) -> Result<StageSummary> {
    let mut summary = StageSummary {
        stage: "build-features",
        ..Default::default()
    };
    let inputs = load_assembly_inputs(cfg)?;
    let (rows, manifest, report) = assemble_dataset(
        &inputs.properties,
        &inputs.ctx,
        &inputs.demographics,
        &cfg.aggregation_params(),
        cfg.label_transform,
        cfg.test_fraction,
        sub_seed(cfg.seed, "split"),
    )?;
    summary.note(format!(
        "assembled {} rows ({} features), {} properties without cbg, {} cells imputed",
        report.rows,
        manifest.all_names().len(),
        report.properties_without_cbg,
        report.imputed_cells
    ));
    stage_dir(cfg, "features")?;
    let out = features_file(cfg);
    let sidecar = manifest_sidecar_path(&out);
    write_features_csv(&out, &rows, &manifest)?;
    write_manifest_csv(&sidecar, &manifest)?;
    let input_refs: Vec<&Path> = inputs.input_paths.iter().map(PathBuf::as_path).collect();
    record_stage(cfg, "build-features", &input_refs, &[&out, &sidecar])?;
    Ok(summary)
}

pub fn model_file(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("model").join("model.txt")
}

fn train_rows(cfg: &RunConfig, rows: &[FeatureRow]) -> Result<(Vec<FeatureRow>, Vec<FeatureRow>)> {
    let (train_idx, test_idx) = split_indices(rows.len(), cfg.test_fraction, sub_seed(cfg.seed, "split"))?;
    Ok((
        train_idx.iter().map(|&r| rows[r].clone()).collect(),
        test_idx.iter().map(|&r| rows[r].clone()).collect(),
    ))
}

pub fn stage_train(cfg: &RunConfig) -> Result<StageSummary> {
    let mut summary = StageSummary {
        stage: "train",
        ..Default::default()
    };
    let features_path = features_file(cfg);
    let sidecar = manifest_sidecar_path(&features_path);
    let (rows, manifest) = read_features_csv(&features_path)?;
    let (train, _) = train_rows(cfg, &rows)?;
    let params = StackedParams {
        n_estimators: cfg.n_estimators,
        mtry: cfg.mtry_option(),
        min_samples_leaf: cfg.min_samples_leaf,
        max_depth: cfg.max_depth_option(),
        lambda: cfg.lambda,
        k_folds: cfg.k_folds,
        seed: sub_seed(cfg.seed, "stacked"),
        second_input: SecondInput::Dynamic,
    };
    let model = fit_stacked(&train, &params)?;
    summary.note(format!(
        "trained stacked model on {} rows (meta coefficients {:?})",
        train.len(),
        model.meta.coefficients
    ));
    stage_dir(cfg, "model")?;
    let out = model_file(cfg);
    save_model(&out, &model, &manifest, &cfg.digest())?;
    record_stage(cfg, "train", &[&features_path, &sidecar], &[&out])?;
    Ok(summary)
}

pub fn metrics_file(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("eval").join("metrics.txt")
}

pub fn stage_evaluate(cfg: &RunConfig) -> Result<StageSummary> {
    let mut summary = StageSummary {
        stage: "evaluate",
        ..Default::default()
    };
    let features_path = features_file(cfg);
    let model_path = model_file(cfg);
    let (rows, _) = read_features_csv(&features_path)?;
    let (model, _, _) = load_model(&model_path)?;
    let (train, test) = train_rows(cfg, &rows)?;
    let test_metrics = model.evaluate(&test)?;
    let train_metrics = model.evaluate(&train)?;
    summary.note(format!(
        "holdout mse {} r2 {} over {} rows",
        test_metrics.mse,
        test_metrics.r2,
        test.len()
    ));
    stage_dir(cfg, "eval")?;
    let out = metrics_file(cfg);
    let mut text = String::new();
    let _ = writeln!(text, "n_train = {}", train.len());
    let _ = writeln!(text, "n_test = {}", test.len());
    let _ = writeln!(text, "mse = {}", test_metrics.mse);
    let _ = writeln!(text, "r2 = {}", test_metrics.r2);
    let _ = writeln!(text, "train_mse = {}", train_metrics.mse);
    let _ = writeln!(text, "train_r2 = {}", train_metrics.r2);
    fs::write(&out, text)?;
    record_stage(cfg, "evaluate", &[&features_path, &model_path], &[&out])?;
    Ok(summary)
}

pub fn stage_explain(cfg: &RunConfig) -> Result<StageSummary> {
    let mut summary = StageSummary {
        stage: "explain",
        ..Default::default()
    };
    let features_path = features_file(cfg);
    let model_path = model_file(cfg);
    let (rows, manifest) = read_features_csv(&features_path)?;
    let (model, _, _) = load_model(&model_path)?;
    let (train_idx, test_idx) =
        split_indices(rows.len(), cfg.test_fraction, sub_seed(cfg.seed, "split"))?;

    let full: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut v = r.static_features.clone();
            v.extend(r.dynamic_features.iter().copied());
            v
        })
        .collect();
    let full = Matrix::from_rows(&full)?;
    let n_static = manifest.n_static();
    let f = |x: &[f64]| {
        let row = FeatureRow {
            property_id: String::new(),
            static_features: x[..n_static].to_vec(),
            dynamic_features: x[n_static..].to_vec(),
            label: 0.0,
        };
        model.predict_row(&row)
    };

    let background_idx: Vec<usize> = crate::ml::sample_indices(
        train_idx.len(),
        cfg.shapley_background,
        sub_seed(cfg.seed, "explain.background"),
    )
    .into_iter()
    .map(|i| train_idx[i])
    .collect();
    let eval_idx: Vec<usize> = crate::ml::sample_indices(
        test_idx.len(),
        cfg.shapley_eval_rows,
        sub_seed(cfg.seed, "explain.eval"),
    )
    .into_iter()
    .map(|i| test_idx[i])
    .collect();

    let report = top_k_report(
        &f,
        &full.select(&eval_idx),
        &full.select(&background_idx),
        &manifest.all_names(),
        cfg.shapley_samples,
        sub_seed(cfg.seed, "explain.shapley"),
    )?;
    let top = report.top_k(3);
    summary.note(format!(
        "top features: {}",
        top.iter()
            .map(|(name, _)| name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    ));
    let dir = stage_dir(cfg, "explain")?;
    let ranking_path = dir.join("shapley.csv");
    let instances_path = dir.join("shapley_instances.csv");
    report.write_csv(&ranking_path, cfg.top_k)?;
    report.write_instances_csv(&instances_path)?;
    record_stage(
        cfg,
        "explain",
        &[&features_path, &model_path],
        &[&ranking_path, &instances_path],
    )?;
    Ok(summary)
}

pub fn listprice_report_file(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("listprice").join("report.txt")
}

pub fn stage_run_listprice(cfg: &RunConfig) -> Result<StageSummary> {
    let mut summary = StageSummary {
        stage: "run-listprice",
        ..Default::default()
    };
    let features_path = features_file(cfg);
    let (rows, _) = read_features_csv(&features_path)?;
    let report = run_listprice(&rows, cfg)?;
    summary.note(format!(
        "dynamic mse {} vs baseline {} ({:+.2}% mse)",
        report.dynamic_metrics.mse,
        report.baseline_metrics.mse,
        -100.0 * report.relative_mse_improvement
    ));
    stage_dir(cfg, "listprice")?;
    let out = listprice_report_file(cfg);
    fs::write(&out, report.render())?;
    record_stage(cfg, "run-listprice", &[&features_path], &[&out])?;
    Ok(summary)
}

pub fn tax_metrics_file(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("tax").join("metrics.txt")
}

pub fn stage_run_tax(cfg: &RunConfig) -> Result<StageSummary> {
    let mut summary = StageSummary {
        stage: "run-tax",
        ..Default::default()
    };
    let inputs = load_assembly_inputs(cfg)?;
    let report = run_tax(&inputs.properties, &inputs.ctx, &inputs.demographics, cfg)?;
    let dir = stage_dir(cfg, "tax")?;
    let mut outputs = vec![tax_metrics_file(cfg)];
    fs::write(&outputs[0], report.render_metrics(cfg.top_k))?;
    for result in &report.results {
        let kind = result.kind.as_str();
        summary.note(format!(
            "{kind}: n {} mse {} r2 {}",
            result.n_rows, result.metrics.mse, result.metrics.r2
        ));
        let ranking = dir.join(format!("{kind}_shapley.csv"));
        let instances = dir.join(format!("{kind}_shapley_instances.csv"));
        result.attribution.write_csv(&ranking, cfg.top_k)?;
        result.attribution.write_instances_csv(&instances)?;
        outputs.push(ranking);
        outputs.push(instances);
    }
    for (kind, count) in &report.skipped {
        summary.note(format!(
            "{} skipped: only {count} usable records",
            kind.as_str()
        ));
    }
    let input_refs: Vec<&Path> = inputs.input_paths.iter().map(PathBuf::as_path).collect();
    let output_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    record_stage(cfg, "run-tax", &input_refs, &output_refs)?;
    Ok(summary)
}

/// Dispatch by stage name; the CLI and tests share this entry point.
pub fn run_stage(stage: &str, cfg: &RunConfig) -> Result<StageSummary> {
    match stage {
        "synth" => stage_synth(cfg),
        "detect-stops" => stage_detect_stops(cfg),
        "infer-homes" => stage_infer_homes(cfg),
        "build-features" => stage_build_features(cfg),
        "train" => stage_train(cfg),
        "evaluate" => stage_evaluate(cfg),
        "explain" => stage_explain(cfg),
        "run-listprice" => stage_run_listprice(cfg),
        "run-tax" => stage_run_tax(cfg),
        other => Err(Error::Config(format!("unknown stage {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.out_dir = dir.join("out").to_string_lossy().into_owned();
        cfg.synth_users = 30;
        cfg.synth_properties = 80;
        cfg.synth_days = 7;
        cfg.synth_cbg_grid = 3;
        cfg.n_estimators = 8;
        cfg.tax_n_estimators = 8;
        cfg.shapley_samples = 20;
        cfg.shapley_eval_rows = 4;
        cfg.shapley_background = 16;
        cfg.test_fraction = 0.2;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn stages_chain_and_manifest_tracks_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        for stage in [
            "synth",
            "detect-stops",
            "infer-homes",
            "build-features",
            "train",
            "evaluate",
        ] {
            run_stage(stage, &cfg).unwrap_or_else(|e| panic!("stage {stage} failed: {e}"));
        }
        assert!(metrics_file(&cfg).exists());
        let manifest = fs::read_to_string(manifest_path(&cfg)).unwrap();
        assert!(manifest.contains("[stage synth]"));
        assert!(manifest.contains("[stage evaluate]"));
        let synth_at = manifest.find("[stage synth]").unwrap();
        let eval_at = manifest.find("[stage evaluate]").unwrap();
        assert!(synth_at < eval_at, "blocks out of canonical order");
        // rerunning a stage replaces its block instead of appending
        run_stage("evaluate", &cfg).unwrap();
        let again = fs::read_to_string(manifest_path(&cfg)).unwrap();
        assert_eq!(manifest, again);
    }
}
