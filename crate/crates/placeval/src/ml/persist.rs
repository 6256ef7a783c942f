//! Versioned text persistence for stacked models.
//!
//! Trees are stored node-per-line; floats use the shortest round-trip
//! decimal form, so a reloaded model reproduces predictions bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureManifest;
use crate::ml::forest::ForestModel;
use crate::ml::ridge::RidgeModel;
use crate::ml::stacked::{SecondInput, StackedModel};
use crate::ml::tree::{Node, Tree};

const FORMAT_HEADER: &str = "placeval-model v1";

pub fn save_model(
    path: &Path,
    model: &StackedModel,
    manifest: &FeatureManifest,
    config_digest: &str,
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{FORMAT_HEADER}");
    let _ = writeln!(out, "config_digest {config_digest}");
    let _ = writeln!(out, "label {}", manifest.label_name);
    let _ = writeln!(out, "k_folds {}", model.k_folds);
    let _ = writeln!(out, "second_input {}", model.second_input.as_str());

    for (block, names, offset) in [
        ("static", &manifest.static_names, 0),
        ("dynamic", &manifest.dynamic_names, manifest.n_static()),
    ] {
        let _ = writeln!(out, "features {block} {}", names.len());
        for (j, name) in names.iter().enumerate() {
            let _ = writeln!(out, "{name} {}", manifest.imputation[offset + j]);
        }
    }

    write_ridge(&mut out, &model.meta);
    write_forest(&mut out, "a", &model.static_forest);
    write_forest(&mut out, "b", &model.second_forest);
    let _ = writeln!(out, "end");
    fs::write(path, out)?;
    Ok(())
}

fn write_ridge(out: &mut String, meta: &RidgeModel) {
    let _ = writeln!(out, "meta lambda {} intercept {}", meta.lambda, meta.intercept);
    let join = |v: &[f64]| {
        v.iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(out, "meta_coefficients {}", join(&meta.coefficients));
    let _ = writeln!(out, "meta_std_coefficients {}", join(&meta.std_coefficients));
    let _ = writeln!(out, "meta_means {}", join(&meta.feature_means));
    let _ = writeln!(out, "meta_stds {}", join(&meta.feature_stds));
}

fn write_forest(out: &mut String, tag: &str, forest: &ForestModel) {
    let depth = forest
        .max_depth
        .map_or_else(|| "none".to_string(), |d| d.to_string());
    let _ = writeln!(
        out,
        "forest {tag} seed {} n_estimators {} n_features {} mtry {} min_samples_leaf {} max_depth {depth}",
        forest.seed,
        forest.trees.len(),
        forest.n_features,
        forest.mtry,
        forest.min_samples_leaf,
    );
    for (i, tree) in forest.trees.iter().enumerate() {
        let _ = writeln!(out, "tree {i} {}", tree.nodes.len());
        for node in &tree.nodes {
            match node {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let _ = writeln!(out, "i {feature} {threshold} {left} {right}");
                }
                Node::Leaf { prediction } => {
                    let _ = writeln!(out, "l {prediction}");
                }
            }
        }
    }
}

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    at: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.at += 1;
        self.iter
            .next()
            .ok_or_else(|| Error::Model(format!("model file truncated at line {}", self.at)))
    }

    fn expect_prefix(&mut self, prefix: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or("");
        if head != prefix {
            return Err(Error::Model(format!(
                "model file line {}: expected `{prefix} ...`, got `{line}`",
                self.at
            )));
        }
        Ok(parts.collect())
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|e| Error::Model(format!("bad float {s}: {e}")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|e| Error::Model(format!("bad integer {s}: {e}")))
}

fn parse_floats(parts: &[&str]) -> Result<Vec<f64>> {
    parts.iter().map(|s| parse_f64(s)).collect()
}

pub fn load_model(path: &Path) -> Result<(StackedModel, FeatureManifest, String)> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Data(format!("cannot open model file {}: {e}", path.display()))
    })?;
    let mut lines = Lines {
        iter: text.lines(),
        at: 0,
    };
    if lines.next()? != FORMAT_HEADER {
        return Err(Error::Model(format!(
            "{} is not a {FORMAT_HEADER} file",
            path.display()
        )));
    }
    let digest = lines.expect_prefix("config_digest")?.join(" ");
    let label_name = lines.expect_prefix("label")?.join(" ");
    let k_folds = parse_usize(&lines.expect_prefix("k_folds")?.join(""))?;
    let second_input = match lines.expect_prefix("second_input")?.as_slice() {
        ["static"] => SecondInput::Static,
        ["dynamic"] => SecondInput::Dynamic,
        other => {
            return Err(Error::Model(format!(
                "unknown second_input {other:?} in model file"
            )))
        }
    };

    let mut static_names = Vec::new();
    let mut dynamic_names = Vec::new();
    let mut imputation = Vec::new();
    for block in ["static", "dynamic"] {
        let header = lines.expect_prefix("features")?;
        if header.first() != Some(&block) {
            return Err(Error::Model(format!(
                "expected features {block} section, got {header:?}"
            )));
        }
        let count = parse_usize(header.get(1).unwrap_or(&""))?;
        for _ in 0..count {
            let line = lines.next()?;
            let (name, value) = line.rsplit_once(' ').ok_or_else(|| {
                Error::Model(format!("bad feature line `{line}` in model file"))
            })?;
            if block == "static" {
                static_names.push(name.to_string());
            } else {
                dynamic_names.push(name.to_string());
            }
            imputation.push(parse_f64(value)?);
        }
    }

    let meta_head = lines.expect_prefix("meta")?;
    let (lambda, intercept) = match meta_head.as_slice() {
        ["lambda", l, "intercept", i] => (parse_f64(l)?, parse_f64(i)?),
        other => return Err(Error::Model(format!("bad meta line {other:?}"))),
    };
    let meta = RidgeModel {
        coefficients: parse_floats(&lines.expect_prefix("meta_coefficients")?)?,
        std_coefficients: parse_floats(&lines.expect_prefix("meta_std_coefficients")?)?,
        feature_means: parse_floats(&lines.expect_prefix("meta_means")?)?,
        feature_stds: parse_floats(&lines.expect_prefix("meta_stds")?)?,
        lambda,
        intercept,
    };

    let static_forest = read_forest(&mut lines, "a")?;
    let second_forest = read_forest(&mut lines, "b")?;

    let manifest = FeatureManifest {
        static_names,
        dynamic_names,
        imputation,
        label_name,
        version: crate::features::PIPELINE_VERSION.to_string(),
    };
    Ok((
        StackedModel {
            static_forest,
            second_forest,
            second_input,
            meta,
            k_folds,
        },
        manifest,
        digest,
    ))
}

fn read_forest(lines: &mut Lines, tag: &str) -> Result<ForestModel> {
    let header = lines.expect_prefix("forest")?;
    match header.as_slice() {
        [t, "seed", seed, "n_estimators", n, "n_features", p, "mtry", mtry, "min_samples_leaf", leaf, "max_depth", depth]
            if *t == tag =>
        {
            let n_trees = parse_usize(n)?;
            let mut trees = Vec::with_capacity(n_trees);
            for i in 0..n_trees {
                let tree_header = lines.expect_prefix("tree")?;
                let tree_idx = parse_usize(tree_header.first().unwrap_or(&""))?;
                if tree_idx != i {
                    return Err(Error::Model(format!("trees out of order near tree {i}")));
                }
                let n_nodes = parse_usize(tree_header.get(1).unwrap_or(&""))?;
                let mut nodes = Vec::with_capacity(n_nodes);
                for _ in 0..n_nodes {
                    let line = lines.next()?;
                    let parts: Vec<&str> = line.split_whitespace().collect();
                    match parts.as_slice() {
                        ["i", feature, threshold, left, right] => nodes.push(Node::Internal {
                            feature: parse_usize(feature)?,
                            threshold: parse_f64(threshold)?,
                            left: parse_usize(left)?,
                            right: parse_usize(right)?,
                        }),
                        ["l", prediction] => nodes.push(Node::Leaf {
                            prediction: parse_f64(prediction)?,
                        }),
                        other => {
                            return Err(Error::Model(format!("bad node line {other:?}")));
                        }
                    }
                }
                trees.push(Tree { nodes });
            }
            Ok(ForestModel {
                trees,
                n_features: parse_usize(p)?,
                mtry: parse_usize(mtry)?,
                min_samples_leaf: parse_usize(leaf)?,
                max_depth: match *depth {
                    "none" => None,
                    d => Some(parse_usize(d)?),
                },
                seed: parse_usize(seed)? as u64,
            })
        }
        other => Err(Error::Model(format!(
            "expected forest {tag} header, got {other:?}"
        ))),
    }
}
