//! Per-property feature assembly: static attributes plus day-of-week
//! aggregates of non-resident visitors within an aggregation radius.
//!
//! A user visits a property on day-of-week `d` when at least one of their
//! stops has a centroid within the radius and that day label. Residents are
//! excluded from every visitor set; by default a resident is anyone whose
//! inferred home lies within the same radius (`resident_rule = radius`),
//! with same-block-group membership available as the alternative rule.
//! Missing values travel as NaN sentinels until assembly imputes them with
//! training-split means.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{assign_cbg, haversine_m, CbgPolygon, GeoPoint, GridIndex};
use crate::home::{CbgDemographics, HomeProfile, AVG_FIELDS, STATIC_FIELDS};
use crate::ml::split_indices;
use crate::trajectory::Stop;

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sentinel carried by feature slots whose value is unknown before
/// imputation.
pub const MISSING: f64 = f64::NAN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    Residential,
    Commercial,
    Unknown,
}

impl PropertyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PropertyKind::Residential => "residential",
            PropertyKind::Commercial => "commercial",
            PropertyKind::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for PropertyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residential" => Ok(PropertyKind::Residential),
            "commercial" => Ok(PropertyKind::Commercial),
            "unknown" => Ok(PropertyKind::Unknown),
            other => Err(Error::Data(format!("unknown property kind: {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropertyRecord {
    pub property_id: String,
    pub loc: GeoPoint,
    pub price: f64,
    pub beds: f64,
    pub baths: f64,
    pub sqft: f64,
    pub kind: PropertyKind,
    pub cbg: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct PropertyRow {
    property_id: String,
    lat: f64,
    lon: f64,
    price: f64,
    beds: f64,
    baths: f64,
    sqft: f64,
    kind: String,
}

/// Load properties, validate, assign each to its census block group, and
/// sort by property id (output order is part of the determinism contract).
pub fn load_properties_csv(path: &Path, polygons: &[CbgPolygon]) -> Result<Vec<PropertyRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::Data(format!("cannot open property file {}: {e}", path.display()))
    })?;
    let mut properties = Vec::new();
    for record in reader.deserialize::<PropertyRow>() {
        let row = record?;
        let loc = GeoPoint::validated(row.lat, row.lon)
            .map_err(|e| Error::Data(format!("property {}: {e}", row.property_id)))?;
        if !(row.price > 0.0) || !row.price.is_finite() {
            return Err(Error::Data(format!(
                "property {}: price must be positive, got {}",
                row.property_id, row.price
            )));
        }
        let kind: PropertyKind = row.kind.parse()?;
        properties.push(PropertyRecord {
            cbg: assign_cbg(loc, polygons).map(str::to_string),
            property_id: row.property_id,
            loc,
            price: row.price,
            beds: row.beds,
            baths: row.baths,
            sqft: row.sqft,
            kind,
        });
    }
    properties.sort_by(|a, b| a.property_id.cmp(&b.property_id));
    for pair in properties.windows(2) {
        if pair[0].property_id == pair[1].property_id {
            return Err(Error::Data(format!(
                "duplicate property id {}",
                pair[0].property_id
            )));
        }
    }
    Ok(properties)
}

pub fn write_properties_csv(path: &Path, properties: &[PropertyRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for p in properties {
        writer.serialize(PropertyRow {
            property_id: p.property_id.clone(),
            lat: p.loc.lat,
            lon: p.loc.lon,
            price: p.price,
            beds: p.beds,
            baths: p.baths,
            sqft: p.sqft,
            kind: p.kind.as_str().to_string(),
        })?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidentRule {
    /// Resident = home within the aggregation radius of the property.
    Radius,
    /// Resident = home in the property's census block group; properties
    /// without a block group fall back to the radius rule (counted).
    Cbg,
}

impl std::str::FromStr for ResidentRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radius" => Ok(ResidentRule::Radius),
            "cbg" => Ok(ResidentRule::Cbg),
            other => Err(Error::Config(format!(
                "resident_rule must be radius or cbg, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommutingMode {
    /// Short total dwell within the radius marks a visitor as commuting.
    Behavioral,
    /// Average of visitors' census commute share.
    Census,
}

impl std::str::FromStr for CommutingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "behavioral" => Ok(CommutingMode::Behavioral),
            "census" => Ok(CommutingMode::Census),
            other => Err(Error::Config(format!(
                "commuting_mode must be behavioral or census, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AggregationParams {
    pub radius_m: f64,
    pub resident_rule: ResidentRule,
    pub commuting_mode: CommutingMode,
    pub commute_dwell_max_s: i64,
}

impl Default for AggregationParams {
    fn default() -> Self {
        AggregationParams {
            radius_m: 500.0,
            resident_rule: ResidentRule::Radius,
            commuting_mode: CommutingMode::Behavioral,
            commute_dwell_max_s: 1_800,
        }
    }
}

/// Stops of home-holding users, spatially indexed for radius aggregation.
/// Immutable after build; per-property queries are read-only and parallel.
pub struct AggregationContext {
    homes: Vec<HomeProfile>,
    /// (home index, dow, span seconds, centroid) per retained stop.
    stops: Vec<(usize, u8, i64, GeoPoint)>,
    index: GridIndex,
}

impl AggregationContext {
    /// Keep only stops belonging to users with inferred homes and index
    /// their centroids.
    pub fn build(stops: &[Stop], homes: Vec<HomeProfile>, cell_size_deg: f64) -> Result<Self> {
        let user_to_home: BTreeMap<&str, usize> = homes
            .iter()
            .enumerate()
            .map(|(i, h)| (h.user_id.as_str(), i))
            .collect();
        let mut kept = Vec::new();
        for stop in stops {
            if let Some(&home_idx) = user_to_home.get(stop.user_id.as_str()) {
                kept.push((home_idx, stop.dow, stop.span_s(), stop.centroid()));
            }
        }
        let index = GridIndex::build(
            kept.iter()
                .enumerate()
                .map(|(i, &(_, _, _, c))| (i as u64, c)),
            cell_size_deg,
        )?;
        Ok(AggregationContext {
            homes,
            stops: kept,
            index,
        })
    }

    pub fn homes(&self) -> &[HomeProfile] {
        &self.homes
    }

    pub fn n_stops(&self) -> usize {
        self.stops.len()
    }
}

/// Visitor sets for one property. `by_dow[d]` holds (home index, total
/// in-radius dwell that day-of-week) per distinct visiting user, sorted by
/// home index; residents are excluded from every set.
#[derive(Debug, Clone, Default)]
pub struct VisitorSets {
    pub by_dow: [Vec<(usize, i64)>; 7],
    pub residents: Vec<usize>,
    pub cbg_fallback: bool,
}

/// Aggregate the users visiting `property` per day of week, and the resident
/// set under the configured rule.
pub fn visitors_by_dow(
    property: &PropertyRecord,
    ctx: &AggregationContext,
    params: &AggregationParams,
) -> Result<VisitorSets> {
    let mut sets = VisitorSets::default();

    // resident set: independent of stop activity
    let use_radius = match params.resident_rule {
        ResidentRule::Radius => true,
        ResidentRule::Cbg => {
            sets.cbg_fallback = property.cbg.is_none();
            sets.cbg_fallback
        }
    };
    let mut is_resident = vec![false; ctx.homes.len()];
    for (i, home) in ctx.homes.iter().enumerate() {
        let resident = if use_radius {
            haversine_m(home.home, property.loc) <= params.radius_m
        } else {
            match (&home.home_cbg, &property.cbg) {
                (Some(h), Some(p)) => h == p,
                _ => false,
            }
        };
        if resident {
            is_resident[i] = true;
            sets.residents.push(i);
        }
    }

    // visitor sets: distinct users with at least one in-radius stop per dow,
    // carrying their total in-radius dwell for the commuting proxy
    let mut dwell: [BTreeMap<usize, i64>; 7] = Default::default();
    for stop_id in ctx.index.radius_query(property.loc, params.radius_m)? {
        let (home_idx, dow, span, _) = ctx.stops[stop_id as usize];
        if is_resident[home_idx] {
            continue;
        }
        *dwell[dow as usize].entry(home_idx).or_insert(0) += span;
    }
    for (d, per_user) in dwell.into_iter().enumerate() {
        sets.by_dow[d] = per_user.into_iter().collect();
    }
    Ok(sets)
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        MISSING
    } else {
        sum / n as f64
    }
}

/// Dynamic feature names in emission order, followed by the single
/// residents count.
pub fn dynamic_feature_names() -> Vec<String> {
    let mut names = Vec::new();
    for d in 0..7 {
        names.push(format!("people_in_area_{d}"));
        names.push(format!("prop_commuting_{d}"));
        for (field, _) in AVG_FIELDS {
            names.push(format!("avg_{field}_{d}"));
        }
    }
    names.push("residents_in_area".to_string());
    names
}

/// The dynamic feature vector for one property: per day-of-week visitor
/// count, commuting proportion, and averaged visitor-home demographics,
/// plus the resident count. Empty day slots carry the sentinel for the
/// averages and zero for count and proportion.
pub fn dynamic_features(
    sets: &VisitorSets,
    ctx: &AggregationContext,
    params: &AggregationParams,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(7 * (2 + AVG_FIELDS.len()) + 1);
    for d in 0..7 {
        let visitors = &sets.by_dow[d];
        out.push(visitors.len() as f64);
        if visitors.is_empty() {
            out.push(0.0);
            out.extend(std::iter::repeat(MISSING).take(AVG_FIELDS.len()));
            continue;
        }
        let commuting = match params.commuting_mode {
            CommutingMode::Behavioral => {
                let short = visitors
                    .iter()
                    .filter(|&&(_, dwell)| dwell < params.commute_dwell_max_s)
                    .count();
                short as f64 / visitors.len() as f64
            }
            CommutingMode::Census => mean_of(
                visitors
                    .iter()
                    .filter_map(|&(u, _)| ctx.homes[u].demographics.as_ref())
                    .filter_map(|demo| demo.commute_share),
            ),
        };
        out.push(commuting);
        for (_, get) in AVG_FIELDS {
            out.push(mean_of(
                visitors
                    .iter()
                    .filter_map(|&(u, _)| ctx.homes[u].demographics.as_ref())
                    .filter_map(get),
            ));
        }
    }
    out.push(sets.residents.len() as f64);
    out
}

/// Static feature names in emission order.
pub fn static_feature_names() -> Vec<String> {
    let mut names = vec![
        "beds".to_string(),
        "baths".to_string(),
        "sqft".to_string(),
        "kind_residential".to_string(),
        "kind_commercial".to_string(),
        "kind_unknown".to_string(),
        "lat".to_string(),
        "lon".to_string(),
    ];
    for (field, _) in STATIC_FIELDS {
        names.push(format!("cbg_{field}"));
    }
    names
}

/// Property attributes plus the property's own block-group demographics.
/// Returns the vector and whether the property had no block group (its
/// demographic slots then carry the sentinel).
pub fn static_features(
    property: &PropertyRecord,
    demographics: &BTreeMap<String, CbgDemographics>,
) -> (Vec<f64>, bool) {
    let mut out = vec![
        property.beds,
        property.baths,
        property.sqft,
        (property.kind == PropertyKind::Residential) as u8 as f64,
        (property.kind == PropertyKind::Commercial) as u8 as f64,
        (property.kind == PropertyKind::Unknown) as u8 as f64,
        property.loc.lat,
        property.loc.lon,
    ];
    let demo = property
        .cbg
        .as_deref()
        .and_then(|cbg| demographics.get(cbg));
    for (_, get) in STATIC_FIELDS {
        out.push(demo.and_then(get).unwrap_or(MISSING));
    }
    (out, demo.is_none())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelTransform {
    Identity,
    Log,
}

impl LabelTransform {
    pub fn apply(self, price: f64) -> f64 {
        match self {
            LabelTransform::Identity => price,
            LabelTransform::Log => price.ln(),
        }
    }

    pub fn label_name(self) -> &'static str {
        match self {
            LabelTransform::Identity => "price",
            LabelTransform::Log => "log_price",
        }
    }
}

impl std::str::FromStr for LabelTransform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(LabelTransform::Identity),
            "log" => Ok(LabelTransform::Log),
            other => Err(Error::Config(format!(
                "label_transform must be identity or log, got {other}"
            ))),
        }
    }
}

/// One assembled row: the model inputs for one property.
#[derive(Debug, Clone)]
pub struct FeatureRow {
    pub property_id: String,
    pub static_features: Vec<f64>,
    pub dynamic_features: Vec<f64>,
    pub label: f64,
}

/// Fixed, versioned feature order plus the imputation value each column
/// received. Models are name-order dependent, so this travels with both the
/// analysis table and any persisted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureManifest {
    pub static_names: Vec<String>,
    pub dynamic_names: Vec<String>,
    /// Imputation values aligned to static names followed by dynamic names.
    pub imputation: Vec<f64>,
    pub label_name: String,
    pub version: String,
}

impl FeatureManifest {
    pub fn n_static(&self) -> usize {
        self.static_names.len()
    }

    pub fn n_dynamic(&self) -> usize {
        self.dynamic_names.len()
    }

    pub fn all_names(&self) -> Vec<String> {
        let mut names = self.static_names.clone();
        names.extend(self.dynamic_names.iter().cloned());
        names
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildReport {
    pub rows: usize,
    pub properties_without_cbg: usize,
    pub cbg_rule_fallbacks: usize,
    pub imputed_cells: usize,
}

/// Assemble the full analysis table. Imputation means come from the
/// training side of the seeded split only (the same split the training
/// stage will draw), so no test-row statistic leaks into a feature.
pub fn assemble_dataset(
    properties: &[PropertyRecord],
    ctx: &AggregationContext,
    demographics: &BTreeMap<String, CbgDemographics>,
    params: &AggregationParams,
    label: LabelTransform,
    test_fraction: f64,
    split_seed: u64,
) -> Result<(Vec<FeatureRow>, FeatureManifest, BuildReport)> {
    if properties.is_empty() {
        return Err(Error::Data("no usable properties to assemble".into()));
    }
    let mut report = BuildReport::default();

    let per_property: Vec<(VisitorSets, Vec<f64>, bool)> = properties
        .par_iter()
        .map(|property| {
            let sets = visitors_by_dow(property, ctx, params)?;
            let dynamic = dynamic_features(&sets, ctx, params);
            let (static_vec, missing_cbg) = static_features(property, demographics);
            let mut features = static_vec;
            features.extend(dynamic);
            Ok((sets, features, missing_cbg))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(properties.len());
    for (property, (sets, features, missing_cbg)) in properties.iter().zip(per_property) {
        if missing_cbg {
            report.properties_without_cbg += 1;
        }
        if sets.cbg_fallback {
            report.cbg_rule_fallbacks += 1;
        }
        let n_static = static_feature_names().len();
        rows.push(FeatureRow {
            property_id: property.property_id.clone(),
            static_features: features[..n_static].to_vec(),
            dynamic_features: features[n_static..].to_vec(),
            label: label.apply(property.price),
        });
    }
    report.rows = rows.len();

    let manifest = impute_in_place(&mut rows, label, test_fraction, split_seed, &mut report)?;
    Ok((rows, manifest, report))
}

/// Replace NaN sentinels with per-column means of observed training values.
fn impute_in_place(
    rows: &mut [FeatureRow],
    label: LabelTransform,
    test_fraction: f64,
    split_seed: u64,
    report: &mut BuildReport,
) -> Result<FeatureManifest> {
    let n_static = static_feature_names().len();
    let n_dynamic = dynamic_feature_names().len();
    let width = n_static + n_dynamic;

    let train_idx: Vec<usize> = if rows.len() >= 2 {
        split_indices(rows.len(), test_fraction, split_seed)?.0
    } else {
        vec![0]
    };

    let mut sums = vec![0.0f64; width];
    let mut counts = vec![0usize; width];
    for &r in &train_idx {
        for (j, v) in rows[r]
            .static_features
            .iter()
            .chain(rows[r].dynamic_features.iter())
            .enumerate()
        {
            if v.is_finite() {
                sums[j] += v;
                counts[j] += 1;
            }
        }
    }
    let imputation: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();

    for row in rows.iter_mut() {
        for (j, v) in row
            .static_features
            .iter_mut()
            .chain(row.dynamic_features.iter_mut())
            .enumerate()
        {
            if !v.is_finite() {
                *v = imputation[j];
                report.imputed_cells += 1;
            }
        }
    }

    Ok(FeatureManifest {
        static_names: static_feature_names(),
        dynamic_names: dynamic_feature_names(),
        imputation,
        label_name: label.label_name().to_string(),
        version: PIPELINE_VERSION.to_string(),
    })
}

/// Write the analysis table: property id, static block, dynamic block, label.
pub fn write_features_csv(path: &Path, rows: &[FeatureRow], manifest: &FeatureManifest) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["property_id".to_string()];
    header.extend(manifest.all_names());
    header.push(manifest.label_name.clone());
    writer.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.property_id.clone()];
        record.extend(row.static_features.iter().map(f64::to_string));
        record.extend(row.dynamic_features.iter().map(f64::to_string));
        record.push(row.label.to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Sidecar: one line per feature with its column index and imputation value.
pub fn write_manifest_csv(path: &Path, manifest: &FeatureManifest) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["block", "column_index", "name", "imputation_value", "pipeline_version"])?;
    for (j, name) in manifest.static_names.iter().enumerate() {
        writer.write_record([
            "static",
            &j.to_string(),
            name,
            &manifest.imputation[j].to_string(),
            &manifest.version,
        ])?;
    }
    let base = manifest.static_names.len();
    for (j, name) in manifest.dynamic_names.iter().enumerate() {
        writer.write_record([
            "dynamic",
            &(base + j).to_string(),
            name,
            &manifest.imputation[base + j].to_string(),
            &manifest.version,
        ])?;
    }
    writer.write_record(["label", &(base + manifest.dynamic_names.len()).to_string(), &manifest.label_name, "", &manifest.version])?;
    writer.flush()?;
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<(Vec<FeatureRow>, FeatureManifest)> {
    let manifest_path = manifest_sidecar_path(path);
    let manifest = read_manifest_csv(&manifest_path)?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::Data(format!("cannot open features file {}: {e}", path.display()))
    })?;
    let n_static = manifest.n_static();
    let n_dynamic = manifest.n_dynamic();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 1 + n_static + n_dynamic + 1 {
            return Err(Error::Data(format!(
                "feature row has {} columns, expected {}",
                record.len(),
                2 + n_static + n_dynamic
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Data(format!("bad numeric cell {s}: {e}")))
        };
        let values: Vec<f64> = record
            .iter()
            .skip(1)
            .map(parse)
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            property_id: record[0].to_string(),
            static_features: values[..n_static].to_vec(),
            dynamic_features: values[n_static..n_static + n_dynamic].to_vec(),
            label: values[n_static + n_dynamic],
        });
    }
    Ok((rows, manifest))
}

pub fn manifest_sidecar_path(features_path: &Path) -> std::path::PathBuf {
    features_path.with_file_name("feature_manifest.csv")
}

pub fn read_manifest_csv(path: &Path) -> Result<FeatureManifest> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::Data(format!(
            "cannot open feature manifest {}: {e}",
            path.display()
        ))
    })?;
    let mut static_names = Vec::new();
    let mut dynamic_names = Vec::new();
    let mut imputation = Vec::new();
    let mut label_name = String::new();
    let mut version = String::new();
    for record in reader.records() {
        let record = record?;
        let block = &record[0];
        match block {
            "static" | "dynamic" => {
                let value: f64 = record[3]
                    .parse()
                    .map_err(|e| Error::Data(format!("bad imputation value: {e}")))?;
                imputation.push(value);
                if block == "static" {
                    static_names.push(record[2].to_string());
                } else {
                    dynamic_names.push(record[2].to_string());
                }
            }
            "label" => {
                label_name = record[2].to_string();
                version = record[4].to_string();
            }
            other => {
                return Err(Error::Data(format!("unknown manifest block {other}")));
            }
        }
    }
    Ok(FeatureManifest {
        static_names,
        dynamic_names,
        imputation,
        label_name,
        version,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::home::HomeProfile;

    fn demo(cbg: &str, income: f64, commute: f64) -> CbgDemographics {
        CbgDemographics {
            cbg_id: cbg.to_string(),
            median_household_income: Some(income),
            median_age: Some(35.0),
            share_white: Some(0.4),
            share_black: Some(0.3),
            share_asian: Some(0.1),
            share_hispanic: Some(0.1),
            share_bachelors_or_higher: Some(0.5),
            unemployment_rate: Some(0.05),
            population: Some(1200.0),
            commute_share: Some(commute),
        }
    }

    fn profile(user: &str, home: GeoPoint, cbg: Option<&str>, income: f64) -> HomeProfile {
        HomeProfile {
            user_id: user.to_string(),
            home,
            n_nights: 4,
            home_cbg: cbg.map(str::to_string),
            demographics: cbg.map(|c| demo(c, income, 0.5)),
        }
    }

    fn stop(user: &str, loc: GeoPoint, dow: u8, span: i64) -> Stop {
        Stop {
            user_id: user.to_string(),
            anchor_lat: loc.lat,
            anchor_lon: loc.lon,
            centroid_lat: loc.lat,
            centroid_lon: loc.lon,
            t_start: 1_000_000,
            t_end: 1_000_000 + span,
            n_pings: 4,
            dow,
        }
    }

    fn property(id: &str, loc: GeoPoint) -> PropertyRecord {
        PropertyRecord {
            property_id: id.to_string(),
            loc,
            price: 400_000.0,
            beds: 3.0,
            baths: 2.0,
            sqft: 1500.0,
            kind: PropertyKind::Residential,
            cbg: None,
        }
    }

    const P: GeoPoint = GeoPoint { lat: 38.9000, lon: -77.0000 };

    fn near(p: GeoPoint, dlat_m: f64) -> GeoPoint {
        GeoPoint::new(p.lat + dlat_m / 111_194.93, p.lon)
    }

    #[test]
    fn visitor_appears_on_their_dow_only() {
        let homes = vec![profile("u", near(P, 2_000.0), Some("c1"), 60_000.0)];
        let stops = vec![stop("u", near(P, 400.0), 1, 3_600)];
        let ctx = AggregationContext::build(&stops, homes, 0.01).unwrap();
        let sets = visitors_by_dow(&property("p", P), &ctx, &AggregationParams::default()).unwrap();
        assert_eq!(sets.by_dow[1], vec![(0, 3_600)]);
        for d in [0usize, 2, 3, 4, 5, 6] {
            assert!(sets.by_dow[d].is_empty());
        }
        assert!(sets.residents.is_empty());
    }

    #[test]
    fn nearby_home_makes_a_resident_not_a_visitor() {
        let homes = vec![profile("u", near(P, 300.0), Some("c1"), 60_000.0)];
        let stops = vec![stop("u", near(P, 400.0), 1, 3_600)];
        let ctx = AggregationContext::build(&stops, homes, 0.01).unwrap();
        let sets = visitors_by_dow(&property("p", P), &ctx, &AggregationParams::default()).unwrap();
        assert_eq!(sets.residents, vec![0]);
        assert!(sets.by_dow.iter().all(Vec::is_empty));
    }

    #[test]
    fn cbg_rule_and_fallback() {
        let mut prop = property("p", P);
        prop.cbg = Some("c1".to_string());
        // same cbg but 2 km away: resident under cbg rule, visitor under radius
        let homes = vec![profile("u", near(P, 2_000.0), Some("c1"), 60_000.0)];
        let stops = vec![stop("u", near(P, 400.0), 2, 3_600)];
        let ctx = AggregationContext::build(&stops, homes, 0.01).unwrap();
        let params = AggregationParams {
            resident_rule: ResidentRule::Cbg,
            ..Default::default()
        };
        let sets = visitors_by_dow(&prop, &ctx, &params).unwrap();
        assert_eq!(sets.residents, vec![0]);
        assert!(!sets.cbg_fallback);

        // property without a cbg falls back to the radius rule
        let prop2 = property("q", P);
        let sets2 = visitors_by_dow(&prop2, &ctx, &params).unwrap();
        assert!(sets2.cbg_fallback);
        assert!(sets2.residents.is_empty());
        assert_eq!(sets2.by_dow[2].len(), 1);
    }

    #[test]
    fn visitor_sets_match_triple_loop_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::rng(31);
        let mut homes = Vec::new();
        let mut stops = Vec::new();
        for u in 0..60 {
            let home = GeoPoint::new(
                38.85 + rng.random_range(0.0..0.1),
                -77.05 + rng.random_range(0.0..0.1),
            );
            homes.push(profile(&format!("u{u:03}"), home, Some("c1"), 50_000.0));
            for _ in 0..rng.random_range(1..6) {
                let loc = GeoPoint::new(
                    38.85 + rng.random_range(0.0..0.1),
                    -77.05 + rng.random_range(0.0..0.1),
                );
                stops.push(stop(
                    &format!("u{u:03}"),
                    loc,
                    rng.random_range(0..7),
                    rng.random_range(300..7200),
                ));
            }
        }
        let params = AggregationParams::default();
        let ctx = AggregationContext::build(&stops, homes.clone(), 0.01).unwrap();
        for pi in 0..25 {
            let ploc = GeoPoint::new(
                38.85 + rng.random_range(0.0..0.1),
                -77.05 + rng.random_range(0.0..0.1),
            );
            let prop = property(&format!("p{pi}"), ploc);
            let sets = visitors_by_dow(&prop, &ctx, &params).unwrap();

            // oracle: plain loops over every (user, stop) pair
            let mut want: [BTreeMap<usize, i64>; 7] = Default::default();
            let mut want_res = Vec::new();
            for (ui, home) in homes.iter().enumerate() {
                if haversine_m(home.home, ploc) <= params.radius_m {
                    want_res.push(ui);
                    continue;
                }
                for s in stops.iter().filter(|s| s.user_id == home.user_id) {
                    if haversine_m(s.centroid(), ploc) <= params.radius_m {
                        *want[s.dow as usize].entry(ui).or_insert(0) += s.span_s();
                    }
                }
            }
            assert_eq!(sets.residents, want_res, "property {pi}");
            for d in 0..7 {
                let want_d: Vec<(usize, i64)> = want[d].clone().into_iter().collect();
                assert_eq!(sets.by_dow[d], want_d, "property {pi} dow {d}");
            }
        }
    }

    #[test]
    fn dynamic_features_two_visitor_mean() {
        let homes = vec![
            profile("a", near(P, 3_000.0), Some("c1"), 50_000.0),
            profile("b", near(P, 4_000.0), Some("c2"), 100_000.0),
        ];
        let stops = vec![
            stop("a", near(P, 100.0), 1, 3_600),
            stop("b", near(P, 150.0), 1, 600),
        ];
        let ctx = AggregationContext::build(&stops, homes, 0.01).unwrap();
        let params = AggregationParams::default();
        let sets = visitors_by_dow(&property("p", P), &ctx, &params).unwrap();
        let features = dynamic_features(&sets, &ctx, &params);
        let names = dynamic_feature_names();
        let at = |name: &str| features[names.iter().position(|n| n == name).unwrap()];
        assert_eq!(at("people_in_area_1"), 2.0);
        assert_eq!(at("avg_income_1"), 75_000.0);
        // one of two visitors dwells under 30 minutes
        assert_eq!(at("prop_commuting_1"), 0.5);
        assert_eq!(at("people_in_area_0"), 0.0);
        assert_eq!(at("prop_commuting_0"), 0.0);
        assert!(at("avg_income_0").is_nan());
        assert_eq!(at("residents_in_area"), 0.0);
    }

    #[test]
    fn static_features_carry_cbg_vector_or_sentinel() {
        let mut table = BTreeMap::new();
        table.insert("c1".to_string(), demo("c1", 77_000.0, 0.6));
        let mut prop = property("p", P);
        prop.cbg = Some("c1".to_string());
        let (features, missing) = static_features(&prop, &table);
        assert!(!missing);
        let names = static_feature_names();
        let at = |name: &str| features[names.iter().position(|n| n == name).unwrap()];
        assert_eq!(at("cbg_income"), 77_000.0);
        assert_eq!(at("kind_residential"), 1.0);
        assert_eq!(at("beds"), 3.0);

        let orphan = property("q", P);
        let (features, missing) = static_features(&orphan, &table);
        assert!(missing);
        let idx = names.iter().position(|n| n == "cbg_income").unwrap();
        assert!(features[idx].is_nan());
    }

    #[test]
    fn assemble_imputes_with_training_means_only() {
        let homes = vec![profile("a", near(P, 3_000.0), Some("c1"), 50_000.0)];
        let stops = vec![stop("a", near(P, 100.0), 1, 3_600)];
        let ctx = AggregationContext::build(&stops, homes, 0.01).unwrap();
        let mut table = BTreeMap::new();
        table.insert("c1".to_string(), demo("c1", 50_000.0, 0.5));
        let properties: Vec<PropertyRecord> = (0..20)
            .map(|i| {
                let mut p = property(&format!("p{i:02}"), near(P, i as f64 * 10.0));
                p.cbg = Some("c1".to_string());
                p.price = 100_000.0 + 1_000.0 * i as f64;
                p
            })
            .collect();
        let (rows, manifest, report) = assemble_dataset(
            &properties,
            &ctx,
            &table,
            &AggregationParams::default(),
            LabelTransform::Identity,
            0.2,
            7,
        )
        .unwrap();
        assert_eq!(rows.len(), 20);
        assert!(report.imputed_cells > 0);
        // imputation value equals the mean of observed training values
        let (train, _) = split_indices(20, 0.2, 7).unwrap();
        let names = manifest.all_names();
        let col = names.iter().position(|n| n == "avg_income_1").unwrap();
        let observed: Vec<f64> = train
            .iter()
            .map(|&r| {
                let p = &properties[r];
                // within 500 m of the lone visitor stop means a value was observed
                if haversine_m(p.loc, near(P, 100.0)) <= 500.0 {
                    Some(50_000.0)
                } else {
                    None
                }
            })
            .flatten()
            .collect();
        let want = observed.iter().sum::<f64>() / observed.len() as f64;
        assert!((manifest.imputation[col] - want).abs() < 1e-9);
        // every sentinel is gone after imputation
        for row in &rows {
            assert!(row.static_features.iter().all(|v| v.is_finite()));
            assert!(row.dynamic_features.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn label_transforms() {
        assert_eq!(LabelTransform::Identity.apply(50_000.0), 50_000.0);
        assert!((LabelTransform::Log.apply(50_000.0) - 10.8198).abs() < 1e-4);
    }

    #[test]
    fn features_csv_round_trip() {
        let homes = vec![profile("a", near(P, 3_000.0), Some("c1"), 50_000.0)];
        let stops = vec![stop("a", near(P, 100.0), 1, 3_600)];
        let ctx = AggregationContext::build(&stops, homes, 0.01).unwrap();
        let mut table = BTreeMap::new();
        table.insert("c1".to_string(), demo("c1", 50_000.0, 0.5));
        let properties: Vec<PropertyRecord> = (0..6)
            .map(|i| {
                let mut p = property(&format!("p{i}"), near(P, i as f64 * 50.0));
                p.cbg = Some("c1".to_string());
                p
            })
            .collect();
        let (rows, manifest, _) = assemble_dataset(
            &properties,
            &ctx,
            &table,
            &AggregationParams::default(),
            LabelTransform::Log,
            0.2,
            3,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let features_path = dir.path().join("features.csv");
        write_features_csv(&features_path, &rows, &manifest).unwrap();
        write_manifest_csv(&manifest_sidecar_path(&features_path), &manifest).unwrap();
        let (loaded_rows, loaded_manifest) = read_features_csv(&features_path).unwrap();
        assert_eq!(loaded_manifest, manifest);
        assert_eq!(loaded_rows.len(), rows.len());
        for (a, b) in rows.iter().zip(&loaded_rows) {
            assert_eq!(a.property_id, b.property_id);
            assert_eq!(a.static_features, b.static_features);
            assert_eq!(a.dynamic_features, b.dynamic_features);
            assert_eq!(a.label, b.label);
        }
    }
}
