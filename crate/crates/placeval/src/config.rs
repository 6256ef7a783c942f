//! Run configuration: one `key = value` per line, `#` comments.
//!
//! Every run serializes its full config into the manifest; two runs with
//! equal configs and inputs produce byte-identical outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{AggregationParams, CommutingMode, LabelTransform, ResidentRule};
use crate::home::{HomeParams, NightFilter};
use crate::synth::SyntheticCitySpec;
use crate::trajectory::StopParams;

#[derive(Debug, Clone)]
pub struct RunConfig {
    // paths; empty strings resolve to the synth stage outputs under out_dir
    pub pings_path: String,
    pub polygons_path: String,
    pub demographics_path: String,
    pub properties_path: String,
    pub out_dir: String,

    // stop detection
    pub r_stop_m: f64,
    pub min_stop_duration_s: i64,
    pub max_gap_s: i64,

    // home inference
    pub r_home_m: f64,
    pub min_nights: u32,
    pub home_nights: NightFilter,

    // aggregation
    pub radius_m: f64,
    pub resident_rule: ResidentRule,
    pub commuting_mode: CommutingMode,
    pub commute_dwell_max_s: i64,

    // models
    pub n_estimators: usize,
    pub mtry: usize, // 0 = ceil(p / 3)
    pub min_samples_leaf: usize,
    pub max_depth: usize, // 0 = unlimited
    pub lambda: f64,
    pub k_folds: usize,
    pub test_fraction: f64,
    pub label_transform: LabelTransform,

    // tax experiment
    pub tax_n_estimators: usize,
    pub tax_price_floor: f64,
    pub tax_per_kind_sample: usize,

    // attribution
    pub shapley_samples: usize,
    pub shapley_background: usize,
    pub shapley_eval_rows: usize,
    pub top_k: usize,

    // shared
    pub seed: u64,
    pub utc_offset_hours: f64,
    pub grid_cell_deg: f64,

    // synthetic city
    pub synth_users: usize,
    pub synth_properties: usize,
    pub synth_days: usize,
    pub synth_cbg_grid: usize,
    pub synth_cbg_size_deg: f64,
    pub synth_origin_lat: f64,
    pub synth_origin_lon: f64,
    pub synth_commercial_fraction: f64,
    pub synth_worker_fraction: f64,
    pub synth_trips_per_day: f64,
    pub synth_jitter_m: f64,
    pub synth_noise_sd: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let stop = StopParams::default();
        let home = HomeParams::default();
        let agg = AggregationParams::default();
        let synth = SyntheticCitySpec::default();
        RunConfig {
            pings_path: String::new(),
            polygons_path: String::new(),
            demographics_path: String::new(),
            properties_path: String::new(),
            out_dir: "out".into(),
            r_stop_m: stop.r_stop_m,
            min_stop_duration_s: stop.min_stop_duration_s,
            max_gap_s: stop.max_gap_s,
            r_home_m: home.r_home_m,
            min_nights: home.min_nights,
            home_nights: home.nights,
            radius_m: agg.radius_m,
            resident_rule: agg.resident_rule,
            commuting_mode: agg.commuting_mode,
            commute_dwell_max_s: agg.commute_dwell_max_s,
            n_estimators: 300,
            mtry: 0,
            min_samples_leaf: 5,
            max_depth: 0,
            lambda: 1.0,
            k_folds: 5,
            test_fraction: 0.1,
            label_transform: LabelTransform::Identity,
            tax_n_estimators: 700,
            tax_price_floor: 50_000.0,
            tax_per_kind_sample: 5_000,
            shapley_samples: 200,
            shapley_background: 256,
            shapley_eval_rows: 40,
            top_k: 20,
            seed: 42,
            utc_offset_hours: -5.0,
            grid_cell_deg: 0.01,
            synth_users: synth.n_users,
            synth_properties: synth.n_properties,
            synth_days: synth.n_days,
            synth_cbg_grid: synth.cbg_grid,
            synth_cbg_size_deg: synth.cbg_size_deg,
            synth_origin_lat: synth.origin_lat,
            synth_origin_lon: synth.origin_lon,
            synth_commercial_fraction: synth.commercial_fraction,
            synth_worker_fraction: synth.worker_fraction,
            synth_trips_per_day: synth.trips_per_day,
            synth_jitter_m: synth.ping_jitter_m,
            synth_noise_sd: synth.price_noise_sd,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident : $parse:ident),+ $(,)?) => {
        fn apply(config: &mut RunConfig, key: &str, value: &str) -> Result<()> {
            match key {
                $(stringify!($key) => {
                    config.$key = $parse(key, value)?;
                    Ok(())
                })+
                _ => Err(Error::Config(format!("unknown config key `{key}`"))),
            }
        }

        /// Canonical serialization: every key, fixed order.
        pub fn canonical_lines(config: &RunConfig) -> String {
            let mut out = String::new();
            $(let _ = writeln!(out, "{} = {}", stringify!($key), render(&config.$key));)+
            out
        }
    };
}

fn parse_string(_key: &str, value: &str) -> Result<String> {
    Ok(value.to_string())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value for {key}: {e}")))
}

fn parse_enum<T: std::str::FromStr<Err = Error>>(_key: &str, value: &str) -> Result<T> {
    value.parse()
}

trait Render {
    fn render(&self) -> String;
}

fn render<T: Render>(v: &T) -> String {
    v.render()
}

macro_rules! render_display {
    ($($t:ty),+) => {
        $(impl Render for $t {
            fn render(&self) -> String {
                self.to_string()
            }
        })+
    };
}
render_display!(String, f64, u32, u64, usize, i64);

impl Render for NightFilter {
    fn render(&self) -> String {
        match self {
            NightFilter::TueFri => "tue_fri".into(),
            NightFilter::TueThu => "tue_thu".into(),
        }
    }
}

impl Render for ResidentRule {
    fn render(&self) -> String {
        match self {
            ResidentRule::Radius => "radius".into(),
            ResidentRule::Cbg => "cbg".into(),
        }
    }
}

impl Render for CommutingMode {
    fn render(&self) -> String {
        match self {
            CommutingMode::Behavioral => "behavioral".into(),
            CommutingMode::Census => "census".into(),
        }
    }
}

impl Render for LabelTransform {
    fn render(&self) -> String {
        match self {
            LabelTransform::Identity => "identity".into(),
            LabelTransform::Log => "log".into(),
        }
    }
}

config_keys! {
    pings_path: parse_string,
    polygons_path: parse_string,
    demographics_path: parse_string,
    properties_path: parse_string,
    out_dir: parse_string,
    r_stop_m: parse_num,
    min_stop_duration_s: parse_num,
    max_gap_s: parse_num,
    r_home_m: parse_num,
    min_nights: parse_num,
    home_nights: parse_enum,
    radius_m: parse_num,
    resident_rule: parse_enum,
    commuting_mode: parse_enum,
    commute_dwell_max_s: parse_num,
    n_estimators: parse_num,
    mtry: parse_num,
    min_samples_leaf: parse_num,
    max_depth: parse_num,
    lambda: parse_num,
    k_folds: parse_num,
    test_fraction: parse_num,
    label_transform: parse_enum,
    tax_n_estimators: parse_num,
    tax_price_floor: parse_num,
    tax_per_kind_sample: parse_num,
    shapley_samples: parse_num,
    shapley_background: parse_num,
    shapley_eval_rows: parse_num,
    top_k: parse_num,
    seed: parse_num,
    utc_offset_hours: parse_num,
    grid_cell_deg: parse_num,
    synth_users: parse_num,
    synth_properties: parse_num,
    synth_days: parse_num,
    synth_cbg_grid: parse_num,
    synth_cbg_size_deg: parse_num,
    synth_origin_lat: parse_num,
    synth_origin_lon: parse_num,
    synth_commercial_fraction: parse_num,
    synth_worker_fraction: parse_num,
    synth_trips_per_day: parse_num,
    synth_jitter_m: parse_num,
    synth_noise_sd: parse_num,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", line_no + 1))
            })?;
            apply(&mut config, key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn canonical(&self) -> String {
        canonical_lines(self)
    }

    /// Hex sha-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical().as_bytes());
        hex(&hasher.finalize())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    fn resolve(&self, configured: &str, synth_name: &str) -> PathBuf {
        if configured.is_empty() {
            self.out_dir().join("synth").join(synth_name)
        } else {
            PathBuf::from(configured)
        }
    }

    pub fn pings_file(&self) -> PathBuf {
        self.resolve(&self.pings_path, "pings.csv")
    }

    pub fn polygons_file(&self) -> PathBuf {
        self.resolve(&self.polygons_path, "cbgs.geojson")
    }

    pub fn demographics_file(&self) -> PathBuf {
        self.resolve(&self.demographics_path, "demographics.csv")
    }

    pub fn properties_file(&self) -> PathBuf {
        self.resolve(&self.properties_path, "properties.csv")
    }

    pub fn stop_params(&self) -> StopParams {
        StopParams {
            r_stop_m: self.r_stop_m,
            min_stop_duration_s: self.min_stop_duration_s,
            max_gap_s: self.max_gap_s,
            utc_offset_hours: self.utc_offset_hours,
        }
    }

    pub fn home_params(&self) -> HomeParams {
        HomeParams {
            r_home_m: self.r_home_m,
            min_nights: self.min_nights,
            nights: self.home_nights,
            utc_offset_hours: self.utc_offset_hours,
        }
    }

    pub fn aggregation_params(&self) -> AggregationParams {
        AggregationParams {
            radius_m: self.radius_m,
            resident_rule: self.resident_rule,
            commuting_mode: self.commuting_mode,
            commute_dwell_max_s: self.commute_dwell_max_s,
        }
    }

    pub fn synth_spec(&self) -> SyntheticCitySpec {
        SyntheticCitySpec {
            seed: crate::rng::sub_seed(self.seed, "synth"),
            n_users: self.synth_users,
            n_properties: self.synth_properties,
            n_days: self.synth_days,
            cbg_grid: self.synth_cbg_grid,
            cbg_size_deg: self.synth_cbg_size_deg,
            origin_lat: self.synth_origin_lat,
            origin_lon: self.synth_origin_lon,
            commercial_fraction: self.synth_commercial_fraction,
            worker_fraction: self.synth_worker_fraction,
            trips_per_day: self.synth_trips_per_day,
            ping_jitter_m: self.synth_jitter_m,
            price_noise_sd: self.synth_noise_sd,
            utc_offset_hours: self.utc_offset_hours,
            ..SyntheticCitySpec::default()
        }
    }

    pub fn mtry_option(&self) -> Option<usize> {
        (self.mtry > 0).then_some(self.mtry)
    }

    pub fn max_depth_option(&self) -> Option<usize> {
        (self.max_depth > 0).then_some(self.max_depth)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Hex sha-256 of a file's contents.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex(&hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_canonical_form() {
        let config = RunConfig::default();
        let parsed = RunConfig::parse(&config.canonical()).unwrap();
        assert_eq!(parsed.canonical(), config.canonical());
        assert_eq!(parsed.digest(), config.digest());
    }

    #[test]
    fn parse_overrides_and_comments() {
        let text = "\n# a comment\nseed = 7\nradius_m = 250 # trailing comment\nresident_rule = cbg\n";
        let config = RunConfig::parse(text).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.radius_m, 250.0);
        assert_eq!(config.resident_rule, ResidentRule::Cbg);
        assert_ne!(config.digest(), RunConfig::default().digest());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::parse("no_such_key = 1").is_err());
        assert!(RunConfig::parse("seed = banana").is_err());
        assert!(RunConfig::parse("just a line").is_err());
    }

    #[test]
    fn empty_paths_resolve_to_synth_outputs() {
        let config = RunConfig::default();
        assert_eq!(
            config.pings_file(),
            PathBuf::from("out").join("synth").join("pings.csv")
        );
        let custom = RunConfig::parse("pings_path = /data/p.csv").unwrap();
        assert_eq!(custom.pings_file(), PathBuf::from("/data/p.csv"));
    }
}
