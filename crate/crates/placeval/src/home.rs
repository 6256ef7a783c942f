//! Home-location inference from nighttime stops and census demographic
//! attachment.
//!
//! A user's home is the centroid of their most frequent night-stop cluster:
//! night stops are those intersecting a 21:00-07:00 local window on
//! configured night-start weekdays, clusters are leader clusters of stop
//! centroids within `r_home_m` of the first stop seen there, and frequency
//! is counted in distinct nights. Users without an inferable home are
//! dropped entirely: resident-vs-visitor classification is impossible for
//! them.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{assign_cbg, haversine_m, CbgPolygon, GeoPoint};
use crate::trajectory::{offset_seconds, Stop};

/// Census block-group demographic vector. Missing values stay `None`;
/// imputation happens at feature assembly, never here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CbgDemographics {
    pub cbg_id: String,
    pub median_household_income: Option<f64>,
    pub median_age: Option<f64>,
    pub share_white: Option<f64>,
    pub share_black: Option<f64>,
    pub share_asian: Option<f64>,
    pub share_hispanic: Option<f64>,
    pub share_bachelors_or_higher: Option<f64>,
    pub unemployment_rate: Option<f64>,
    pub population: Option<f64>,
    pub commute_share: Option<f64>,
}

/// Demographic fields averaged over visitors per day of week, in fixed
/// (versioned) order. Feature names derive from these keys.
pub const AVG_FIELDS: [(&str, fn(&CbgDemographics) -> Option<f64>); 9] = [
    ("income", |d| d.median_household_income),
    ("age", |d| d.median_age),
    ("share_white", |d| d.share_white),
    ("share_black", |d| d.share_black),
    ("share_asian", |d| d.share_asian),
    ("share_hispanic", |d| d.share_hispanic),
    ("share_bachelors", |d| d.share_bachelors_or_higher),
    ("unemployment", |d| d.unemployment_rate),
    ("commute_share", |d| d.commute_share),
];

/// Static (property-side) demographic fields, in fixed order.
pub const STATIC_FIELDS: [(&str, fn(&CbgDemographics) -> Option<f64>); 10] = [
    ("income", |d| d.median_household_income),
    ("age", |d| d.median_age),
    ("share_white", |d| d.share_white),
    ("share_black", |d| d.share_black),
    ("share_asian", |d| d.share_asian),
    ("share_hispanic", |d| d.share_hispanic),
    ("share_bachelors", |d| d.share_bachelors_or_higher),
    ("unemployment", |d| d.unemployment_rate),
    ("population", |d| d.population),
    ("commute_share", |d| d.commute_share),
];

fn check_share(id: &str, name: &str, v: Option<f64>) -> Result<()> {
    if let Some(x) = v {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Data(format!(
                "cbg {id}: {name} = {x} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

impl CbgDemographics {
    pub fn validate(&self) -> Result<()> {
        let id = &self.cbg_id;
        if let Some(income) = self.median_household_income {
            if income < 0.0 {
                return Err(Error::Data(format!("cbg {id}: negative income {income}")));
            }
        }
        if let Some(pop) = self.population {
            if pop < 0.0 {
                return Err(Error::Data(format!("cbg {id}: negative population {pop}")));
            }
        }
        check_share(id, "share_white", self.share_white)?;
        check_share(id, "share_black", self.share_black)?;
        check_share(id, "share_asian", self.share_asian)?;
        check_share(id, "share_hispanic", self.share_hispanic)?;
        check_share(id, "share_bachelors_or_higher", self.share_bachelors_or_higher)?;
        check_share(id, "unemployment_rate", self.unemployment_rate)?;
        check_share(id, "commute_share", self.commute_share)?;
        let race_sum: f64 = [
            self.share_white,
            self.share_black,
            self.share_asian,
            self.share_hispanic,
        ]
        .iter()
        .flatten()
        .sum();
        if race_sum > 1.0 + 1e-9 {
            return Err(Error::Data(format!(
                "cbg {id}: race shares sum to {race_sum} > 1"
            )));
        }
        Ok(())
    }
}

/// A user's inferred home location and, once attached, the demographics of
/// the census block group it falls in.
#[derive(Debug, Clone)]
pub struct HomeProfile {
    pub user_id: String,
    pub home: GeoPoint,
    pub n_nights: u32,
    pub home_cbg: Option<String>,
    pub demographics: Option<CbgDemographics>,
}

/// Which weekday a qualifying night may start on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NightFilter {
    /// Nights starting Tuesday through Friday (the default reading).
    TueFri,
    /// Nights starting Tuesday through Thursday.
    TueThu,
}

impl NightFilter {
    fn admits(self, dow: u8) -> bool {
        match self {
            NightFilter::TueFri => (1..=4).contains(&dow),
            NightFilter::TueThu => (1..=3).contains(&dow),
        }
    }
}

impl std::str::FromStr for NightFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tue_fri" => Ok(NightFilter::TueFri),
            "tue_thu" => Ok(NightFilter::TueThu),
            other => Err(Error::Config(format!(
                "home_nights must be tue_fri or tue_thu, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HomeParams {
    pub r_home_m: f64,
    pub min_nights: u32,
    pub nights: NightFilter,
    pub utc_offset_hours: f64,
}

impl Default for HomeParams {
    fn default() -> Self {
        HomeParams {
            r_home_m: 100.0,
            min_nights: 3,
            nights: NightFilter::TueFri,
            utc_offset_hours: -5.0,
        }
    }
}

const NIGHT_START_S: i64 = 21 * 3600; // 21:00 local
const NIGHT_END_S: i64 = 7 * 3600; // 07:00 local, next day

/// Night stops for one user: each entry pairs a stop with the local day
/// index of the 21:00 window start it intersects. A stop spanning several
/// nights appears once per qualifying night.
pub fn qualifying_night_stops<'a>(
    stops: &'a [Stop],
    utc_offset_hours: f64,
    nights: NightFilter,
) -> Vec<(i64, &'a Stop)> {
    let off = offset_seconds(utc_offset_hours);
    let mut out = Vec::new();
    for stop in stops {
        let start_local = stop.t_start + off;
        let end_local = stop.t_end + off;
        // candidate nights whose window [D 21:00, D+1 07:00] could intersect
        let first_day = (start_local - NIGHT_END_S).div_euclid(86_400) - 1;
        let last_day = end_local.div_euclid(86_400);
        for day in first_day..=last_day {
            let win_start = day * 86_400 + NIGHT_START_S;
            let win_end = (day + 1) * 86_400 + NIGHT_END_S;
            if start_local <= win_end && end_local >= win_start {
                let dow = (day + 3).rem_euclid(7) as u8;
                if nights.admits(dow) {
                    out.push((day, stop));
                }
            }
        }
    }
    out
}

struct NightCluster<'a> {
    anchor: GeoPoint,
    anchor_t: i64,
    members: Vec<&'a Stop>,
    nights: BTreeSet<i64>,
    total_span_s: i64,
}

/// The most frequent night cluster's centroid, or `None` if no cluster
/// covers at least `min_nights` distinct nights. Tie-breaks are total:
/// distinct nights, then summed stop duration, then earlier anchor time.
pub fn infer_home(
    user_id: &str,
    night_stops: &[(i64, &Stop)],
    r_home_m: f64,
    min_nights: u32,
) -> Option<HomeProfile> {
    let mut clusters: Vec<NightCluster> = Vec::new();
    for &(night, stop) in night_stops {
        let c = stop.centroid();
        match clusters
            .iter_mut()
            .find(|cl| haversine_m(c, cl.anchor) <= r_home_m)
        {
            Some(cl) => {
                cl.members.push(stop);
                cl.nights.insert(night);
                cl.total_span_s += stop.span_s();
            }
            None => clusters.push(NightCluster {
                anchor: c,
                anchor_t: stop.t_start,
                members: vec![stop],
                nights: BTreeSet::from([night]),
                total_span_s: stop.span_s(),
            }),
        }
    }
    let winner = clusters.into_iter().max_by(|a, b| {
        a.nights
            .len()
            .cmp(&b.nights.len())
            .then(a.total_span_s.cmp(&b.total_span_s))
            .then(b.anchor_t.cmp(&a.anchor_t)) // earlier anchor wins ties
    })?;
    if (winner.nights.len() as u32) < min_nights {
        return None;
    }
    let n = winner.members.len() as f64;
    let home = GeoPoint::new(
        winner.members.iter().map(|s| s.centroid_lat).sum::<f64>() / n,
        winner.members.iter().map(|s| s.centroid_lon).sum::<f64>() / n,
    );
    Some(HomeProfile {
        user_id: user_id.to_string(),
        home,
        n_nights: winner.nights.len() as u32,
        home_cbg: None,
        demographics: None,
    })
}

/// Infer homes for every user with stops. Users without an inferable home
/// are absent from the result.
pub fn infer_homes_all(stops: &[Stop], params: &HomeParams) -> Vec<HomeProfile> {
    let mut by_user: BTreeMap<&str, Vec<Stop>> = BTreeMap::new();
    for stop in stops {
        by_user.entry(&stop.user_id).or_default().push(stop.clone());
    }
    let mut homes = Vec::new();
    for (user, mut user_stops) in by_user {
        user_stops.sort_by_key(|s| s.t_start);
        let nights = qualifying_night_stops(&user_stops, params.utc_offset_hours, params.nights);
        if let Some(profile) = infer_home(user, &nights, params.r_home_m, params.min_nights) {
            homes.push(profile);
        }
    }
    homes
}

/// Counts of users dropped from demographic attachment.
#[derive(Debug, Clone, Copy, Default)]
pub struct AttachReport {
    pub attached: usize,
    pub no_cbg: usize,
    pub no_demographics_row: usize,
}

/// Assign each home to a census block group and attach its demographics.
/// Users whose home matches no polygon or no demographics row keep `None`
/// and are counted; downstream averaging skips them.
pub fn attach_demographics(
    profiles: &mut [HomeProfile],
    polygons: &[CbgPolygon],
    demographics: &BTreeMap<String, CbgDemographics>,
) -> AttachReport {
    let mut report = AttachReport::default();
    for profile in profiles.iter_mut() {
        match assign_cbg(profile.home, polygons) {
            Some(cbg) => {
                profile.home_cbg = Some(cbg.to_string());
                match demographics.get(cbg) {
                    Some(demo) => {
                        profile.demographics = Some(demo.clone());
                        report.attached += 1;
                    }
                    None => report.no_demographics_row += 1,
                }
            }
            None => report.no_cbg += 1,
        }
    }
    report
}

pub fn load_demographics_csv(path: &Path) -> Result<BTreeMap<String, CbgDemographics>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::Data(format!(
            "cannot open demographics file {}: {e}",
            path.display()
        ))
    })?;
    let mut table = BTreeMap::new();
    for record in reader.deserialize::<CbgDemographics>() {
        let row = record?;
        row.validate()?;
        match table.entry(row.cbg_id.clone()) {
            Entry::Vacant(slot) => {
                slot.insert(row);
            }
            Entry::Occupied(_) => {
                return Err(Error::Data(format!(
                    "duplicate demographics row for cbg {}",
                    row.cbg_id
                )));
            }
        }
    }
    Ok(table)
}

pub fn write_demographics_csv(
    path: &Path,
    rows: impl IntoIterator<Item = CbgDemographics>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct HomeRow {
    user_id: String,
    home_lat: f64,
    home_lon: f64,
    n_nights: u32,
    home_cbg: Option<String>,
}

/// Persist homes for pipeline restart; demographics are re-attached from the
/// demographics table on load.
pub fn write_homes_csv(path: &Path, profiles: &[HomeProfile]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for p in profiles {
        writer.serialize(HomeRow {
            user_id: p.user_id.clone(),
            home_lat: p.home.lat,
            home_lon: p.home.lon,
            n_nights: p.n_nights,
            home_cbg: p.home_cbg.clone(),
        })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_homes_csv(
    path: &Path,
    demographics: &BTreeMap<String, CbgDemographics>,
) -> Result<Vec<HomeProfile>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::Data(format!("cannot open homes file {}: {e}", path.display()))
    })?;
    let mut profiles = Vec::new();
    for record in reader.deserialize::<HomeRow>() {
        let row = record?;
        let demographics = row
            .home_cbg
            .as_deref()
            .and_then(|cbg| demographics.get(cbg).cloned());
        profiles.push(HomeProfile {
            user_id: row.user_id,
            home: GeoPoint::new(row.home_lat, row.home_lon),
            n_nights: row.n_nights,
            home_cbg: row.home_cbg,
            demographics,
        });
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Monday 2019-04-01 00:00 local time at UTC-5.
    const MONDAY_LOCAL_MIDNIGHT_UTC: i64 = 1_554_094_800;
    const OFF: f64 = -5.0;

    fn stop_at(user: &str, lat: f64, lon: f64, t_start: i64, t_end: i64) -> Stop {
        Stop {
            user_id: user.to_string(),
            anchor_lat: lat,
            anchor_lon: lon,
            centroid_lat: lat,
            centroid_lon: lon,
            t_start,
            t_end,
            n_pings: 5,
            dow: crate::trajectory::local_day_of_week(t_start, OFF),
        }
    }

    /// Seconds since the local Monday midnight origin.
    fn local(day: i64, hour: i64, minute: i64) -> i64 {
        MONDAY_LOCAL_MIDNIGHT_UTC + day * 86_400 + hour * 3600 + minute * 60
    }

    #[test]
    fn tuesday_evening_stop_qualifies() {
        let stops = vec![stop_at("u", 38.9, -77.0, local(1, 22, 0), local(1, 23, 0))];
        let nights = qualifying_night_stops(&stops, OFF, NightFilter::TueFri);
        assert_eq!(nights.len(), 1);
        let day = nights[0].0;
        assert_eq!((day + 3).rem_euclid(7), 1); // labeled Tuesday
    }

    #[test]
    fn early_morning_stop_labels_previous_night() {
        // Wednesday 03:00-05:00 local belongs to the Tuesday-night window
        let stops = vec![stop_at("u", 38.9, -77.0, local(2, 3, 0), local(2, 5, 0))];
        let nights = qualifying_night_stops(&stops, OFF, NightFilter::TueFri);
        assert_eq!(nights.len(), 1);
        assert_eq!((nights[0].0 + 3).rem_euclid(7), 1);
    }

    #[test]
    fn weekend_night_excluded() {
        let stops = vec![stop_at("u", 38.9, -77.0, local(5, 23, 0), local(5, 23, 30))];
        assert!(qualifying_night_stops(&stops, OFF, NightFilter::TueFri).is_empty());
    }

    #[test]
    fn multi_night_stop_labels_every_qualifying_night() {
        // Tuesday 20:00 through Thursday 12:00: Tuesday and Wednesday nights
        let stops = vec![stop_at("u", 38.9, -77.0, local(1, 20, 0), local(3, 12, 0))];
        let nights = qualifying_night_stops(&stops, OFF, NightFilter::TueFri);
        let days: Vec<i64> = nights.iter().map(|(d, _)| (d + 3).rem_euclid(7)).collect();
        assert_eq!(days, vec![1, 2]);
    }

    #[test]
    fn home_is_night_cluster_even_with_more_day_stops() {
        let home = (38.9000, -77.0000);
        let work = (38.9500, -77.0500);
        let mut stops = Vec::new();
        for day in 1..=4 {
            // nights at home, Tue-Fri
            stops.push(stop_at("u", home.0, home.1, local(day, 22, 0), local(day + 1, 6, 0)));
            // two day stops at work
            stops.push(stop_at("u", work.0, work.1, local(day, 9, 0), local(day, 12, 0)));
            stops.push(stop_at("u", work.0, work.1, local(day, 13, 0), local(day, 17, 0)));
        }
        stops.sort_by_key(|s| s.t_start);
        let nights = qualifying_night_stops(&stops, OFF, NightFilter::TueFri);
        let profile = infer_home("u", &nights, 100.0, 3).unwrap();
        assert_eq!(profile.n_nights, 4);
        assert!(haversine_m(profile.home, GeoPoint::new(home.0, home.1)) < 1.0);
    }

    #[test]
    fn weekend_only_user_has_no_home() {
        let mut stops = Vec::new();
        for week in 0..3 {
            let day = week * 7 + 5; // Saturdays
            stops.push(stop_at("u", 38.9, -77.0, local(day, 22, 0), local(day + 1, 6, 0)));
        }
        let nights = qualifying_night_stops(&stops, OFF, NightFilter::TueFri);
        assert!(nights.is_empty());
        assert!(infer_home("u", &nights, 100.0, 3).is_none());
    }

    #[test]
    fn too_few_nights_yields_none() {
        let stops = vec![
            stop_at("u", 38.9, -77.0, local(1, 22, 0), local(2, 6, 0)),
            stop_at("u", 38.9, -77.0, local(2, 22, 0), local(3, 6, 0)),
        ];
        let nights = qualifying_night_stops(&stops, OFF, NightFilter::TueFri);
        assert!(infer_home("u", &nights, 100.0, 3).is_none());
    }

    #[test]
    fn home_recovered_under_gps_jitter() {
        use rand::Rng;
        let mut rng = crate::rng::rng(99);
        let true_home = GeoPoint::new(38.91234, -77.04321);
        let mut stops = Vec::new();
        for day in 1..=4 {
            // ~20 m jitter on each night-stop centroid
            let lat = true_home.lat + rng.random_range(-0.00018..0.00018);
            let lon = true_home.lon + rng.random_range(-0.00023..0.00023);
            stops.push(stop_at("u", lat, lon, local(day, 22, 0), local(day + 1, 6, 0)));
        }
        let nights = qualifying_night_stops(&stops, OFF, NightFilter::TueFri);
        let profile = infer_home("u", &nights, 100.0, 3).unwrap();
        assert!(haversine_m(profile.home, true_home) < 50.0);
    }

    #[test]
    fn home_within_radius_of_a_member_centroid() {
        let stops = vec![
            stop_at("u", 38.9000, -77.0000, local(1, 22, 0), local(2, 6, 0)),
            stop_at("u", 38.9006, -77.0000, local(2, 22, 0), local(3, 6, 0)),
            stop_at("u", 38.9003, -77.0004, local(3, 22, 0), local(4, 6, 0)),
        ];
        let nights = qualifying_night_stops(&stops, OFF, NightFilter::TueFri);
        let profile = infer_home("u", &nights, 100.0, 3).unwrap();
        assert!(stops
            .iter()
            .any(|s| haversine_m(profile.home, s.centroid()) <= 100.0));
    }

    #[test]
    fn tie_break_prefers_longer_then_earlier() {
        // two clusters with equal distinct nights; cluster B has longer dwell
        let a = (38.9000, -77.0000);
        let b = (38.9500, -77.0500);
        let stops = vec![
            stop_at("u", a.0, a.1, local(1, 22, 0), local(1, 23, 0)),
            stop_at("u", b.0, b.1, local(2, 0, 0), local(2, 6, 0)),
            stop_at("u", a.0, a.1, local(2, 22, 0), local(2, 23, 0)),
            stop_at("u", b.0, b.1, local(3, 0, 0), local(3, 6, 0)),
            stop_at("u", a.0, a.1, local(3, 22, 0), local(3, 23, 0)),
            stop_at("u", b.0, b.1, local(4, 0, 0), local(4, 6, 0)),
        ];
        let nights = qualifying_night_stops(&stops, OFF, NightFilter::TueFri);
        let profile = infer_home("u", &nights, 100.0, 3).unwrap();
        assert!(haversine_m(profile.home, GeoPoint::new(b.0, b.1)) < 1.0);
    }

    #[test]
    fn attach_looks_up_by_polygon() {
        let polygons = vec![CbgPolygon::new(
            "cbg1".into(),
            vec![
                GeoPoint::new(38.0, -78.0),
                GeoPoint::new(38.0, -76.0),
                GeoPoint::new(40.0, -76.0),
                GeoPoint::new(40.0, -78.0),
                GeoPoint::new(38.0, -78.0),
            ],
            vec![],
        )
        .unwrap()];
        let mut demo = BTreeMap::new();
        demo.insert(
            "cbg1".to_string(),
            CbgDemographics {
                cbg_id: "cbg1".into(),
                median_household_income: Some(85_000.0),
                median_age: Some(33.0),
                share_white: Some(0.4),
                share_black: Some(0.3),
                share_asian: Some(0.1),
                share_hispanic: Some(0.15),
                share_bachelors_or_higher: Some(0.5),
                unemployment_rate: Some(0.05),
                population: Some(1500.0),
                commute_share: Some(0.6),
            },
        );
        let mut profiles = vec![
            HomeProfile {
                user_id: "in".into(),
                home: GeoPoint::new(38.9, -77.0),
                n_nights: 4,
                home_cbg: None,
                demographics: None,
            },
            HomeProfile {
                user_id: "out".into(),
                home: GeoPoint::new(10.0, 10.0),
                n_nights: 4,
                home_cbg: None,
                demographics: None,
            },
        ];
        let report = attach_demographics(&mut profiles, &polygons, &demo);
        assert_eq!(report.attached, 1);
        assert_eq!(report.no_cbg, 1);
        assert_eq!(profiles[0].home_cbg.as_deref(), Some("cbg1"));
        assert_eq!(
            profiles[0]
                .demographics
                .as_ref()
                .unwrap()
                .median_household_income,
            Some(85_000.0)
        );
        assert!(profiles[1].demographics.is_none());
    }

    #[test]
    fn demographics_validation_rejects_bad_shares() {
        let row = CbgDemographics {
            cbg_id: "x".into(),
            median_household_income: Some(50_000.0),
            median_age: None,
            share_white: Some(0.7),
            share_black: Some(0.6),
            share_asian: None,
            share_hispanic: None,
            share_bachelors_or_higher: None,
            unemployment_rate: None,
            population: None,
            commute_share: None,
        };
        assert!(row.validate().is_err()); // race shares sum to 1.3
    }
}
