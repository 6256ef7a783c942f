//! Synthetic city generator.
//!
//! Builds a grid of census block groups with demographics, users with fixed
//! homes and daily movement (night stays at home, weekday work shifts,
//! leisure trips), and properties whose prices follow a planted function of
//! static attributes plus two dynamic terms: weekday foot traffic and the
//! average income of visitors' home block groups. Every latent quantity is
//! recorded in a ground-truth sidecar so the pipeline's recovery can be
//! scored exactly.
//!
//! Visit behavior creates the planted signals: every property has a latent
//! attractiveness (traffic driver) and a latent affluent draw (which skews
//! who visits by home income). Both are independent of the property's own
//! attributes, so static features cannot explain the dynamic price terms.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geo::{haversine_m, CbgPolygon, GeoPoint, GridIndex, M_PER_DEG_LAT};
use crate::home::CbgDemographics;
use crate::features::{PropertyKind, PropertyRecord};
use crate::rng::{rng, sub_seed};
use crate::trajectory::{local_day_of_week, offset_seconds, Ping};

/// Local day index of Monday 2019-04-01: the simulation origin.
const START_LOCAL_DAY: i64 = 17_987;

#[derive(Debug, Clone)]
pub struct SyntheticCitySpec {
    pub seed: u64,
    pub n_users: usize,
    pub n_properties: usize,
    pub n_days: usize,
    pub cbg_grid: usize,
    pub cbg_size_deg: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub commercial_fraction: f64,
    pub worker_fraction: f64,
    pub trips_per_day: f64,
    pub ping_jitter_m: f64,
    pub night_interval_s: i64,
    pub work_interval_s: i64,
    pub trip_interval_s: i64,
    pub price_noise_sd: f64,
    pub utc_offset_hours: f64,
    pub residential_traffic_coef: f64,
    pub residential_visitor_income_coef: f64,
    pub commercial_traffic_coef: f64,
    pub commercial_visitor_income_coef: f64,
}

impl Default for SyntheticCitySpec {
    fn default() -> Self {
        SyntheticCitySpec {
            seed: 0,
            n_users: 500,
            n_properties: 2_000,
            n_days: 14,
            cbg_grid: 6,
            cbg_size_deg: 0.01,
            origin_lat: 38.85,
            origin_lon: -77.10,
            commercial_fraction: 0.35,
            worker_fraction: 0.6,
            trips_per_day: 1.5,
            ping_jitter_m: 20.0,
            night_interval_s: 1_200,
            work_interval_s: 1_200,
            trip_interval_s: 300,
            price_noise_sd: 20_000.0,
            utc_offset_hours: -5.0,
            residential_traffic_coef: 10_000.0,
            residential_visitor_income_coef: 100_000.0,
            commercial_traffic_coef: 180_000.0,
            commercial_visitor_income_coef: 10_000.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UserTruth {
    pub user_id: String,
    pub home: GeoPoint,
    pub home_cbg: String,
    pub worker: bool,
}

#[derive(Debug, Clone)]
pub struct PropertyTruth {
    pub property_id: String,
    pub static_part: f64,
    pub traffic_part: f64,
    pub visitor_income_part: f64,
    pub noise_part: f64,
    pub weekday_traffic: f64,
    pub avg_visitor_income: f64,
    pub price: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CityTruth {
    pub users: Vec<UserTruth>,
    pub properties: Vec<PropertyTruth>,
}

#[derive(Debug)]
pub struct SyntheticCity {
    pub polygons: Vec<CbgPolygon>,
    pub demographics: Vec<CbgDemographics>,
    /// Per-user time-sorted ping streams.
    pub pings: BTreeMap<String, Vec<Ping>>,
    pub properties: Vec<PropertyRecord>,
    pub truth: CityTruth,
}

/// One planted stay: the generator's own record of where a user was.
struct StayEvent {
    user: usize,
    loc: GeoPoint,
    t_start: i64,
    t_end: i64,
}

struct CityFrame {
    polygons: Vec<CbgPolygon>,
    demographics: Vec<CbgDemographics>,
    incomes: Vec<f64>,
}

pub fn generate_city(spec: &SyntheticCitySpec) -> Result<SyntheticCity> {
    if spec.n_users == 0 || spec.n_properties == 0 || spec.n_days == 0 {
        return Err(Error::Config(
            "synthetic city needs at least one user, one property, and one day".into(),
        ));
    }
    let frame = build_cbgs(spec);
    let properties = build_properties(spec);
    let users = build_users(spec, &frame);
    let latents = build_latents(spec, &properties);
    let events = simulate_days(spec, &users, &properties, &latents);
    let pings = emit_pings(spec, &users, &events);
    let truth_props = price_properties(spec, &frame, &properties, &users, &events)?;

    let mut records = Vec::with_capacity(properties.len());
    for (p, t) in properties.iter().zip(&truth_props) {
        records.push(PropertyRecord {
            property_id: p.id.clone(),
            loc: p.loc,
            price: t.price,
            beds: p.beds,
            baths: p.baths,
            sqft: p.sqft,
            kind: p.kind,
            cbg: None, // assignment is the pipeline's job
        });
    }
    let truth = CityTruth {
        users: users
            .iter()
            .map(|u| UserTruth {
                user_id: u.id.clone(),
                home: u.home,
                home_cbg: frame.demographics[u.home_cbg].cbg_id.clone(),
                worker: u.worker,
            })
            .collect(),
        properties: truth_props,
    };
    Ok(SyntheticCity {
        polygons: frame.polygons,
        demographics: frame.demographics,
        pings,
        properties: records,
        truth,
    })
}

fn build_cbgs(spec: &SyntheticCitySpec) -> CityFrame {
    let mut city_rng = rng(sub_seed(spec.seed, "synth.city"));
    let g = spec.cbg_grid;
    let mut polygons = Vec::with_capacity(g * g);
    let mut demographics = Vec::with_capacity(g * g);
    let mut incomes = Vec::with_capacity(g * g);
    for row in 0..g {
        for col in 0..g {
            let id = format!("cbg_{row}_{col}");
            let lat0 = spec.origin_lat + row as f64 * spec.cbg_size_deg;
            let lon0 = spec.origin_lon + col as f64 * spec.cbg_size_deg;
            let lat1 = lat0 + spec.cbg_size_deg;
            let lon1 = lon0 + spec.cbg_size_deg;
            polygons.push(
                CbgPolygon::new(
                    id.clone(),
                    vec![
                        GeoPoint::new(lat0, lon0),
                        GeoPoint::new(lat0, lon1),
                        GeoPoint::new(lat1, lon1),
                        GeoPoint::new(lat1, lon0),
                        GeoPoint::new(lat0, lon0),
                    ],
                    vec![],
                )
                .expect("grid cell is a valid polygon"),
            );
            let income = (city_rng.random_range(45_000.0f64.ln()..180_000.0f64.ln())).exp();
            incomes.push(income);
            let mut races = [0.0f64; 4];
            for r in races.iter_mut() {
                *r = city_rng.random_range(0.05..1.0);
            }
            let total: f64 = races.iter().sum::<f64>() / 0.95; // shares sum to 0.95
            let sparse_age = city_rng.random_range(0.0..1.0) < 0.02;
            let sparse_unemployment = city_rng.random_range(0.0..1.0) < 0.02;
            demographics.push(CbgDemographics {
                cbg_id: id,
                median_household_income: Some(income.round()),
                median_age: if sparse_age {
                    None
                } else {
                    Some(city_rng.random_range(28.0f64..48.0).round())
                },
                share_white: Some(races[0] / total),
                share_black: Some(races[1] / total),
                share_asian: Some(races[2] / total),
                share_hispanic: Some(races[3] / total),
                share_bachelors_or_higher: Some(city_rng.random_range(0.15..0.75)),
                unemployment_rate: if sparse_unemployment {
                    None
                } else {
                    Some(city_rng.random_range(0.02..0.12))
                },
                population: Some(city_rng.random_range(600.0f64..3_000.0).round()),
                commute_share: Some(city_rng.random_range(0.25..0.70)),
            });
        }
    }
    CityFrame {
        polygons,
        demographics,
        incomes,
    }
}

struct RawProperty {
    id: String,
    loc: GeoPoint,
    beds: f64,
    baths: f64,
    sqft: f64,
    kind: PropertyKind,
    cbg: usize,
}

fn build_properties(spec: &SyntheticCitySpec) -> Vec<RawProperty> {
    let mut prop_rng = rng(sub_seed(spec.seed, "synth.properties"));
    let g = spec.cbg_grid;
    let span = g as f64 * spec.cbg_size_deg;
    let margin = 0.02 * span;
    let mut properties = Vec::with_capacity(spec.n_properties);
    for i in 0..spec.n_properties {
        let lat = spec.origin_lat + prop_rng.random_range(margin..span - margin);
        let lon = spec.origin_lon + prop_rng.random_range(margin..span - margin);
        let loc = GeoPoint::new(lat, lon);
        let row = ((lat - spec.origin_lat) / spec.cbg_size_deg) as usize;
        let col = ((lon - spec.origin_lon) / spec.cbg_size_deg) as usize;
        let kind = if prop_rng.random_range(0.0..1.0) < spec.commercial_fraction {
            PropertyKind::Commercial
        } else {
            PropertyKind::Residential
        };
        let (beds, baths, sqft) = match kind {
            PropertyKind::Commercial => (
                0.0,
                prop_rng.random_range(1..8) as f64,
                prop_rng.random_range(1_500.0f64..8_000.0).round(),
            ),
            _ => (
                prop_rng.random_range(1..6) as f64,
                prop_rng.random_range(1..4) as f64,
                prop_rng.random_range(600.0f64..3_200.0).round(),
            ),
        };
        properties.push(RawProperty {
            id: format!("p{i:05}"),
            loc,
            beds,
            baths,
            sqft,
            kind,
            cbg: row.min(g - 1) * g + col.min(g - 1),
        });
    }
    properties
}

struct RawUser {
    id: String,
    home: GeoPoint,
    home_cbg: usize,
    worker: bool,
    /// Standardized home income, clamped: drives destination preferences.
    income_score: f64,
}

fn build_users(spec: &SyntheticCitySpec, frame: &CityFrame) -> Vec<RawUser> {
    let mut user_rng = rng(sub_seed(spec.seed, "synth.users"));
    let n_cbgs = frame.demographics.len();
    let income_mean = frame.incomes.iter().sum::<f64>() / n_cbgs as f64;
    let income_sd = (frame
        .incomes
        .iter()
        .map(|v| (v - income_mean).powi(2))
        .sum::<f64>()
        / n_cbgs as f64)
        .sqrt()
        .max(1.0);
    let g = spec.cbg_grid;
    (0..spec.n_users)
        .map(|i| {
            let cbg = user_rng.random_range(0..n_cbgs);
            let (row, col) = (cbg / g, cbg % g);
            let inner = spec.cbg_size_deg;
            let lat = spec.origin_lat
                + row as f64 * inner
                + user_rng.random_range(0.15 * inner..0.85 * inner);
            let lon = spec.origin_lon
                + col as f64 * inner
                + user_rng.random_range(0.15 * inner..0.85 * inner);
            RawUser {
                id: format!("u{i:04}"),
                home: GeoPoint::new(lat, lon),
                home_cbg: cbg,
                worker: user_rng.random_range(0.0..1.0) < spec.worker_fraction,
                income_score: ((frame.incomes[cbg] - income_mean) / income_sd).clamp(-2.0, 2.0),
            }
        })
        .collect()
}

struct Latents {
    /// Per-property visit attractiveness (lognormal).
    attractiveness: Vec<f64>,
    /// Per-property affluent draw in [-1, 1]: positive values pull
    /// higher-income visitors.
    affluent_draw: Vec<f64>,
    /// Cumulative attractiveness over commercial properties (work sites).
    work_cdf: Vec<(usize, f64)>,
}

fn build_latents(spec: &SyntheticCitySpec, properties: &[RawProperty]) -> Latents {
    let mut latent_rng = rng(sub_seed(spec.seed, "synth.latents"));
    let normal = Normal::new(0.0, 0.5).expect("valid normal");
    let attractiveness: Vec<f64> = properties
        .iter()
        .map(|_| f64::exp(normal.sample(&mut latent_rng)))
        .collect();
    let affluent_draw: Vec<f64> = properties
        .iter()
        .map(|_| latent_rng.random_range(-1.0..1.0))
        .collect();
    let mut work_cdf = Vec::new();
    let mut acc = 0.0;
    for (i, p) in properties.iter().enumerate() {
        if p.kind == PropertyKind::Commercial {
            acc += attractiveness[i];
            work_cdf.push((i, acc));
        }
    }
    if work_cdf.is_empty() {
        // no commercial stock: any property can host work shifts
        for (i, a) in attractiveness.iter().enumerate() {
            acc += a;
            work_cdf.push((i, acc));
        }
    }
    Latents {
        attractiveness,
        affluent_draw,
        work_cdf,
    }
}

fn sample_cdf(cdf: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let total = cdf.last().map(|&(_, v)| v).unwrap_or(0.0);
    let draw = rng.random_range(0.0..total);
    let at = cdf.partition_point(|&(_, v)| v <= draw);
    cdf[at.min(cdf.len() - 1)].0
}

fn simulate_days(
    spec: &SyntheticCitySpec,
    users: &[RawUser],
    properties: &[RawProperty],
    latents: &Latents,
) -> Vec<StayEvent> {
    let start_t = START_LOCAL_DAY * 86_400 - offset_seconds(spec.utc_offset_hours);
    let at = |day: i64, seconds: i64| start_t + day * 86_400 + seconds;
    let mut events = Vec::new();
    for (ui, user) in users.iter().enumerate() {
        let mut day_rng = rng(sub_seed(spec.seed, &format!("synth.days.{}", user.id)));
        // preference weights over destinations for this user
        let mut leisure_cdf = Vec::with_capacity(properties.len());
        let mut acc = 0.0;
        for (pi, _) in properties.iter().enumerate() {
            let w = latents.attractiveness[pi]
                * (latents.affluent_draw[pi] * user.income_score).exp();
            acc += w;
            leisure_cdf.push((pi, acc));
        }
        let work_site = user.worker.then(|| sample_cdf(&latents.work_cdf, &mut day_rng));

        for day in 0..spec.n_days as i64 {
            let dow = local_day_of_week(at(day, 12 * 3600), spec.utc_offset_hours);
            let weekday = dow <= 4;
            if let (true, Some(site)) = (weekday, work_site) {
                events.push(StayEvent {
                    user: ui,
                    loc: properties[site].loc,
                    t_start: at(day, 9 * 3600),
                    t_end: at(day, 17 * 3600),
                });
            }
            // leisure trips in non-overlapping slots
            let window = if weekday && user.worker {
                (17 * 3600 + 45 * 60, 20 * 3600 + 30 * 60)
            } else {
                (8 * 3600 + 30 * 60, 19 * 3600 + 30 * 60)
            };
            let n_trips = poisson(&mut day_rng, spec.trips_per_day).min(3) as i64;
            if n_trips > 0 {
                // one slot per trip keeps stays non-overlapping
                let slot = (window.1 - window.0) / n_trips;
                for k in 0..n_trips {
                    let dest = sample_cdf(&leisure_cdf, &mut day_rng);
                    let start_offset = day_rng.random_range(0..=(slot / 4).max(1));
                    let max_dwell = slot - start_offset - 60;
                    if max_dwell < 2 * spec.trip_interval_s {
                        continue;
                    }
                    let start = window.0 + k * slot + start_offset;
                    let dwell = day_rng
                        .random_range(900..2_700)
                        .clamp(2 * spec.trip_interval_s, max_dwell);
                    events.push(StayEvent {
                        user: ui,
                        loc: properties[dest].loc,
                        t_start: at(day, start),
                        t_end: at(day, start + dwell),
                    });
                }
            }
            // night stay at home, 21:00 to 07:00 next day
            events.push(StayEvent {
                user: ui,
                loc: user.home,
                t_start: at(day, 21 * 3600),
                t_end: at(day + 1, 7 * 3600),
            });
        }
    }
    events
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
    let limit = (-lambda).exp();
    let mut k = 0;
    let mut product = rng.random_range(0.0..1.0);
    while product > limit {
        k += 1;
        product *= rng.random_range(0.0..1.0);
    }
    k
}

fn emit_pings(
    spec: &SyntheticCitySpec,
    users: &[RawUser],
    events: &[StayEvent],
) -> BTreeMap<String, Vec<Ping>> {
    let mut streams: BTreeMap<String, Vec<Ping>> = BTreeMap::new();
    let mut jitter_rng = rng(sub_seed(spec.seed, "synth.jitter"));
    for event in events {
        let user = &users[event.user];
        let long_stay = event.t_end - event.t_start >= 6 * 3600;
        let interval = if long_stay {
            if is_worktime(event, spec) {
                spec.work_interval_s
            } else {
                spec.night_interval_s
            }
        } else {
            spec.trip_interval_s
        }
        .max(60);
        let stream = streams.entry(user.id.clone()).or_default();
        let mut t = event.t_start;
        while t <= event.t_end {
            let r = if spec.ping_jitter_m > 0.0 {
                jitter_rng.random_range(0.0..spec.ping_jitter_m)
            } else {
                0.0
            };
            let angle = jitter_rng.random_range(0.0..std::f64::consts::TAU);
            let dlat = r * angle.cos() / M_PER_DEG_LAT;
            let dlon = r * angle.sin() / (M_PER_DEG_LAT * event.loc.lat.to_radians().cos());
            stream.push(Ping {
                user_id: user.id.clone(),
                t,
                loc: GeoPoint::new(event.loc.lat + dlat, event.loc.lon + dlon),
                dwell_s: Some(interval as f64),
                speed_mps: Some(0.0),
                poi: None,
                platform: Some(if event.user % 2 == 0 { "ios" } else { "android" }.to_string()),
            });
            t += interval;
        }
    }
    for stream in streams.values_mut() {
        stream.sort_by_key(|p| p.t);
    }
    streams
}

fn is_worktime(event: &StayEvent, spec: &SyntheticCitySpec) -> bool {
    let local = event.t_start + offset_seconds(spec.utc_offset_hours);
    let second_of_day = local.rem_euclid(86_400);
    (8 * 3600..18 * 3600).contains(&second_of_day)
}

/// Plant prices: static part from attributes and own-CBG income, dynamic
/// parts from standardized true weekday traffic and true average visitor
/// income, plus Gaussian noise.
fn price_properties(
    spec: &SyntheticCitySpec,
    frame: &CityFrame,
    properties: &[RawProperty],
    users: &[RawUser],
    events: &[StayEvent],
) -> Result<Vec<PropertyTruth>> {
    let index = GridIndex::build(
        events
            .iter()
            .enumerate()
            .map(|(i, e)| (i as u64, e.loc)),
        0.01,
    )?;
    let city_income_mean = frame.incomes.iter().sum::<f64>() / frame.incomes.len() as f64;

    let mut traffic = Vec::with_capacity(properties.len());
    let mut visitor_income = Vec::with_capacity(properties.len());
    for property in properties {
        let mut weekday_visitors: [std::collections::BTreeSet<usize>; 5] = Default::default();
        for event_id in index.radius_query(property.loc, 500.0)? {
            let event = &events[event_id as usize];
            if haversine_m(users[event.user].home, property.loc) <= 500.0 {
                continue; // resident
            }
            let dow = local_day_of_week(event.t_start, spec.utc_offset_hours);
            if dow <= 4 {
                weekday_visitors[dow as usize].insert(event.user);
            }
        }
        let mean_count = weekday_visitors.iter().map(|s| s.len() as f64).sum::<f64>() / 5.0;
        let distinct: std::collections::BTreeSet<usize> =
            weekday_visitors.iter().flatten().copied().collect();
        let avg_income = if distinct.is_empty() {
            city_income_mean
        } else {
            distinct
                .iter()
                .map(|&u| frame.incomes[users[u].home_cbg])
                .sum::<f64>()
                / distinct.len() as f64
        };
        traffic.push(mean_count);
        visitor_income.push(avg_income);
    }

    let z = |values: &[f64]| -> Vec<f64> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        values
            .iter()
            .map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 })
            .collect()
    };
    let traffic_z = z(&traffic);
    let income_z = z(&visitor_income);

    let mut price_rng = rng(sub_seed(spec.seed, "synth.price"));
    let noise = Normal::new(0.0, spec.price_noise_sd.max(f64::MIN_POSITIVE)).map_err(|e| {
        Error::Config(format!("bad price noise sd {}: {e}", spec.price_noise_sd))
    })?;
    let mut out = Vec::with_capacity(properties.len());
    for (i, property) in properties.iter().enumerate() {
        let cbg_income = frame.incomes[property.cbg];
        let (static_part, t_coef, v_coef) = match property.kind {
            PropertyKind::Commercial => (
                260_000.0 + 25.0 * property.sqft + 8_000.0 * property.baths + 0.7 * cbg_income,
                spec.commercial_traffic_coef,
                spec.commercial_visitor_income_coef,
            ),
            _ => (
                160_000.0
                    + 60.0 * property.sqft
                    + 10_000.0 * property.beds
                    + 12_000.0 * property.baths
                    + 0.6 * cbg_income,
                spec.residential_traffic_coef,
                spec.residential_visitor_income_coef,
            ),
        };
        let traffic_part = t_coef * traffic_z[i];
        let visitor_income_part = v_coef * income_z[i];
        let noise_part = if spec.price_noise_sd > 0.0 {
            noise.sample(&mut price_rng)
        } else {
            0.0
        };
        let price = (static_part + traffic_part + visitor_income_part + noise_part).max(25_000.0);
        out.push(PropertyTruth {
            property_id: property.id.clone(),
            static_part,
            traffic_part,
            visitor_income_part,
            noise_part,
            weekday_traffic: traffic[i],
            avg_visitor_income: visitor_income[i],
            price,
        });
    }
    Ok(out)
}

/// File names written by `write_city`.
pub struct CityFiles {
    pub pings: PathBuf,
    pub polygons: PathBuf,
    pub demographics: PathBuf,
    pub properties: PathBuf,
    pub truth_users: PathBuf,
    pub truth_properties: PathBuf,
}

pub fn write_city(city: &SyntheticCity, dir: &Path) -> Result<CityFiles> {
    std::fs::create_dir_all(dir)?;
    let files = CityFiles {
        pings: dir.join("pings.csv"),
        polygons: dir.join("cbgs.geojson"),
        demographics: dir.join("demographics.csv"),
        properties: dir.join("properties.csv"),
        truth_users: dir.join("truth_users.csv"),
        truth_properties: dir.join("truth_properties.csv"),
    };

    let mut writer = csv::Writer::from_path(&files.pings)?;
    writer.write_record([
        "user_id",
        "t",
        "lat",
        "lon",
        "dwell_s",
        "speed_mps",
        "poi",
        "platform",
    ])?;
    for stream in city.pings.values() {
        for p in stream {
            writer.write_record([
                p.user_id.as_str(),
                &p.t.to_string(),
                &p.loc.lat.to_string(),
                &p.loc.lon.to_string(),
                &p.dwell_s.map_or(String::new(), |v| v.to_string()),
                &p.speed_mps.map_or(String::new(), |v| v.to_string()),
                p.poi.as_deref().unwrap_or(""),
                p.platform.as_deref().unwrap_or(""),
            ])?;
        }
    }
    writer.flush()?;

    crate::geo::write_cbg_polygons(&files.polygons, &city.polygons)?;
    crate::home::write_demographics_csv(&files.demographics, city.demographics.iter().cloned())?;
    crate::features::write_properties_csv(&files.properties, &city.properties)?;

    let mut writer = csv::Writer::from_path(&files.truth_users)?;
    writer.write_record(["user_id", "home_lat", "home_lon", "home_cbg", "worker"])?;
    for u in &city.truth.users {
        writer.write_record([
            u.user_id.as_str(),
            &u.home.lat.to_string(),
            &u.home.lon.to_string(),
            u.home_cbg.as_str(),
            if u.worker { "1" } else { "0" },
        ])?;
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(&files.truth_properties)?;
    writer.write_record([
        "property_id",
        "static_part",
        "traffic_part",
        "visitor_income_part",
        "noise_part",
        "weekday_traffic",
        "avg_visitor_income",
        "price",
    ])?;
    for t in &city.truth.properties {
        writer.write_record([
            t.property_id.as_str(),
            &t.static_part.to_string(),
            &t.traffic_part.to_string(),
            &t.visitor_income_part.to_string(),
            &t.noise_part.to_string(),
            &t.weekday_traffic.to_string(),
            &t.avg_visitor_income.to_string(),
            &t.price.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(files)
}

pub fn read_truth_users(path: &Path) -> Result<Vec<UserTruth>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::Data(format!("cannot open truth file {}: {e}", path.display()))
    })?;
    let mut users = Vec::new();
    for record in reader.records() {
        let record = record?;
        users.push(UserTruth {
            user_id: record[0].to_string(),
            home: GeoPoint::new(
                record[1].parse().map_err(|e| Error::Data(format!("bad lat: {e}")))?,
                record[2].parse().map_err(|e| Error::Data(format!("bad lon: {e}")))?,
            ),
            home_cbg: record[3].to_string(),
            worker: &record[4] == "1",
        });
    }
    Ok(users)
}
