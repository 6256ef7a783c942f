//! Raw ping ingestion and stop compression.
//!
//! A device stream is compressed into stops: a stop is opened at the first
//! unassigned ping (the anchor) and a later ping joins while it stays within
//! `r_stop_m` of the anchor and within `max_gap_s` of the previous member.
//! A cluster is emitted as a stop when it spans at least
//! `min_stop_duration_s` and holds at least two pings, so every stop has a
//! provable diameter of at most twice the stop radius.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_m, GeoPoint};

/// One raw location observation of one anonymous device.
#[derive(Debug, Clone)]
pub struct Ping {
    pub user_id: String,
    pub t: i64,
    pub loc: GeoPoint,
    pub dwell_s: Option<f64>,
    pub speed_mps: Option<f64>,
    pub poi: Option<String>,
    pub platform: Option<String>,
}

/// A compressed stationary interval for one user. `anchor` is the first ping
/// of the cluster, `centroid` the arithmetic mean of member coordinates;
/// which one downstream consumers prefer is their call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stop {
    pub user_id: String,
    pub anchor_lat: f64,
    pub anchor_lon: f64,
    pub centroid_lat: f64,
    pub centroid_lon: f64,
    pub t_start: i64,
    pub t_end: i64,
    pub n_pings: u32,
    pub dow: u8,
}

impl Stop {
    pub fn anchor(&self) -> GeoPoint {
        GeoPoint::new(self.anchor_lat, self.anchor_lon)
    }

    pub fn centroid(&self) -> GeoPoint {
        GeoPoint::new(self.centroid_lat, self.centroid_lon)
    }

    pub fn span_s(&self) -> i64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StopParams {
    pub r_stop_m: f64,
    pub min_stop_duration_s: i64,
    pub max_gap_s: i64,
    pub utc_offset_hours: f64,
}

impl Default for StopParams {
    fn default() -> Self {
        StopParams {
            r_stop_m: 50.0,
            min_stop_duration_s: 300,
            max_gap_s: 43_200,
            utc_offset_hours: -5.0,
        }
    }
}

/// Ingestion summary. Unparseable rows are fatal past the 10% threshold;
/// rows with out-of-range coordinates or timestamps are always skipped and
/// counted, never fatal.
#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub users: usize,
    pub rows_ok: usize,
    pub rows_malformed: usize,
    pub rows_out_of_range: usize,
}

impl ParseReport {
    pub fn rows_skipped(&self) -> usize {
        self.rows_malformed + self.rows_out_of_range
    }
}

const PING_HEADER: [&str; 8] = [
    "user_id",
    "t",
    "lat",
    "lon",
    "dwell_s",
    "speed_mps",
    "poi",
    "platform",
];

#[derive(Debug, Deserialize)]
struct PingRow {
    user_id: String,
    t: i64,
    lat: f64,
    lon: f64,
    dwell_s: Option<f64>,
    speed_mps: Option<f64>,
    poi: Option<String>,
    platform: Option<String>,
}

/// Parse a ping CSV into per-user streams sorted by timestamp (ties keep
/// file order). More than 10% malformed rows is fatal.
pub fn parse_pings<R: Read>(reader: R) -> Result<(BTreeMap<String, Vec<Ping>>, ParseReport)> {
    let mut csv_reader = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    {
        let headers = csv_reader.headers()?;
        if headers.iter().ne(PING_HEADER) {
            return Err(Error::Data(format!(
                "ping file header mismatch: expected {:?}, got {:?}",
                PING_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }

    let mut streams: BTreeMap<String, Vec<Ping>> = BTreeMap::new();
    let mut report = ParseReport::default();
    for record in csv_reader.deserialize::<PingRow>() {
        let row = match record {
            Ok(row) => row,
            Err(_) => {
                report.rows_malformed += 1;
                continue;
            }
        };
        let loc = match GeoPoint::validated(row.lat, row.lon) {
            Ok(loc) => loc,
            Err(_) => {
                report.rows_out_of_range += 1;
                continue;
            }
        };
        if row.t <= 0 {
            report.rows_out_of_range += 1;
            continue;
        }
        report.rows_ok += 1;
        streams.entry(row.user_id.clone()).or_default().push(Ping {
            user_id: row.user_id,
            t: row.t,
            loc,
            dwell_s: row.dwell_s,
            speed_mps: row.speed_mps,
            poi: row.poi.filter(|s| !s.is_empty()),
            platform: row.platform.filter(|s| !s.is_empty()),
        });
    }

    let total = report.rows_ok + report.rows_skipped();
    if total > 0 && report.rows_malformed * 10 > total {
        return Err(Error::Data(format!(
            "{} of {} ping rows malformed (over the 10% threshold)",
            report.rows_malformed, total
        )));
    }
    for stream in streams.values_mut() {
        stream.sort_by_key(|p| p.t); // stable: file order breaks ties
    }
    report.users = streams.len();
    Ok((streams, report))
}

pub fn parse_pings_file(path: &Path) -> Result<(BTreeMap<String, Vec<Ping>>, ParseReport)> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Data(format!("cannot open ping file {}: {e}", path.display()))
    })?;
    parse_pings(std::io::BufReader::new(file))
}

/// Day of week of `t` shifted by a fixed UTC offset, Monday = 0 .. Sunday = 6.
/// No DST: the pipeline uses one standard offset for the whole study window.
pub fn local_day_of_week(t: i64, utc_offset_hours: f64) -> u8 {
    (local_day_index(t, utc_offset_hours) + 3).rem_euclid(7) as u8
}

/// Local calendar day as days since the epoch (1970-01-01 was a Thursday).
pub fn local_day_index(t: i64, utc_offset_hours: f64) -> i64 {
    (t + offset_seconds(utc_offset_hours)).div_euclid(86_400)
}

pub fn offset_seconds(utc_offset_hours: f64) -> i64 {
    (utc_offset_hours * 3600.0).round() as i64
}

/// Compress one user's time-sorted ping stream into stops.
pub fn detect_stops(pings: &[Ping], params: &StopParams) -> Vec<Stop> {
    let mut stops = Vec::new();
    let mut cluster: Vec<&Ping> = Vec::new();
    for ping in pings {
        if let (Some(anchor), Some(last)) = (cluster.first(), cluster.last()) {
            let near = haversine_m(ping.loc, anchor.loc) <= params.r_stop_m;
            let contiguous = ping.t - last.t <= params.max_gap_s;
            if near && contiguous {
                cluster.push(ping);
                continue;
            }
            emit_stop(&cluster, params, &mut stops);
            cluster.clear();
        }
        cluster.push(ping);
    }
    emit_stop(&cluster, params, &mut stops);
    stops
}

fn emit_stop(cluster: &[&Ping], params: &StopParams, out: &mut Vec<Stop>) {
    if cluster.len() < 2 {
        return;
    }
    let t_start = cluster[0].t;
    let t_end = cluster[cluster.len() - 1].t;
    if t_end - t_start < params.min_stop_duration_s {
        return;
    }
    let n = cluster.len() as f64;
    let centroid_lat = cluster.iter().map(|p| p.loc.lat).sum::<f64>() / n;
    let centroid_lon = cluster.iter().map(|p| p.loc.lon).sum::<f64>() / n;
    out.push(Stop {
        user_id: cluster[0].user_id.clone(),
        anchor_lat: cluster[0].loc.lat,
        anchor_lon: cluster[0].loc.lon,
        centroid_lat,
        centroid_lon,
        t_start,
        t_end,
        n_pings: cluster.len() as u32,
        dow: local_day_of_week(t_start, params.utc_offset_hours),
    });
}

/// Stop detection across users. Streams are independent, so this is
/// embarrassingly parallel; output order (user, then time) is fixed.
pub fn detect_stops_all(streams: &BTreeMap<String, Vec<Ping>>, params: &StopParams) -> Vec<Stop> {
    streams
        .par_iter()
        .map(|(_, pings)| detect_stops(pings, params))
        .flatten()
        .collect()
}

/// Persist stops for pipeline restart. Column order is part of the format.
pub fn write_stops_csv(path: &Path, stops: &[Stop]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "user_id",
        "anchor_lat",
        "anchor_lon",
        "centroid_lat",
        "centroid_lon",
        "t_start",
        "t_end",
        "n_pings",
        "dow",
    ])?;
    for s in stops {
        writer.write_record([
            s.user_id.as_str(),
            &s.anchor_lat.to_string(),
            &s.anchor_lon.to_string(),
            &s.centroid_lat.to_string(),
            &s.centroid_lon.to_string(),
            &s.t_start.to_string(),
            &s.t_end.to_string(),
            &s.n_pings.to_string(),
            &s.dow.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_stops_csv(path: &Path) -> Result<Vec<Stop>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::Data(format!("cannot open stops file {}: {e}", path.display()))
    })?;
    let mut stops = Vec::new();
    for record in reader.deserialize::<Stop>() {
        stops.push(record?);
    }
    Ok(stops)
}
