//! Uniform lat/lon grid index for exact radius queries.
//!
//! Candidate cells are every cell intersecting the bounding box of the query
//! circle; candidates then pass an exact haversine filter, so results are
//! identical to a brute-force scan. The index is immutable after build and
//! safe for concurrent read-only queries.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geo::{haversine_m, GeoPoint, EARTH_RADIUS_M, M_PER_DEG_LAT};

/// Inputs are restricted to |lat| <= this bound; keeps the longitude extent
/// of a query circle finite.
const MAX_ABS_LAT: f64 = 85.0;

#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_size_deg: f64,
    cells: HashMap<(i64, i64), Vec<(u64, GeoPoint)>>,
    len: usize,
}

impl GridIndex {
    /// Build an index over `(id, point)` pairs. Every point lands in exactly
    /// one cell.
    pub fn build(points: impl IntoIterator<Item = (u64, GeoPoint)>, cell_size_deg: f64) -> Result<Self> {
        if !(cell_size_deg > 0.0) || !cell_size_deg.is_finite() {
            return Err(Error::Config(format!(
                "grid cell size must be positive, got {cell_size_deg}"
            )));
        }
        let mut cells: HashMap<(i64, i64), Vec<(u64, GeoPoint)>> = HashMap::new();
        let mut len = 0;
        for (id, p) in points {
            if p.lat.abs() > MAX_ABS_LAT || p.lon <= -180.0 || p.lon >= 180.0 {
                return Err(Error::Geometry(format!(
                    "point {id} at ({}, {}) outside the supported index domain (|lat| <= {MAX_ABS_LAT}, lon in (-180, 180))",
                    p.lat, p.lon
                )));
            }
            cells.entry(cell_of(p, cell_size_deg)).or_default().push((id, p));
            len += 1;
        }
        Ok(GridIndex {
            cell_size_deg,
            cells,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Ids of all indexed points within `r_m` meters of `center` (boundary
    /// inclusive), sorted ascending. Queries whose bounding box would cross
    /// the antimeridian or a pole are rejected; the study-area domain keeps
    /// real queries far from both.
    pub fn radius_query(&self, center: GeoPoint, r_m: f64) -> Result<Vec<u64>> {
        if !(r_m >= 0.0) {
            return Err(Error::Config(format!("query radius must be >= 0, got {r_m}")));
        }
        let dlat = r_m / M_PER_DEG_LAT;
        let lat_lo = center.lat - dlat;
        let lat_hi = center.lat + dlat;
        if lat_lo < -90.0 || lat_hi > 90.0 {
            return Err(Error::Geometry(format!(
                "radius query at ({}, {}) with r = {r_m} m crosses a pole",
                center.lat, center.lon
            )));
        }
        let dlon = dlon_bound_deg(center.lat, dlat, r_m);
        let lon_lo = center.lon - dlon;
        let lon_hi = center.lon + dlon;
        if lon_lo <= -180.0 || lon_hi >= 180.0 {
            return Err(Error::Geometry(format!(
                "radius query at ({}, {}) with r = {r_m} m crosses the antimeridian",
                center.lat, center.lon
            )));
        }

        let s = self.cell_size_deg;
        let (row_lo, row_hi) = (div_floor(lat_lo, s), div_floor(lat_hi, s));
        let (col_lo, col_hi) = (div_floor(lon_lo, s), div_floor(lon_hi, s));

        let mut ids = Vec::new();
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                if let Some(points) = self.cells.get(&(row, col)) {
                    for &(id, p) in points {
                        if haversine_m(p, center) <= r_m {
                            ids.push(id);
                        }
                    }
                }
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }
}

fn cell_of(p: GeoPoint, cell_size_deg: f64) -> (i64, i64) {
    (div_floor(p.lat, cell_size_deg), div_floor(p.lon, cell_size_deg))
}

fn div_floor(v: f64, step: f64) -> i64 {
    (v / step).floor() as i64
}

/// Longitude half-extent (degrees) of the circle of radius `r_m` around a
/// center at `center_lat`, covering every latitude the circle can reach.
/// From the haversine identity, points within distance r satisfy
/// sin^2(dlon/2) <= sin^2(r/2R) / (cos(lat1) cos(lat2)).
fn dlon_bound_deg(center_lat: f64, dlat_deg: f64, r_m: f64) -> f64 {
    if r_m == 0.0 {
        return 0.0;
    }
    let worst_lat = (center_lat.abs() + dlat_deg).min(89.9999);
    let denom = center_lat.to_radians().cos() * worst_lat.to_radians().cos();
    if denom <= 0.0 {
        return 180.0; // degenerate; caught by the antimeridian check
    }
    let s = (r_m / (2.0 * EARTH_RADIUS_M)).sin() / denom.sqrt();
    let half = s.clamp(-1.0, 1.0).asin();
    (2.0 * half).to_degrees() * (1.0 + 1e-12) + f64::EPSILON
}
