//! Geometric primitives: points, census block-group polygons, great-circle
//! distance, and point-in-polygon assignment.
//!
//! Distances use a spherical earth (R = 6,371,000 m). At metro scale the
//! error vs. an ellipsoid is well under 0.5%, which is immaterial against a
//! 500 m aggregation radius.

mod geojson;
mod grid;

pub use geojson::{load_cbg_polygons, write_cbg_polygons};
pub use grid::GridIndex;

use crate::error::{Error, Result};

/// Mean earth radius in meters for the spherical distance model.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters per degree of latitude on the sphere (pi * R / 180).
pub const M_PER_DEG_LAT: f64 = std::f64::consts::PI * EARTH_RADIUS_M / 180.0;

/// A WGS-84 style latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }

    /// Constructor for parse-time use: rejects non-finite or out-of-range
    /// coordinates.
    pub fn validated(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::Geometry(format!(
                "non-finite coordinate ({lat}, {lon})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Geometry(format!(
                "coordinate out of range ({lat}, {lon})"
            )));
        }
        Ok(GeoPoint { lat, lon })
    }
}

/// Great-circle distance in meters between two points (haversine formula).
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();

    let h = (dlat * 0.5).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon * 0.5).sin().powi(2);
    let c = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    EARTH_RADIUS_M * c
}

/// One census block group polygon: an outer ring plus optional hole rings.
/// Rings are closed (first vertex repeated last). A MultiPolygon feature is
/// loaded as several `CbgPolygon`s sharing one id.
#[derive(Debug, Clone)]
pub struct CbgPolygon {
    pub cbg_id: String,
    pub outer: Vec<GeoPoint>,
    pub holes: Vec<Vec<GeoPoint>>,
}

impl CbgPolygon {
    /// Validates ring closure, vertex counts, non-zero area, and that the
    /// outer ring does not self-intersect (pairwise check; inputs are
    /// desk-scale).
    pub fn new(cbg_id: String, outer: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>>) -> Result<Self> {
        validate_ring(&cbg_id, &outer)?;
        if ring_area(&outer) == 0.0 {
            return Err(Error::Geometry(format!(
                "cbg {cbg_id}: outer ring has zero area"
            )));
        }
        if let Some((i, j)) = find_self_intersection(&outer) {
            return Err(Error::Geometry(format!(
                "cbg {cbg_id}: outer ring self-intersects (edges {i} and {j})"
            )));
        }
        for hole in &holes {
            validate_ring(&cbg_id, hole)?;
        }
        Ok(CbgPolygon {
            cbg_id,
            outer,
            holes,
        })
    }

    /// Even-odd containment over all rings. Points exactly on any edge or
    /// vertex count as inside; holes subtract.
    pub fn contains(&self, p: GeoPoint) -> bool {
        if on_ring_boundary(&self.outer, p) || self.holes.iter().any(|h| on_ring_boundary(h, p)) {
            return true;
        }
        let mut crossings = ray_crossings(&self.outer, p);
        for hole in &self.holes {
            crossings += ray_crossings(hole, p);
        }
        crossings % 2 == 1
    }
}

fn validate_ring(id: &str, ring: &[GeoPoint]) -> Result<()> {
    if ring.len() < 4 {
        return Err(Error::Geometry(format!(
            "cbg {id}: ring has {} vertices, need at least 4 including the closing repeat",
            ring.len()
        )));
    }
    let first = ring[0];
    let last = ring[ring.len() - 1];
    if first != last {
        return Err(Error::Geometry(format!("cbg {id}: ring is not closed")));
    }
    Ok(())
}

/// Signed shoelace area of a closed ring in the lon/lat plane.
fn ring_area(ring: &[GeoPoint]) -> f64 {
    let mut acc = 0.0;
    for w in ring.windows(2) {
        acc += w[0].lon * w[1].lat - w[1].lon * w[0].lat;
    }
    acc * 0.5
}

fn orientation(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn on_segment(a: GeoPoint, b: GeoPoint, p: GeoPoint) -> bool {
    orientation(a, b, p) == 0.0
        && p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

fn segments_intersect(a: GeoPoint, b: GeoPoint, c: GeoPoint, d: GeoPoint) -> bool {
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Pairwise check of non-adjacent edges of a closed ring.
fn find_self_intersection(ring: &[GeoPoint]) -> Option<(usize, usize)> {
    let n = ring.len() - 1; // edge count
    for i in 0..n {
        for j in (i + 2)..n {
            // skip the wrap-around adjacency between the last and first edge
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Number of ring edges crossed by the horizontal ray from `p` toward +lon.
fn ray_crossings(ring: &[GeoPoint], p: GeoPoint) -> usize {
    let mut crossings = 0;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                crossings += 1;
            }
        }
    }
    crossings
}

fn on_ring_boundary(ring: &[GeoPoint], p: GeoPoint) -> bool {
    ring.windows(2).any(|w| on_segment(w[0], w[1], p))
}

/// Id of the first polygon (in stable load order) containing `p`, or `None`.
/// "None" is a value: consumers decide how to treat unassigned points.
pub fn assign_cbg(p: GeoPoint, polygons: &[CbgPolygon]) -> Option<&str> {
    polygons
        .iter()
        .find(|poly| poly.contains(p))
        .map(|poly| poly.cbg_id.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dc() -> GeoPoint {
        GeoPoint::new(38.9072, -77.0369)
    }

    /// Independent great-circle route: spherical law of cosines.
    fn law_of_cosines_m(a: GeoPoint, b: GeoPoint) -> f64 {
        let lat1 = a.lat.to_radians();
        let lat2 = b.lat.to_radians();
        let dlon = (b.lon - a.lon).to_radians();
        let cos_c = lat1.sin() * lat2.sin() + lat1.cos() * lat2.cos() * dlon.cos();
        EARTH_RADIUS_M * cos_c.clamp(-1.0, 1.0).acos()
    }

    fn unit_square(id: &str) -> CbgPolygon {
        CbgPolygon::new(
            id.to_string(),
            vec![
                GeoPoint::new(0.0, 0.0),
                GeoPoint::new(0.0, 1.0),
                GeoPoint::new(1.0, 1.0),
                GeoPoint::new(1.0, 0.0),
                GeoPoint::new(0.0, 0.0),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn haversine_identity_is_zero() {
        assert_eq!(haversine_m(dc(), dc()), 0.0);
    }

    #[test]
    fn haversine_equator_degree() {
        let d = haversine_m(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 1.0));
        assert!((d - 111_194.93).abs() <= 0.01, "got {d}");
    }

    #[test]
    fn haversine_matches_law_of_cosines_in_dc() {
        let a = dc();
        let b = GeoPoint::new(38.8816, -77.0910);
        let h = haversine_m(a, b);
        let o = law_of_cosines_m(a, b);
        assert!((h - o).abs() / o < 0.001, "haversine {h} vs oracle {o}");
    }

    #[test]
    fn point_in_unit_square() {
        let sq = unit_square("x");
        assert!(sq.contains(GeoPoint::new(0.5, 0.5)));
        assert!(!sq.contains(GeoPoint::new(0.5, 2.0)));
        // boundary convention: vertex and edge points are inside
        assert!(sq.contains(GeoPoint::new(0.0, 0.0)));
        assert!(sq.contains(GeoPoint::new(0.0, 0.5)));
        assert!(sq.contains(GeoPoint::new(0.5, 1.0)));
    }

    #[test]
    fn hole_subtracts_but_hole_edge_is_inside() {
        let outer = vec![
            GeoPoint::new(0.0, 0.0),
            GeoPoint::new(0.0, 4.0),
            GeoPoint::new(4.0, 4.0),
            GeoPoint::new(4.0, 0.0),
            GeoPoint::new(0.0, 0.0),
        ];
        let hole = vec![
            GeoPoint::new(1.0, 1.0),
            GeoPoint::new(1.0, 2.0),
            GeoPoint::new(2.0, 2.0),
            GeoPoint::new(2.0, 1.0),
            GeoPoint::new(1.0, 1.0),
        ];
        let poly = CbgPolygon::new("h".into(), outer, vec![hole]).unwrap();
        assert!(!poly.contains(GeoPoint::new(1.5, 1.5)));
        assert!(poly.contains(GeoPoint::new(1.0, 1.5)));
        assert!(poly.contains(GeoPoint::new(3.0, 3.0)));
    }

    #[test]
    fn degenerate_and_self_intersecting_rings_rejected() {
        let line = vec![
            GeoPoint::new(0.0, 0.0),
            GeoPoint::new(0.0, 1.0),
            GeoPoint::new(0.0, 2.0),
            GeoPoint::new(0.0, 0.0),
        ];
        assert!(CbgPolygon::new("z".into(), line, vec![]).is_err());

        let bowtie = vec![
            GeoPoint::new(0.0, 0.0),
            GeoPoint::new(1.0, 1.0),
            GeoPoint::new(1.0, 0.0),
            GeoPoint::new(0.0, 1.0),
            GeoPoint::new(0.0, 0.0),
        ];
        assert!(CbgPolygon::new("b".into(), bowtie, vec![]).is_err());

        let open = vec![
            GeoPoint::new(0.0, 0.0),
            GeoPoint::new(0.0, 1.0),
            GeoPoint::new(1.0, 1.0),
            GeoPoint::new(1.0, 0.0),
        ];
        assert!(CbgPolygon::new("o".into(), open, vec![]).is_err());
    }

    #[test]
    fn assign_cbg_first_match_and_none() {
        let polys = vec![unit_square("a"), unit_square("b")];
        assert_eq!(assign_cbg(GeoPoint::new(0.5, 0.5), &polys), Some("a"));
        assert_eq!(assign_cbg(GeoPoint::new(5.0, 5.0), &polys), None);
    }

    #[test]
    fn assign_cbg_matches_independent_scan() {
        // Oracle route: containment in an axis-aligned box via interval checks.
        let mut polys = Vec::new();
        for i in 0..5 {
            let lat0 = i as f64;
            polys.push(
                CbgPolygon::new(
                    format!("cbg{i}"),
                    vec![
                        GeoPoint::new(lat0, 0.0),
                        GeoPoint::new(lat0, 1.0),
                        GeoPoint::new(lat0 + 1.0, 1.0),
                        GeoPoint::new(lat0 + 1.0, 0.0),
                        GeoPoint::new(lat0, 0.0),
                    ],
                    vec![],
                )
                .unwrap(),
            );
        }
        let mut rng = crate::rng::rng(7);
        use rand::Rng;
        for _ in 0..500 {
            let p = GeoPoint::new(rng.random_range(-1.0..7.0), rng.random_range(-1.0..2.0));
            let got = assign_cbg(p, &polys).map(str::to_string);
            let want = polys
                .iter()
                .find(|poly| {
                    let lat0 = poly.outer[0].lat;
                    p.lat >= lat0 && p.lat <= lat0 + 1.0 && p.lon >= 0.0 && p.lon <= 1.0
                })
                .map(|poly| poly.cbg_id.clone());
            assert_eq!(got, want, "at ({}, {})", p.lat, p.lon);
        }
    }

    proptest! {
        #[test]
        fn haversine_symmetric(lat1 in -85.0f64..85.0, lon1 in -179.0f64..179.0,
                               lat2 in -85.0f64..85.0, lon2 in -179.0f64..179.0) {
            let a = GeoPoint::new(lat1, lon1);
            let b = GeoPoint::new(lat2, lon2);
            prop_assert_eq!(haversine_m(a, b), haversine_m(b, a));
        }

        #[test]
        fn haversine_triangle_inequality(lat1 in -60.0f64..60.0, lon1 in -170.0f64..170.0,
                                         lat2 in -60.0f64..60.0, lon2 in -170.0f64..170.0,
                                         lat3 in -60.0f64..60.0, lon3 in -170.0f64..170.0) {
            let a = GeoPoint::new(lat1, lon1);
            let b = GeoPoint::new(lat2, lon2);
            let c = GeoPoint::new(lat3, lon3);
            let ab = haversine_m(a, b);
            let bc = haversine_m(b, c);
            let ac = haversine_m(a, c);
            prop_assert!(ac <= ab + bc + 1e-6 * (ab + bc + 1.0));
        }

        #[test]
        fn convex_polygon_matches_half_plane_oracle(lat in -2.0f64..4.0, lon in -2.0f64..4.0) {
            // Convex quad; oracle = intersection of half-planes with boundary inclusive.
            let verts = [
                GeoPoint::new(0.0, 0.0),
                GeoPoint::new(0.5, 2.0),
                GeoPoint::new(2.0, 2.5),
                GeoPoint::new(2.5, 0.5),
            ];
            let mut ring: Vec<GeoPoint> = verts.to_vec();
            ring.push(verts[0]);
            let poly = CbgPolygon::new("q".into(), ring, vec![]).unwrap();
            let p = GeoPoint::new(lat, lon);
            // counter-clockwise in (lon, lat)? orientation of consecutive edges decides sign
            let mut inside = true;
            for i in 0..4 {
                let a = verts[i];
                let b = verts[(i + 1) % 4];
                if orientation(a, b, p) < 0.0 {
                    inside = false;
                }
            }
            prop_assert_eq!(poly.contains(p), inside);
        }
    }
}
