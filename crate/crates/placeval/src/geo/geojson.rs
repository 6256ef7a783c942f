//! GeoJSON FeatureCollection loading for census block-group polygons.
//!
//! Each feature must carry a string property `cbg_id` and a Polygon or
//! MultiPolygon geometry; a MultiPolygon becomes several polygons sharing
//! one id. Coordinates are GeoJSON order: [lon, lat].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{CbgPolygon, GeoPoint};

#[derive(Debug, Serialize, Deserialize)]
struct FeatureCollection {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<Feature>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Feature {
    #[serde(rename = "type")]
    kind: String,
    properties: Properties,
    geometry: Geometry,
}

#[derive(Debug, Serialize, Deserialize)]
struct Properties {
    cbg_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type")]
enum Geometry {
    Polygon { coordinates: Vec<Vec<[f64; 2]>> },
    MultiPolygon { coordinates: Vec<Vec<Vec<[f64; 2]>>> },
}

fn ring_points(raw: &[[f64; 2]]) -> Result<Vec<GeoPoint>> {
    raw.iter()
        .map(|&[lon, lat]| GeoPoint::validated(lat, lon))
        .collect()
}

fn polygon_from_rings(id: &str, rings: &[Vec<[f64; 2]>]) -> Result<CbgPolygon> {
    let mut iter = rings.iter();
    let outer = iter
        .next()
        .ok_or_else(|| Error::Geometry(format!("cbg {id}: polygon has no rings")))?;
    let holes = iter.map(|r| ring_points(r)).collect::<Result<Vec<_>>>()?;
    CbgPolygon::new(id.to_string(), ring_points(outer)?, holes)
}

/// Load and validate every polygon from a GeoJSON file, preserving file
/// order (assignment order is load order).
pub fn load_cbg_polygons(path: &Path) -> Result<Vec<CbgPolygon>> {
    let text = fs::read_to_string(path)?;
    let fc: FeatureCollection = serde_json::from_str(&text)?;
    if fc.kind != "FeatureCollection" {
        return Err(Error::Data(format!(
            "{}: expected a FeatureCollection, got {}",
            path.display(),
            fc.kind
        )));
    }
    let mut polygons = Vec::new();
    for feature in &fc.features {
        let id = &feature.properties.cbg_id;
        match &feature.geometry {
            Geometry::Polygon { coordinates } => polygons.push(polygon_from_rings(id, coordinates)?),
            Geometry::MultiPolygon { coordinates } => {
                for rings in coordinates {
                    polygons.push(polygon_from_rings(id, rings)?);
                }
            }
        }
    }
    Ok(polygons)
}

/// Write polygons as a FeatureCollection, one Polygon feature each.
pub fn write_cbg_polygons(path: &Path, polygons: &[CbgPolygon]) -> Result<()> {
    let features = polygons
        .iter()
        .map(|p| {
            let mut rings = Vec::with_capacity(1 + p.holes.len());
            rings.push(p.outer.iter().map(|g| [g.lon, g.lat]).collect());
            for hole in &p.holes {
                rings.push(hole.iter().map(|g| [g.lon, g.lat]).collect());
            }
            Feature {
                kind: "Feature".to_string(),
                properties: Properties {
                    cbg_id: p.cbg_id.clone(),
                },
                geometry: Geometry::Polygon { coordinates: rings },
            }
        })
        .collect();
    let fc = FeatureCollection {
        kind: "FeatureCollection".to_string(),
        features,
    };
    fs::write(path, serde_json::to_string_pretty(&fc)?)?;
    Ok(())
}
