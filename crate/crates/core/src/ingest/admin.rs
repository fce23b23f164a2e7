//! Administrative polygons (IRIS, commune, or custom layers) from GeoJSON.
//!
//! Features carry `unit_id` and `level` properties; geometry may be Polygon
//! or MultiPolygon in WGS84 lon/lat. Rings are projected into planar meters
//! with the registry's projection so overlap areas are comparable with the
//! tower tessellation. Invalid features reject with reasons; they never
//! abort the parse.

use std::collections::HashSet;
use std::io::Read;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::geom::crosswalk::NamedSurface;
use crate::geom::polygon::{ring_is_simple, signed_area, Pt};
use crate::ingest::reject::{RejectLog, RejectReason};
use crate::proj::Projection;

/// One admin unit: a MultiPolygon in planar meters.
/// `parts[i][0]` is an outer ring; later rings in a part are holes.
#[derive(Debug, Clone)]
pub struct AdminGeometry {
    pub unit_id: String,
    pub level: String,
    pub parts: Vec<Vec<Vec<Pt>>>,
}

impl AdminGeometry {
    pub fn surface(&self) -> Result<NamedSurface> {
        NamedSurface::from_parts(self.unit_id.clone(), &self.parts)
    }
}

/// Surfaces for every unit of one level, sorted by unit id.
pub fn surfaces_of_level(units: &[AdminGeometry], level: &str) -> Result<Vec<NamedSurface>> {
    let mut out: Vec<NamedSurface> = units
        .iter()
        .filter(|u| u.level == level)
        .map(|u| u.surface())
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

pub fn levels_present(units: &[AdminGeometry]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for u in units {
        if !seen.contains(&u.level) {
            seen.push(u.level.clone());
        }
    }
    seen
}

/// Parse a GeoJSON FeatureCollection of admin units.
pub fn parse_admin<R: Read>(
    mut reader: R,
    projection: &Projection,
) -> Result<(Vec<AdminGeometry>, RejectLog)> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::io("<admin stream>", e))?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("admin GeoJSON: {e}")))?;

    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Config("admin GeoJSON: no features array".into()))?;

    let mut rejects = RejectLog::new();
    let mut units = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();

    for (i, feature) in features.iter().enumerate() {
        let fno = (i + 1) as u64;
        let props = feature.get("properties").cloned().unwrap_or(Value::Null);
        let unit_id = props
            .get("unit_id")
            .and_then(Value::as_str)
            .map(str::to_string);
        let level = props
            .get("level")
            .and_then(Value::as_str)
            .map(str::to_string);
        let (unit_id, level) = match (unit_id, level) {
            (Some(u), Some(l)) if !u.is_empty() && !l.is_empty() => (u, l),
            _ => {
                rejects.push(fno, RejectReason::MissingProperty, format!("feature {fno}"));
                continue;
            }
        };
        if !seen.insert((level.clone(), unit_id.clone())) {
            rejects.push(fno, RejectReason::DuplicateUnit, unit_id);
            continue;
        }

        let geometry = feature.get("geometry").cloned().unwrap_or(Value::Null);
        let gtype = geometry.get("type").and_then(Value::as_str).unwrap_or("");
        let coords = geometry.get("coordinates").cloned().unwrap_or(Value::Null);
        let raw_parts: Vec<Value> = match gtype {
            "Polygon" => vec![coords],
            "MultiPolygon" => coords.as_array().cloned().unwrap_or_default(),
            _ => {
                rejects.push(fno, RejectReason::BadGeometry, unit_id);
                continue;
            }
        };

        match parse_parts(&raw_parts, projection) {
            Ok(parts) if !parts.is_empty() => units.push(AdminGeometry {
                unit_id,
                level,
                parts,
            }),
            Ok(_) => rejects.push(fno, RejectReason::BadGeometry, unit_id),
            Err(reason) => rejects.push(fno, reason, unit_id),
        }
    }

    Ok((units, rejects))
}

fn parse_parts(
    raw_parts: &[Value],
    projection: &Projection,
) -> std::result::Result<Vec<Vec<Vec<Pt>>>, RejectReason> {
    let mut parts = Vec::new();
    for part in raw_parts {
        let rings_raw = part.as_array().ok_or(RejectReason::BadGeometry)?;
        let mut rings = Vec::new();
        for ring_raw in rings_raw {
            let positions = ring_raw.as_array().ok_or(RejectReason::BadGeometry)?;
            if positions.len() < 4 {
                return Err(RejectReason::BadGeometry);
            }
            let mut pts = Vec::with_capacity(positions.len());
            for pos in positions {
                let xy = pos.as_array().ok_or(RejectReason::BadGeometry)?;
                if xy.len() < 2 {
                    return Err(RejectReason::BadGeometry);
                }
                let lon = xy[0].as_f64().ok_or(RejectReason::BadGeometry)?;
                let lat = xy[1].as_f64().ok_or(RejectReason::BadGeometry)?;
                if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
                    return Err(RejectReason::BadCoordinate);
                }
                let (x, y) = projection.forward(lon, lat);
                pts.push(Pt::new(x, y));
            }
            // GeoJSON rings repeat the first position; require and strip it.
            if pts.first() != pts.last() {
                return Err(RejectReason::UnclosedRing);
            }
            pts.pop();
            if pts.len() < 3 || signed_area(&pts).abs() <= 0.0 {
                return Err(RejectReason::BadGeometry);
            }
            if !ring_is_simple(&pts) {
                return Err(RejectReason::SelfIntersection);
            }
            rings.push(pts);
        }
        if rings.is_empty() {
            return Err(RejectReason::BadGeometry);
        }
        parts.push(rings);
    }
    Ok(parts)
}

/// Serialize admin units back to GeoJSON (inverse-projected to lon/lat).
pub fn admin_to_geojson(units: &[AdminGeometry], projection: &Projection) -> Value {
    let features: Vec<Value> = units
        .iter()
        .map(|u| {
            let parts: Vec<Value> = u
                .parts
                .iter()
                .map(|rings| {
                    let rings_json: Vec<Value> = rings
                        .iter()
                        .map(|ring| {
                            let mut positions: Vec<Value> = ring
                                .iter()
                                .map(|p| {
                                    let (lon, lat) = projection.inverse(p.x, p.y);
                                    serde_json::json!([lon, lat])
                                })
                                .collect();
                            if let Some(first) = positions.first().cloned() {
                                positions.push(first);
                            }
                            Value::Array(positions)
                        })
                        .collect();
                    Value::Array(rings_json)
                })
                .collect();
            serde_json::json!({
                "type": "Feature",
                "properties": { "unit_id": u.unit_id, "level": u.level },
                "geometry": { "type": "MultiPolygon", "coordinates": parts },
            })
        })
        .collect();
    serde_json::json!({ "type": "FeatureCollection", "features": features })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proj() -> Projection {
        Projection::new(2.0, 47.0)
    }

    fn feature_collection(features: &str) -> String {
        format!(r#"{{"type":"FeatureCollection","features":[{features}]}}"#)
    }

    fn square_feature(unit: &str, level: &str, closed: bool) -> String {
        let last = if closed { r#",[2.0,47.0]"# } else { "" };
        format!(
            r#"{{"type":"Feature","properties":{{"unit_id":"{unit}","level":"{level}"}},
              "geometry":{{"type":"Polygon","coordinates":[[[2.0,47.0],[2.1,47.0],[2.1,47.1],[2.0,47.1]{last}]]}}}}"#
        )
    }

    #[test]
    fn parses_valid_polygon_feature() {
        let text = feature_collection(&square_feature("iris_1", "iris", true));
        let (units, rejects) = parse_admin(text.as_bytes(), &proj()).unwrap();
        assert!(rejects.is_empty());
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].unit_id, "iris_1");
        assert_eq!(units[0].level, "iris");
        assert_eq!(units[0].parts[0][0].len(), 4); // closing vertex stripped
        let area = units[0].surface().unwrap().area_m2;
        // ~0.1 deg x 0.1 deg at lat 47: roughly 7.6e7 * ... sanity only.
        assert!(area > 5e7, "area {area}");
    }

    #[test]
    fn unclosed_ring_rejects_feature() {
        let text = feature_collection(&square_feature("iris_1", "iris", false));
        let (units, rejects) = parse_admin(text.as_bytes(), &proj()).unwrap();
        assert!(units.is_empty());
        assert_eq!(rejects.count(RejectReason::UnclosedRing), 1);
    }

    #[test]
    fn missing_properties_reject_feature() {
        let feat = r#"{"type":"Feature","properties":{},
            "geometry":{"type":"Polygon","coordinates":[[[2.0,47.0],[2.1,47.0],[2.1,47.1],[2.0,47.0]]]}}"#;
        let (units, rejects) = parse_admin(feature_collection(feat).as_bytes(), &proj()).unwrap();
        assert!(units.is_empty());
        assert_eq!(rejects.count(RejectReason::MissingProperty), 1);
    }

    #[test]
    fn self_intersecting_ring_rejects_feature() {
        let feat = r#"{"type":"Feature","properties":{"unit_id":"x","level":"iris"},
            "geometry":{"type":"Polygon","coordinates":[[[2.0,47.0],[2.1,47.1],[2.1,47.0],[2.0,47.1],[2.0,47.0]]]}}"#;
        let (units, rejects) = parse_admin(feature_collection(feat).as_bytes(), &proj()).unwrap();
        assert!(units.is_empty());
        assert_eq!(rejects.count(RejectReason::SelfIntersection), 1);
    }

    #[test]
    fn duplicate_unit_within_level_rejects() {
        let feats = format!(
            "{},{}",
            square_feature("u1", "iris", true),
            square_feature("u1", "iris", true)
        );
        let (units, rejects) = parse_admin(feature_collection(&feats).as_bytes(), &proj()).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(rejects.count(RejectReason::DuplicateUnit), 1);
    }

    #[test]
    fn same_unit_id_in_different_levels_is_fine() {
        let feats = format!(
            "{},{}",
            square_feature("u1", "iris", true),
            square_feature("u1", "commune", true)
        );
        let (units, rejects) = parse_admin(feature_collection(&feats).as_bytes(), &proj()).unwrap();
        assert_eq!(units.len(), 2);
        assert!(rejects.is_empty());
        assert_eq!(
            levels_present(&units),
            vec!["iris".to_string(), "commune".to_string()]
        );
    }

    #[test]
    fn geojson_roundtrip_preserves_geometry() {
        let text = feature_collection(&square_feature("iris_1", "iris", true));
        let (units, _) = parse_admin(text.as_bytes(), &proj()).unwrap();
        let json = admin_to_geojson(&units, &proj());
        let (units2, rejects2) = parse_admin(json.to_string().as_bytes(), &proj()).unwrap();
        assert!(rejects2.is_empty());
        assert_eq!(units2.len(), 1);
        let a1 = units[0].surface().unwrap().area_m2;
        let a2 = units2[0].surface().unwrap().area_m2;
        approx::assert_relative_eq!(a1, a2, max_relative = 1e-9);
    }
}
