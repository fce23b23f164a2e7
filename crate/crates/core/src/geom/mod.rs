//! Spatial delineation machinery: Voronoi tessellation over tower sites,
//! boundary-sharing adjacency weights, tower-density covariates, and
//! area-overlap crosswalks between delineations.

pub mod crosswalk;
pub mod polygon;
pub mod voronoi;

pub use crosswalk::{build_crosswalk, Crosswalk, CrosswalkRow, NamedSurface, FULL_COVERAGE_TOL};
pub use polygon::{Pt, Rect};
pub use voronoi::{Tessellation, VoronoiCell, BBOX_PAD_FRACTION};

use crate::error::Result;
use crate::ingest::TowerRegistry;

/// Voronoi tessellation over the registry's tower sites, clipped to the
/// padded bounding box. Exact coordinate duplicates are perturbed by ~1 cm
/// (deterministically, keyed on the cell id) rather than merged.
pub fn build_voronoi(registry: &TowerRegistry) -> Result<Tessellation> {
    let mut seeds = registry.points().to_vec();
    let perturbed = voronoi::perturb_duplicates(&mut seeds, registry.ids());
    let mut tess = voronoi::tessellate(&seeds)?;
    tess.perturbed = perturbed;
    Ok(tess)
}

/// Sparse symmetric binary spatial weights over tessellation cells.
///
/// `w_ij = 1` iff cells i and j share a boundary segment of positive length
/// (rook-on-Voronoi; single-point contact does not count). With
/// `include_self` the diagonal is 1, the form the G_i* "star" statistic
/// expects.
#[derive(Debug, Clone)]
pub struct AdjacencyWeights {
    pub include_self: bool,
    /// Sorted neighbor lists, self excluded.
    neighbors: Vec<Vec<u32>>,
}

impl AdjacencyWeights {
    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighbors of `i` under the weight matrix, self included when the
    /// star form is on.
    pub fn row(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let own = if self.include_self { Some(i) } else { None };
        own.into_iter()
            .chain(self.neighbors[i].iter().map(|&j| j as usize))
    }

    /// Row sum of the binary weights.
    pub fn row_sum(&self, i: usize) -> usize {
        self.neighbors[i].len() + usize::from(self.include_self)
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        if i == j {
            return self.include_self;
        }
        self.neighbors[i].binary_search(&(j as u32)).is_ok()
    }
}

/// Derive adjacency weights from a tessellation.
pub fn build_adjacency(tess: &Tessellation, include_self: bool) -> AdjacencyWeights {
    AdjacencyWeights {
        include_self,
        neighbors: tess.cells.iter().map(|c| c.neighbors.clone()).collect(),
    }
}

/// Local tower density per cell: towers per km², i.e. 1 / cell area.
#[derive(Debug, Clone)]
pub struct DensityMap {
    pub per_km2: Vec<f64>,
}

impl DensityMap {
    pub fn get(&self, cell: u32) -> f64 {
        self.per_km2[cell as usize]
    }

    pub fn len(&self) -> usize {
        self.per_km2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_km2.is_empty()
    }
}

/// Density covariate for every cell; positive and finite by the
/// tessellation's partition invariant.
pub fn tower_density(tess: &Tessellation) -> DensityMap {
    let per_km2 = (0..tess.len())
        .map(|i| 1.0 / (tess.area_m2(i) / 1.0e6))
        .collect();
    DensityMap { per_km2 }
}

/// Crosswalk source surfaces from the tessellation, one per tower cell,
/// sorted by cell id.
pub fn surfaces_from_tessellation(
    tess: &Tessellation,
    registry: &TowerRegistry,
) -> Result<Vec<NamedSurface>> {
    let mut out: Vec<NamedSurface> = (0..tess.len())
        .map(|i| NamedSurface::from_ring(registry.id(i as u32), &tess.cells[i].ring))
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Tessellation as a GeoJSON FeatureCollection (lon/lat, `cell_id` property).
pub fn tessellation_to_geojson(tess: &Tessellation, registry: &TowerRegistry) -> serde_json::Value {
    let features: Vec<serde_json::Value> = registry
        .sorted_indices()
        .into_iter()
        .map(|i| {
            let cell = &tess.cells[i as usize];
            let mut ring: Vec<serde_json::Value> = cell
                .ring
                .iter()
                .map(|p| {
                    let (lon, lat) = registry.projection.inverse(p.x, p.y);
                    serde_json::json!([lon, lat])
                })
                .collect();
            if let Some(first) = ring.first().cloned() {
                ring.push(first);
            }
            serde_json::json!({
                "type": "Feature",
                "properties": { "cell_id": registry.id(i) },
                "geometry": { "type": "Polygon", "coordinates": [ring] },
            })
        })
        .collect();
    serde_json::json!({
        "type": "FeatureCollection",
        "features": features,
        "metadata": { "bbox_pad_fraction": tess.pad_fraction },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StudyConfig;
    use crate::ingest::parse_towers;
    use approx::assert_relative_eq;

    fn registry_of(rows: &[(&str, f64, f64)]) -> TowerRegistry {
        let mut csv = String::from("cell_id,lon,lat\n");
        for (id, lon, lat) in rows {
            csv.push_str(&format!("{id},{lon},{lat}\n"));
        }
        parse_towers(csv.as_bytes(), &StudyConfig::default())
            .unwrap()
            .0
    }

    #[test]
    fn density_is_reciprocal_cell_area() {
        // Single tower: cell = padded bbox, a known area.
        let reg = registry_of(&[("c1", 2.0, 47.0)]);
        let tess = build_voronoi(&reg).unwrap();
        let d = tower_density(&tess);
        let area_km2 = tess.area_m2(0) / 1e6;
        assert_relative_eq!(d.get(0), 1.0 / area_km2, max_relative = 1e-12);
        assert!(d.get(0) > 0.0 && d.get(0).is_finite());
    }

    #[test]
    fn doubling_coordinates_quarters_every_density() {
        let pts = [(2.0, 47.0), (2.02, 47.01), (2.01, 47.03), (2.04, 47.02)];
        let reg1 = registry_of(&[
            ("a", pts[0].0, pts[0].1),
            ("b", pts[1].0, pts[1].1),
            ("c", pts[2].0, pts[2].1),
            ("d", pts[3].0, pts[3].1),
        ]);
        // Seeds doubled in planar space: inverse-project scaled coordinates
        // so the parsed registry lands on exactly doubled points.
        let proj = reg1.projection;
        let scaled: Vec<(String, f64, f64)> = (0..4u32)
            .map(|i| {
                let p = reg1.point(i);
                let (lon, lat) = proj.inverse(2.0 * p.x, 2.0 * p.y);
                (reg1.id(i).to_string(), lon, lat)
            })
            .collect();
        let reg2 =
            TowerRegistry::from_rows(scaled, Some((proj.lon0_deg, proj.lat0_deg))).unwrap();

        let d1 = tower_density(&build_voronoi(&reg1).unwrap());
        let d2 = tower_density(&build_voronoi(&reg2).unwrap());
        for i in 0..4 {
            assert_relative_eq!(d2.per_km2[i], d1.per_km2[i] / 4.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn adjacency_row_includes_self_only_in_star_form() {
        let reg = registry_of(&[("a", 2.0, 47.0), ("b", 2.1, 47.0), ("c", 2.2, 47.0)]);
        let tess = build_voronoi(&reg).unwrap();
        let star = build_adjacency(&tess, true);
        let plain = build_adjacency(&tess, false);
        assert!(star.is_neighbor(0, 0));
        assert!(!plain.is_neighbor(0, 0));
        assert_eq!(star.row_sum(0), plain.row_sum(0) + 1);
        // 3 towers on a line: ends touch only the middle.
        assert_eq!(plain.row(0).collect::<Vec<_>>(), vec![1]);
        assert_eq!(plain.row(1).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn tessellation_geojson_has_one_closed_feature_per_tower() {
        let reg = registry_of(&[("a", 2.0, 47.0), ("b", 2.1, 47.0)]);
        let tess = build_voronoi(&reg).unwrap();
        let gj = tessellation_to_geojson(&tess, &reg);
        let feats = gj["features"].as_array().unwrap();
        assert_eq!(feats.len(), 2);
        let ring = feats[0]["geometry"]["coordinates"][0].as_array().unwrap();
        assert_eq!(ring.first(), ring.last());
        assert_eq!(feats[0]["properties"]["cell_id"], "a");
    }
}
