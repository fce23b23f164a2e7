//! Area-overlap crosswalks: the translation tables between spatial
//! delineations (tower cells, IRIS, communes, custom layers).
//!
//! A crosswalk row gives, for one source unit, the fraction of its area
//! falling into each target unit: `weight(s -> t) = area(s ∩ t) / area(s)`.
//! Rows summing to 1 (within `FULL_COVERAGE_TOL`) are fully covered;
//! anything else carries its uncovered fraction and is flagged partial.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::polygon::{intersection_area, signed_triangles, Pt, Rect, SignedTri};

/// Row sums within this tolerance of 1 count as full coverage.
pub const FULL_COVERAGE_TOL: f64 = 1e-9;

/// A named planar surface (possibly with holes or multiple parts),
/// pre-decomposed into signed triangles for intersection-area queries.
#[derive(Debug, Clone)]
pub struct NamedSurface {
    pub id: String,
    pub area_m2: f64,
    pub bbox: Rect,
    pub tris: Vec<SignedTri>,
}

impl NamedSurface {
    /// Build from outer+holes ring groups (a GeoJSON-style MultiPolygon).
    pub fn from_parts(id: impl Into<String>, parts: &[Vec<Vec<Pt>>]) -> Result<NamedSurface> {
        let id = id.into();
        let mut tris = Vec::new();
        for rings in parts {
            tris.extend(signed_triangles(rings));
        }
        let area_m2: f64 = tris.iter().map(|t| t.sign * t.area()).sum();
        let bbox =
            Rect::of_points(tris.iter().flat_map(|t| t.v.iter().copied())).ok_or_else(|| {
                Error::InvalidPolygon {
                    unit: id.clone(),
                    reason: "no vertices".into(),
                }
            })?;
        if area_m2.is_nan() || area_m2 <= 0.0 {
            return Err(Error::InvalidPolygon {
                unit: id,
                reason: "non-positive area".into(),
            });
        }
        Ok(NamedSurface {
            id,
            area_m2,
            bbox,
            tris,
        })
    }

    pub fn from_ring(id: impl Into<String>, ring: &[Pt]) -> Result<NamedSurface> {
        NamedSurface::from_parts(id, &[vec![ring.to_vec()]])
    }
}

#[derive(Debug, Clone)]
pub struct CrosswalkRow {
    pub source: String,
    pub source_area_m2: f64,
    /// `(target unit, area fraction)`, sorted by target id, fractions > 0.
    pub weights: Vec<(String, f64)>,
    /// Fraction of the source area covered by no target unit.
    pub uncovered: f64,
}

impl CrosswalkRow {
    pub fn is_partial(&self) -> bool {
        self.uncovered > FULL_COVERAGE_TOL
    }
}

#[derive(Debug, Clone)]
pub struct Crosswalk {
    pub source_level: String,
    pub target_level: String,
    /// Sorted by source id.
    pub rows: Vec<CrosswalkRow>,
}

impl Crosswalk {
    pub fn row(&self, source: &str) -> Option<&CrosswalkRow> {
        self.rows
            .binary_search_by(|r| r.source.as_str().cmp(source))
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn partial_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_partial()).count()
    }

    /// Chain `self: A -> B` with `next: B -> C` into `A -> C`:
    /// `w(a -> c) = sum_b w(a -> b) * w(b -> c)`.
    pub fn compose(&self, next: &Crosswalk) -> Crosswalk {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut acc: std::collections::BTreeMap<&str, f64> = Default::default();
                let mut covered = 0.0;
                for (mid, w_ab) in &row.weights {
                    if let Some(mid_row) = next.row(mid) {
                        for (tgt, w_bc) in &mid_row.weights {
                            *acc.entry(tgt.as_str()).or_insert(0.0) += w_ab * w_bc;
                        }
                    }
                }
                let weights: Vec<(String, f64)> =
                    acc.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                for (_, w) in &weights {
                    covered += w;
                }
                CrosswalkRow {
                    source: row.source.clone(),
                    source_area_m2: row.source_area_m2,
                    weights,
                    uncovered: (1.0 - covered).max(0.0),
                }
            })
            .collect();
        Crosswalk {
            source_level: self.source_level.clone(),
            target_level: next.target_level.clone(),
            rows,
        }
    }

    /// `source_id,target_id,weight` rows, sorted.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "source_id,target_id,weight")?;
        for row in &self.rows {
            for (tgt, weight) in &row.weights {
                writeln!(w, "{},{},{}", row.source, tgt, weight)?;
            }
        }
        Ok(())
    }
}

/// Compute the area-overlap crosswalk between two surface layers.
///
/// Both layers must be in the same planar projection. Rows come back sorted
/// by source id with weights sorted by target id.
pub fn build_crosswalk(
    sources: &[NamedSurface],
    targets: &[NamedSurface],
    source_level: impl Into<String>,
    target_level: impl Into<String>,
) -> Crosswalk {
    let mut rows: Vec<CrosswalkRow> = sources
        .par_iter()
        .map(|s| {
            let mut weights: Vec<(String, f64)> = Vec::new();
            let mut covered = 0.0;
            for t in targets {
                if !s.bbox.intersects(&t.bbox) {
                    continue;
                }
                let a = intersection_area(&s.tris, &t.tris);
                if a > 0.0 {
                    let w = a / s.area_m2;
                    covered += w;
                    weights.push((t.id.clone(), w));
                }
            }
            weights.sort_by(|a, b| a.0.cmp(&b.0));
            CrosswalkRow {
                source: s.id.clone(),
                source_area_m2: s.area_m2,
                weights,
                uncovered: (1.0 - covered).max(0.0),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.source.cmp(&b.source));
    Crosswalk {
        source_level: source_level.into(),
        target_level: target_level.into(),
        rows,
    }
}
