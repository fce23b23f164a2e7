//! Validation statistics: cosine similarity in degrees between population
//! vectors, the Getis-Ord G_i* local statistic with hot/cold classification,
//! Pearson correlation with pairwise deletion, and hotspot-map agreement.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::AdjacencyWeights;
use crate::ingest::TowerRegistry;

/// Angle between two same-indexed non-negative vectors, in degrees.
///
/// 0° is the highest possible similarity (same orientation), 90° the lowest
/// similarity in orientation, 180° an opposite orientation.
///
/// Computed as `atan2(sqrt(|u|²|v|² - (u·v)²), u·v)` rather than a bare
/// arccos of the clamped cosine: arccos loses ~7 digits next to ±1, while
/// this form is exact for identical vectors and keeps the anchor angles
/// within 1e-9 degrees.
pub fn cosine_degrees(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Internal(format!(
            "cosine over mismatched index sets: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let cross = (nu * nv - dot * dot).max(0.0).sqrt();
    Ok(cross.atan2(dot).to_degrees())
}

/// The conventional one-tailed 5% threshold: |z| >= 1.645 marks the 90%
/// confidence hot/cold interval.
pub const Z_CRIT_90: f64 = 1.645;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HotClass {
    Hot,
    Neutral,
    Cold,
}

impl HotClass {
    pub fn code(&self) -> &'static str {
        match self {
            HotClass::Hot => "hot",
            HotClass::Neutral => "neutral",
            HotClass::Cold => "cold",
        }
    }

    fn confusion_index(&self) -> usize {
        match self {
            HotClass::Hot => 0,
            HotClass::Neutral => 1,
            HotClass::Cold => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GiStar {
    pub z: f64,
    pub class: HotClass,
}

/// Getis-Ord G_i* over a value field with binary spatial weights.
///
/// For each unit i (j ranging over all units, self included in the star
/// form):
///
/// ```text
/// z_i = (sum_j w_ij x_j - mean(x) W_i)
///       / (S * sqrt((n W_i - W_i^2) / (n - 1)))
/// ```
///
/// with `W_i` the row sum and `S = sqrt(mean(x^2) - mean(x)^2)`. A unit
/// adjacent to every other unit has a vanishing denominator and a provably
/// zero numerator; it reports z = 0 (neutral). An all-equal field is a
/// `degenerate_field` error; fewer than 3 units is an error.
pub fn getis_ord_gi_star(
    x: &[f64],
    weights: &AdjacencyWeights,
    z_crit: f64,
) -> Result<Vec<GiStar>> {
    let n = x.len();
    if n != weights.n() {
        return Err(Error::Internal(format!(
            "field has {n} units but weights cover {}",
            weights.n()
        )));
    }
    if n < 3 {
        return Err(Error::TooFewUnits { got: n, min: 3 });
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / nf;
    let s = (mean_sq - mean * mean).max(0.0).sqrt();
    if s == 0.0 {
        return Err(Error::DegenerateField);
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let wi = weights.row_sum(i) as f64;
        let local_sum: f64 = weights.row(i).map(|j| x[j]).sum();
        let num = local_sum - mean * wi;
        let denom = s * ((nf * wi - wi * wi) / (nf - 1.0)).max(0.0).sqrt();
        let z = if denom == 0.0 { 0.0 } else { num / denom };
        let class = if z >= z_crit {
            HotClass::Hot
        } else if z <= -z_crit {
            HotClass::Cold
        } else {
            HotClass::Neutral
        };
        out.push(GiStar { z, class });
    }
    Ok(out)
}

/// Product-moment correlation and the pair count behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub n: usize,
}

/// Pearson r over two aligned slices. Errors on fewer than 3 pairs or zero
/// variance on either side.
pub fn pearson_aligned(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Internal("pearson over mismatched slices".into()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewUnits { got: n, min: 3 });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x".into()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y".into()));
    }
    Ok(Correlation {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        n,
    })
}

/// Pearson r over keyed values with pairwise deletion: only units present
/// on both sides count.
pub fn pearson(x: &BTreeMap<String, f64>, y: &BTreeMap<String, f64>) -> Result<Correlation> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &a) in x {
        if let Some(&b) = y.get(k) {
            xs.push(a);
            ys.push(b);
        }
    }
    pearson_aligned(&xs, &ys)
}

/// Agreement between two hotspot maps over the same unit universe.
#[derive(Debug, Clone, PartialEq)]
pub struct HotspotAgreement {
    pub jaccard_hot: f64,
    pub jaccard_cold: f64,
    /// Row = class in `a`, column = class in `b`; order hot, neutral, cold.
    pub confusion: [[u64; 3]; 3],
}

/// Jaccard of the hot sets, Jaccard of the cold sets, and the full 3x3
/// class confusion matrix. Two empty sets count as perfectly agreeing.
pub fn hotspot_agreement(a: &[GiStar], b: &[GiStar]) -> Result<HotspotAgreement> {
    if a.len() != b.len() {
        return Err(Error::Internal(
            "hotspot maps over different unit universes".into(),
        ));
    }
    let mut confusion = [[0u64; 3]; 3];
    for (ra, rb) in a.iter().zip(b) {
        confusion[ra.class.confusion_index()][rb.class.confusion_index()] += 1;
    }
    let jaccard = |class: HotClass| {
        let mut inter = 0u64;
        let mut union = 0u64;
        for (ra, rb) in a.iter().zip(b) {
            let ia = ra.class == class;
            let ib = rb.class == class;
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    Ok(HotspotAgreement {
        jaccard_hot: jaccard(HotClass::Hot),
        jaccard_cold: jaccard(HotClass::Cold),
        confusion,
    })
}

/// `unit_id,z,class`, in registry id order.
pub fn write_gi_csv<W: std::io::Write>(
    registry: &TowerRegistry,
    results: &[GiStar],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "unit_id,z,class")?;
    for i in registry.sorted_indices() {
        let r = &results[i as usize];
        writeln!(w, "{},{},{}", registry.id(i), r.z, r.class.code())?;
    }
    Ok(())
}

/// Hotspot map as GeoJSON: tessellation cells carrying z and class.
pub fn gi_to_geojson(
    tess: &crate::geom::Tessellation,
    registry: &TowerRegistry,
    results: &[GiStar],
) -> serde_json::Value {
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
            let r = &results[i as usize];
            serde_json::json!({
                "type": "Feature",
                "properties": {
                    "unit_id": registry.id(i),
                    "z": r.z,
                    "class": r.class.code(),
                },
                "geometry": { "type": "Polygon", "coordinates": [ring] },
            })
        })
        .collect();
    serde_json::json!({ "type": "FeatureCollection", "features": features })
}

/// Agreement report as CSV (one metric per row).
pub fn write_agreement_csv<W: std::io::Write>(
    agreement: &HotspotAgreement,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "metric,value")?;
    writeln!(w, "jaccard_hot,{}", agreement.jaccard_hot)?;
    writeln!(w, "jaccard_cold,{}", agreement.jaccard_cold)?;
    let names = ["hot", "neutral", "cold"];
    for (i, row) in agreement.confusion.iter().enumerate() {
        for (j, count) in row.iter().enumerate() {
            writeln!(w, "confusion_{}_{},{}", names[i], names[j], count)?;
        }
    }
    Ok(())
}
