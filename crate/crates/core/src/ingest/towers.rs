//! Tower registry: the cell_id universe with WGS84 and projected planar
//! coordinates. Tower sites are the Voronoi seeds.

use std::collections::HashMap;
use std::io::Read;

use crate::config::StudyConfig;
use crate::error::{Error, Result};
use crate::geom::polygon::Pt;
use crate::ingest::reject::{RejectLog, RejectReason};
use crate::proj::Projection;

#[derive(Debug, Clone)]
pub struct TowerRegistry {
    ids: Vec<String>,
    index: HashMap<String, u32>,
    lonlat: Vec<(f64, f64)>,
    points: Vec<Pt>,
    /// Rank of each tower's id in lexicographic order; ties in home
    /// detection break toward the smallest id.
    lex_rank: Vec<u32>,
    pub projection: Projection,
}

impl TowerRegistry {
    /// Build from `(cell_id, lon, lat)` rows. Duplicate ids are fatal.
    /// Projection defaults to the equal-area map centered on the centroid.
    pub fn from_rows(rows: Vec<(String, f64, f64)>, origin: Option<(f64, f64)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        let (lon0, lat0) = origin.unwrap_or_else(|| {
            let n = rows.len() as f64;
            let (sx, sy) = rows
                .iter()
                .fold((0.0, 0.0), |(sx, sy), r| (sx + r.1, sy + r.2));
            (sx / n, sy / n)
        });
        let projection = Projection::new(lon0, lat0);

        let mut ids = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut lonlat = Vec::with_capacity(rows.len());
        let mut points = Vec::with_capacity(rows.len());
        for (id, lon, lat) in rows {
            if index.contains_key(&id) {
                return Err(Error::DuplicateTower(id));
            }
            index.insert(id.clone(), ids.len() as u32);
            let (x, y) = projection.forward(lon, lat);
            ids.push(id);
            lonlat.push((lon, lat));
            points.push(Pt::new(x, y));
        }

        let mut by_name: Vec<u32> = (0..ids.len() as u32).collect();
        by_name.sort_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
        let mut lex_rank = vec![0u32; ids.len()];
        for (rank, &i) in by_name.iter().enumerate() {
            lex_rank[i as usize] = rank as u32;
        }

        Ok(TowerRegistry {
            ids,
            index,
            lonlat,
            points,
            lex_rank,
            projection,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: u32) -> &str {
        &self.ids[i as usize]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn lookup(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn point(&self, i: u32) -> Pt {
        self.points[i as usize]
    }

    pub fn points(&self) -> &[Pt] {
        &self.points
    }

    pub fn lonlat(&self, i: u32) -> (f64, f64) {
        self.lonlat[i as usize]
    }

    pub fn lex_rank(&self, i: u32) -> u32 {
        self.lex_rank[i as usize]
    }

    /// Tower indices in lexicographic id order (export order).
    pub fn sorted_indices(&self) -> Vec<u32> {
        let mut idx: Vec<u32> = (0..self.len() as u32).collect();
        idx.sort_by(|&a, &b| self.ids[a as usize].cmp(&self.ids[b as usize]));
        idx
    }
}

/// Parse the tower CSV `cell_id,lon,lat` (WGS84 decimal degrees).
///
/// Out-of-range coordinates reject the line; a duplicate cell_id is fatal
/// and names the offending id.
pub fn parse_towers<R: Read>(
    reader: R,
    config: &StudyConfig,
) -> Result<(TowerRegistry, RejectLog)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let mut rejects = RejectLog::new();
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();

    let mut line: u64 = 1; // header
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                line += 1;
                rejects.push(line, RejectReason::Malformed, e.to_string());
                continue;
            }
        }
        line = record.position().map_or(line + 1, |p| p.line());
        if record.len() < 3 {
            rejects.push(line, RejectReason::Malformed, join_record(&record));
            continue;
        }
        let id = record[0].trim();
        let lon: f64 = match record[1].trim().parse() {
            Ok(v) => v,
            Err(_) => {
                rejects.push(line, RejectReason::BadCoordinate, join_record(&record));
                continue;
            }
        };
        let lat: f64 = match record[2].trim().parse() {
            Ok(v) => v,
            Err(_) => {
                rejects.push(line, RejectReason::BadCoordinate, join_record(&record));
                continue;
            }
        };
        if id.is_empty() {
            rejects.push(line, RejectReason::Malformed, join_record(&record));
            continue;
        }
        if !(lon.is_finite()
            && lat.is_finite()
            && (-180.0..=180.0).contains(&lon)
            && (-90.0..=90.0).contains(&lat))
        {
            rejects.push(line, RejectReason::BadCoordinate, join_record(&record));
            continue;
        }
        if seen.insert(id.to_string(), ()).is_some() {
            return Err(Error::DuplicateTower(id.to_string()));
        }
        rows.push((id.to_string(), lon, lat));
    }

    let registry = TowerRegistry::from_rows(rows, config.projection_origin)?;
    Ok((registry, rejects))
}

pub(crate) fn join_record(record: &csv::StringRecord) -> String {
    let mut s = String::new();
    for (i, f) in record.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(f);
    }
    s
}

/// Write the registry back out as `cell_id,lon,lat`, sorted by id.
pub fn write_towers_csv<W: std::io::Write>(
    registry: &TowerRegistry,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "cell_id,lon,lat")?;
    for i in registry.sorted_indices() {
        let (lon, lat) = registry.lonlat(i);
        writeln!(w, "{},{},{}", registry.id(i), lon, lat)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tower_at_origin_projects_to_zero() {
        let cfg = StudyConfig {
            projection_origin: Some((2.0, 47.0)),
            ..Default::default()
        };
        let csv = "cell_id,lon,lat\nc1,2.0,47.0\n";
        let (reg, rejects) = parse_towers(csv.as_bytes(), &cfg).unwrap();
        assert!(rejects.is_empty());
        let p = reg.point(0);
        assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9);
    }

    #[test]
    fn duplicate_id_is_fatal_and_names_the_id() {
        let cfg = StudyConfig::default();
        let csv = "cell_id,lon,lat\nc1,2.0,47.0\nc1,2.1,47.1\n";
        match parse_towers(csv.as_bytes(), &cfg) {
            Err(Error::DuplicateTower(id)) => assert_eq!(id, "c1"),
            other => panic!("expected DuplicateTower, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_coordinates_reject_the_line() {
        let cfg = StudyConfig::default();
        let csv = "cell_id,lon,lat\nc1,2.0,47.0\nc2,181.0,47.0\nc3,2.0,-91.0\n";
        let (reg, rejects) = parse_towers(csv.as_bytes(), &cfg).unwrap();
        assert_eq!(reg.len(), 1);
        assert_eq!(rejects.len(), 2);
        assert_eq!(rejects.count(RejectReason::BadCoordinate), 2);
        assert_eq!(rejects.rejects[0].line, 3);
    }

    #[test]
    fn planar_separation_matches_great_circle_within_one_percent() {
        let cfg = StudyConfig::default();
        let csv = "cell_id,lon,lat\na,6.0,45.0\nb,6.01,45.0\n";
        let (reg, _) = parse_towers(csv.as_bytes(), &cfg).unwrap();
        let d = reg.point(0).dist(reg.point(1));
        let gc = crate::proj::haversine_m(6.0, 45.0, 6.01, 45.0);
        assert_relative_eq!(d, gc, max_relative = 0.01);
        assert!((d - 786.0).abs() < 5.0, "expected ~786 m, got {d}");
    }

    #[test]
    fn lex_rank_follows_id_order() {
        let cfg = StudyConfig::default();
        let csv = "cell_id,lon,lat\nzz,2.0,47.0\naa,2.1,47.0\nmm,2.2,47.0\n";
        let (reg, _) = parse_towers(csv.as_bytes(), &cfg).unwrap();
        assert_eq!(reg.lex_rank(0), 2); // zz
        assert_eq!(reg.lex_rank(1), 0); // aa
        assert_eq!(reg.lex_rank(2), 1); // mm
    }
}
