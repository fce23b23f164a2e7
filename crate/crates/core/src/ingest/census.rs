//! Census tables: per-unit population plus named contextual attributes
//! (e.g. a deprivation index), parsed from
//! `unit_id,population[,attr1,attr2,...]`.

use std::collections::BTreeMap;
use std::io::Read;

use crate::error::Result;
use crate::ingest::reject::{RejectLog, RejectReason};
use crate::ingest::towers::join_record;

#[derive(Debug, Clone, PartialEq)]
pub struct CensusRow {
    pub population: f64,
    /// Aligned with `CensusTable::attr_names`.
    pub attrs: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CensusTable {
    pub attr_names: Vec<String>,
    pub rows: BTreeMap<String, CensusRow>,
}

impl CensusTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn populations(&self) -> BTreeMap<String, f64> {
        self.rows
            .iter()
            .map(|(k, v)| (k.clone(), v.population))
            .collect()
    }

    /// Values of one named attribute across units.
    pub fn attribute(&self, name: &str) -> Option<BTreeMap<String, f64>> {
        let idx = self.attr_names.iter().position(|n| n == name)?;
        Some(
            self.rows
                .iter()
                .map(|(k, v)| (k.clone(), v.attrs[idx]))
                .collect(),
        )
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "unit_id,population")?;
        for name in &self.attr_names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for (unit, row) in &self.rows {
            write!(w, "{unit},{}", row.population)?;
            for v in &row.attrs {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Parse a census CSV. Attribute names come from the header; bad rows
/// (negative or non-numeric population, wrong arity, duplicate unit ids)
/// reject with reasons. An empty table is not an error.
pub fn parse_census<R: Read>(reader: R) -> Result<(CensusTable, RejectLog)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let mut rejects = RejectLog::new();
    let mut table = CensusTable::default();

    let headers = rdr.headers().map_err(|e| crate::error::Error::Csv {
        path: "<census stream>".into(),
        source: e,
    })?;
    if headers.len() >= 2 {
        table.attr_names = headers
            .iter()
            .skip(2)
            .map(|s| s.trim().to_string())
            .collect();
    }
    let arity = 2 + table.attr_names.len();

    let mut line: u64 = 1;
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
        if record.len() != arity {
            rejects.push(line, RejectReason::Malformed, join_record(&record));
            continue;
        }
        let unit = record[0].trim().to_string();
        if unit.is_empty() {
            rejects.push(line, RejectReason::Malformed, join_record(&record));
            continue;
        }
        let population: f64 = match record[1].trim().parse() {
            Ok(v) => v,
            Err(_) => {
                rejects.push(line, RejectReason::BadNumber, join_record(&record));
                continue;
            }
        };
        if !population.is_finite() || population < 0.0 {
            rejects.push(line, RejectReason::NegativePopulation, join_record(&record));
            continue;
        }
        let mut attrs = Vec::with_capacity(table.attr_names.len());
        let mut ok = true;
        for field in record.iter().skip(2) {
            match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => attrs.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            rejects.push(line, RejectReason::BadNumber, join_record(&record));
            continue;
        }
        if table.rows.contains_key(&unit) {
            rejects.push(line, RejectReason::DuplicateUnit, join_record(&record));
            continue;
        }
        table.rows.insert(unit, CensusRow { population, attrs });
    }

    Ok((table, rejects))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_maps_population_and_named_attribute() {
        let data = "unit_id,population,EDI\niris_001,1250,0.34\n";
        let (table, rejects) = parse_census(data.as_bytes()).unwrap();
        assert!(rejects.is_empty());
        let row = &table.rows["iris_001"];
        assert_eq!(row.population, 1250.0);
        assert_eq!(table.attr_names, vec!["EDI"]);
        assert_eq!(table.attribute("EDI").unwrap()["iris_001"], 0.34);
    }

    #[test]
    fn header_only_file_is_an_empty_table() {
        let (table, rejects) = parse_census("unit_id,population\n".as_bytes()).unwrap();
        assert!(table.is_empty());
        assert!(rejects.is_empty());
    }

    #[test]
    fn negative_population_rejects_row() {
        let data = "unit_id,population\nok,10\nbad,-3\n";
        let (table, rejects) = parse_census(data.as_bytes()).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(rejects.count(RejectReason::NegativePopulation), 1);
    }

    #[test]
    fn duplicate_unit_rejects_the_later_row() {
        let data = "unit_id,population\nu1,10\nu1,20\n";
        let (table, rejects) = parse_census(data.as_bytes()).unwrap();
        assert_eq!(table.rows["u1"].population, 10.0);
        assert_eq!(rejects.count(RejectReason::DuplicateUnit), 1);
    }

    #[test]
    fn csv_roundtrip() {
        let data = "unit_id,population,EDI\na,5,0.1\nb,7,0.9\n";
        let (table, _) = parse_census(data.as_bytes()).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let (table2, _) = parse_census(&buf[..]).unwrap();
        assert_eq!(table, table2);
    }
}
