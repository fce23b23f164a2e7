//! Streaming CDR parser.
//!
//! One pass, constant memory: each line either becomes a validated event
//! pushed into the caller's sink or lands in the reject log with a reason
//! code. Materializing the full record vector is a convenience for small
//! inputs only; the pipeline itself consumes the sink form, so peak memory
//! is bounded by downstream per-user state, never by file size.

use std::io::Read;

use chrono::{DateTime, SecondsFormat, Utc};

use crate::config::StudyConfig;
use crate::error::{Error, Result};
use crate::ingest::reject::{RejectLog, RejectReason};
use crate::ingest::towers::TowerRegistry;
use crate::ingest::users::UserTable;

/// One validated, in-window CDR event. `cell` indexes the tower registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdrRecord {
    pub user: String,
    pub unix: i64,
    pub cell: u32,
}

impl CdrRecord {
    pub fn timestamp_rfc3339(&self) -> String {
        rfc3339_utc(self.unix)
    }
}

/// Second-precision RFC 3339 UTC string for a unix timestamp.
pub fn rfc3339_utc(unix: i64) -> String {
    DateTime::<Utc>::from_timestamp(unix, 0)
        .expect("valid unix timestamp")
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Line accounting for the conservation check
/// `lines_in == records_out + rejects`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CdrScan {
    pub lines_in: u64,
    pub records_out: u64,
}

/// Stream the CDR CSV `user_id,timestamp,cell_id` into `sink`.
///
/// `sink(user_idx, unix_seconds, tower_idx)` receives every valid in-window
/// event in file order; users are interned into `users` on first sight.
/// An unreadable stream is fatal; individual bad lines are rejects.
pub fn scan_cdr<R: Read>(
    reader: R,
    registry: &TowerRegistry,
    config: &StudyConfig,
    users: &mut UserTable,
    mut sink: impl FnMut(u32, i64, u32),
) -> Result<(CdrScan, RejectLog)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let mut rejects = RejectLog::new();
    let mut scan = CdrScan::default();
    let mut record = csv::ByteRecord::new();
    let mut line: u64 = 1; // header

    loop {
        match rdr.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => {
                return Err(Error::Csv {
                    path: "<cdr stream>".into(),
                    source: e,
                });
            }
            Err(e) => {
                line += 1;
                scan.lines_in += 1;
                rejects.push(line, RejectReason::Malformed, e.to_string());
                continue;
            }
        }
        line = record.position().map_or(line + 1, |p| p.line());
        scan.lines_in += 1;

        if record.len() != 3 {
            rejects.push(line, RejectReason::Malformed, lossy(&record));
            continue;
        }
        let (user, ts, cell) = match (
            std::str::from_utf8(&record[0]),
            std::str::from_utf8(&record[1]),
            std::str::from_utf8(&record[2]),
        ) {
            (Ok(u), Ok(t), Ok(c)) => (u.trim(), t.trim(), c.trim()),
            _ => {
                rejects.push(line, RejectReason::Malformed, lossy(&record));
                continue;
            }
        };
        if user.is_empty() || cell.is_empty() {
            rejects.push(line, RejectReason::Malformed, lossy(&record));
            continue;
        }
        let instant = match DateTime::parse_from_rfc3339(ts) {
            Ok(t) => t.with_timezone(&Utc),
            Err(_) => {
                rejects.push(line, RejectReason::BadTimestamp, lossy(&record));
                continue;
            }
        };
        let cell_idx = match registry.lookup(cell) {
            Some(i) => i,
            None => {
                rejects.push(line, RejectReason::UnknownCell, lossy(&record));
                continue;
            }
        };
        if !config.in_window(instant) {
            rejects.push(line, RejectReason::OutOfWindow, lossy(&record));
            continue;
        }

        let user_idx = users.intern(user);
        scan.records_out += 1;
        sink(user_idx, instant.timestamp(), cell_idx);
    }

    debug_assert_eq!(scan.lines_in, scan.records_out + rejects.len() as u64);
    Ok((scan, rejects))
}

/// Materialize all valid records (small inputs and tests).
pub fn parse_cdr<R: Read>(
    reader: R,
    registry: &TowerRegistry,
    config: &StudyConfig,
) -> Result<(Vec<CdrRecord>, RejectLog)> {
    let mut users = UserTable::new();
    let mut out: Vec<(u32, i64, u32)> = Vec::new();
    let (_, rejects) = scan_cdr(reader, registry, config, &mut users, |u, t, c| {
        out.push((u, t, c));
    })?;
    let records = out
        .into_iter()
        .map(|(u, t, c)| CdrRecord {
            user: users.name(u).to_string(),
            unix: t,
            cell: c,
        })
        .collect();
    Ok((records, rejects))
}

fn lossy(record: &csv::ByteRecord) -> String {
    let mut s = String::new();
    for (i, f) in record.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&String::from_utf8_lossy(f));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (TowerRegistry, StudyConfig) {
        let cfg = StudyConfig::default();
        let towers = "cell_id,lon,lat\nc42,2.0,47.0\nc7,2.1,47.05\n";
        let (reg, _) = crate::ingest::towers::parse_towers(towers.as_bytes(), &cfg).unwrap();
        (reg, cfg)
    }

    #[test]
    fn well_formed_line_yields_one_record() {
        let (reg, cfg) = fixture();
        let data = "user_id,timestamp,cell_id\nu1,2007-06-03T21:15:00Z,c42\n";
        let (records, rejects) = parse_cdr(data.as_bytes(), &reg, &cfg).unwrap();
        assert!(rejects.is_empty());
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].user, "u1");
        assert_eq!(records[0].cell, reg.lookup("c42").unwrap());
        assert_eq!(records[0].timestamp_rfc3339(), "2007-06-03T21:15:00Z");
    }

    #[test]
    fn malformed_timestamp_rejects_with_reason() {
        let (reg, cfg) = fixture();
        let data = "user_id,timestamp,cell_id\nu1,notatime,c42\n";
        let (records, rejects) = parse_cdr(data.as_bytes(), &reg, &cfg).unwrap();
        assert!(records.is_empty());
        assert_eq!(rejects.len(), 1);
        assert_eq!(rejects.rejects[0].reason, RejectReason::BadTimestamp);
        assert_eq!(rejects.rejects[0].line, 2);
    }

    #[test]
    fn unknown_cell_hand_count_oracle() {
        // Hand count: 3 data lines, line 3 has an unknown cell.
        let (reg, cfg) = fixture();
        let data = "user_id,timestamp,cell_id\n\
                    u1,2007-06-03T21:15:00Z,c42\n\
                    u2,2007-06-04T10:00:00Z,nope\n\
                    u1,2007-06-05T08:30:00Z,c7\n";
        let mut users = UserTable::new();
        let mut n = 0u64;
        let (scan, rejects) =
            scan_cdr(data.as_bytes(), &reg, &cfg, &mut users, |_, _, _| n += 1).unwrap();
        assert_eq!(scan.lines_in, 3);
        assert_eq!(scan.records_out, 2);
        assert_eq!(n, 2);
        assert_eq!(rejects.len(), 1);
        assert_eq!(rejects.rejects[0].reason, RejectReason::UnknownCell);
        assert_eq!(scan.lines_in, scan.records_out + rejects.len() as u64);
    }

    #[test]
    fn out_of_window_events_reject() {
        let (reg, cfg) = fixture();
        let data = "user_id,timestamp,cell_id\nu1,2007-08-03T21:15:00Z,c42\n";
        let (records, rejects) = parse_cdr(data.as_bytes(), &reg, &cfg).unwrap();
        assert!(records.is_empty());
        assert_eq!(rejects.count(RejectReason::OutOfWindow), 1);
    }

    #[test]
    fn offset_timestamps_normalize_to_utc() {
        let (reg, cfg) = fixture();
        // 23:15+02:00 is 21:15Z.
        let data = "user_id,timestamp,cell_id\nu1,2007-06-03T23:15:00+02:00,c42\n";
        let (records, _) = parse_cdr(data.as_bytes(), &reg, &cfg).unwrap();
        assert_eq!(records[0].timestamp_rfc3339(), "2007-06-03T21:15:00Z");
    }

    #[test]
    fn wrong_field_count_is_malformed() {
        let (reg, cfg) = fixture();
        let data = "user_id,timestamp,cell_id\nu1,2007-06-03T21:15:00Z\nu1,2007-06-03T21:15:00Z,c42,extra\n";
        let (records, rejects) = parse_cdr(data.as_bytes(), &reg, &cfg).unwrap();
        assert!(records.is_empty());
        assert_eq!(rejects.count(RejectReason::Malformed), 2);
    }
}
