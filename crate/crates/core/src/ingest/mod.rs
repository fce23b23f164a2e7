//! Input parsing and validation: CDR events, tower registry, census tables
//! and admin polygons, plus the reject log shared by all of them.
//!
//! Every parser is single-pass; files are independent and may be parsed
//! concurrently. All products are immutable once built.

pub mod admin;
pub mod cdr;
pub mod census;
pub mod reject;
pub mod towers;
pub mod users;

pub use admin::{admin_to_geojson, parse_admin, surfaces_of_level, AdminGeometry};
pub use cdr::{parse_cdr, rfc3339_utc, scan_cdr, CdrRecord, CdrScan};
pub use census::{parse_census, CensusRow, CensusTable};
pub use reject::{Reject, RejectLog, RejectReason};
pub use towers::{parse_towers, write_towers_csv, TowerRegistry};
pub use users::UserTable;
