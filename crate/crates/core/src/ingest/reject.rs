//! Reject log: per-line input failures carry a reason code instead of
//! aborting the run.

use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    Malformed,
    BadTimestamp,
    UnknownCell,
    OutOfWindow,
    BadCoordinate,
    BadNumber,
    NegativePopulation,
    DuplicateUnit,
    UnclosedRing,
    SelfIntersection,
    MissingProperty,
    BadGeometry,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::Malformed => "malformed",
            RejectReason::BadTimestamp => "bad_timestamp",
            RejectReason::UnknownCell => "unknown_cell",
            RejectReason::OutOfWindow => "out_of_window",
            RejectReason::BadCoordinate => "bad_coordinate",
            RejectReason::BadNumber => "bad_number",
            RejectReason::NegativePopulation => "negative_population",
            RejectReason::DuplicateUnit => "duplicate_unit",
            RejectReason::UnclosedRing => "unclosed_ring",
            RejectReason::SelfIntersection => "self_intersection",
            RejectReason::MissingProperty => "missing_property",
            RejectReason::BadGeometry => "bad_geometry",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reject {
    /// Physical line number in the input (header is line 1); for GeoJSON
    /// inputs this is the 1-based feature number.
    pub line: u64,
    pub reason: RejectReason,
    pub payload: String,
}

#[derive(Debug, Default)]
pub struct RejectLog {
    pub rejects: Vec<Reject>,
}

impl RejectLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, line: u64, reason: RejectReason, payload: impl Into<String>) {
        self.rejects.push(Reject {
            line,
            reason,
            payload: payload.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.rejects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rejects.is_empty()
    }

    /// `line_number,reason,payload` with standard CSV quoting.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["line_number", "reason", "payload"])?;
        for r in &self.rejects {
            wtr.write_record([r.line.to_string().as_str(), r.reason.code(), &r.payload])?;
        }
        wtr.flush()
    }

    pub fn count(&self, reason: RejectReason) -> usize {
        self.rejects.iter().filter(|r| r.reason == reason).count()
    }
}
