//! Sensor and incident ingestion, the dense measurement grid, normalization,
//! training masks and day splits.

mod archive;
mod csv_io;
mod grid;
mod mask;
mod normalize;
mod split;

pub use archive::{read_grid, write_grid};
pub use csv_io::{
    parse_incident_log, parse_sensor_csv, read_incident_log, read_sensor_csv, write_incident_log, write_sensor_csv,
    INCIDENT_HEADER, SENSOR_HEADER,
};
pub use grid::{
    assemble_grid, AssemblyReport, DaySegment, DayWindow, Feature, NodeId, SensorGrid, N_FEATURES, TICK_SECONDS,
};
pub use mask::{build_training_mask, MaskReason, MaskWindows, MaskedInterval, TrainingMask};
pub use normalize::{fit_normalization, NormalizationStats};
pub use split::{split_days, DatasetSplit, DayRole, SplitSpec};

use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

/// One row of the sensor CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorReading {
    pub time_unix: i64,
    pub milemarker: f64,
    /// 1 is the left-most lane.
    pub lane: u8,
    /// mph
    pub speed: Option<f32>,
    /// vehicles per 30 s
    pub volume: Option<f32>,
    /// percent, 0-100
    pub occupancy: Option<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IncidentKind {
    /// Officially reported crash; its report time may lag the event.
    Crash,
    /// Anomaly labeled by inspection; no reporting delay.
    Manual,
}

impl IncidentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IncidentKind::Crash => "crash",
            IncidentKind::Manual => "manual",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IncidentRecord {
    pub report_time_unix: i64,
    pub milemarker: Option<f64>,
    pub kind: IncidentKind,
}

/// Incident records sorted by report time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IncidentLog {
    records: Vec<IncidentRecord>,
}

impl IncidentLog {
    pub fn new(mut records: Vec<IncidentRecord>) -> Self {
        records.sort_by_key(|r| r.report_time_unix);
        IncidentLog { records }
    }

    pub fn records(&self) -> &[IncidentRecord] {
        &self.records
    }

    pub fn crashes(&self) -> impl Iterator<Item = &IncidentRecord> {
        self.records.iter().filter(|r| r.kind == IncidentKind::Crash)
    }

    pub fn manual(&self) -> impl Iterator<Item = &IncidentRecord> {
        self.records.iter().filter(|r| r.kind == IncidentKind::Manual)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: IncidentRecord) {
        let at = self
            .records
            .partition_point(|r| r.report_time_unix <= record.report_time_unix);
        self.records.insert(at, record);
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing header: expected `{expected}`, found `{found}`")]
    MissingHeader { expected: &'static str, found: String },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: value out of range for `{field}`")]
    OutOfRangeValue { line: u64, field: &'static str },
    #[error("line {line}: unknown incident kind `{kind}`")]
    UnknownKind { line: u64, kind: String },
    #[error("no readings to assemble")]
    EmptyInput,
    #[error("timestamp {time_unix} is not aligned to the 30 s tick grid")]
    InconsistentCadence { time_unix: i64 },
    #[error("feature {0:?} has zero range on the training region")]
    DegenerateFeature(Feature),
    #[error("feature {0:?} has no usable training values")]
    EmptyFeature(Feature),
    #[error("split needs {needed} days but only {available} are available")]
    SplitOverflow { needed: usize, available: usize },
    #[error("day {0} is not present in the grid")]
    UnknownDay(NaiveDate),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid archive: {0}")]
    BadArchive(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_push_keeps_order() {
        let mut log = IncidentLog::new(vec![
            IncidentRecord {
                report_time_unix: 30,
                milemarker: None,
                kind: IncidentKind::Crash,
            },
            IncidentRecord {
                report_time_unix: 10,
                milemarker: None,
                kind: IncidentKind::Manual,
            },
        ]);
        log.push(IncidentRecord {
            report_time_unix: 20,
            milemarker: Some(60.0),
            kind: IncidentKind::Crash,
        });
        let times: Vec<_> = log.records().iter().map(|r| r.report_time_unix).collect();
        assert_eq!(times, vec![10, 20, 30]);
        assert_eq!(log.crashes().count(), 2);
    }
}
