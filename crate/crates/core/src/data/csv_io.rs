use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord};

use super::{DataError, IncidentKind, IncidentLog, IncidentRecord, SensorReading};

pub const SENSOR_HEADER: &str = "time_unix,milemarker,lane,speed,volume,occupancy";
pub const INCIDENT_HEADER: &str = "report_time_unix,milemarker,kind";

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|e| DataError::io(path, e))
}

fn records<R: Read>(
    reader: R,
    header: &'static str,
) -> Result<impl Iterator<Item = Result<(u64, StringRecord), DataError>>, DataError> {
    let rdr = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut iter = rdr.into_records();
    let first = match iter.next() {
        None => {
            return Err(DataError::MissingHeader {
                expected: header,
                found: String::new(),
            })
        }
        Some(r) => r.map_err(|e| csv_error(1, e))?,
    };
    let found = first.iter().collect::<Vec<_>>().join(",");
    if found != header {
        return Err(DataError::MissingHeader {
            expected: header,
            found,
        });
    }
    Ok(iter.map(|r| {
        let rec = r.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        Ok((line, rec))
    }))
}

fn csv_error(line: u64, e: csv::Error) -> DataError {
    DataError::MalformedRow {
        line,
        reason: e.to_string(),
    }
}

fn expect_fields(line: u64, rec: &StringRecord, n: usize) -> Result<(), DataError> {
    if rec.len() != n {
        return Err(DataError::MalformedRow {
            line,
            reason: format!("expected {n} fields, found {}", rec.len()),
        });
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(line: u64, field: &'static str, s: &str) -> Result<T, DataError> {
    s.parse().map_err(|_| DataError::MalformedRow {
        line,
        reason: format!("`{field}` is not a number: `{s}`"),
    })
}

fn optional_in_range(line: u64, field: &'static str, s: &str, lo: f32, hi: f32) -> Result<Option<f32>, DataError> {
    if s.is_empty() {
        return Ok(None);
    }
    let v: f32 = parse_num(line, field, s)?;
    if !(lo..=hi).contains(&v) {
        return Err(DataError::OutOfRangeValue { line, field });
    }
    Ok(Some(v))
}

/// Reads a sensor CSV with the exact header
/// `time_unix,milemarker,lane,speed,volume,occupancy`. Empty fields are
/// missing values; row order is preserved.
pub fn read_sensor_csv<R: Read>(reader: R) -> Result<Vec<SensorReading>, DataError> {
    let mut out = Vec::new();
    for item in records(reader, SENSOR_HEADER)? {
        let (line, rec) = item?;
        expect_fields(line, &rec, 6)?;
        let time_unix: i64 = parse_num(line, "time_unix", &rec[0])?;
        let milemarker: f64 = parse_num(line, "milemarker", &rec[1])?;
        if !milemarker.is_finite() {
            return Err(DataError::OutOfRangeValue {
                line,
                field: "milemarker",
            });
        }
        let lane: i64 = parse_num(line, "lane", &rec[2])?;
        if !(1..=4).contains(&lane) {
            return Err(DataError::OutOfRangeValue { line, field: "lane" });
        }
        out.push(SensorReading {
            time_unix,
            milemarker,
            lane: lane as u8,
            speed: optional_in_range(line, "speed", &rec[3], 0.0, 120.0)?,
            volume: optional_in_range(line, "volume", &rec[4], 0.0, f32::MAX)?,
            occupancy: optional_in_range(line, "occupancy", &rec[5], 0.0, 100.0)?,
        });
    }
    Ok(out)
}

pub fn parse_sensor_csv(path: impl AsRef<Path>) -> Result<Vec<SensorReading>, DataError> {
    read_sensor_csv(open(path.as_ref())?)
}

fn fmt_opt(v: Option<f32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sensor_csv<W: Write>(mut w: W, readings: &[SensorReading]) -> std::io::Result<()> {
    writeln!(w, "{SENSOR_HEADER}")?;
    for r in readings {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.time_unix,
            r.milemarker,
            r.lane,
            fmt_opt(r.speed),
            fmt_opt(r.volume),
            fmt_opt(r.occupancy)
        )?;
    }
    Ok(())
}

/// Reads an incident CSV with header `report_time_unix,milemarker,kind`.
/// The result is sorted by report time.
pub fn read_incident_log<R: Read>(reader: R) -> Result<IncidentLog, DataError> {
    let mut out = Vec::new();
    for item in records(reader, INCIDENT_HEADER)? {
        let (line, rec) = item?;
        expect_fields(line, &rec, 3)?;
        let report_time_unix: i64 = parse_num(line, "report_time_unix", &rec[0])?;
        let milemarker = if rec[1].is_empty() {
            None
        } else {
            Some(parse_num::<f64>(line, "milemarker", &rec[1])?)
        };
        let kind = match &rec[2] {
            "crash" => IncidentKind::Crash,
            "manual" => IncidentKind::Manual,
            other => {
                return Err(DataError::UnknownKind {
                    line,
                    kind: other.to_string(),
                })
            }
        };
        out.push(IncidentRecord {
            report_time_unix,
            milemarker,
            kind,
        });
    }
    Ok(IncidentLog::new(out))
}

pub fn parse_incident_log(path: impl AsRef<Path>) -> Result<IncidentLog, DataError> {
    read_incident_log(open(path.as_ref())?)
}

pub fn write_incident_log<W: Write>(mut w: W, log: &IncidentLog) -> std::io::Result<()> {
    writeln!(w, "{INCIDENT_HEADER}")?;
    for r in log.records() {
        let mm = r.milemarker.map(|m| m.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{}", r.report_time_unix, mm, r.kind.as_str())?;
    }
    Ok(())
}
