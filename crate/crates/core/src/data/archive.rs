use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{DataError, DaySegment, SensorGrid, TICK_SECONDS};

const MAGIC: &str = "FTAED-GRID v1";

/// Writes a binary grid archive: a text header terminated by `end_header`,
/// then little-endian f32 values, then one byte per cell for the missing mask.
pub fn write_grid(path: impl AsRef<Path>, grid: &SensorGrid) -> Result<(), DataError> {
    let path = path.as_ref();
    let io = |e| DataError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    encode(&mut w, grid).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<SensorGrid, DataError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| DataError::io(path, e))?;
    decode(BufReader::new(f))
}

pub(crate) fn encode<W: Write>(w: &mut W, grid: &SensorGrid) -> std::io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "n_lanes={}", grid.n_lanes())?;
    let mms: Vec<String> = grid.milemarkers().iter().map(|m| m.to_string()).collect();
    writeln!(w, "milemarkers={}", mms.join(","))?;
    let days: Vec<String> = grid
        .days()
        .iter()
        .map(|d| {
            let t0 = grid.times().get(d.start).copied().unwrap_or(0);
            format!("{}@{}x{}", d.date.format("%Y-%m-%d"), t0, d.len)
        })
        .collect();
    writeln!(w, "days={}", days.join(","))?;
    writeln!(w, "end_header")?;
    for v in grid.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    let mask: Vec<u8> = grid.missing().iter().map(|&m| m as u8).collect();
    w.write_all(&mask)
}

pub(crate) fn decode<R: BufRead>(mut r: R) -> Result<SensorGrid, DataError> {
    let bad = |m: &str| DataError::BadArchive(m.to_string());
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String, DataError> {
        line.clear();
        r.read_line(&mut line)
            .map_err(|e| DataError::BadArchive(e.to_string()))?;
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut r)? != MAGIC {
        return Err(bad("missing magic line"));
    }
    let (mut n_lanes, mut milemarkers, mut days) = (None, None, None);
    loop {
        let l = next_line(&mut r)?;
        if l == "end_header" {
            break;
        }
        if l.is_empty() {
            return Err(bad("truncated header"));
        }
        let (k, v) = l.split_once('=').ok_or_else(|| bad("header line without `=`"))?;
        match k {
            "n_lanes" => n_lanes = Some(v.parse::<usize>().map_err(|_| bad("bad n_lanes"))?),
            "milemarkers" => {
                milemarkers = Some(
                    v.split(',')
                        .map(|m| m.parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| bad("bad milemarkers"))?,
                )
            }
            "days" => days = Some(v.to_string()),
            _ => return Err(DataError::BadArchive(format!("unknown header key `{k}`"))),
        }
    }
    let n_lanes = n_lanes.ok_or_else(|| bad("missing n_lanes"))?;
    let milemarkers = milemarkers.ok_or_else(|| bad("missing milemarkers"))?;
    let days = days.ok_or_else(|| bad("missing days"))?;

    let mut times = Vec::new();
    let mut segments = Vec::new();
    for item in days.split(',').filter(|s| !s.is_empty()) {
        let (date, rest) = item.split_once('@').ok_or_else(|| bad("bad day entry"))?;
        let (t0, len) = rest.split_once('x').ok_or_else(|| bad("bad day entry"))?;
        let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| bad("bad day date"))?;
        let t0: i64 = t0.parse().map_err(|_| bad("bad day start"))?;
        let len: usize = len.parse().map_err(|_| bad("bad day length"))?;
        segments.push(DaySegment {
            date,
            start: times.len(),
            len,
        });
        times.extend((0..len as i64).map(|i| t0 + i * TICK_SECONDS));
    }

    let cells = times.len() * milemarkers.len() * n_lanes * super::N_FEATURES;
    let mut raw = vec![0u8; cells * 4];
    r.read_exact(&mut raw).map_err(|_| bad("truncated values"))?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut mask = vec![0u8; cells];
    r.read_exact(&mut mask).map_err(|_| bad("truncated mask"))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| DataError::BadArchive(e.to_string()))? != 0 {
        return Err(bad("trailing bytes"));
    }
    let missing = mask.into_iter().map(|b| b != 0).collect();
    SensorGrid::new(times, segments, milemarkers, n_lanes, values, missing)
}
