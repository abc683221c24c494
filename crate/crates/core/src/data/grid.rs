use std::collections::BTreeSet;
use std::ops::Range;

use chrono::{DateTime, NaiveDate};

use super::{DataError, SensorReading};

/// Sensor cadence.
pub const TICK_SECONDS: i64 = 30;
pub const N_FEATURES: usize = 3;

/// Feature channels, in grid storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Feature {
    Speed = 0,
    Occupancy = 1,
    Volume = 2,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Speed, Feature::Occupancy, Feature::Volume];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Speed => "speed",
            Feature::Occupancy => "occupancy",
            Feature::Volume => "volume",
        }
    }
}

/// Lane-level sensor location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeId {
    pub milemarker: f64,
    pub lane: u8,
}

/// Contiguous run of grid times belonging to one local calendar day.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DaySegment {
    pub date: NaiveDate,
    pub start: usize,
    pub len: usize,
}

impl DaySegment {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Daily observation window in local time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DayWindow {
    /// Seconds after local midnight, inclusive.
    pub start_seconds: i64,
    /// Seconds after local midnight, exclusive.
    pub end_seconds: i64,
    /// Local time minus UTC, in seconds.
    pub utc_offset_seconds: i64,
}

impl Default for DayWindow {
    /// 04:00-12:00, US Central daylight time.
    fn default() -> Self {
        DayWindow {
            start_seconds: 4 * 3600,
            end_seconds: 12 * 3600,
            utc_offset_seconds: -5 * 3600,
        }
    }
}

impl DayWindow {
    pub fn from_hours(start_hour: f64, end_hour: f64, utc_offset_hours: f64) -> Self {
        DayWindow {
            start_seconds: (start_hour * 3600.0).round() as i64,
            end_seconds: (end_hour * 3600.0).round() as i64,
            utc_offset_seconds: (utc_offset_hours * 3600.0).round() as i64,
        }
    }

    pub fn steps_per_day(&self) -> usize {
        ((self.end_seconds - self.start_seconds).max(0) / TICK_SECONDS) as usize
    }

    /// Unix time of the first tick of `date`.
    pub fn day_start_unix(&self, date: NaiveDate) -> i64 {
        let midnight = date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp();
        midnight - self.utc_offset_seconds + self.start_seconds
    }

    /// Local date and seconds after local midnight.
    pub fn local(&self, time_unix: i64) -> (NaiveDate, i64) {
        let local = time_unix + self.utc_offset_seconds;
        let days = local.div_euclid(86_400);
        let secs = local.rem_euclid(86_400);
        let date = DateTime::from_timestamp(days * 86_400, 0)
            .expect("timestamp in chrono range")
            .date_naive();
        (date, secs)
    }
}

/// Dense `[time x node x feature]` measurements with a missing-value mask.
///
/// Nodes are ordered by milemarker descending (direction of travel) then lane
/// ascending, so `node = mm_index * n_lanes + (lane - 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorGrid {
    times: Vec<i64>,
    days: Vec<DaySegment>,
    milemarkers: Vec<f64>,
    n_lanes: usize,
    values: Vec<f32>,
    missing: Vec<bool>,
}

impl SensorGrid {
    /// Validates and wraps raw storage.
    pub fn new(
        times: Vec<i64>,
        days: Vec<DaySegment>,
        milemarkers: Vec<f64>,
        n_lanes: usize,
        values: Vec<f32>,
        missing: Vec<bool>,
    ) -> Result<Self, DataError> {
        let bad = |m: String| Err(DataError::InvalidGrid(m));
        if n_lanes == 0 || milemarkers.is_empty() {
            return bad("grid needs at least one node".into());
        }
        if milemarkers.windows(2).any(|w| w[0] <= w[1]) {
            return bad("milemarkers must be strictly descending".into());
        }
        let cells = times.len() * milemarkers.len() * n_lanes * N_FEATURES;
        if values.len() != cells || missing.len() != cells {
            return bad(format!("expected {cells} cells"));
        }
        let mut next = 0;
        for d in &days {
            if d.start != next {
                return bad("day segments must tile the time axis".into());
            }
            let seg = &times[d.range()];
            if seg.windows(2).any(|w| w[1] - w[0] != TICK_SECONDS) {
                return bad(format!("day {} is not on a 30 s cadence", d.date));
            }
            next += d.len;
        }
        if next != times.len() {
            return bad("day segments must tile the time axis".into());
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return bad("times must be strictly increasing".into());
        }
        Ok(SensorGrid {
            times,
            days,
            milemarkers,
            n_lanes,
            values,
            missing,
        })
    }

    /// Grid with every cell missing and zero-filled.
    pub fn empty(
        window: &DayWindow,
        dates: &[NaiveDate],
        milemarkers: Vec<f64>,
        n_lanes: usize,
    ) -> Result<Self, DataError> {
        let steps = window.steps_per_day();
        let mut times = Vec::with_capacity(steps * dates.len());
        let mut days = Vec::with_capacity(dates.len());
        for &date in dates {
            let t0 = window.day_start_unix(date);
            days.push(DaySegment {
                date,
                start: times.len(),
                len: steps,
            });
            times.extend((0..steps as i64).map(|i| t0 + i * TICK_SECONDS));
        }
        let cells = times.len() * milemarkers.len() * n_lanes * N_FEATURES;
        SensorGrid::new(times, days, milemarkers, n_lanes, vec![0.0; cells], vec![true; cells])
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn days(&self) -> &[DaySegment] {
        &self.days
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.days.iter().map(|d| d.date).collect()
    }

    pub fn milemarkers(&self) -> &[f64] {
        &self.milemarkers
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_lanes(&self) -> usize {
        self.n_lanes
    }

    pub fn n_milemarkers(&self) -> usize {
        self.milemarkers.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.milemarkers.len() * self.n_lanes
    }

    /// `lane` is 1-based.
    #[inline]
    pub fn node_index(&self, mm_index: usize, lane: u8) -> usize {
        mm_index * self.n_lanes + (lane as usize - 1)
    }

    pub fn node_id(&self, node: usize) -> NodeId {
        NodeId {
            milemarker: self.milemarkers[node / self.n_lanes],
            lane: (node % self.n_lanes + 1) as u8,
        }
    }

    #[inline]
    pub fn cell(&self, t: usize, node: usize, f: Feature) -> usize {
        (t * self.n_nodes() + node) * N_FEATURES + f.index()
    }

    #[inline]
    pub fn value(&self, t: usize, node: usize, f: Feature) -> f32 {
        self.values[self.cell(t, node, f)]
    }

    #[inline]
    pub fn get(&self, t: usize, node: usize, f: Feature) -> Option<f32> {
        let c = self.cell(t, node, f);
        (!self.missing[c]).then_some(self.values[c])
    }

    #[inline]
    pub fn is_missing(&self, t: usize, node: usize, f: Feature) -> bool {
        self.missing[self.cell(t, node, f)]
    }

    pub fn set(&mut self, t: usize, node: usize, f: Feature, v: f32) {
        let c = self.cell(t, node, f);
        self.values[c] = v;
        self.missing[c] = false;
    }

    pub fn clear(&mut self, t: usize, node: usize, f: Feature) {
        let c = self.cell(t, node, f);
        self.values[c] = 0.0;
        self.missing[c] = true;
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    /// The `[n_nodes x 3]` block at time `t`.
    pub fn snapshot(&self, t: usize) -> &[f32] {
        let w = self.n_nodes() * N_FEATURES;
        &self.values[t * w..(t + 1) * w]
    }

    pub fn missing_count(&self, f: Feature) -> usize {
        self.missing
            .iter()
            .skip(f.index())
            .step_by(N_FEATURES)
            .filter(|&&m| m)
            .count()
    }

    pub fn is_complete(&self) -> bool {
        !self.missing.iter().any(|&m| m)
    }

    /// Index of the day containing time index `t`.
    pub fn day_of(&self, t: usize) -> usize {
        self.days.partition_point(|d| d.start + d.len <= t)
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.days.iter().position(|d| d.date == date)
    }

    pub fn time_index(&self, time_unix: i64) -> Option<usize> {
        self.times.binary_search(&time_unix).ok()
    }

    /// One reading per (time, node), time-major; missing cells become empty
    /// fields.
    pub fn to_readings(&self) -> Vec<SensorReading> {
        let mut out = Vec::with_capacity(self.n_times() * self.n_nodes());
        for (t, &time_unix) in self.times.iter().enumerate() {
            for node in 0..self.n_nodes() {
                let id = self.node_id(node);
                out.push(SensorReading {
                    time_unix,
                    milemarker: id.milemarker,
                    lane: id.lane,
                    speed: self.get(t, node, Feature::Speed),
                    volume: self.get(t, node, Feature::Volume),
                    occupancy: self.get(t, node, Feature::Occupancy),
                });
            }
        }
        out
    }
}

/// Bookkeeping from [`assemble_grid`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AssemblyReport {
    /// Readings that overwrote an earlier reading for the same cell.
    pub duplicates: usize,
    /// Readings outside the daily window.
    pub outside_window: usize,
}

fn mm_key(mm: f64) -> i64 {
    (mm * 10_000.0).round() as i64
}

/// Places readings into a dense grid spanning `window` on every day that has
/// at least one in-window reading. Duplicate readings for a cell are resolved
/// last-wins.
pub fn assemble_grid(
    readings: &[SensorReading],
    window: &DayWindow,
) -> Result<(SensorGrid, AssemblyReport), DataError> {
    let mut report = AssemblyReport::default();
    let mut dates = BTreeSet::new();
    let mut mms = BTreeSet::new();
    let mut n_lanes = 0u8;
    let mut placed = Vec::with_capacity(readings.len());

    for r in readings {
        let (date, secs) = window.local(r.time_unix);
        if (secs - window.start_seconds).rem_euclid(TICK_SECONDS) != 0 {
            return Err(DataError::InconsistentCadence { time_unix: r.time_unix });
        }
        if secs < window.start_seconds || secs >= window.end_seconds {
            report.outside_window += 1;
            continue;
        }
        let tick = ((secs - window.start_seconds) / TICK_SECONDS) as usize;
        dates.insert(date);
        mms.insert(mm_key(r.milemarker));
        n_lanes = n_lanes.max(r.lane);
        placed.push((date, tick, r));
    }
    if placed.is_empty() {
        return Err(DataError::EmptyInput);
    }

    let keys: Vec<i64> = mms.into_iter().rev().collect();
    let milemarkers: Vec<f64> = keys.iter().map(|&k| k as f64 / 10_000.0).collect();
    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let mut grid = SensorGrid::empty(window, &dates, milemarkers, n_lanes as usize)?;
    let steps = window.steps_per_day();
    let mut seen = vec![false; grid.n_times() * grid.n_nodes()];

    for (date, tick, r) in placed {
        let day = dates.binary_search(&date).unwrap();
        let t = day * steps + tick;
        let mm_index = keys.binary_search_by(|k| mm_key(r.milemarker).cmp(k)).unwrap();
        let node = grid.node_index(mm_index, r.lane);
        let slot = t * grid.n_nodes() + node;
        if seen[slot] {
            report.duplicates += 1;
        }
        seen[slot] = true;
        for (f, v) in [
            (Feature::Speed, r.speed),
            (Feature::Occupancy, r.occupancy),
            (Feature::Volume, r.volume),
        ] {
            match v {
                Some(v) => grid.set(t, node, f, v),
                None => grid.clear(t, node, f),
            }
        }
    }
    if report.duplicates > 0 {
        log::warn!("{} duplicate readings resolved last-wins", report.duplicates);
    }
    Ok((grid, report))
}
