use chrono::NaiveDate;

use super::{IncidentKind, IncidentLog, SensorGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskReason {
    CrashWindow,
    ManualWindow,
    ExcludedDay,
}

impl MaskReason {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskReason::CrashWindow => "crash_window",
            MaskReason::ManualWindow => "manual_window",
            MaskReason::ExcludedDay => "excluded_day",
        }
    }
}

/// A closed interval `[start_unix, end_unix]` removed from training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskedInterval {
    pub start_unix: i64,
    pub end_unix: i64,
    pub reason: MaskReason,
}

/// Anomaly windows around incident reports, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskWindows {
    pub crash_before: i64,
    pub crash_after: i64,
    pub manual_after: i64,
    /// Keep manual-label windows in the training data.
    pub include_manual_anomalies: bool,
}

impl Default for MaskWindows {
    fn default() -> Self {
        MaskWindows {
            crash_before: 30 * 60,
            crash_after: 2 * 3600,
            manual_after: 2 * 3600,
            include_manual_anomalies: false,
        }
    }
}

/// Per-time usability for training, indexed like the grid's time axis.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMask {
    usable: Vec<bool>,
    intervals: Vec<MaskedInterval>,
}

impl TrainingMask {
    pub fn all_usable(n_times: usize) -> Self {
        TrainingMask {
            usable: vec![true; n_times],
            intervals: Vec::new(),
        }
    }

    #[inline]
    pub fn is_usable(&self, t: usize) -> bool {
        self.usable[t]
    }

    pub fn usable(&self) -> &[bool] {
        &self.usable
    }

    pub fn usable_count(&self) -> usize {
        self.usable.iter().filter(|&&u| u).count()
    }

    pub fn len(&self) -> usize {
        self.usable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.usable.is_empty()
    }

    pub fn intervals(&self) -> &[MaskedInterval] {
        &self.intervals
    }

    pub fn mask_time(&mut self, t: usize) {
        self.usable[t] = false;
    }

    /// Masks every grid time inside `interval` and records it.
    pub fn mask_interval(&mut self, times: &[i64], interval: MaskedInterval) {
        let lo = times.partition_point(|&t| t < interval.start_unix);
        let hi = times.partition_point(|&t| t <= interval.end_unix);
        for u in &mut self.usable[lo..hi] {
            *u = false;
        }
        self.intervals.push(interval);
    }

    /// Copy with every day not in `days` masked out.
    pub fn restrict_to_days(&self, grid: &SensorGrid, days: &[NaiveDate]) -> TrainingMask {
        let mut out = self.clone();
        for seg in grid.days() {
            if !days.contains(&seg.date) {
                for u in &mut out.usable[seg.range()] {
                    *u = false;
                }
            }
        }
        out
    }
}

/// Masks crash windows, manual-label windows (unless included) and whole
/// excluded days on the grid's time axis.
pub fn build_training_mask(
    grid: &SensorGrid,
    log: &IncidentLog,
    windows: &MaskWindows,
    excluded_days: &[NaiveDate],
) -> TrainingMask {
    let times = grid.times();
    let mut mask = TrainingMask::all_usable(times.len());
    for r in log.records() {
        let interval = match r.kind {
            IncidentKind::Crash => MaskedInterval {
                start_unix: r.report_time_unix - windows.crash_before,
                end_unix: r.report_time_unix + windows.crash_after,
                reason: MaskReason::CrashWindow,
            },
            IncidentKind::Manual if !windows.include_manual_anomalies => MaskedInterval {
                start_unix: r.report_time_unix,
                end_unix: r.report_time_unix + windows.manual_after,
                reason: MaskReason::ManualWindow,
            },
            IncidentKind::Manual => continue,
        };
        mask.mask_interval(times, interval);
    }
    for seg in grid.days().iter().filter(|d| excluded_days.contains(&d.date)) {
        let range = seg.range();
        mask.mask_interval(
            times,
            MaskedInterval {
                start_unix: times[range.start],
                end_unix: times[range.end - 1],
                reason: MaskReason::ExcludedDay,
            },
        );
    }
    mask
}
