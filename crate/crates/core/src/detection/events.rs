use crate::data::{IncidentLog, TICK_SECONDS};

use super::DetectionResult;

/// Default half-width of the crash match window, seconds.
pub const MATCH_WINDOW_SECONDS: i64 = 15 * 60;

/// Detection outcome for one crash report.
#[derive(Clone, Debug, PartialEq)]
pub struct CrashOutcome {
    pub report_time_unix: i64,
    pub milemarker: Option<f64>,
    /// Earliest any-node detection inside the match window.
    pub detected_unix: Option<i64>,
    /// `detected - report` in minutes; negative means before the report.
    pub rrd_minutes: Option<f64>,
    /// False when no scored time falls inside the window; such crashes are
    /// left out of the aggregates.
    pub covered: bool,
    /// The scored times cover only part of the window.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventEvaluation {
    pub outcomes: Vec<CrashOutcome>,
    pub n_evaluated: usize,
    pub n_detected: usize,
    pub miss_pct: f64,
    /// Mean reporting-delay reduction over detected crashes, minutes.
    pub rrd_mean: Option<f64>,
    /// Population standard deviation of the same.
    pub rrd_std: Option<f64>,
}

/// Matches each crash in `log` to the earliest flagged time within
/// `match_window` seconds of its report. Location is not matched.
pub fn evaluate_events(result: &DetectionResult, log: &IncidentLog, match_window: i64) -> EventEvaluation {
    let times = result.times_unix();
    let any = result.any_flagged();
    let mut outcomes = Vec::new();
    for crash in log.crashes() {
        let t = crash.report_time_unix;
        let (lo, hi) = (t - match_window, t + match_window);
        let rows: Vec<usize> = (0..times.len()).filter(|&r| (lo..=hi).contains(&times[r])).collect();
        let covered = !rows.is_empty();
        let truncated = covered && {
            let first = times[rows[0]];
            let last = times[*rows.last().unwrap()];
            first - lo >= TICK_SECONDS || hi - last >= TICK_SECONDS
        };
        let detected_unix = rows.iter().filter(|&&r| any[r]).map(|&r| times[r]).min();
        outcomes.push(CrashOutcome {
            report_time_unix: t,
            milemarker: crash.milemarker,
            detected_unix,
            rrd_minutes: detected_unix.map(|d| (d - t) as f64 / 60.0),
            covered,
            truncated,
        });
    }
    summarize(outcomes)
}

fn summarize(outcomes: Vec<CrashOutcome>) -> EventEvaluation {
    let evaluated: Vec<&CrashOutcome> = outcomes.iter().filter(|o| o.covered).collect();
    let rrd: Vec<f64> = evaluated.iter().filter_map(|o| o.rrd_minutes).collect();
    let n_evaluated = evaluated.len();
    let n_detected = rrd.len();
    let miss_pct = if n_evaluated == 0 {
        f64::NAN
    } else {
        100.0 * (n_evaluated - n_detected) as f64 / n_evaluated as f64
    };
    let (rrd_mean, rrd_std) = if rrd.is_empty() {
        (None, None)
    } else {
        let n = rrd.len() as f64;
        let mean = rrd.iter().sum::<f64>() / n;
        let var = rrd.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (Some(mean), Some(var.sqrt()))
    };
    EventEvaluation {
        outcomes,
        n_evaluated,
        n_detected,
        miss_pct,
        rrd_mean,
        rrd_std,
    }
}

/// Ground-truth class of one time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TimeLabel {
    Positive,
    Negative,
    Excluded,
}

/// How times after a manual anomaly label are counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManualPolicy {
    Exclude,
    Positive,
}

/// Labeling windows, seconds relative to report times.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelWindows {
    pub crash_before: i64,
    pub crash_after: i64,
    pub manual_after: i64,
    pub manual: ManualPolicy,
}

impl Default for LabelWindows {
    fn default() -> Self {
        LabelWindows {
            crash_before: 15 * 60,
            crash_after: 2 * 3600,
            manual_after: 2 * 3600,
            manual: ManualPolicy::Exclude,
        }
    }
}

/// Positive within `[report - crash_before, report + crash_after]` of any
/// crash; times within `[label, label + manual_after]` of a manual label
/// follow `windows.manual` unless already positive; everything else is
/// negative.
pub fn label_timesteps(log: &IncidentLog, times_unix: &[i64], windows: &LabelWindows) -> Vec<TimeLabel> {
    let crashes: Vec<(i64, i64)> = log
        .crashes()
        .map(|c| {
            (
                c.report_time_unix - windows.crash_before,
                c.report_time_unix + windows.crash_after,
            )
        })
        .collect();
    let manual: Vec<(i64, i64)> = log
        .manual()
        .map(|m| (m.report_time_unix, m.report_time_unix + windows.manual_after))
        .collect();
    let inside = |spans: &[(i64, i64)], t: i64| spans.iter().any(|&(a, b)| (a..=b).contains(&t));
    times_unix
        .iter()
        .map(|&t| {
            if inside(&crashes, t) {
                TimeLabel::Positive
            } else if inside(&manual, t) {
                match windows.manual {
                    ManualPolicy::Exclude => TimeLabel::Excluded,
                    ManualPolicy::Positive => TimeLabel::Positive,
                }
            } else {
                TimeLabel::Negative
            }
        })
        .collect()
}
