//! Synthetic freeway scenarios: rush-hour congestion waves plus injected
//! incidents with delayed reports and known ground truth.

use std::io::{Read, Write};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::data::{
    DataError, DayWindow, Feature, IncidentKind, IncidentLog, IncidentRecord, SensorGrid, N_FEATURES, TICK_SECONDS,
};
use crate::exec::Execution;
use crate::models::mix;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("incident {index} is outside the grid: {reason}")]
    OutOfBounds { index: usize, reason: String },
    #[error("malformed ground truth at line {line}: {reason}")]
    MalformedTruth { line: u64, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Scenario geometry and traffic shape. Speeds in mph, times in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_milemarkers: usize,
    pub n_lanes: usize,
    pub n_days: usize,
    pub steps_per_day: usize,
    pub first_date: NaiveDate,
    /// Most upstream milemarker; the rest follow at `spacing` miles.
    pub first_milemarker: f64,
    pub spacing: f64,
    /// First tick of each day, seconds after local midnight.
    pub day_start_seconds: i64,
    pub utc_offset_seconds: i64,
    pub free_speed: f64,
    pub congested_speed: f64,
    /// Congestion onset and release at the downstream boundary, seconds after
    /// local midnight. The queue tail grows upstream from `rush_start` and
    /// recedes so that it is gone at `rush_end`. `start >= end` disables
    /// congestion.
    pub rush_start: i64,
    pub rush_end: i64,
    /// Upstream propagation of congestion fronts and stop-and-go bands.
    pub wave_speed: f64,
    /// Period of the stop-and-go bands inside congestion.
    pub wave_period: f64,
    /// Daily jitter of the rush window.
    pub rush_jitter: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_milemarkers: 49,
            n_lanes: 4,
            n_days: 6,
            steps_per_day: 960,
            first_date: NaiveDate::from_ymd_opt(2023, 10, 2).unwrap(),
            first_milemarker: 70.0,
            spacing: 0.3,
            day_start_seconds: 4 * 3600,
            utc_offset_seconds: -5 * 3600,
            free_speed: 65.0,
            congested_speed: 25.0,
            rush_start: 5 * 3600 + 45 * 60,
            rush_end: 8 * 3600 + 30 * 60,
            wave_speed: -12.0,
            wave_period: 720.0,
            rush_jitter: 600.0,
            noise_std: 1.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_milemarkers == 0 || self.n_lanes == 0 || self.n_lanes > 4 {
            return bad("need at least one milemarker and 1-4 lanes");
        }
        if self.n_days == 0 || self.steps_per_day == 0 {
            return bad("need at least one day of one step");
        }
        if self.day_start_seconds < 0 || self.day_start_seconds + self.steps_per_day as i64 * TICK_SECONDS > 86_400 {
            return bad("the daily window must fit in one day");
        }
        if !(self.free_speed > self.congested_speed && self.congested_speed > 0.0 && self.free_speed <= 120.0) {
            return bad("need 120 >= free_speed > congested_speed > 0");
        }
        if !(self.wave_speed < 0.0) {
            return bad("wave_speed must be negative");
        }
        if !(self.spacing > 0.0 && self.wave_period > 0.0) {
            return bad("spacing and wave_period must be positive");
        }
        if !(self.noise_std >= 0.0 && self.rush_jitter >= 0.0) {
            return bad("noise_std and rush_jitter must be non-negative");
        }
        Ok(())
    }

    pub fn day_window(&self) -> DayWindow {
        DayWindow {
            start_seconds: self.day_start_seconds,
            end_seconds: self.day_start_seconds + self.steps_per_day as i64 * TICK_SECONDS,
            utc_offset_seconds: self.utc_offset_seconds,
        }
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.first_date.iter_days().take(self.n_days).collect()
    }

    /// Strictly descending, rounded to 1e-4 mile so CSV round trips are exact.
    pub fn milemarkers(&self) -> Vec<f64> {
        (0..self.n_milemarkers)
            .map(|i| ((self.first_milemarker - i as f64 * self.spacing) * 10_000.0).round() / 10_000.0)
            .collect()
    }

    /// Occupancy implied by a speed.
    pub fn occupancy(&self, speed: f32) -> f32 {
        (100.0 * (1.0 - speed as f64 / self.free_speed)).clamp(0.0, 100.0) as f32
    }

    /// Volume implied by a speed; peaks at half the free speed.
    pub fn volume(&self, speed: f32) -> f32 {
        let v = speed as f64;
        (0.8 * v * self.occupancy(speed) as f64 / self.free_speed) as f32
    }
}

/// One incident to inject.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectedIncident {
    pub true_time_unix: i64,
    pub milemarker: f64,
    pub lane: u8,
    /// Fractional speed drop at the apex, in (0, 1]. Zero injects nothing.
    pub severity: f64,
    /// Seconds until the blockage clears.
    pub duration: i64,
    /// Upstream growth of the queue tail, mph (negative).
    pub backprop_speed: f64,
    pub report_delay: i64,
}

impl InjectedIncident {
    pub fn report_time_unix(&self) -> i64 {
        self.true_time_unix + self.report_delay
    }

    /// Recovery moves upstream twice as fast as the queue grew, closing the
    /// triangle at `2 * duration`.
    fn recovery_speed(&self) -> f64 {
        2.0 * self.backprop_speed.abs()
    }

    /// Multiplier on speed at a cell `upstream` miles above the epicenter and
    /// `dt` seconds after the true time; 1 outside the triangle.
    pub fn speed_factor(&self, upstream: f64, dt: f64, lane_offset: u32) -> f64 {
        if upstream < 0.0 || dt < 0.0 || self.severity == 0.0 {
            return 1.0;
        }
        let tail = self.backprop_speed.abs() * dt / 3600.0;
        let head = self.recovery_speed() * (dt - self.duration as f64) / 3600.0;
        if upstream > tail || upstream < head {
            return 1.0;
        }
        let reach = self.backprop_speed.abs() * 2.0 * self.duration as f64 / 3600.0;
        let spatial = if reach > 0.0 { 1.0 - 0.5 * upstream / reach } else { 1.0 };
        let decay = spatial * 0.6f64.powi(lane_offset as i32);
        1.0 - self.severity * decay
    }
}

/// Scenario output: the grid, the delayed incident reports and the truth.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub grid: SensorGrid,
    pub log: IncidentLog,
    pub truth: Vec<InjectedIncident>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Incident-free traffic: free flow, rush-hour congestion waves and noise.
pub fn generate_nominal(config: &SynthConfig) -> Result<Scenario, SynthError> {
    generate_nominal_with(config, Execution::default())
}

pub fn generate_nominal_with(config: &SynthConfig, exec: Execution) -> Result<Scenario, SynthError> {
    config.validate()?;
    let window = config.day_window();
    let dates = config.dates();
    let mms = config.milemarkers();
    let mut grid = SensorGrid::empty(&window, &dates, mms.clone(), config.n_lanes)?;
    let n_nodes = grid.n_nodes();
    let day_cells = config.steps_per_day * n_nodes * N_FEATURES;
    let downstream = mms[mms.len() - 1];
    let wave = config.wave_speed.abs();
    // front softness, miles
    let edge = 0.1;

    let days: Vec<Vec<f32>> = exec.map(config.n_days, |day| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, day as u64));
        let jitter = |rng: &mut ChaCha8Rng| {
            if config.rush_jitter > 0.0 {
                rng.gen_range(-config.rush_jitter..=config.rush_jitter)
            } else {
                0.0
            }
        };
        let onset = config.rush_start as f64 + jitter(&mut rng);
        let release = config.rush_end as f64 + jitter(&mut rng);
        let phase = rng.gen_range(0.0..config.wave_period);
        let noise = Normal::new(0.0, config.noise_std).unwrap();
        let active = config.rush_start < config.rush_end;
        let mut out = vec![0.0f32; day_cells];
        for step in 0..config.steps_per_day {
            let secs = (config.day_start_seconds + step as i64 * TICK_SECONDS) as f64;
            for (m, &mm) in mms.iter().enumerate() {
                let d = mm - downstream;
                let c = if active {
                    let queue = wave * (secs - onset).min(release - secs) / 3600.0;
                    logistic((queue - d) / edge)
                } else {
                    0.0
                };
                // time measured along the upstream-moving characteristic
                let u = secs - d / wave * 3600.0;
                let band = 0.5 + 0.5 * (std::f64::consts::TAU * (u + phase) / config.wave_period).sin();
                let floor = config.congested_speed + 0.25 * (config.free_speed - config.congested_speed) * band;
                for lane in 0..config.n_lanes {
                    let depth = if lane == 0 { 0.9 } else { 1.0 };
                    let base = config.free_speed - (config.free_speed - floor) * c * depth;
                    let v = if config.noise_std > 0.0 {
                        base + noise.sample(&mut rng)
                    } else {
                        base
                    };
                    let v = v.clamp(0.0, 120.0) as f32;
                    let cell = (step * n_nodes + m * config.n_lanes + lane) * N_FEATURES;
                    out[cell + Feature::Speed.index()] = v;
                    out[cell + Feature::Occupancy.index()] = config.occupancy(v);
                    out[cell + Feature::Volume.index()] = config.volume(v);
                }
            }
        }
        out
    });
    for t in 0..grid.n_times() {
        let (day, step) = (t / config.steps_per_day, t % config.steps_per_day);
        for node in 0..n_nodes {
            for f in Feature::ALL {
                let v = days[day][(step * n_nodes + node) * N_FEATURES + f.index()];
                grid.set(t, node, f, v);
            }
        }
    }
    Ok(Scenario {
        grid,
        log: IncidentLog::default(),
        truth: Vec::new(),
    })
}

fn check_incident(grid: &SensorGrid, index: usize, inc: &InjectedIncident) -> Result<(), SynthError> {
    let out = |reason: String| Err(SynthError::OutOfBounds { index, reason });
    let mms = grid.milemarkers();
    let (hi, lo) = (mms[0], mms[mms.len() - 1]);
    if !(lo..=hi).contains(&inc.milemarker) {
        return out(format!("milemarker {} not in [{lo}, {hi}]", inc.milemarker));
    }
    if inc.lane == 0 || inc.lane as usize > grid.n_lanes() {
        return out(format!("lane {} not in 1..={}", inc.lane, grid.n_lanes()));
    }
    let times = grid.times();
    if times.is_empty() || inc.true_time_unix < times[0] || inc.true_time_unix > times[times.len() - 1] {
        return out(format!("time {} outside the grid", inc.true_time_unix));
    }
    if !(0.0..=1.0).contains(&inc.severity) {
        return out(format!("severity {} not in [0, 1]", inc.severity));
    }
    if inc.report_delay < 0 || inc.duration < 0 || !(inc.backprop_speed < 0.0) {
        return out("need report_delay >= 0, duration >= 0, backprop_speed < 0".into());
    }
    Ok(())
}

/// Applies each incident's speed drop inside its space-time triangle, derives
/// occupancy and volume from the new speed, and logs a crash report at the
/// delayed time. Cells outside every triangle are left untouched.
pub fn inject_incidents(
    scenario: &Scenario,
    config: &SynthConfig,
    incidents: &[InjectedIncident],
) -> Result<Scenario, SynthError> {
    let grid = &scenario.grid;
    for (i, inc) in incidents.iter().enumerate() {
        check_incident(grid, i, inc)?;
    }
    let mut out = grid.clone();
    let mms = grid.milemarkers();
    let times = grid.times();
    for inc in incidents {
        let first = times.partition_point(|&t| t < inc.true_time_unix);
        let day = grid.days()[grid.day_of(first)];
        for (t, &time) in times.iter().enumerate().take(day.start + day.len).skip(first) {
            let dt = (time - inc.true_time_unix) as f64;
            for (m, &mm) in mms.iter().enumerate() {
                for lane in 1..=grid.n_lanes() as u8 {
                    let factor = inc.speed_factor(mm - inc.milemarker, dt, lane.abs_diff(inc.lane) as u32);
                    if factor >= 1.0 {
                        continue;
                    }
                    let node = grid.node_index(m, lane);
                    if out.is_missing(t, node, Feature::Speed) {
                        continue;
                    }
                    let v = (out.value(t, node, Feature::Speed) as f64 * factor) as f32;
                    out.set(t, node, Feature::Speed, v);
                    out.set(t, node, Feature::Occupancy, config.occupancy(v));
                    out.set(t, node, Feature::Volume, config.volume(v));
                }
            }
        }
    }
    let mut log = scenario.log.clone();
    for inc in incidents {
        log.push(IncidentRecord {
            report_time_unix: inc.report_time_unix(),
            milemarker: Some(inc.milemarker),
            kind: IncidentKind::Crash,
        });
    }
    let mut truth = scenario.truth.clone();
    truth.extend_from_slice(incidents);
    Ok(Scenario { grid: out, log, truth })
}

/// Placement of randomly drawn incidents.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidentPlan {
    /// Incidents per day, by day index.
    pub per_day: Vec<usize>,
    pub severity: (f64, f64),
    pub duration: (i64, i64),
    pub backprop_speed: (f64, f64),
    pub report_delay: (i64, i64),
    /// Earliest true time after the day's first tick.
    pub lead: i64,
    /// Latest true time before the day's last tick.
    pub tail: i64,
    /// Minimum gap between two incidents on one day.
    pub separation: i64,
    /// Milemarker indices kept clear of the road ends.
    pub edge_markers: usize,
}

impl IncidentPlan {
    /// Eight incidents over six days with reports 5-12 minutes late: one on
    /// each of the first four days and two on each of the last two.
    pub fn acceptance() -> Self {
        IncidentPlan {
            per_day: vec![1, 1, 1, 1, 2, 2],
            severity: (0.55, 0.8),
            duration: (20 * 60, 40 * 60),
            backprop_speed: (-14.0, -8.0),
            report_delay: (5 * 60, 12 * 60),
            lead: 20 * 60,
            tail: 2 * 3600 + 15 * 60,
            separation: 150 * 60,
            edge_markers: 5,
        }
    }

    /// Draws incidents on `grid`, deterministic in `seed`.
    pub fn draw(&self, grid: &SensorGrid, seed: u64) -> Result<Vec<InjectedIncident>, SynthError> {
        let mms = grid.milemarkers();
        if self.per_day.len() > grid.days().len() {
            return Err(SynthError::InvalidConfig(format!(
                "plan covers {} days, grid has {}",
                self.per_day.len(),
                grid.days().len()
            )));
        }
        if mms.len() <= 2 * self.edge_markers {
            return Err(SynthError::InvalidConfig("too few milemarkers for edge margin".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x1c1d));
        let mut out = Vec::new();
        for (d, &count) in self.per_day.iter().enumerate() {
            let day = grid.days()[d];
            let t0 = grid.times()[day.start];
            let t_last = grid.times()[day.start + day.len - 1];
            let (lo, hi) = (t0 + self.lead, t_last - self.tail);
            if lo > hi && count > 0 {
                return Err(SynthError::InvalidConfig("day too short for incident margins".into()));
            }
            let mut chosen: Vec<i64> = Vec::new();
            let mut attempts = 0;
            while chosen.len() < count {
                attempts += 1;
                if attempts > 10_000 {
                    return Err(SynthError::InvalidConfig(
                        "cannot separate incidents within a day".into(),
                    ));
                }
                let ticks = (hi - lo) / TICK_SECONDS;
                let t = lo + rng.gen_range(0..=ticks) * TICK_SECONDS;
                if chosen.iter().all(|&c| (c - t).abs() >= self.separation) {
                    chosen.push(t);
                }
            }
            chosen.sort_unstable();
            for t in chosen {
                let m = rng.gen_range(self.edge_markers..mms.len() - self.edge_markers);
                out.push(InjectedIncident {
                    true_time_unix: t,
                    milemarker: mms[m],
                    lane: rng.gen_range(1..=grid.n_lanes() as u8),
                    severity: rng.gen_range(self.severity.0..=self.severity.1),
                    duration: rng.gen_range(self.duration.0..=self.duration.1),
                    backprop_speed: rng.gen_range(self.backprop_speed.0..=self.backprop_speed.1),
                    report_delay: rng.gen_range(self.report_delay.0..=self.report_delay.1),
                });
            }
        }
        Ok(out)
    }
}

/// Nominal traffic with incidents drawn from `plan`.
pub fn generate_scenario(config: &SynthConfig, plan: &IncidentPlan, exec: Execution) -> Result<Scenario, SynthError> {
    let nominal = generate_nominal_with(config, exec)?;
    let incidents = plan.draw(&nominal.grid, config.seed)?;
    inject_incidents(&nominal, config, &incidents)
}

pub const TRUTH_HEADER: &str =
    "true_time_unix,report_time_unix,milemarker,lane,severity,duration_seconds,backprop_speed,report_delay_seconds";

pub fn write_ground_truth<W: Write>(mut w: W, truth: &[InjectedIncident]) -> std::io::Result<()> {
    writeln!(w, "{TRUTH_HEADER}")?;
    for i in truth {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            i.true_time_unix,
            i.report_time_unix(),
            i.milemarker,
            i.lane,
            i.severity,
            i.duration,
            i.backprop_speed,
            i.report_delay
        )?;
    }
    Ok(())
}

pub fn read_ground_truth<R: Read>(reader: R) -> Result<Vec<InjectedIncident>, SynthError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| SynthError::MalformedTruth {
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != TRUTH_HEADER {
        return Err(SynthError::MalformedTruth {
            line: 1,
            reason: format!("expected header `{TRUTH_HEADER}`"),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SynthError::MalformedTruth {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |field: &str| SynthError::MalformedTruth {
            line,
            reason: format!("bad `{field}`"),
        };
        let num = |i: usize, field: &str| rec[i].parse::<f64>().map_err(|_| bad(field));
        let int = |i: usize, field: &str| rec[i].parse::<i64>().map_err(|_| bad(field));
        let inc = InjectedIncident {
            true_time_unix: int(0, "true_time_unix")?,
            milemarker: num(2, "milemarker")?,
            lane: rec[3].parse().map_err(|_| bad("lane"))?,
            severity: num(4, "severity")?,
            duration: int(5, "duration_seconds")?,
            backprop_speed: num(6, "backprop_speed")?,
            report_delay: int(7, "report_delay_seconds")?,
        };
        if inc.report_time_unix() != int(1, "report_time_unix")? {
            return Err(SynthError::MalformedTruth {
                line,
                reason: "report time is not true time plus delay".into(),
            });
        }
        out.push(inc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_milemarkers: 12,
            n_lanes: 3,
            n_days: 2,
            steps_per_day: 240,
            day_start_seconds: 5 * 3600,
            rush_start: 5 * 3600 + 20 * 60,
            rush_end: 6 * 3600 + 10 * 60,
            ..SynthConfig::default()
        }
    }

    fn incident(grid: &SensorGrid, t: usize, m: usize) -> InjectedIncident {
        InjectedIncident {
            true_time_unix: grid.times()[t],
            milemarker: grid.milemarkers()[m],
            lane: 2,
            severity: 1.0,
            duration: 600,
            backprop_speed: -10.0,
            report_delay: 600,
        }
    }

    #[test]
    fn empty_rush_window_is_flat() {
        let cfg = SynthConfig {
            rush_start: 9 * 3600,
            rush_end: 9 * 3600,
            noise_std: 0.0,
            ..small()
        };
        let s = generate_nominal(&cfg).unwrap();
        assert!(s.grid.is_complete());
        for t in 0..s.grid.n_times() {
            for n in 0..s.grid.n_nodes() {
                assert_eq!(s.grid.value(t, n, Feature::Speed), 65.0);
                assert_eq!(s.grid.value(t, n, Feature::Occupancy), 0.0);
            }
        }
        assert!(s.log.is_empty());
    }

    #[test]
    fn deterministic_and_execution_independent() {
        let a = generate_nominal_with(&small(), Execution::Sequential).unwrap();
        let b = generate_nominal_with(&small(), Execution::Parallel).unwrap();
        assert_eq!(a.grid, b.grid);
        let c = generate_nominal(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.grid, c.grid);
    }

    #[test]
    fn speeds_within_three_sigma_of_the_band() {
        let cfg = small();
        let s = generate_nominal(&cfg).unwrap();
        let (lo, hi) = (
            cfg.congested_speed - 3.0 * cfg.noise_std,
            cfg.free_speed + 3.0 * cfg.noise_std,
        );
        let speeds: Vec<f64> = (0..s.grid.n_times())
            .flat_map(|t| (0..s.grid.n_nodes()).map(move |n| (t, n)))
            .map(|(t, n)| s.grid.value(t, n, Feature::Speed) as f64)
            .collect();
        let inside = speeds.iter().filter(|v| (lo..=hi).contains(*v)).count();
        assert!(inside as f64 >= 0.997 * speeds.len() as f64);
        // congestion actually happens
        assert!(speeds.iter().any(|&v| v < 0.5 * (cfg.free_speed + cfg.congested_speed)));
    }

    #[test]
    fn congestion_front_moves_upstream() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            rush_jitter: 0.0,
            ..small()
        };
        let s = generate_nominal(&cfg).unwrap();
        let g = &s.grid;
        let onset = |m: usize| {
            let node = g.node_index(m, 2);
            (0..g.days()[0].len)
                .find(|&t| g.value(t, node, Feature::Speed) < 55.0)
                .unwrap()
        };
        let last = g.n_milemarkers() - 1;
        assert!(onset(0) > onset(last));
        // 3.3 miles at 12 mph is 16.5 minutes
        let lag = (onset(0) - onset(last)) as f64 * 30.0 / 60.0;
        assert!((lag - 16.5).abs() < 1.5, "{lag}");
    }

    #[test]
    fn derived_features_follow_speed() {
        let cfg = small();
        assert_eq!(cfg.occupancy(65.0), 0.0);
        assert_eq!(cfg.occupancy(0.0), 100.0);
        assert_eq!(cfg.occupancy(80.0), 0.0);
        assert!(cfg.occupancy(20.0) > cfg.occupancy(40.0));
        assert!(cfg.volume(32.5) > cfg.volume(10.0));
        assert!(cfg.volume(32.5) > cfg.volume(55.0));
        assert!((cfg.volume(32.5) - 20.0).abs() < 1e-4);
    }

    #[test]
    fn full_severity_zeroes_the_apex() {
        let cfg = small();
        let s = generate_nominal(&cfg).unwrap();
        let inc = incident(&s.grid, 100, 6);
        let out = inject_incidents(&s, &cfg, &[inc]).unwrap();
        let node = out.grid.node_index(6, 2);
        assert_eq!(out.grid.value(100, node, Feature::Speed), 0.0);
        assert_eq!(out.grid.value(100, node, Feature::Occupancy), 100.0);
        assert_eq!(out.grid.value(100, node, Feature::Volume), 0.0);
    }

    #[test]
    fn zero_severity_still_reports() {
        let cfg = small();
        let s = generate_nominal(&cfg).unwrap();
        let inc = InjectedIncident {
            severity: 0.0,
            ..incident(&s.grid, 100, 6)
        };
        let out = inject_incidents(&s, &cfg, std::slice::from_ref(&inc)).unwrap();
        assert_eq!(out.grid, s.grid);
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log.records()[0].report_time_unix, inc.true_time_unix + 600);
        assert_eq!(out.truth[0].true_time_unix, inc.true_time_unix);
    }

    #[test]
    fn triangle_shape() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            rush_start: 0,
            rush_end: 0,
            ..small()
        };
        let s = generate_nominal(&cfg).unwrap();
        // 10 mph queue growth, 0.3 mile spacing: the tail passes one
        // milemarker every 108 s; recovery at 20 mph from t = 600 s
        let inc = incident(&s.grid, 50, 8);
        let out = inject_incidents(&s, &cfg, &[inc]).unwrap();
        let hit = |t: usize, m: usize| out.grid.value(t, out.grid.node_index(m, 2), Feature::Speed) < 65.0;
        assert!(!hit(49, 8));
        assert!(hit(50, 8));
        // downstream of the epicenter is untouched
        assert!((50..120).all(|t| !hit(t, 9)));
        // tail reaches 0.3 mi upstream (m=7) after 108 s, i.e. at tick 54
        assert!(!hit(53, 7));
        assert!(hit(54, 7));
        // at the epicenter recovery begins after the 600 s duration
        assert!(hit(70, 8));
        assert!(!hit(71, 8));
        // the triangle closes by 2 * duration
        assert!((90..240).all(|t| (0..12).all(|m| !hit(t, m))));
    }

    #[test]
    fn out_of_bounds_incidents() {
        let cfg = small();
        let s = generate_nominal(&cfg).unwrap();
        let base = incident(&s.grid, 10, 3);
        let cases = [
            InjectedIncident {
                milemarker: 80.0,
                ..base.clone()
            },
            InjectedIncident {
                lane: 4,
                ..base.clone()
            },
            InjectedIncident {
                lane: 0,
                ..base.clone()
            },
            InjectedIncident {
                true_time_unix: 0,
                ..base.clone()
            },
            InjectedIncident {
                severity: 1.5,
                ..base.clone()
            },
            InjectedIncident {
                report_delay: -1,
                ..base.clone()
            },
        ];
        for (i, c) in cases.iter().enumerate() {
            let e = inject_incidents(&s, &cfg, &[base.clone(), c.clone()]).unwrap_err();
            assert!(matches!(e, SynthError::OutOfBounds { index: 1, .. }), "case {i}: {e:?}");
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SynthConfig {
                free_speed: 20.0,
                ..small()
            },
            SynthConfig {
                congested_speed: 0.0,
                ..small()
            },
            SynthConfig {
                steps_per_day: 0,
                ..small()
            },
            SynthConfig {
                wave_speed: 5.0,
                ..small()
            },
            SynthConfig {
                steps_per_day: 5000,
                ..small()
            },
        ];
        for c in bad {
            assert!(matches!(generate_nominal(&c), Err(SynthError::InvalidConfig(_))));
        }
    }

    #[test]
    fn acceptance_plan_draws_eight_separated_incidents() {
        let cfg = SynthConfig::default();
        let s = generate_nominal(&cfg).unwrap();
        let plan = IncidentPlan::acceptance();
        let incs = plan.draw(&s.grid, cfg.seed).unwrap();
        assert_eq!(incs.len(), 8);
        assert_eq!(incs, plan.draw(&s.grid, cfg.seed).unwrap());
        for i in &incs {
            assert!((300..=720).contains(&i.report_delay));
            let t = s.grid.time_index(i.true_time_unix).unwrap();
            let day = s.grid.days()[s.grid.day_of(t)];
            assert!(t >= day.start + 40);
            assert!(t + 270 <= day.start + day.len);
        }
        for w in incs.windows(2) {
            assert!(w[1].true_time_unix - w[0].true_time_unix >= 150 * 60);
        }
        let per_day: Vec<usize> = s
            .grid
            .days()
            .iter()
            .map(|d| {
                incs.iter()
                    .filter(|i| s.grid.times()[d.range()].contains(&i.true_time_unix))
                    .count()
            })
            .collect();
        assert_eq!(per_day, vec![1, 1, 1, 1, 2, 2]);
    }

    #[test]
    fn csv_round_trip_through_ingestion() {
        let cfg = small();
        let s = generate_scenario(
            &cfg,
            &IncidentPlan {
                per_day: vec![1, 1],
                tail: 30 * 60,
                edge_markers: 2,
                ..IncidentPlan::acceptance()
            },
            Execution::Sequential,
        )
        .unwrap();
        let mut buf = Vec::new();
        crate::data::write_sensor_csv(&mut buf, &s.grid.to_readings()).unwrap();
        let readings = crate::data::read_sensor_csv(buf.as_slice()).unwrap();
        let (g, report) = crate::data::assemble_grid(&readings, &cfg.day_window()).unwrap();
        assert_eq!(report.duplicates, 0);
        assert_eq!(g, s.grid);

        let mut buf = Vec::new();
        write_ground_truth(&mut buf, &s.truth).unwrap();
        assert_eq!(read_ground_truth(buf.as_slice()).unwrap(), s.truth);
        let mut buf = Vec::new();
        crate::data::write_incident_log(&mut buf, &s.log).unwrap();
        assert_eq!(crate::data::read_incident_log(buf.as_slice()).unwrap(), s.log);
    }

    fn any_incident() -> impl Strategy<Value = (usize, usize, u8, f64, i64, f64, i64)> {
        (
            0usize..240,
            0usize..12,
            1u8..=3,
            0.0f64..=1.0,
            0i64..1800,
            -20.0f64..-2.0,
            0i64..900,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn injection_only_lowers_speed_inside_triangles(
            incs in proptest::collection::vec(any_incident(), 1..4),
        ) {
            let cfg = small();
            let s = generate_nominal(&cfg).unwrap();
            let g = &s.grid;
            let incs: Vec<InjectedIncident> = incs
                .into_iter()
                .map(|(t, m, lane, severity, duration, backprop_speed, report_delay)| InjectedIncident {
                    true_time_unix: g.times()[t],
                    milemarker: g.milemarkers()[m],
                    lane,
                    severity,
                    duration,
                    backprop_speed,
                    report_delay,
                })
                .collect();
            let out = inject_incidents(&s, &cfg, &incs).unwrap();
            for t in 0..g.n_times() {
                let day = g.day_of(t);
                for node in 0..g.n_nodes() {
                    let id = g.node_id(node);
                    let inside = incs.iter().any(|i| {
                        let ti = g.time_index(i.true_time_unix).unwrap();
                        g.day_of(ti) == day
                            && i.speed_factor(
                                id.milemarker - i.milemarker,
                                (g.times()[t] - i.true_time_unix) as f64,
                                id.lane.abs_diff(i.lane) as u32,
                            ) < 1.0
                    });
                    let before = g.value(t, node, Feature::Speed);
                    let after = out.grid.value(t, node, Feature::Speed);
                    if inside {
                        prop_assert!(after <= before);
                    } else {
                        for f in Feature::ALL {
                            prop_assert_eq!(
                                out.grid.value(t, node, f).to_bits(),
                                g.value(t, node, f).to_bits()
                            );
                        }
                    }
                }
            }
            for (r, i) in out.log.records().iter().zip({
                let mut v = incs.clone();
                v.sort_by_key(|i| i.report_time_unix());
                v
            }) {
                prop_assert_eq!(r.report_time_unix - i.true_time_unix, i.report_delay);
            }
        }
    }
}
