//! Gap filling: adaptive smoothing along traffic characteristics for speed,
//! local averaging for occupancy and volume.

use thiserror::Error;

use crate::data::{DaySegment, Feature, SensorGrid, TICK_SECONDS};
use crate::exec::Execution;

/// Adaptive smoothing parameters. Speeds in mph, distances in miles, times in
/// seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsmParams {
    pub sigma: f64,
    pub tau: f64,
    /// Free-flow characteristic speed, positive along the direction of travel.
    pub c_free: f64,
    /// Congested wave speed, negative (upstream).
    pub c_cong: f64,
    pub v_crit: f64,
    pub delta_v: f64,
    /// Spatial truncation radius.
    pub space_radius: f64,
    /// Temporal truncation radius around the characteristic line.
    pub time_radius: f64,
    /// Recompute observed cells instead of preserving them.
    pub smooth_observed: bool,
}

impl Default for AsmParams {
    fn default() -> Self {
        let sigma = 0.37;
        let tau = 66.0;
        AsmParams {
            sigma,
            tau,
            c_free: 50.0,
            c_cong: -9.3,
            v_crit: 37.0,
            delta_v: 12.4,
            space_radius: 3.0 * sigma,
            time_radius: 3.0 * tau,
            smooth_observed: false,
        }
    }
}

impl AsmParams {
    pub fn validate(&self) -> Result<(), ImputeError> {
        let positive = [
            ("sigma", self.sigma),
            ("tau", self.tau),
            ("delta_v", self.delta_v),
            ("c_free", self.c_free),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ImputeError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if !(self.c_cong < 0.0) {
            return Err(ImputeError::InvalidParams("c_cong must be negative".into()));
        }
        if !(self.space_radius >= 0.0 && self.time_radius >= 0.0) {
            return Err(ImputeError::InvalidParams("radii must be non-negative".into()));
        }
        Ok(())
    }
}

/// A cell with no observation in its neighborhood; filled with a mean.
#[derive(Clone, Debug, PartialEq)]
pub struct IsolatedCell {
    pub time_unix: i64,
    pub milemarker: f64,
    pub lane: u8,
    pub feature: Feature,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImputationReport {
    pub imputed: usize,
    /// Cells that fell back to the day-node mean.
    pub isolated: Vec<IsolatedCell>,
    /// Local-average cells filled from other lanes at the same milemarker.
    pub lane_fallbacks: usize,
}

impl ImputationReport {
    pub fn merge(&mut self, other: ImputationReport) {
        self.imputed += other.imputed;
        self.isolated.extend(other.isolated);
        self.lane_fallbacks += other.lane_fallbacks;
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImputeError {
    #[error("invalid imputation parameters: {0}")]
    InvalidParams(String),
    #[error("no {} observations at all on {date}", feature.name())]
    NoObservations { date: chrono::NaiveDate, feature: Feature },
}

enum Fill {
    Value(f64),
    Isolated,
}

/// Per-(day, node) means of observed values, with a per-day fallback.
struct Means {
    node: Vec<Option<f64>>,
    day: Vec<Option<f64>>,
    n_nodes: usize,
}

impl Means {
    fn new(grid: &SensorGrid, f: Feature) -> Self {
        let n_nodes = grid.n_nodes();
        let mut node = Vec::with_capacity(grid.days().len() * n_nodes);
        let mut day = Vec::with_capacity(grid.days().len());
        for seg in grid.days() {
            let (mut ds, mut dn) = (0.0, 0usize);
            for n in 0..n_nodes {
                let (mut s, mut c) = (0.0, 0usize);
                for t in seg.range() {
                    if let Some(v) = grid.get(t, n, f) {
                        s += v as f64;
                        c += 1;
                    }
                }
                node.push((c > 0).then(|| s / c as f64));
                ds += s;
                dn += c;
            }
            day.push((dn > 0).then(|| ds / dn as f64));
        }
        Means { node, day, n_nodes }
    }

    fn get(&self, day: usize, node: usize) -> Option<f64> {
        self.node[day * self.n_nodes + node].or(self.day[day])
    }
}

fn positions(grid: &SensorGrid) -> Vec<f64> {
    let mm = grid.milemarkers();
    mm.iter().map(|m| mm[0] - m).collect()
}

/// Kernel-weighted mean of observed speeds around `(t, mm_index, lane)` with
/// the time axis sheared along characteristic speed `c` (mph). `None` gives
/// an unsheared kernel. Returns `(weighted sum, weight)`.
#[allow(clippy::too_many_arguments)]
fn kernel_sum(
    grid: &SensorGrid,
    seg: &DaySegment,
    x: &[f64],
    t: usize,
    mm_index: usize,
    lane: u8,
    c: Option<f64>,
    p: &AsmParams,
) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    let t_target = grid.times()[t];
    let t0 = grid.times()[seg.start];
    for j in 0..x.len() {
        let dx = x[mm_index] - x[j];
        if dx.abs() > p.space_radius {
            continue;
        }
        let shift = c.map_or(0.0, |c| dx / c * 3600.0);
        let center = (t_target - t0) as f64 - shift;
        let lo = ((center - p.time_radius) / TICK_SECONDS as f64).ceil().max(0.0) as usize;
        let hi = ((center + p.time_radius) / TICK_SECONDS as f64).floor();
        if hi < 0.0 {
            continue;
        }
        let hi = (hi as usize).min(seg.len - 1);
        let node = grid.node_index(j, lane);
        for k in lo..=hi {
            let ts = seg.start + k;
            if let Some(v) = grid.get(ts, node, Feature::Speed) {
                let dt = (t_target - grid.times()[ts]) as f64 - shift;
                let phi = (-dx.abs() / p.sigma - dt.abs() / p.tau).exp();
                num += phi * v as f64;
                den += phi;
            }
        }
    }
    (num, den)
}

fn asm_cell(
    grid: &SensorGrid,
    seg: &DaySegment,
    x: &[f64],
    t: usize,
    mm_index: usize,
    lane: u8,
    p: &AsmParams,
) -> Fill {
    let (nf, df) = kernel_sum(grid, seg, x, t, mm_index, lane, Some(p.c_free), p);
    let (nc, dc) = kernel_sum(grid, seg, x, t, mm_index, lane, Some(p.c_cong), p);
    let v_free = (df > 0.0).then(|| nf / df);
    let v_cong = (dc > 0.0).then(|| nc / dc);
    match (v_free, v_cong) {
        (Some(vf), Some(vc)) => {
            let w = 0.5 * (1.0 + ((p.v_crit - vf.min(vc)) / p.delta_v).tanh());
            Fill::Value(w * vc + (1.0 - w) * vf)
        }
        (Some(v), None) | (None, Some(v)) => Fill::Value(v),
        (None, None) => Fill::Isolated,
    }
}

fn isotropic_cell(
    grid: &SensorGrid,
    seg: &DaySegment,
    x: &[f64],
    t: usize,
    mm_index: usize,
    lane: u8,
    p: &AsmParams,
) -> Fill {
    let (n, d) = kernel_sum(grid, seg, x, t, mm_index, lane, None, p);
    if d > 0.0 {
        Fill::Value(n / d)
    } else {
        Fill::Isolated
    }
}

type CellFn = fn(&SensorGrid, &DaySegment, &[f64], usize, usize, u8, &AsmParams) -> Fill;

fn smooth_speed(
    grid: &SensorGrid,
    p: &AsmParams,
    exec: Execution,
    cell: CellFn,
) -> Result<(SensorGrid, ImputationReport), ImputeError> {
    p.validate()?;
    let x = positions(grid);
    let n_nodes = grid.n_nodes();
    let rows = exec.map(grid.n_times(), |t| {
        let seg = &grid.days()[grid.day_of(t)];
        (0..n_nodes)
            .filter(|&n| p.smooth_observed || grid.is_missing(t, n, Feature::Speed))
            .map(|n| {
                let id = grid.node_id(n);
                (n, cell(grid, seg, &x, t, n / grid.n_lanes(), id.lane, p))
            })
            .collect::<Vec<_>>()
    });
    let means = Means::new(grid, Feature::Speed);
    let mut out = grid.clone();
    let mut report = ImputationReport::default();
    for (t, row) in rows.into_iter().enumerate() {
        for (n, fill) in row {
            let was_missing = grid.is_missing(t, n, Feature::Speed);
            let v = match fill {
                Fill::Value(v) => v,
                Fill::Isolated if !was_missing => continue,
                Fill::Isolated => {
                    let day = grid.day_of(t);
                    let id = grid.node_id(n);
                    report.isolated.push(IsolatedCell {
                        time_unix: grid.times()[t],
                        milemarker: id.milemarker,
                        lane: id.lane,
                        feature: Feature::Speed,
                    });
                    means.get(day, n).ok_or(ImputeError::NoObservations {
                        date: grid.days()[day].date,
                        feature: Feature::Speed,
                    })?
                }
            };
            if was_missing {
                report.imputed += 1;
            }
            out.set(t, n, Feature::Speed, v as f32);
        }
    }
    Ok((out, report))
}

/// Fills the speed channel with the adaptive smoothing method. Each lane and
/// day is smoothed independently. Other channels are untouched.
pub fn asm_impute(grid: &SensorGrid, p: &AsmParams) -> Result<(SensorGrid, ImputationReport), ImputeError> {
    asm_impute_with(grid, p, Execution::default())
}

pub fn asm_impute_with(
    grid: &SensorGrid,
    p: &AsmParams,
    exec: Execution,
) -> Result<(SensorGrid, ImputationReport), ImputeError> {
    smooth_speed(grid, p, exec, asm_cell)
}

/// Plain space-time kernel smoothing with no characteristic shear. Uses
/// `sigma`, `tau` and the radii from `p`.
pub fn isotropic_impute(grid: &SensorGrid, p: &AsmParams) -> Result<(SensorGrid, ImputationReport), ImputeError> {
    smooth_speed(grid, p, Execution::default(), isotropic_cell)
}

/// Neighborhood for [`local_average_impute`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalRadius {
    /// Milemarker steps.
    pub space: usize,
    /// Time ticks.
    pub time: usize,
}

impl Default for LocalRadius {
    fn default() -> Self {
        LocalRadius { space: 1, time: 2 }
    }
}

#[allow(clippy::too_many_arguments)]
fn local_mean(
    grid: &SensorGrid,
    seg: &DaySegment,
    t: usize,
    mm_index: usize,
    lanes: impl Iterator<Item = u8> + Clone,
    space: usize,
    r: LocalRadius,
    f: Feature,
) -> Option<f64> {
    let lo_t = t.saturating_sub(r.time).max(seg.start);
    let hi_t = (t + r.time).min(seg.start + seg.len - 1);
    let lo_m = mm_index.saturating_sub(space);
    let hi_m = (mm_index + space).min(grid.n_milemarkers() - 1);
    let (mut s, mut c) = (0.0, 0usize);
    for ts in lo_t..=hi_t {
        for m in lo_m..=hi_m {
            for lane in lanes.clone() {
                if let Some(v) = grid.get(ts, grid.node_index(m, lane), f) {
                    s += v as f64;
                    c += 1;
                }
            }
        }
    }
    (c > 0).then(|| s / c as f64)
}

/// Fills missing occupancy and volume with the mean of observed neighbors in
/// the same lane; if there are none, the mean over all lanes at the same
/// milemarker; if still none, the day-node mean.
pub fn local_average_impute(grid: &SensorGrid, r: LocalRadius) -> Result<(SensorGrid, ImputationReport), ImputeError> {
    local_average_impute_with(grid, r, Execution::default())
}

pub fn local_average_impute_with(
    grid: &SensorGrid,
    r: LocalRadius,
    exec: Execution,
) -> Result<(SensorGrid, ImputationReport), ImputeError> {
    let mut out = grid.clone();
    let mut report = ImputationReport::default();
    let n_lanes = grid.n_lanes() as u8;
    for f in [Feature::Occupancy, Feature::Volume] {
        let rows = exec.map(grid.n_times(), |t| {
            let seg = &grid.days()[grid.day_of(t)];
            (0..grid.n_nodes())
                .filter(|&n| grid.is_missing(t, n, f))
                .map(|n| {
                    let mm = n / grid.n_lanes();
                    let lane = grid.node_id(n).lane;
                    let own = local_mean(grid, seg, t, mm, std::iter::once(lane), r.space, r, f);
                    match own {
                        Some(v) => (n, Some(v), false),
                        None => (n, local_mean(grid, seg, t, mm, 1..=n_lanes, 0, r, f), true),
                    }
                })
                .collect::<Vec<_>>()
        });
        let means = Means::new(grid, f);
        for (t, row) in rows.into_iter().enumerate() {
            for (n, v, other_lanes) in row {
                let v = match v {
                    Some(v) => {
                        report.lane_fallbacks += other_lanes as usize;
                        v
                    }
                    None => {
                        let day = grid.day_of(t);
                        let id = grid.node_id(n);
                        report.isolated.push(IsolatedCell {
                            time_unix: grid.times()[t],
                            milemarker: id.milemarker,
                            lane: id.lane,
                            feature: f,
                        });
                        means.get(day, n).ok_or(ImputeError::NoObservations {
                            date: grid.days()[day].date,
                            feature: f,
                        })?
                    }
                };
                report.imputed += 1;
                out.set(t, n, f, v as f32);
            }
        }
    }
    Ok((out, report))
}

/// ASM for speed followed by local averaging for occupancy and volume.
pub fn impute_grid(
    grid: &SensorGrid,
    asm: &AsmParams,
    radius: LocalRadius,
    exec: Execution,
) -> Result<(SensorGrid, ImputationReport), ImputeError> {
    let (g, mut report) = asm_impute_with(grid, asm, exec)?;
    let (g, r2) = local_average_impute_with(&g, radius, exec)?;
    report.merge(r2);
    Ok((g, report))
}
