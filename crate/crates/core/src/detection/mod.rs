//! Thresholded anomaly flags and the evaluation metrics built on them.

mod events;
mod report;
mod roc;

use std::io::Write;

use thiserror::Error;

pub use events::{
    evaluate_events, label_timesteps, CrashOutcome, EventEvaluation, LabelWindows, ManualPolicy, TimeLabel,
    MATCH_WINDOW_SECONDS,
};
pub use report::{evaluate_at_fpr, fpr_sweep, write_sweep_csv, Evaluation, EvaluationSetup, MetricsReport, SweepRow};
pub use roc::{pick_alpha_for_fpr, roc_auc, OperatingPoint, RocCurve, RocPoint};

use crate::data::SensorGrid;
use crate::exec::Execution;
use crate::graph::GraphTopology;
use crate::models::AutoencoderModel;
use crate::training::{reconstruction_errors, ReconstructionErrors, ThresholdVector, TrainError};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("thresholds cover {found} nodes, the model has {expected}")]
    MissingThreshold { expected: usize, found: usize },
    #[error("alpha must be non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least one positive and one negative time ({positives} positive, {negatives} negative)")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("no operating point reaches FPR {target}; the lowest is {lowest}")]
    UnattainableTarget { target: f64, lowest: f64 },
    #[error("{0}")]
    Length(String),
}

/// Errors, thresholds and flags over a set of grid times.
#[derive(Clone, Debug)]
pub struct DetectionResult {
    times_unix: Vec<i64>,
    errors: ReconstructionErrors,
    thresholds: ThresholdVector,
    alpha: f64,
    flags: Vec<bool>,
    any: Vec<bool>,
}

impl DetectionResult {
    /// Applies `alpha * T` to precomputed errors. `times_unix` gives the
    /// timestamp of each error row.
    pub fn from_errors(
        times_unix: Vec<i64>,
        errors: ReconstructionErrors,
        thresholds: &ThresholdVector,
        alpha: f64,
    ) -> Result<Self, DetectError> {
        if thresholds.n_nodes() != errors.n_nodes() {
            return Err(DetectError::MissingThreshold {
                expected: errors.n_nodes(),
                found: thresholds.n_nodes(),
            });
        }
        if !(alpha >= 0.0) {
            return Err(DetectError::InvalidAlpha(alpha));
        }
        assert_eq!(times_unix.len(), errors.len());
        let n = errors.n_nodes();
        let flags: Vec<bool> = (0..errors.len())
            .flat_map(|r| (0..n).map(move |i| (r, i)))
            .map(|(r, i)| thresholds.exceeds(&errors, r, i, alpha))
            .collect();
        let any = if n == 0 {
            vec![false; errors.len()]
        } else {
            flags.chunks(n).map(|c| c.iter().any(|&f| f)).collect()
        };
        Ok(DetectionResult {
            times_unix,
            errors,
            thresholds: thresholds.clone(),
            alpha,
            flags,
            any,
        })
    }

    /// The same errors under a different multiplier.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self, DetectError> {
        DetectionResult::from_errors(self.times_unix.clone(), self.errors.clone(), &self.thresholds, alpha)
    }

    pub fn len(&self) -> usize {
        self.times_unix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_unix.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.errors.n_nodes()
    }

    pub fn times_unix(&self) -> &[i64] {
        &self.times_unix
    }

    pub fn errors(&self) -> &ReconstructionErrors {
        &self.errors
    }

    pub fn thresholds(&self) -> &ThresholdVector {
        &self.thresholds
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_flagged(&self, row: usize, node: usize) -> bool {
        self.flags[row * self.n_nodes() + node]
    }

    /// Per-row OR over nodes.
    pub fn any_flagged(&self) -> &[bool] {
        &self.any
    }

    pub fn flag_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Per-row `max_i e_i / T_i`: the row is flagged exactly when alpha is
    /// below this score.
    pub fn time_scores(&self) -> Vec<f64> {
        (0..self.len())
            .map(|r| {
                (0..self.n_nodes())
                    .map(|i| self.thresholds.ratio(&self.errors, r, i))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Mean per-node reconstruction error over all rows.
    pub fn recon_mse(&self) -> f64 {
        self.errors.mean()
    }

    /// Rows restricted to `keep`.
    pub fn select(&self, keep: impl Fn(usize, i64) -> bool) -> DetectionResult {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| keep(r, self.times_unix[r])).collect();
        let n = self.n_nodes();
        let f = crate::data::N_FEATURES;
        let mut sq = Vec::with_capacity(rows.len() * n * f);
        for &r in &rows {
            for i in 0..n {
                for k in 0..f {
                    sq.push(self.errors.feature_error(r, i, k));
                }
            }
        }
        let errors = ReconstructionErrors::new(rows.iter().map(|&r| self.errors.times()[r]).collect(), n, sq);
        DetectionResult {
            times_unix: rows.iter().map(|&r| self.times_unix[r]).collect(),
            errors,
            thresholds: self.thresholds.clone(),
            alpha: self.alpha,
            flags: rows
                .iter()
                .flat_map(|&r| self.flags[r * n..(r + 1) * n].iter().copied())
                .collect(),
            any: rows.iter().map(|&r| self.any[r]).collect(),
        }
    }
}

/// Scores every time of `grid` and flags node errors above `alpha * T`.
pub fn detect_anomalies(
    model: &AutoencoderModel,
    grid: &SensorGrid,
    topology: &GraphTopology,
    thresholds: &ThresholdVector,
    alpha: f64,
    exec: Execution,
) -> Result<DetectionResult, DetectError> {
    let times: Vec<usize> = (0..grid.n_times()).collect();
    detect_at(model, grid, topology, thresholds, alpha, &times, exec)
}

/// [`detect_anomalies`] restricted to the grid time indices `times`.
pub fn detect_at(
    model: &AutoencoderModel,
    grid: &SensorGrid,
    topology: &GraphTopology,
    thresholds: &ThresholdVector,
    alpha: f64,
    times: &[usize],
    exec: Execution,
) -> Result<DetectionResult, DetectError> {
    if thresholds.n_nodes() != model.n_base() {
        return Err(DetectError::MissingThreshold {
            expected: model.n_base(),
            found: thresholds.n_nodes(),
        });
    }
    let errors = reconstruction_errors(model, grid, topology, times, exec)?;
    let unix = times.iter().map(|&t| grid.times()[t]).collect();
    DetectionResult::from_errors(unix, errors, thresholds, alpha)
}

pub const DETECTIONS_HEADER: &str = "time_unix,node_id,milemarker,lane,error,threshold";

/// One row per flagged (time, node).
pub fn write_detections_csv<W: Write>(mut w: W, result: &DetectionResult, grid: &SensorGrid) -> std::io::Result<()> {
    writeln!(w, "{DETECTIONS_HEADER}")?;
    for r in 0..result.len() {
        if !result.any[r] {
            continue;
        }
        for i in 0..result.n_nodes() {
            if result.is_flagged(r, i) {
                let id = grid.node_id(i);
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    result.times_unix[r],
                    i,
                    id.milemarker,
                    id.lane,
                    result.errors.node_error(r, i),
                    result.alpha * result.thresholds.node_threshold(i)
                )?;
            }
        }
    }
    Ok(())
}
