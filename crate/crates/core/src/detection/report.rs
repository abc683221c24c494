use std::fmt::Write as _;
use std::io::Write;

use crate::data::IncidentLog;

use super::events::{evaluate_events, label_timesteps, EventEvaluation, LabelWindows, MATCH_WINDOW_SECONDS};
use super::roc::{pick_alpha_for_fpr, roc_auc, RocCurve};
use super::{DetectError, DetectionResult};

/// Headline metrics at one operating point.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub reporting_delay_mean: Option<f64>,
    pub reporting_delay_std: Option<f64>,
    pub miss_pct: f64,
    pub recon_mse: f64,
    pub auc: f64,
    pub fpr_achieved: f64,
    pub fdr_achieved: f64,
    pub alpha: f64,
    pub crashes_evaluated: usize,
    pub crashes_detected: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl MetricsReport {
    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("reporting_delay_mean", opt(self.reporting_delay_mean)),
            ("reporting_delay_std", opt(self.reporting_delay_std)),
            ("miss_pct", self.miss_pct.to_string()),
            ("recon_mse", self.recon_mse.to_string()),
            ("auc", self.auc.to_string()),
            ("fpr_achieved", self.fpr_achieved.to_string()),
            ("fdr_achieved", self.fdr_achieved.to_string()),
            ("alpha", self.alpha.to_string()),
            ("crashes_evaluated", self.crashes_evaluated.to_string()),
            ("crashes_detected", self.crashes_detected.to_string()),
        ] {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationSetup {
    pub target_fpr: f64,
    pub match_window: i64,
    pub labels: LabelWindows,
}

impl Default for EvaluationSetup {
    fn default() -> Self {
        EvaluationSetup {
            target_fpr: 0.05,
            match_window: MATCH_WINDOW_SECONDS,
            labels: LabelWindows::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub curve: RocCurve,
    pub events: EventEvaluation,
    /// `result` re-thresholded at the chosen alpha.
    pub detections: DetectionResult,
}

/// Builds the ROC on `tuning` (typically the validation rows), picks the
/// alpha meeting `setup.target_fpr`, and evaluates crash detection over all
/// rows of `result` at that alpha.
pub fn evaluate_at_fpr(
    result: &DetectionResult,
    tuning: &DetectionResult,
    log: &IncidentLog,
    setup: &EvaluationSetup,
) -> Result<Evaluation, DetectError> {
    let labels = label_timesteps(log, tuning.times_unix(), &setup.labels);
    let curve = roc_auc(&tuning.time_scores(), &labels)?;
    let point = pick_alpha_for_fpr(&curve, setup.target_fpr)?;
    let detections = result.with_alpha(point.alpha)?;
    let events = evaluate_events(&detections, log, setup.match_window);
    let report = MetricsReport {
        reporting_delay_mean: events.rrd_mean,
        reporting_delay_std: events.rrd_std,
        miss_pct: events.miss_pct,
        recon_mse: tuning.recon_mse(),
        auc: curve.auc,
        fpr_achieved: point.fpr,
        fdr_achieved: point.fdr,
        alpha: point.alpha,
        crashes_evaluated: events.n_evaluated,
        crashes_detected: events.n_detected,
    };
    Ok(Evaluation {
        report,
        curve,
        events,
        detections,
    })
}

/// Reporting delay and misses at several FPR budgets.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub target_fpr: f64,
    pub alpha: f64,
    pub fpr: f64,
    pub fdr: f64,
    pub miss_pct: f64,
    pub rrd_mean: Option<f64>,
    pub rrd_std: Option<f64>,
}

pub fn fpr_sweep(
    result: &DetectionResult,
    curve: &RocCurve,
    log: &IncidentLog,
    match_window: i64,
    targets: &[f64],
) -> Result<Vec<SweepRow>, DetectError> {
    targets
        .iter()
        .map(|&target| {
            let p = pick_alpha_for_fpr(curve, target)?;
            let ev = evaluate_events(&result.with_alpha(p.alpha)?, log, match_window);
            Ok(SweepRow {
                target_fpr: target,
                alpha: p.alpha,
                fpr: p.fpr,
                fdr: p.fdr,
                miss_pct: ev.miss_pct,
                rrd_mean: ev.rrd_mean,
                rrd_std: ev.rrd_std,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "target_fpr,alpha,fpr,fdr,miss_pct,rrd_mean,rrd_std")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.target_fpr,
            r.alpha,
            r.fpr,
            r.fdr,
            r.miss_pct,
            opt(r.rrd_mean),
            opt(r.rrd_std)
        )?;
    }
    Ok(())
}
