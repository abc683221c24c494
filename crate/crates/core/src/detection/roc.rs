use super::events::TimeLabel;
use super::MetricsError;

/// Time-level confusion rates when flagging scores strictly above `alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub alpha: f64,
    pub fpr: f64,
    pub tpr: f64,
    /// False discoveries among flagged times; 0 when nothing is flagged.
    pub fdr: f64,
}

/// ROC over the global threshold multiplier, alpha descending.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub type OperatingPoint = RocPoint;

/// Sweeps alpha over the distinct per-time scores (`max_i e_i / T_i`),
/// ignoring excluded times. A time is predicted anomalous when its score
/// exceeds alpha. The last point uses alpha = 0; AUC integrates the curve
/// closed at (1, 1), which credits tied scores one half.
pub fn roc_auc(scores: &[f64], labels: &[TimeLabel]) -> Result<RocCurve, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Length(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut items: Vec<(f64, bool)> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l != TimeLabel::Excluded)
        .map(|(&s, &l)| (s, l == TimeLabel::Positive))
        .collect();
    let positives = items.iter().filter(|i| i.1).count();
    let negatives = items.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegenerateLabels { positives, negatives });
    }
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (p, n) = (positives as f64, negatives as f64);
    let point = |alpha: f64, tp: usize, fp: usize| RocPoint {
        alpha,
        fpr: fp as f64 / n,
        tpr: tp as f64 / p,
        fdr: if tp + fp == 0 {
            0.0
        } else {
            fp as f64 / (tp + fp) as f64
        },
    };
    let mut points = vec![point(items[0].0, 0, 0)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < items.len() {
        let v = items[i].0;
        if v <= 0.0 {
            break;
        }
        while i < items.len() && items[i].0 == v {
            if items[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let next = if i < items.len() { items[i].0.max(0.0) } else { 0.0 };
        points.push(point(next, tp, fp));
    }
    let mut auc = 0.0;
    let mut prev = (0.0, 0.0);
    for q in points.iter().map(|q| (q.fpr, q.tpr)).chain([(1.0, 1.0)]) {
        auc += (q.0 - prev.0) * (q.1 + prev.1) / 2.0;
        prev = q;
    }
    Ok(RocCurve {
        points,
        auc,
        positives,
        negatives,
    })
}

/// The smallest alpha (most sensitive operating point) whose FPR does not
/// exceed `target`.
pub fn pick_alpha_for_fpr(curve: &RocCurve, target: f64) -> Result<OperatingPoint, MetricsError> {
    let lowest = curve.points.first().map_or(f64::NAN, |p| p.fpr);
    curve
        .points
        .iter()
        .rev()
        .find(|p| p.fpr <= target)
        .copied()
        .ok_or(MetricsError::UnattainableTarget { target, lowest })
}
