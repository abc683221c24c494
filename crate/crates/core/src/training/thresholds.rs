use std::fmt::Write as _;

use super::scoring::ReconstructionErrors;
use super::TrainError;
use crate::data::N_FEATURES;

/// How a node's error is compared with its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMode {
    /// One threshold per node on the summed feature error.
    NodeSum,
    /// One threshold per node and feature.
    PerFeature,
}

impl ThresholdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::NodeSum => "node",
            ThresholdMode::PerFeature => "feature",
        }
    }

    fn width(self) -> usize {
        match self {
            ThresholdMode::NodeSum => 1,
            ThresholdMode::PerFeature => N_FEATURES,
        }
    }
}

/// Per-node anomaly thresholds with a global multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdVector {
    values: Vec<f64>,
    mode: ThresholdMode,
    pub alpha: f64,
}

impl ThresholdVector {
    pub fn new(values: Vec<f64>, mode: ThresholdMode, alpha: f64) -> Result<Self, TrainError> {
        if !values.len().is_multiple_of(mode.width()) {
            return Err(TrainError::ShapeMismatch(format!(
                "{} threshold values for mode {}",
                values.len(),
                mode.as_str()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(TrainError::InvalidConfig(
                "thresholds must be finite and non-negative".into(),
            ));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "alpha must be non-negative, got {alpha}"
            )));
        }
        Ok(ThresholdVector { values, mode, alpha })
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.mode.width()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Threshold on the summed error of `node` (the sum of the feature
    /// thresholds in per-feature mode), before `alpha`.
    pub fn node_threshold(&self, node: usize) -> f64 {
        let w = self.mode.width();
        self.values[node * w..(node + 1) * w].iter().sum()
    }

    /// Whether `node` at `row` exceeds `alpha` times its threshold.
    #[inline]
    pub fn exceeds(&self, errors: &ReconstructionErrors, row: usize, node: usize, alpha: f64) -> bool {
        match self.mode {
            ThresholdMode::NodeSum => errors.node_error(row, node) > alpha * self.values[node],
            ThresholdMode::PerFeature => {
                (0..N_FEATURES).any(|f| errors.feature_error(row, node, f) > alpha * self.values[node * N_FEATURES + f])
            }
        }
    }

    /// Smallest multiplier at which `node` at `row` is no longer flagged:
    /// the node is flagged iff `alpha` is below this ratio.
    pub fn ratio(&self, errors: &ReconstructionErrors, row: usize, node: usize) -> f64 {
        let r = |e: f64, t: f64| {
            if e <= 0.0 {
                0.0
            } else if t <= 0.0 {
                f64::INFINITY
            } else {
                e / t
            }
        };
        match self.mode {
            ThresholdMode::NodeSum => r(errors.node_error(row, node), self.values[node]),
            ThresholdMode::PerFeature => (0..N_FEATURES)
                .map(|f| r(errors.feature_error(row, node, f), self.values[node * N_FEATURES + f]))
                .fold(0.0, f64::max),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "FTAED-THRESHOLDS v1\nmode={}\nalpha={}\n",
            self.mode.as_str(),
            self.alpha
        );
        for v in &self.values {
            writeln!(s, "{v}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let bad = |m: String| TrainError::BadThresholds(m);
        let mut lines = text.lines();
        if lines.next() != Some("FTAED-THRESHOLDS v1") {
            return Err(bad("missing header".into()));
        }
        let mode = match lines.next().and_then(|l| l.strip_prefix("mode=")) {
            Some("node") => ThresholdMode::NodeSum,
            Some("feature") => ThresholdMode::PerFeature,
            other => return Err(bad(format!("bad mode line {other:?}"))),
        };
        let alpha = lines
            .next()
            .and_then(|l| l.strip_prefix("alpha="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad alpha line".into()))?;
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| l.trim().parse().map_err(|_| bad(format!("value {i}: `{l}`"))))
            .collect::<Result<Vec<f64>, _>>()?;
        ThresholdVector::new(values, mode, alpha)
    }
}

/// Per-node maxima of training-set errors, with `alpha = 1`.
pub fn thresholds_from_errors(
    errors: &ReconstructionErrors,
    mode: ThresholdMode,
) -> Result<ThresholdVector, TrainError> {
    if errors.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let n = errors.n_nodes();
    let values = match mode {
        ThresholdMode::NodeSum => (0..n)
            .map(|i| (0..errors.len()).map(|r| errors.node_error(r, i)).fold(0.0, f64::max))
            .collect(),
        ThresholdMode::PerFeature => (0..n * N_FEATURES)
            .map(|k| {
                (0..errors.len())
                    .map(|r| errors.feature_error(r, k / N_FEATURES, k % N_FEATURES))
                    .fold(0.0, f64::max)
            })
            .collect(),
    };
    ThresholdVector::new(values, mode, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(node_rows: &[&[f64]]) -> ReconstructionErrors {
        // all error on the first feature
        let n = node_rows[0].len();
        let sq = node_rows
            .iter()
            .flat_map(|r| r.iter().flat_map(|&e| [e, 0.0, 0.0]))
            .collect();
        ReconstructionErrors::new((0..node_rows.len()).collect(), n, sq)
    }

    #[test]
    fn max_over_times() {
        let e = errors(&[&[0.1], &[0.3], &[0.2]]);
        let t = thresholds_from_errors(&e, ThresholdMode::NodeSum).unwrap();
        assert_eq!(t.values(), &[0.3]);
        assert_eq!(t.alpha, 1.0);
        assert!((0..3).all(|r| !t.exceeds(&e, r, 0, 1.0)));
        assert!(t.exceeds(&e, 1, 0, 0.5));
    }

    #[test]
    fn strict_inequality() {
        let t = ThresholdVector::new(vec![0.05], ThresholdMode::NodeSum, 1.0).unwrap();
        assert!(t.exceeds(&errors(&[&[0.09]]), 0, 0, 1.0));
        assert!(!t.exceeds(&errors(&[&[0.05]]), 0, 0, 1.0));
        assert!(!t.exceeds(&errors(&[&[0.0]]), 0, 0, 1.0));
    }

    #[test]
    fn per_feature_mode() {
        let e = ReconstructionErrors::new(vec![0, 1], 1, vec![0.1, 0.0, 0.2, 0.0, 0.3, 0.1]);
        let t = thresholds_from_errors(&e, ThresholdMode::PerFeature).unwrap();
        assert_eq!(t.values(), &[0.1, 0.3, 0.2]);
        assert!((0..2).all(|r| !t.exceeds(&e, r, 0, 1.0)));
        assert!(t.exceeds(&e, 1, 0, 0.9));
        assert!((t.node_threshold(0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ratio_matches_exceeds() {
        let e = errors(&[&[0.0, 0.2, 0.4]]);
        let t = ThresholdVector::new(vec![0.1, 0.0, 0.2], ThresholdMode::NodeSum, 1.0).unwrap();
        assert_eq!(t.ratio(&e, 0, 0), 0.0);
        assert_eq!(t.ratio(&e, 0, 1), f64::INFINITY);
        assert_eq!(t.ratio(&e, 0, 2), 2.0);
        for alpha in [0.5, 1.0, 1.999, 2.0, 3.0] {
            for i in 0..3 {
                assert_eq!(t.exceeds(&e, 0, i, alpha), alpha < t.ratio(&e, 0, i), "{alpha} {i}");
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let t = ThresholdVector::new(vec![0.1, 1.0 / 3.0, 0.0, 2e-9], ThresholdMode::NodeSum, 1.25).unwrap();
        assert_eq!(ThresholdVector::from_text(&t.to_text()).unwrap(), t);
        assert!(ThresholdVector::from_text("nope").is_err());
        assert!(ThresholdVector::new(vec![-1.0], ThresholdMode::NodeSum, 1.0).is_err());
        assert!(ThresholdVector::new(vec![1.0, 2.0], ThresholdMode::PerFeature, 1.0).is_err());
    }

    #[test]
    fn empty_errors() {
        let e = ReconstructionErrors::new(vec![], 2, vec![]);
        assert!(matches!(
            thresholds_from_errors(&e, ThresholdMode::NodeSum),
            Err(TrainError::EmptyTrainingSet)
        ));
    }
}
