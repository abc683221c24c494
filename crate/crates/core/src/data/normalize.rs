use std::fmt::Write as _;

use super::{DataError, Feature, SensorGrid, TrainingMask, N_FEATURES};

/// Per-feature min-max scaling fitted on the training region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationStats {
    pub min: [f64; N_FEATURES],
    pub max: [f64; N_FEATURES],
}

impl NormalizationStats {
    pub fn new(min: [f64; N_FEATURES], max: [f64; N_FEATURES]) -> Result<Self, DataError> {
        for f in Feature::ALL {
            let i = f.index();
            if !(max[i] > min[i]) || !min[i].is_finite() || !max[i].is_finite() {
                return Err(DataError::DegenerateFeature(f));
            }
        }
        Ok(NormalizationStats { min, max })
    }

    #[inline]
    pub fn apply(&self, f: Feature, x: f64) -> f64 {
        let i = f.index();
        (x - self.min[i]) / (self.max[i] - self.min[i])
    }

    #[inline]
    pub fn inverse(&self, f: Feature, y: f64) -> f64 {
        let i = f.index();
        y * (self.max[i] - self.min[i]) + self.min[i]
    }

    /// Normalizes every non-missing cell. Values outside the fitted range
    /// extrapolate linearly.
    pub fn normalize_grid(&self, grid: &SensorGrid) -> SensorGrid {
        self.map_grid(grid, |f, x| self.apply(f, x))
    }

    pub fn denormalize_grid(&self, grid: &SensorGrid) -> SensorGrid {
        self.map_grid(grid, |f, y| self.inverse(f, y))
    }

    fn map_grid(&self, grid: &SensorGrid, op: impl Fn(Feature, f64) -> f64) -> SensorGrid {
        let mut out = grid.clone();
        let missing = grid.missing();
        for (c, v) in out.values_mut().iter_mut().enumerate() {
            if !missing[c] {
                *v = op(Feature::ALL[c % N_FEATURES], *v as f64) as f32;
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in Feature::ALL {
            let i = f.index();
            writeln!(s, "{}.min={}", f.name(), self.min[i]).unwrap();
            writeln!(s, "{}.max={}", f.name(), self.max[i]).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut min = [f64::NAN; N_FEATURES];
        let mut max = [f64::NAN; N_FEATURES];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let bad = || DataError::BadArchive(format!("bad normalization line `{line}`"));
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let (name, bound) = key.split_once('.').ok_or_else(bad)?;
            let f = Feature::ALL.into_iter().find(|f| f.name() == name).ok_or_else(bad)?;
            let v: f64 = value.parse().map_err(|_| bad())?;
            match bound {
                "min" => min[f.index()] = v,
                "max" => max[f.index()] = v,
                _ => return Err(bad()),
            }
        }
        NormalizationStats::new(min, max)
    }
}

/// Min-max per feature over non-missing cells at usable times.
pub fn fit_normalization(grid: &SensorGrid, mask: &TrainingMask) -> Result<NormalizationStats, DataError> {
    let mut min = [f64::INFINITY; N_FEATURES];
    let mut max = [f64::NEG_INFINITY; N_FEATURES];
    for t in (0..grid.n_times()).filter(|&t| mask.is_usable(t)) {
        for node in 0..grid.n_nodes() {
            for f in Feature::ALL {
                if let Some(v) = grid.get(t, node, f) {
                    let i = f.index();
                    min[i] = min[i].min(v as f64);
                    max[i] = max[i].max(v as f64);
                }
            }
        }
    }
    for f in Feature::ALL {
        if min[f.index()] > max[f.index()] {
            return Err(DataError::EmptyFeature(f));
        }
    }
    NormalizationStats::new(min, max)
}
