use std::fmt::Write as _;

use chrono::NaiveDate;

use super::{DataError, SensorGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DayRole {
    Train,
    Validation,
    Excluded,
}

impl DayRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DayRole::Train => "train",
            DayRole::Validation => "val",
            DayRole::Excluded => "excluded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(DayRole::Train),
            "val" => Some(DayRole::Validation),
            "excluded" => Some(DayRole::Excluded),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: usize,
    pub validation: usize,
    pub excluded: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 14,
            validation: 5,
            excluded: 1,
        }
    }
}

/// Day-level partition of a grid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    assignments: Vec<(NaiveDate, DayRole)>,
}

impl DatasetSplit {
    pub fn new(mut assignments: Vec<(NaiveDate, DayRole)>) -> Self {
        assignments.sort_by_key(|a| a.0);
        assignments.dedup_by_key(|a| a.0);
        DatasetSplit { assignments }
    }

    pub fn assignments(&self) -> &[(NaiveDate, DayRole)] {
        &self.assignments
    }

    pub fn role(&self, date: NaiveDate) -> Option<DayRole> {
        self.assignments
            .binary_search_by_key(&date, |a| a.0)
            .ok()
            .map(|i| self.assignments[i].1)
    }

    pub fn days(&self, role: DayRole) -> Vec<NaiveDate> {
        self.assignments.iter().filter(|a| a.1 == role).map(|a| a.0).collect()
    }

    pub fn train(&self) -> Vec<NaiveDate> {
        self.days(DayRole::Train)
    }

    pub fn validation(&self) -> Vec<NaiveDate> {
        self.days(DayRole::Validation)
    }

    pub fn excluded(&self) -> Vec<NaiveDate> {
        self.days(DayRole::Excluded)
    }

    /// Checks that every assigned day exists in `grid`.
    pub fn validate(&self, grid: &SensorGrid) -> Result<(), DataError> {
        for &(d, _) in &self.assignments {
            if grid.day_index(d).is_none() {
                return Err(DataError::UnknownDay(d));
            }
        }
        Ok(())
    }

    /// Day-assignment file: `YYYY-MM-DD,<train|val|excluded>` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (d, r) in &self.assignments {
            writeln!(s, "{},{}", d.format("%Y-%m-%d"), r.as_str()).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| DataError::MalformedRow {
                line: i as u64 + 1,
                reason,
            };
            let (d, r) = line.split_once(',').ok_or_else(|| bad("expected `date,role`".into()))?;
            let date = NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| bad(format!("bad date `{d}`: {e}")))?;
            let role = DayRole::parse(r).ok_or_else(|| bad(format!("unknown role `{r}`")))?;
            out.push((date, role));
        }
        Ok(DatasetSplit::new(out))
    }
}

/// Chronological split: the first `train` days, then `validation`, then
/// `excluded`. Days beyond the spec are also excluded.
pub fn split_days(grid: &SensorGrid, spec: &SplitSpec) -> Result<DatasetSplit, DataError> {
    let dates = grid.dates();
    let needed = spec.train + spec.validation + spec.excluded;
    if needed > dates.len() {
        return Err(DataError::SplitOverflow {
            needed,
            available: dates.len(),
        });
    }
    let roles = std::iter::repeat_n(DayRole::Train, spec.train)
        .chain(std::iter::repeat_n(DayRole::Validation, spec.validation))
        .chain(std::iter::repeat(DayRole::Excluded));
    Ok(DatasetSplit::new(dates.into_iter().zip(roles).collect()))
}
