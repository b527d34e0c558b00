use serde::{Deserialize, Serialize};

use crate::data::frame::FrameSet;
use crate::error::{Error, Result};

/// A split boundary: an absolute hour index, or an RFC 3339 timestamp that is
/// floored to its hour.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HourBound {
    Hour(i64),
    Timestamp(String),
}

impl HourBound {
    pub fn to_hour(&self) -> Result<i64> {
        match self {
            HourBound::Hour(h) => Ok(*h),
            HourBound::Timestamp(s) => {
                let dt = chrono::DateTime::parse_from_rfc3339(s)
                    .map_err(|e| Error::Config(format!("bad timestamp '{s}': {e}")))?;
                Ok(dt.timestamp().div_euclid(3600))
            }
        }
    }
}

/// Half-open hour range `[start, end)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HourRange {
    pub start: HourBound,
    pub end: HourBound,
}

impl HourRange {
    pub fn resolve(&self) -> Result<(i64, i64)> {
        let (s, e) = (self.start.to_hour()?, self.end.to_hour()?);
        if s >= e {
            return Err(Error::Config(format!("empty hour range [{s}, {e})")));
        }
        Ok((s, e))
    }
}

/// Chronological train/val/test ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitRule {
    pub train: HourRange,
    pub val: HourRange,
    pub test: HourRange,
}

impl SplitRule {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(format!("split rule: {e}")))
    }

    /// Simple rule over `[start, start+n)`: last `test` hours are the test
    /// split, the `val` hours before them validation, the rest training.
    pub fn tail(start_hour: i64, n_hours: usize, val: usize, test: usize) -> Result<SplitRule> {
        let end = start_hour + n_hours as i64;
        let test_start = end - test as i64;
        let val_start = test_start - val as i64;
        if val_start <= start_hour {
            return Err(Error::Config(
                "val+test ranges leave no training hours".into(),
            ));
        }
        Ok(SplitRule {
            train: HourRange {
                start: HourBound::Hour(start_hour),
                end: HourBound::Hour(val_start),
            },
            val: HourRange {
                start: HourBound::Hour(val_start),
                end: HourBound::Hour(test_start),
            },
            test: HourRange {
                start: HourBound::Hour(test_start),
                end: HourBound::Hour(end),
            },
        })
    }
}

/// Per-level frames for the three chronological splits.
#[derive(Debug, Clone)]
pub struct SplitSet {
    pub train: FrameSet,
    pub val: FrameSet,
    pub test: FrameSet,
    /// Resolved (start, end) hour pairs, in split order.
    pub ranges: [(i64, i64); 3],
}

impl SplitSet {
    pub fn row_counts(&self) -> [usize; 3] {
        [
            (self.ranges[0].1 - self.ranges[0].0) as usize,
            (self.ranges[1].1 - self.ranges[1].0) as usize,
            (self.ranges[2].1 - self.ranges[2].0) as usize,
        ]
    }
}

/// Slices every level's frame by the rule's three ranges.
///
/// Ranges must be disjoint, in chronological train < val < test order, and
/// inside the frames' hours.
pub fn make_splits(frames: &FrameSet, rule: &SplitRule) -> Result<SplitSet> {
    let train = rule.train.resolve()?;
    let val = rule.val.resolve()?;
    let test = rule.test.resolve()?;
    for (a, b, names) in [
        (train, val, "train/val"),
        (val, test, "val/test"),
        (train, test, "train/test"),
    ] {
        if a.1 > b.0 {
            return Err(Error::Config(format!(
                "split ranges {names} overlap or are out of order: [{}, {}) vs [{}, {})",
                a.0, a.1, b.0, b.1
            )));
        }
    }
    if frames.is_empty() {
        return Err(Error::Data("no frames to split".into()));
    }
    let mut out = SplitSet {
        train: FrameSet::new(),
        val: FrameSet::new(),
        test: FrameSet::new(),
        ranges: [train, val, test],
    };
    for (name, frame) in frames {
        out.train.insert(name.clone(), frame.slice_hours(train.0, train.1)?);
        out.val.insert(name.clone(), frame.slice_hours(val.0, val.1)?);
        out.test.insert(name.clone(), frame.slice_hours(test.0, test.1)?);
    }
    Ok(out)
}
