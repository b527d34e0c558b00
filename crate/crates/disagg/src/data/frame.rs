use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoHierarchy;

/// Hourly count matrix for one geographic level: N hours × d units.
///
/// Hours are absolute indices (`floor(unix_seconds / 3600)`), contiguous and
/// ascending. Ingested counts are nonnegative integers stored as `f64`;
/// model predictions are arbitrary reals.
#[derive(Debug, Clone, PartialEq)]
pub struct CountFrame {
    pub level: String,
    pub hours: Vec<i64>,
    pub counts: Array2<f64>,
}

/// Frames for every level of one hierarchy, keyed by level name.
pub type FrameSet = BTreeMap<String, CountFrame>;

/// Sidecar written next to each frame CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameMeta {
    pub level: String,
    pub hierarchy_hash: String,
}

impl CountFrame {
    pub fn new(level: impl Into<String>, hours: Vec<i64>, counts: Array2<f64>) -> Result<Self> {
        if hours.len() != counts.nrows() {
            return Err(Error::Shape(format!(
                "frame has {} hour labels but {} count rows",
                hours.len(),
                counts.nrows()
            )));
        }
        if !hours.windows(2).all(|w| w[1] == w[0] + 1) {
            return Err(Error::Data("frame hours must be contiguous ascending".into()));
        }
        if counts.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite count in frame for level '{}'",
                level.into()
            )));
        }
        Ok(CountFrame {
            level: level.into(),
            hours,
            counts,
        })
    }

    pub fn zeros(level: impl Into<String>, start_hour: i64, n_hours: usize, d: usize) -> Self {
        CountFrame {
            level: level.into(),
            hours: (start_hour..start_hour + n_hours as i64).collect(),
            counts: Array2::zeros((n_hours, d)),
        }
    }

    pub fn n_hours(&self) -> usize {
        self.hours.len()
    }

    pub fn n_units(&self) -> usize {
        self.counts.ncols()
    }

    pub fn start_hour(&self) -> i64 {
        self.hours[0]
    }

    /// Rows whose hour lies in `[start, end)`.
    pub fn slice_hours(&self, start: i64, end: i64) -> Result<CountFrame> {
        if self.hours.is_empty() {
            return Err(Error::Data("cannot slice an empty frame".into()));
        }
        let first = self.hours[0];
        let last = *self.hours.last().unwrap() + 1;
        if start >= end {
            return Err(Error::Config(format!("empty hour range [{start}, {end})")));
        }
        if start < first || end > last {
            return Err(Error::Config(format!(
                "hour range [{start}, {end}) outside frame hours [{first}, {last})"
            )));
        }
        let a = (start - first) as usize;
        let b = (end - first) as usize;
        Ok(CountFrame {
            level: self.level.clone(),
            hours: self.hours[a..b].to_vec(),
            counts: self.counts.slice(ndarray::s![a..b, ..]).to_owned(),
        })
    }

    /// Total count per hour, summed over units.
    pub fn totals(&self) -> Vec<f64> {
        self.counts.rows().into_iter().map(|r| r.sum()).collect()
    }

    /// Writes `hour,<unit ids…>` CSV plus a `.meta.json` sidecar naming the
    /// level and hierarchy hash.
    pub fn write_csv(&self, h: &GeoHierarchy, path: &Path) -> Result<()> {
        let level = h.level(&self.level)?;
        if level.n_units() != self.n_units() {
            return Err(Error::Shape(format!(
                "frame for '{}' has {} units, hierarchy expects {}",
                self.level,
                self.n_units(),
                level.n_units()
            )));
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["hour".to_string()];
        header.extend(level.unit_ids.iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (i, &hour) in self.hours.iter().enumerate() {
            record.clear();
            record.push(hour.to_string());
            for v in self.counts.row(i) {
                record.push(format_count(*v));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        let meta = FrameMeta {
            level: self.level.clone(),
            hierarchy_hash: h.hash().to_string(),
        };
        std::fs::write(meta_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Reads a frame written by [`CountFrame::write_csv`], verifying the
    /// sidecar's hierarchy hash and the column headers.
    pub fn read_csv(path: &Path, h: &GeoHierarchy) -> Result<CountFrame> {
        let meta: FrameMeta = serde_json::from_str(
            &std::fs::read_to_string(meta_path(path)).map_err(|e| {
                Error::Data(format!(
                    "missing frame sidecar {}: {e}",
                    meta_path(path).display()
                ))
            })?,
        )?;
        if meta.hierarchy_hash != h.hash() {
            return Err(Error::Data(format!(
                "frame {} was built on a different hierarchy (hash {} != {})",
                path.display(),
                meta.hierarchy_hash,
                h.hash()
            )));
        }
        let level = h.level(&meta.level)?;
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() != level.n_units() + 1 || &headers[0] != "hour" {
            return Err(Error::Data(format!(
                "frame {}: header does not match level '{}' ({} units)",
                path.display(),
                meta.level,
                level.n_units()
            )));
        }
        for (i, id) in level.unit_ids.iter().enumerate() {
            if &headers[i + 1] != id {
                return Err(Error::Data(format!(
                    "frame {}: column {} is '{}', expected unit '{}'",
                    path.display(),
                    i + 1,
                    &headers[i + 1],
                    id
                )));
            }
        }
        let mut hours = Vec::new();
        let mut values = Vec::new();
        for (row_idx, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = row_idx + 2;
            if rec.len() != headers.len() {
                return Err(Error::Data(format!(
                    "frame {} line {line}: expected {} fields, got {}",
                    path.display(),
                    headers.len(),
                    rec.len()
                )));
            }
            let hour: i64 = rec[0]
                .parse()
                .map_err(|_| Error::Data(format!("frame {} line {line}: bad hour", path.display())))?;
            hours.push(hour);
            for f in rec.iter().skip(1) {
                let v: f64 = f.parse().map_err(|_| {
                    Error::Data(format!("frame {} line {line}: bad count '{f}'", path.display()))
                })?;
                values.push(v);
            }
        }
        let counts = Array2::from_shape_vec((hours.len(), level.n_units()), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        CountFrame::new(meta.level, hours, counts)
    }
}

fn format_count(v: f64) -> String {
    // Integers (the ingested case) print without a fractional part; predictions
    // use the shortest round-trip representation.
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

/// Grand mean and population standard deviation over all (hour, unit) entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-level mean and standard deviation of per-region hourly counts.
pub fn descriptive_stats(frame: &CountFrame) -> Result<FrameStats> {
    let n = frame.counts.len();
    if n == 0 {
        return Err(Error::Data(format!(
            "cannot compute stats of empty frame for level '{}'",
            frame.level
        )));
    }
    let mean = frame.counts.sum() / n as f64;
    let var = frame.counts.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Ok(FrameStats {
        mean,
        std: var.sqrt(),
    })
}
