use std::io;
use std::path::Path;

use ndarray::Array2;

use crate::data::frame::{CountFrame, FrameSet};
use crate::error::{Error, Result};
use crate::geo::GeoHierarchy;

/// One timestamped point event in the grid's planar frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    /// UTC seconds.
    pub timestamp: i64,
    pub x_m: f64,
    pub y_m: f64,
}

impl PointRecord {
    /// Hour bucket: `floor(timestamp / 3600)` in UTC.
    pub fn hour(&self) -> i64 {
        self.timestamp.div_euclid(3600)
    }
}

/// Outcome of counting a record stream into per-level frames.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub frames: FrameSet,
    pub total_records: usize,
    pub counted: usize,
    /// Records whose coordinates fall outside the grid.
    pub out_of_bounds: usize,
    /// Records whose hour falls outside the requested window.
    pub out_of_window: usize,
}

/// Counts records per (hour, unit) at every level of the hierarchy over the
/// half-open hour window `[start_hour, end_hour)`.
///
/// Out-of-bounds and out-of-window records are counted and reported, never
/// silently dropped. An empty stream yields all-zero frames.
pub fn ingest_points<I>(records: I, h: &GeoHierarchy, start_hour: i64, end_hour: i64) -> Result<IngestReport>
where
    I: IntoIterator<Item = PointRecord>,
{
    if start_hour >= end_hour {
        return Err(Error::Config(format!(
            "empty ingest window [{start_hour}, {end_hour})"
        )));
    }
    let n_hours = (end_hour - start_hour) as usize;
    let dims = h.dims();
    let mut counts: Vec<Array2<f64>> = dims.iter().map(|&d| Array2::zeros((n_hours, d))).collect();

    let mut total = 0usize;
    let mut counted = 0usize;
    let mut out_of_bounds = 0usize;
    let mut out_of_window = 0usize;
    for rec in records {
        total += 1;
        let hour = rec.hour();
        if hour < start_hour || hour >= end_hour {
            out_of_window += 1;
            continue;
        }
        let units = match h.assign_point(rec.x_m, rec.y_m) {
            Ok(units) => units,
            Err(_) => {
                out_of_bounds += 1;
                continue;
            }
        };
        let t = (hour - start_hour) as usize;
        for (l, &u) in units.iter().enumerate() {
            counts[l][(t, u)] += 1.0;
        }
        counted += 1;
    }

    let mut frames = FrameSet::new();
    for (level, c) in h.levels().iter().zip(counts) {
        frames.insert(
            level.name.clone(),
            CountFrame::new(level.name.clone(), (start_hour..end_hour).collect(), c)?,
        );
    }
    Ok(IngestReport {
        frames,
        total_records: total,
        counted,
        out_of_bounds,
        out_of_window,
    })
}

/// Reads `timestamp,x,y` records, reporting malformed lines by number.
pub fn read_points_csv<R: io::Read>(reader: R) -> Result<Vec<PointRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let expected = ["timestamp", "x", "y"];
    if headers.len() != 3 || !headers.iter().zip(expected).all(|(a, b)| a == b) {
        return Err(Error::Data(format!(
            "points csv must have header `timestamp,x,y`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Data(format!(
                "points csv line {line}: expected 3 fields, got {}",
                rec.len()
            )));
        }
        let timestamp: i64 = rec[0]
            .parse()
            .map_err(|_| Error::Data(format!("points csv line {line}: bad timestamp '{}'", &rec[0])))?;
        let x_m: f64 = rec[1]
            .parse()
            .map_err(|_| Error::Data(format!("points csv line {line}: bad x '{}'", &rec[1])))?;
        let y_m: f64 = rec[2]
            .parse()
            .map_err(|_| Error::Data(format!("points csv line {line}: bad y '{}'", &rec[2])))?;
        if !x_m.is_finite() || !y_m.is_finite() {
            return Err(Error::Data(format!(
                "points csv line {line}: non-finite coordinate"
            )));
        }
        out.push(PointRecord { timestamp, x_m, y_m });
    }
    Ok(out)
}

pub fn read_points_file(path: &Path) -> Result<Vec<PointRecord>> {
    read_points_csv(std::fs::File::open(path)?)
}

pub fn write_points_csv<W: io::Write>(records: &[PointRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "x", "y"])?;
    for r in records {
        w.write_record(&[r.timestamp.to_string(), r.x_m.to_string(), r.y_m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_points_file(records: &[PointRecord], path: &Path) -> Result<()> {
    write_points_csv(records, std::fs::File::create(path)?)
}
