//! Point-record ingestion, hourly count frames, chronological splits, and the
//! synthetic-city generator.

mod frame;
mod ingest;
mod split;
mod synth;

pub use frame::{descriptive_stats, CountFrame, FrameMeta, FrameSet, FrameStats};
pub use ingest::{
    ingest_points, read_points_csv, read_points_file, write_points_csv, write_points_file,
    IngestReport, PointRecord,
};
pub use split::{make_splits, HourBound, HourRange, SplitRule, SplitSet};
pub use synth::{synth_generate, DailyCycle, Hotspot, SynthConfig, SynthData};
