//! Shared setup for the criterion benches.

use std::path::Path;

use echoagent_core::fixtures::{self, ShapeSpec};
use echoagent_core::SegmentationMask;

/// A2C and A4C masks of the reference spheroid.
pub fn spheroid_pair() -> (SegmentationMask, SegmentationMask) {
    let m = ShapeSpec::spheroid(80.0, 25.0, 0.5, 256).mask();
    (m.clone(), m)
}

/// Write a one-record dataset at `ef` under `root` and return the record dir.
pub fn one_record(root: &Path, ef: f64) -> std::path::PathBuf {
    let spec = fixtures::DatasetSpec { efs: vec![ef], ..Default::default() };
    fixtures::generate_dataset(root, &spec).expect("fixture dataset").remove(0).dir
}
