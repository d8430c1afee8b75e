//! Detection evaluation: tIoU, per-class average precision, mAP over tIoU
//! thresholds for the verb, noun and action tasks, occlusion partitions,
//! and seed sweeps.
//!
//! AP ranks a class's detections by score, matches each greedily to the
//! unmatched ground truth of the same video it overlaps most, and integrates
//! the precision envelope over recall. Classes without ground truth are left
//! out of the mean.

mod ablation;
mod ap;
mod occlusion;
mod report;
mod tiou;

use std::path::Path;

pub use ablation::{sweep, SweepRow, SweepTable};
pub use ap::{average_precision, ApDetection, ApGround};
pub use occlusion::{
    improvement_pct, improvement_table, improvement_text, occlusion_partition_report, ImprovementRow, Partition,
    PartitionEval, PartitionReport,
};
pub use report::{
    evaluate, evaluate_subset, ClassAp, Detection, EvalConfig, EvalReport, Task, TaskReport, VideoDetections,
};
pub use tiou::tiou;
pub(crate) use tiou::tiou_unchecked;

use crate::error::Result;
use crate::featstore::{read_json, write_json};

pub fn write_detections(path: &Path, record: &VideoDetections) -> Result<()> {
    write_json(path, record)
}

pub fn read_detections(path: &Path) -> Result<VideoDetections> {
    read_json(path)
}
