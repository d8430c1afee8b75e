use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::report::{evaluate_subset, EvalConfig, EvalReport, Task, VideoDetections};
use crate::error::{Error, Result};
use crate::featstore::Corpus;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    No,
    Low,
    High,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::No, Partition::Low, Partition::High];

    /// `No` at exactly 0, `Low` below `high_from`, `High` from it on.
    pub fn of(fraction: f64, high_from: f64) -> Partition {
        if fraction == 0.0 {
            Partition::No
        } else if fraction < high_from {
            Partition::Low
        } else {
            Partition::High
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Partition::No => "no",
            Partition::Low => "low",
            Partition::High => "high",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionEval {
    pub partition: Partition,
    pub n_gt: usize,
    /// `None` when the partition holds no ground truth.
    pub report: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub partitions: Vec<PartitionEval>,
}

impl PartitionReport {
    pub fn get(&self, p: Partition) -> &PartitionEval {
        self.partitions
            .iter()
            .find(|e| e.partition == p)
            .expect("all partitions present")
    }

    pub fn average_map(&self, p: Partition, task: Task) -> Option<f64> {
        self.get(p).report.as_ref().and_then(|r| r.average_map(task))
    }
}

/// Evaluates each occlusion partition separately. Only the ground truth is
/// partitioned; all detections count against every partition.
pub fn occlusion_partition_report(
    dets: &[VideoDetections],
    corpus: &Corpus,
    cfg: &EvalConfig,
) -> Result<PartitionReport> {
    cfg.validate()?;
    for v in &corpus.videos {
        if let Some(k) = v.segments.iter().position(|s| s.occlusion_fraction.is_none()) {
            return Err(Error::Metadata(format!(
                "{}: segment #{k} has no occlusion fraction",
                v.video_id
            )));
        }
    }
    let part = |f: Option<f64>| Partition::of(f.expect("checked above"), cfg.occlusion_high_from);
    let mut partitions = Vec::with_capacity(3);
    for p in Partition::ALL {
        let n_gt = corpus
            .videos
            .iter()
            .flat_map(|v| &v.segments)
            .filter(|s| part(s.occlusion_fraction) == p)
            .count();
        let report = evaluate_subset(dets, corpus, cfg, |s| part(s.occlusion_fraction) == p)?;
        partitions.push(PartitionEval {
            partition: p,
            n_gt,
            report,
        });
    }
    Ok(PartitionReport { partitions })
}

/// `100 · (b − a) / a`, undefined when `a` is 0.
pub fn improvement_pct(a: f64, b: f64) -> Option<f64> {
    (a != 0.0).then(|| 100.0 * (b - a) / a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub partition: Partition,
    pub map_a: Option<f64>,
    pub map_b: Option<f64>,
    pub improvement_pct: Option<f64>,
}

/// Per-partition average mAP of two detection sets and the relative gain
/// of `b` over `a`.
pub fn improvement_table(a: &PartitionReport, b: &PartitionReport, task: Task) -> Vec<ImprovementRow> {
    Partition::ALL
        .iter()
        .map(|&p| {
            let (ma, mb) = (a.average_map(p, task), b.average_map(p, task));
            ImprovementRow {
                partition: p,
                map_a: ma,
                map_b: mb,
                improvement_pct: ma.zip(mb).and_then(|(x, y)| improvement_pct(x, y)),
            }
        })
        .collect()
}

pub fn improvement_text(rows: &[ImprovementRow]) -> String {
    let cell = |v: Option<f64>, scale: f64| v.map_or("-".to_string(), |x| format!("{:.2}", scale * x));
    let mut s = format!("{:<10} {:>8} {:>8} {:>10}\n", "partition", "mAP A", "mAP B", "gain %");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>8} {:>10}",
            r.partition.label(),
            cell(r.map_a, 100.0),
            cell(r.map_b, 100.0),
            cell(r.improvement_pct, 1.0)
        );
    }
    s
}
