//! The proposal generator: a per-snippet boundary scorer run over sliding
//! windows, exhaustive start/end enumeration, cross-window deduplication,
//! Soft-NMS, and average recall.

mod generate;
mod recall;
mod soft_nms;
mod tem;
mod window;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use generate::{enumerate_candidates, generate_proposals, ProposalConfig};
pub use recall::{average_recall, default_recall_tious, matched_count, video_recall, RecallReport};
pub use soft_nms::soft_nms;
pub use tem::{tem_targets, train_tem, BoundaryScorer, ConstantScorer, OracleScorer, TemConfig, TemModel, WindowProbs};
pub use window::{plan_windows, WindowPlan};

use crate::error::Result;
use crate::featstore::{read_json, write_json};

/// A class-agnostic scored segment in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub t_s: f64,
    pub t_e: f64,
    pub score: f64,
}

impl Proposal {
    pub fn new(t_s: f64, t_e: f64, score: f64) -> Self {
        Self { t_s, t_e, score }
    }

    pub fn span(&self) -> (f64, f64) {
        (self.t_s, self.t_e)
    }
}

/// Interchange record: one video's proposals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoProposals {
    pub video_id: String,
    pub proposals: Vec<Proposal>,
}

pub fn write_proposals(path: &Path, record: &VideoProposals) -> Result<()> {
    write_json(path, record)
}

pub fn read_proposals(path: &Path) -> Result<VideoProposals> {
    read_json(path)
}
