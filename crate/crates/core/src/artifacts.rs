//! On-disk layout of a run and provenance-stamped JSON records.
//!
//! ```text
//! <out>/
//!   corpus/{train,val}/…       feature files and annotations
//!   corpus/provenance.json
//!   tem.owlm                   boundary scorer checkpoint
//!   tem_loss.csv
//!   proposals/{train,val}/<video>.json
//!   recall.json
//!   classifier.owlm
//!   classifier_loss.csv
//!   detections/<video>.json
//!   report.json, report.txt
//!   occlusion.json, occlusion.txt
//!   ablation_<sweep>.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Provenance;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaltal::VideoDetections;
use crate::featstore::{read_corpus, read_json, write_corpus, write_json, Corpus};
use crate::pipeline::Splits;
use crate::proposals::VideoProposals;

/// A record with the provenance of the run that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub data: T,
}

pub fn write_stamped<T: Serialize>(path: &Path, provenance: &Provenance, data: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_json(
        path,
        &Stamped {
            provenance: provenance.clone(),
            data,
        },
    )
}

pub fn read_stamped<T: DeserializeOwned>(path: &Path) -> Result<Stamped<T>> {
    read_json(path)
}

/// Text file whose first line is a `#` comment with the provenance.
pub fn write_text(path: &Path, provenance: &Provenance, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = format!(
        "# tool_version={} config_hash={} seed={}\n{body}",
        provenance.tool_version, provenance.config_hash, provenance.seed
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Paths of every artifact of one run.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub out: PathBuf,
    pub corpus: PathBuf,
}

impl RunLayout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            out: cfg.paths.out.clone(),
            corpus: cfg.paths.corpus_dir(),
        }
    }

    pub fn corpus_split(&self, split: Split) -> PathBuf {
        self.corpus.join(split.name())
    }

    pub fn tem(&self) -> PathBuf {
        self.out.join("tem.owlm")
    }

    pub fn tem_loss(&self) -> PathBuf {
        self.out.join("tem_loss.csv")
    }

    pub fn proposals(&self, split: Split) -> PathBuf {
        self.out.join("proposals").join(split.name())
    }

    pub fn recall(&self) -> PathBuf {
        self.out.join("recall.json")
    }

    pub fn classifier(&self) -> PathBuf {
        self.out.join("classifier.owlm")
    }

    pub fn classifier_loss(&self) -> PathBuf {
        self.out.join("classifier_loss.csv")
    }

    pub fn detections(&self) -> PathBuf {
        self.out.join("detections")
    }

    pub fn report(&self, ext: &str) -> PathBuf {
        self.out.join(format!("report.{ext}"))
    }

    pub fn occlusion(&self, ext: &str) -> PathBuf {
        self.out.join(format!("occlusion.{ext}"))
    }

    pub fn ablation(&self, sweep: &str) -> PathBuf {
        self.out.join(format!("ablation_{sweep}.csv"))
    }

    pub fn write_splits(&self, splits: &Splits, provenance: &Provenance) -> Result<()> {
        write_corpus(&self.corpus_split(Split::Train), &splits.train)?;
        write_corpus(&self.corpus_split(Split::Val), &splits.val)?;
        write_stamped(&self.corpus.join("provenance.json"), provenance, &serde_json::json!({}))
    }

    pub fn read_split(&self, split: Split) -> Result<Corpus> {
        read_corpus(&self.corpus_split(split))
    }

    /// One file per video, named after the video.
    pub fn write_proposals(&self, split: Split, sets: &[VideoProposals], provenance: &Provenance) -> Result<()> {
        let dir = self.proposals(split);
        for s in sets {
            write_stamped(&dir.join(format!("{}.json", s.video_id)), provenance, s)?;
        }
        Ok(())
    }

    /// Proposals for every video of `corpus`; a missing file is a dependency
    /// error naming it.
    pub fn read_proposals(&self, split: Split, corpus: &Corpus) -> Result<Vec<VideoProposals>> {
        let dir = self.proposals(split);
        corpus
            .videos
            .iter()
            .map(|v| Ok(read_stamped::<VideoProposals>(&dir.join(format!("{}.json", v.video_id)))?.data))
            .collect()
    }

    pub fn write_detections(&self, dets: &[VideoDetections], provenance: &Provenance) -> Result<()> {
        let dir = self.detections();
        for d in dets {
            write_stamped(&dir.join(format!("{}.json", d.video_id)), provenance, d)?;
        }
        Ok(())
    }

    pub fn read_detections(&self, corpus: &Corpus) -> Result<Vec<VideoDetections>> {
        let dir = self.detections();
        corpus
            .videos
            .iter()
            .map(|v| Ok(read_stamped::<VideoDetections>(&dir.join(format!("{}.json", v.video_id)))?.data))
            .collect()
    }
}

/// Loss curve as `epoch,loss` rows.
pub fn loss_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (k, l) in curve.iter().enumerate() {
        s.push_str(&format!("{k},{l:.12e}\n"));
    }
    s
}
