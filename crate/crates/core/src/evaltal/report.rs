use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ap::{average_precision, ApDetection, ApGround};
use crate::error::{Error, Result};
use crate::featstore::{Corpus, GtSegment, Taxonomy};

/// A classified segment. In single-action mode `noun` is 0 and `verb`
/// holds the action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub t_s: f64,
    pub t_e: f64,
    pub verb: usize,
    pub noun: usize,
    pub score: f64,
}

/// Interchange record: one video's detections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoDetections {
    pub video_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Verb,
    Noun,
    Action,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Task::Verb => "verb",
            Task::Noun => "noun",
            Task::Action => "action",
        }
    }

    fn key(self, verb: usize, noun: usize) -> (usize, usize) {
        match self {
            Task::Verb => (verb, 0),
            Task::Noun => (noun, 0),
            Task::Action => (verb, noun),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tious: Vec<f64>,
    pub tasks: Vec<Task>,
    /// Occluded instances with a fraction below this are `Low`, the rest `High`.
    pub occlusion_high_from: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tious: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            tasks: vec![Task::Verb, Task::Noun, Task::Action],
            occlusion_high_from: 0.08,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tious.is_empty() {
            return Err(Error::Config("evaluation needs at least one tIoU threshold".into()));
        }
        if self.tious.iter().any(|&t| !(t > 0.0 && t <= 1.0)) || self.tious.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "tIoU thresholds must be strictly increasing in (0, 1], got {:?}",
                self.tious
            )));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("evaluation needs at least one task".into()));
        }
        if !(self.occlusion_high_from > 0.0 && self.occlusion_high_from <= 1.0) {
            return Err(Error::Config(format!(
                "occlusion split {} outside (0, 1]",
                self.occlusion_high_from
            )));
        }
        Ok(())
    }

    /// Tasks that are meaningful for a taxonomy; single-action keeps only `action`.
    pub fn tasks_for(&self, taxonomy: &Taxonomy) -> Vec<Task> {
        if taxonomy.is_single_action() {
            vec![Task::Action]
        } else {
            self.tasks.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    /// Verb or noun index, or `verb:noun` for actions.
    pub class: String,
    pub n_gt: usize,
    pub ap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    /// Mean AP over classes with ground truth, one entry per threshold.
    pub map: Vec<f64>,
    pub average_map: f64,
    pub classes: Vec<ClassAp>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tious: Vec<f64>,
    pub n_gt: usize,
    pub n_detections: usize,
    pub tasks: Vec<TaskReport>,
}

impl EvalReport {
    pub fn task(&self, task: Task) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == task)
    }

    /// Average mAP of a task, if it was evaluated.
    pub fn average_map(&self, task: Task) -> Option<f64> {
        self.task(task).map(|t| t.average_map)
    }

    /// Aligned plain-text rendering, percentages with two decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "task");
        for t in &self.tious {
            let _ = write!(s, " {:>8}", format!("@{t:.2}"));
        }
        let _ = writeln!(s, " {:>8}", "avg");
        for tr in &self.tasks {
            let _ = write!(s, "{:<8}", tr.task.label());
            for m in &tr.map {
                let _ = write!(s, " {:>8.2}", 100.0 * m);
            }
            let _ = writeln!(s, " {:>8.2}", 100.0 * tr.average_map);
        }
        let _ = writeln!(s, "ground truth {}, detections {}", self.n_gt, self.n_detections);
        s
    }
}

/// Scores detections against the ground truth of every video in `corpus`.
pub fn evaluate(dets: &[VideoDetections], corpus: &Corpus, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate_subset(dets, corpus, cfg, |_| true)?
        .ok_or_else(|| Error::Data("corpus has no ground-truth instances to evaluate".into()))
}

/// Like [`evaluate`], but only ground truth accepted by `keep` counts.
/// Every detection still competes. `None` when no instance is kept.
pub fn evaluate_subset(
    dets: &[VideoDetections],
    corpus: &Corpus,
    cfg: &EvalConfig,
    keep: impl Fn(&GtSegment) -> bool,
) -> Result<Option<EvalReport>> {
    cfg.validate()?;
    let tax = &corpus.taxonomy;
    let index: HashMap<&str, usize> = corpus
        .videos
        .iter()
        .enumerate()
        .map(|(k, v)| (v.video_id.as_str(), k))
        .collect();
    let mut flat: Vec<(usize, Detection)> = Vec::new();
    for vd in dets {
        let &vi = index
            .get(vd.video_id.as_str())
            .ok_or_else(|| Error::Join(format!("detections for unknown video {:?}", vd.video_id)))?;
        for d in &vd.detections {
            if !tax.is_valid(d.verb, d.noun) {
                return Err(Error::Label(format!(
                    "{}: detection label ({}, {}) not in taxonomy",
                    vd.video_id, d.verb, d.noun
                )));
            }
            if !(d.t_s < d.t_e) {
                return Err(Error::Segment(format!(
                    "{}: detection span [{}, {}]",
                    vd.video_id, d.t_s, d.t_e
                )));
            }
            flat.push((vi, *d));
        }
    }
    let mut gts: Vec<(usize, &GtSegment)> = Vec::new();
    for (vi, v) in corpus.videos.iter().enumerate() {
        gts.extend(v.segments.iter().filter(|s| keep(s)).map(|s| (vi, s)));
    }
    if gts.is_empty() {
        return Ok(None);
    }
    let single = tax.is_single_action();
    let mut tasks = Vec::new();
    for task in cfg.tasks_for(tax) {
        let mut classes: BTreeMap<(usize, usize), (Vec<ApDetection>, Vec<ApGround>)> = BTreeMap::new();
        for &(vi, g) in &gts {
            let noun = if single { 0 } else { g.noun };
            classes.entry(task.key(g.verb, noun)).or_default().1.push(ApGround {
                video: vi,
                t_s: g.t_s,
                t_e: g.t_e,
            });
        }
        for &(vi, d) in &flat {
            let noun = if single { 0 } else { d.noun };
            if let Some(c) = classes.get_mut(&task.key(d.verb, noun)) {
                c.0.push(ApDetection {
                    video: vi,
                    t_s: d.t_s,
                    t_e: d.t_e,
                    score: d.score,
                });
            }
        }
        let class_aps: Vec<ClassAp> = classes
            .iter()
            .map(|(&(a, b), (cd, cg))| ClassAp {
                class: match task {
                    Task::Action if !single => format!("{a}:{b}"),
                    _ => a.to_string(),
                },
                n_gt: cg.len(),
                ap: cfg
                    .tious
                    .iter()
                    .map(|&t| average_precision(cd, cg, t).expect("class has ground truth"))
                    .collect(),
            })
            .collect();
        let map: Vec<f64> = (0..cfg.tious.len())
            .map(|t| class_aps.iter().map(|c| c.ap[t]).sum::<f64>() / class_aps.len() as f64)
            .collect();
        let average_map = map.iter().sum::<f64>() / map.len() as f64;
        tasks.push(TaskReport {
            task,
            map,
            average_map,
            classes: class_aps,
        });
    }
    Ok(Some(EvalReport {
        tious: cfg.tious.clone(),
        n_gt: gts.len(),
        n_detections: flat.len(),
        tasks,
    }))
}
