//! The pipeline as in-memory stages, and the sweeps built from them. The
//! command line persists the output of each stage; the sweeps keep
//! everything in memory.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Classifier;
use crate::config::{ClassifierKind, RunConfig};
use crate::error::{Error, Result};
use crate::evaltal::{
    evaluate, improvement_pct, occlusion_partition_report, sweep, EvalReport, Partition, PartitionReport, SweepTable,
    Task, VideoDetections,
};
use crate::featstore::{generate_synthetic, AnnotatedVideo, Corpus, Inputs, SynthSpec};
use crate::fusion::{FusionConfig, FusionModel, FusionStrategy};
use crate::owl::{detect, prepare_training, train_classifier, AttentionWindow, ClassifierDims, OwlModel};
use crate::proposals::{
    average_recall, default_recall_tious, generate_proposals, plan_windows, train_tem, BoundaryScorer, RecallReport,
    TemModel, VideoProposals,
};

/// XOR-ed into the root seed to draw the evaluation split.
pub const VAL_SEED_SALT: u64 = 0x7661_6c5f_7365_6564;

/// Proposal budgets reported by [`gen_proposals`].
pub const RECALL_BUDGETS: [usize; 5] = [1, 5, 10, 50, 100];

/// Training and evaluation corpora drawn from the same class signatures.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Corpus,
    pub val: Corpus,
}

pub fn gen_data(cfg: &RunConfig) -> Result<Splits> {
    let train = generate_synthetic(&cfg.synth, cfg.seed)?;
    let val_spec = SynthSpec {
        n_videos: cfg.val_videos,
        ..cfg.synth.clone()
    };
    let val = generate_synthetic(&val_spec, cfg.seed ^ VAL_SEED_SALT)?;
    Ok(Splits { train, val })
}

fn feature_dim(corpus: &Corpus) -> Result<usize> {
    corpus
        .videos
        .first()
        .map(|v| v.visual.dim())
        .ok_or_else(|| Error::Data("corpus has no videos".into()))
}

/// Boundary scorer trained on `train`; returns the model and its loss curve.
pub fn train_proposals(cfg: &RunConfig, train: &Corpus) -> Result<(TemModel, Vec<f64>)> {
    let cfg = cfg.seeded();
    let mut model = TemModel::new(cfg.tem.clone(), feature_dim(train)?);
    let curve = train_tem(&mut model, &train.videos)?;
    Ok((model, curve))
}

/// Proposals for every video of `corpus` and their average recall.
pub fn gen_proposals(
    cfg: &RunConfig,
    scorer: &dyn BoundaryScorer,
    corpus: &Corpus,
) -> Result<(Vec<VideoProposals>, RecallReport)> {
    let mut out = Vec::with_capacity(corpus.videos.len());
    for v in &corpus.videos {
        let plan = plan_windows(v.visual.len(), cfg.tem.window, cfg.tem.stride)?;
        out.push(VideoProposals {
            video_id: v.video_id.clone(),
            proposals: generate_proposals(scorer, v, &plan, &cfg.proposals)?,
        });
    }
    let pairs: Vec<_> = out
        .iter()
        .zip(&corpus.videos)
        .map(|(p, v)| (p.proposals.clone(), v.segments.iter().map(|s| (s.t_s, s.t_e)).collect()))
        .collect();
    let recall = average_recall(&pairs, &RECALL_BUDGETS, &default_recall_tious())?;
    Ok((out, recall))
}

/// Proposal sets aligned with `corpus.videos`.
fn aligned<'a>(
    corpus: &'a Corpus,
    proposals: &[VideoProposals],
) -> Result<Vec<(&'a AnnotatedVideo, Vec<crate::proposals::Proposal>)>> {
    let by_id: BTreeMap<&str, &VideoProposals> = proposals.iter().map(|p| (p.video_id.as_str(), p)).collect();
    if let Some(p) = proposals.iter().find(|p| corpus.video(&p.video_id).is_none()) {
        return Err(Error::Join(p.video_id.clone()));
    }
    Ok(corpus
        .videos
        .iter()
        .map(|v| {
            (
                v,
                by_id
                    .get(v.video_id.as_str())
                    .map_or_else(Vec::new, |p| p.proposals.clone()),
            )
        })
        .collect())
}

/// Untrained classifier of the configured family.
pub fn new_classifier(cfg: &RunConfig, dims: ClassifierDims) -> Result<Classifier> {
    let cfg = cfg.seeded();
    Ok(match cfg.classifier {
        ClassifierKind::Owl => Classifier::Owl(OwlModel::new(cfg.owl.clone(), dims)?),
        ClassifierKind::Fusion => Classifier::Fusion(FusionModel::new(cfg.fusion.clone(), dims)?),
    })
}

fn theta_pos(cfg: &RunConfig) -> f64 {
    match cfg.classifier {
        ClassifierKind::Owl => cfg.owl.theta_pos,
        ClassifierKind::Fusion => cfg.fusion.theta_pos,
    }
}

fn top_k(cfg: &RunConfig) -> usize {
    match cfg.classifier {
        ClassifierKind::Owl => cfg.owl.top_k,
        ClassifierKind::Fusion => cfg.fusion.top_k,
    }
}

/// Trains the configured classifier on `train` and its proposals.
pub fn train_classifier_stage(
    cfg: &RunConfig,
    train: &Corpus,
    proposals: &[VideoProposals],
) -> Result<(Classifier, Vec<f64>)> {
    let cfg = cfg.seeded();
    let pairs = aligned(train, proposals)?;
    let videos: Vec<AnnotatedVideo> = pairs.iter().map(|(v, _)| (*v).clone()).collect();
    let props: Vec<_> = pairs.into_iter().map(|(_, p)| p).collect();
    let data = prepare_training(&videos, &props, &train.taxonomy, theta_pos(&cfg))?;
    let mut model = new_classifier(&cfg, ClassifierDims::new(feature_dim(train)?, &train.taxonomy))?;
    let tc = match cfg.classifier {
        ClassifierKind::Owl => cfg.owl.train.clone(),
        ClassifierKind::Fusion => cfg.fusion.train.clone(),
    };
    let curve = train_classifier(&mut model, &data, &tc)?;
    Ok((model, curve))
}

pub fn detect_stage(
    cfg: &RunConfig,
    model: &Classifier,
    corpus: &Corpus,
    proposals: &[VideoProposals],
) -> Result<Vec<VideoDetections>> {
    aligned(corpus, proposals)?
        .into_iter()
        .map(|(v, p)| {
            Ok(VideoDetections {
                video_id: v.video_id.clone(),
                detections: detect(model, &p, v, &corpus.taxonomy, top_k(cfg))?,
            })
        })
        .collect()
}

/// Global report, and the occlusion breakdown when every segment carries
/// occlusion metadata.
pub fn eval_stage(
    cfg: &RunConfig,
    dets: &[VideoDetections],
    corpus: &Corpus,
) -> Result<(EvalReport, Option<PartitionReport>)> {
    let report = evaluate(dets, corpus, &cfg.eval)?;
    let parts = match occlusion_partition_report(dets, corpus, &cfg.eval) {
        Ok(p) => Some(p),
        Err(Error::Metadata(m)) => {
            log::warn!("{m}; occlusion breakdown skipped");
            None
        }
        Err(e) => return Err(e),
    };
    Ok((report, parts))
}

/// Data splits plus trained proposals for both, ready for classifier runs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub splits: Splits,
    pub train_proposals: Vec<VideoProposals>,
    pub val_proposals: Vec<VideoProposals>,
    pub val_recall: RecallReport,
}

/// Generates data for `cfg.seed`, trains the boundary scorer on `inputs`
/// and proposes on both splits.
pub fn prepare(cfg: &RunConfig, inputs: Inputs) -> Result<Prepared> {
    let mut cfg = cfg.seeded();
    cfg.tem.inputs = inputs;
    let splits = gen_data(&cfg)?;
    let (tem, _) = train_proposals(&cfg, &splits.train)?;
    let (train_proposals, _) = gen_proposals(&cfg, &tem, &splits.train)?;
    let (val_proposals, val_recall) = gen_proposals(&cfg, &tem, &splits.val)?;
    Ok(Prepared {
        splits,
        train_proposals,
        val_proposals,
        val_recall,
    })
}

/// The average mAP of the headline task: action.
pub fn headline(report: &EvalReport) -> f64 {
    report.average_map(Task::Action).unwrap_or(0.0)
}

/// Trains the configured classifier on a prepared run and evaluates it on
/// the validation split.
pub fn run_classifier(cfg: &RunConfig, prep: &Prepared) -> Result<(EvalReport, Option<PartitionReport>)> {
    let (model, _) = train_classifier_stage(cfg, &prep.splits.train, &prep.train_proposals)?;
    let dets = detect_stage(cfg, &model, &prep.splits.val, &prep.val_proposals)?;
    eval_stage(cfg, &dets, &prep.splits.val)
}

/// Audiovisual proposals, then OWL at every `cfg.ablation.windows` entry.
pub fn window_ablation(cfg: &RunConfig) -> Result<SweepTable> {
    let settings: Vec<(String, AttentionWindow)> =
        cfg.ablation.windows.iter().map(|w| (format!("W={w}"), *w)).collect();
    let mut cache: BTreeMap<u64, Prepared> = BTreeMap::new();
    sweep("window", &settings, &cfg.ablation.seeds, |w, seed| {
        let mut c = cfg.with_seed(seed);
        c.classifier = ClassifierKind::Owl;
        c.owl.window = *w;
        let prep = match cache.entry(seed) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(prepare(&c, Inputs::Av)?),
        };
        Ok(headline(&run_classifier(&c, prep)?.0))
    })
}

/// Rows `G-{A,V,AV}` (proposal inputs) by columns `C-{A,V,AV}` (classifier
/// inputs, a single-stream baseline each), labelled `G-x/C-y`.
pub fn modality_grid(cfg: &RunConfig) -> Result<SweepTable> {
    let mut settings = Vec::with_capacity(9);
    for g in Inputs::ALL {
        for c in Inputs::ALL {
            settings.push((format!("G-{}/C-{}", g.label(), c.label()), (g, c)));
        }
    }
    let mut cache: BTreeMap<(u64, Inputs), Prepared> = BTreeMap::new();
    sweep("modality-grid", &settings, &cfg.ablation.seeds, |&(g, c), seed| {
        let mut run = cfg.with_seed(seed);
        run.classifier = ClassifierKind::Fusion;
        run.fusion = FusionConfig {
            strategy: FusionStrategy::for_inputs(c),
            supervision: Vec::new(),
            ..run.fusion.clone()
        };
        let prep = match cache.entry((seed, g)) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(prepare(&run, g)?),
        };
        Ok(headline(&run_classifier(&run, prep)?.0))
    })
}

/// Per-partition average action mAP of two classifiers, averaged over
/// seeds, and the relative gain of `b` over `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionStudy {
    pub seeds: Vec<u64>,
    pub label_a: String,
    pub label_b: String,
    /// `[No, Low, High]` means over seeds; `None` if a partition was empty
    /// under some seed.
    pub map_a: Vec<Option<f64>>,
    pub map_b: Vec<Option<f64>>,
    pub improvement_pct: Vec<Option<f64>>,
}

impl OcclusionStudy {
    pub fn gain(&self, p: Partition) -> Option<f64> {
        self.improvement_pct[Partition::ALL.iter().position(|&q| q == p).expect("partition")]
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>, s: f64| v.map_or(String::new(), |x| format!("{:.4}", s * x));
        let mut out = format!("partition,{},{},improvement_pct\n", self.label_a, self.label_b);
        for (k, p) in Partition::ALL.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.label(),
                cell(self.map_a[k], 100.0),
                cell(self.map_b[k], 100.0),
                cell(self.improvement_pct[k], 1.0)
            ));
        }
        out
    }
}

/// Runs classifier configs `a` and `b` on the same prepared data for every
/// ablation seed and compares them partition by partition.
pub fn occlusion_study(
    cfg: &RunConfig,
    (label_a, a): (&str, &dyn Fn(&RunConfig) -> RunConfig),
    (label_b, b): (&str, &dyn Fn(&RunConfig) -> RunConfig),
) -> Result<OcclusionStudy> {
    let seeds = cfg.ablation.seeds.clone();
    let mut sums = [[Some(0.0f64); 3]; 2];
    for &seed in &seeds {
        let base = cfg.with_seed(seed);
        let prep = prepare(&base, Inputs::Av)?;
        for (k, make) in [a, b].iter().enumerate() {
            let (_, parts) = run_classifier(&make(&base), &prep)?;
            let parts = parts.ok_or_else(|| Error::Metadata("corpus lacks occlusion metadata".into()))?;
            for (j, p) in Partition::ALL.iter().enumerate() {
                let v = parts.average_map(*p, Task::Action);
                sums[k][j] = sums[k][j].zip(v).map(|(s, x)| s + x);
            }
        }
    }
    let n = seeds.len().max(1) as f64;
    let mean = |k: usize| sums[k].iter().map(|s| s.map(|x| x / n)).collect::<Vec<_>>();
    let (map_a, map_b) = (mean(0), mean(1));
    let improvement_pct = map_a
        .iter()
        .zip(&map_b)
        .map(|(x, y)| x.zip(*y).and_then(|(x, y)| improvement_pct(x, y)))
        .collect();
    Ok(OcclusionStudy {
        seeds,
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        map_a,
        map_b,
        improvement_pct,
    })
}
