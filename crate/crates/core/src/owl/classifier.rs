use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::tokens::{build_tokens, ProposalToken};
use crate::error::{Error, Result};
use crate::evaltal::{tiou_unchecked, Detection};
use crate::featstore::{AnnotatedVideo, GtSegment, Taxonomy};
use crate::numerics::{masked_row_softmax, ParamSet, Tape, Tensor2, Var};
use crate::proposals::Proposal;

/// Input and head widths shared by every proposal classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierDims {
    /// Per-modality feature dimension.
    pub dim: usize,
    /// Verb (or action) classes including background.
    pub verb_classes: usize,
    /// Noun classes including background; `None` in single-action mode.
    pub noun_classes: Option<usize>,
}

impl ClassifierDims {
    pub fn new(dim: usize, taxonomy: &Taxonomy) -> Self {
        Self {
            dim,
            verb_classes: taxonomy.verb_classes(),
            noun_classes: taxonomy.noun_classes(),
        }
    }
}

/// Per-token class targets; `noun` is ignored without a noun head.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Targets {
    pub verb: Vec<usize>,
    pub noun: Vec<usize>,
}

/// Head outputs recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Logits {
    pub verb: Var,
    pub noun: Option<Var>,
}

/// Row-wise class posteriors of each head.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriors {
    pub verb: Tensor2,
    pub noun: Option<Tensor2>,
}

/// Interface between the classifiers and the shared training loop, detection
/// assembly and checkpointing.
pub trait ProposalClassifier {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Scalar training objective over one video's tokens.
    fn loss(&self, tape: &mut Tape, ps: &ParamSet, tokens: &[ProposalToken], targets: &Targets) -> Result<Var>;

    /// Inference-time head outputs; posteriors are their row softmax.
    fn logits(&self, tokens: &[ProposalToken]) -> Result<(Tensor2, Option<Tensor2>)>;

    fn posteriors(&self, tokens: &[ProposalToken]) -> Result<Posteriors> {
        let (v, n) = self.logits(tokens)?;
        Ok(Posteriors {
            verb: masked_row_softmax(&v, None)?,
            noun: n.map(|n| masked_row_softmax(&n, None)).transpose()?,
        })
    }
}

/// Cross-entropy on the verb head plus, when present, the noun head.
pub(crate) fn head_loss(tape: &mut Tape, logits: Logits, targets: &Targets) -> Result<Var> {
    let lv = tape.cross_entropy(logits.verb, &targets.verb)?;
    match logits.noun {
        Some(n) => {
            let ln = tape.cross_entropy(n, &targets.noun)?;
            tape.add(lv, ln)
        }
        None => Ok(lv),
    }
}

/// Labels each proposal with its best-overlapping ground truth when the
/// tIoU reaches `theta_pos`, otherwise with the background classes. Equal
/// overlaps go to the ground truth that starts first.
pub fn assign_labels(spans: &[(f64, f64)], gts: &[GtSegment], theta_pos: f64, taxonomy: &Taxonomy) -> Result<Targets> {
    if !(theta_pos > 0.0 && theta_pos < 1.0) {
        return Err(Error::Config(format!("theta_pos must lie in (0, 1), got {theta_pos}")));
    }
    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by(|&a, &b| gts[a].t_s.total_cmp(&gts[b].t_s));
    let mut t = Targets::default();
    for &span in spans {
        let mut best: Option<(usize, f64)> = None;
        for &g in &order {
            let iou = tiou_unchecked(span, (gts[g].t_s, gts[g].t_e));
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) if iou >= theta_pos => {
                t.verb.push(gts[g].verb);
                t.noun.push(if taxonomy.is_single_action() { 0 } else { gts[g].noun });
            }
            _ => {
                t.verb.push(taxonomy.verb_background());
                t.noun.push(taxonomy.noun_background());
            }
        }
    }
    Ok(t)
}

/// One video's sorted tokens and their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingVideo {
    pub video_id: String,
    pub tokens: Vec<ProposalToken>,
    pub targets: Targets,
}

/// Builds tokens and targets for each video; `proposals[k]` belongs to
/// `videos[k]`. Videos without proposals are skipped.
pub fn prepare_training(
    videos: &[AnnotatedVideo],
    proposals: &[Vec<Proposal>],
    taxonomy: &Taxonomy,
    theta_pos: f64,
) -> Result<Vec<TrainingVideo>> {
    if videos.len() != proposals.len() {
        return Err(Error::Join(format!(
            "{} videos but {} proposal sets",
            videos.len(),
            proposals.len()
        )));
    }
    let mut out = Vec::new();
    for (v, p) in videos.iter().zip(proposals) {
        if p.is_empty() {
            log::warn!("{} has no proposals; skipped for classifier training", v.video_id);
            continue;
        }
        let tokens = build_tokens(p, v)?;
        let spans: Vec<_> = tokens.iter().map(|t| t.span).collect();
        let targets = assign_labels(&spans, &v.segments, theta_pos, taxonomy)?;
        out.push(TrainingVideo {
            video_id: v.video_id.clone(),
            tokens,
            targets,
        });
    }
    if out.is_empty() {
        return Err(Error::Data("no proposals to train the classifier on".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            lr: 0.05,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

/// SGD over videos, one token sequence per step, visiting the videos in a
/// seeded shuffled order each epoch. Returns the mean loss of every epoch.
pub fn train_classifier<C: ProposalClassifier>(
    model: &mut C,
    data: &[TrainingVideo],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Data("no proposals to train the classifier on".into()));
    }
    let mut rng = crate::numerics::rng(cfg.seed ^ 0xc1a5_5000);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let item = &data[k];
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, model.params(), &item.tokens, &item.targets)?;
            total += tape.value(loss).item();
            let grads = tape.backward(loss)?;
            let ps = model.params_mut();
            ps.zero_grads();
            ps.accumulate(&tape, &grads);
            if cfg.clip_norm > 0.0 {
                ps.clip_grad_norm(cfg.clip_norm);
            }
            ps.sgd_step(cfg.lr)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !model.params().all_finite() {
            return Err(Error::Numeric(format!("classifier diverged in epoch {epoch}")));
        }
        log::debug!("classifier epoch {epoch}: loss {mean:.6}");
        curve.push(mean);
    }
    Ok(curve)
}

/// Action scores for every token: `P(verb)·P(noun)·gen_score` over the valid
/// actions (or `P(action)·gen_score`), keeping the `top_k` best per token.
/// Background is never emitted.
pub fn assemble_detections(
    tokens: &[ProposalToken],
    post: &Posteriors,
    taxonomy: &Taxonomy,
    top_k: usize,
) -> Vec<Detection> {
    let mut out = Vec::with_capacity(tokens.len() * top_k);
    for (i, t) in tokens.iter().enumerate() {
        let mut cands: Vec<Detection> = taxonomy
            .valid_actions
            .iter()
            .map(|&(v, n)| {
                let p = match &post.noun {
                    Some(pn) => post.verb.get(i, v) * pn.get(i, n),
                    None => post.verb.get(i, v),
                };
                Detection {
                    t_s: t.span.0,
                    t_e: t.span.1,
                    verb: v,
                    noun: n,
                    score: p * t.gen_score,
                }
            })
            .collect();
        // stable sort: equal scores keep taxonomy order
        cands.sort_by(|a, b| b.score.total_cmp(&a.score));
        out.extend(cands.into_iter().take(top_k));
    }
    out
}

/// Tokens, posteriors and detections for one video.
pub fn detect<C: ProposalClassifier + ?Sized>(
    model: &C,
    proposals: &[Proposal],
    video: &AnnotatedVideo,
    taxonomy: &Taxonomy,
    top_k: usize,
) -> Result<Vec<Detection>> {
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    let tokens = build_tokens(proposals, video)?;
    let post = model.posteriors(&tokens)?;
    Ok(assemble_detections(&tokens, &post, taxonomy, top_k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featstore::{PositionalInput, TaxonomyMode};

    fn tax() -> Taxonomy {
        Taxonomy {
            mode: TaxonomyMode::VerbNoun,
            n_verbs: 2,
            n_nouns: 2,
            valid_actions: vec![(0, 0), (0, 1), (1, 0), (1, 1)],
        }
    }

    fn gt(t_s: f64, t_e: f64, verb: usize, noun: usize) -> GtSegment {
        GtSegment {
            t_s,
            t_e,
            verb,
            noun,
            occlusion_fraction: Some(0.0),
        }
    }

    fn token(gen_score: f64) -> ProposalToken {
        ProposalToken {
            z_v: vec![],
            z_a: vec![],
            pos: PositionalInput { p_r: 0.0, p_d: 1.0 },
            span: (0.0, 1.0),
            gen_score,
        }
    }

    #[test]
    fn label_assignment_examples() {
        let gts = [gt(0.0, 10.0, 1, 0), gt(20.0, 30.0, 0, 1)];
        let t = assign_labels(&[(0.0, 10.0), (40.0, 45.0)], &gts, 0.5, &tax()).unwrap();
        assert_eq!(t.verb, vec![1, 2]);
        assert_eq!(t.noun, vec![0, 2]);
        assert!(matches!(
            assign_labels(&[(0.0, 1.0)], &gts, 1.0, &tax()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            assign_labels(&[(0.0, 1.0)], &gts, 0.0, &tax()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sixty_forty_split_takes_the_larger() {
        let gts = [gt(2.0, 10.0, 0, 1), gt(0.0, 10.0, 1, 0)];
        let span = (0.0, 6.0);
        assert!((tiou_unchecked(span, (0.0, 10.0)) - 0.6).abs() < 1e-12);
        assert!((tiou_unchecked(span, (2.0, 10.0)) - 0.4).abs() < 1e-12);
        let t = assign_labels(&[span], &gts, 0.5, &tax()).unwrap();
        assert_eq!((t.verb[0], t.noun[0]), (1, 0));
    }

    #[test]
    fn ties_go_to_earlier_start_regardless_of_order() {
        let gts = [gt(4.0, 6.0, 0, 1), gt(0.0, 2.0, 1, 0)];
        let t = assign_labels(&[(1.0, 5.0)], &gts, 0.2, &tax()).unwrap();
        assert_eq!((t.verb[0], t.noun[0]), (1, 0));
        let rev = [gts[1].clone(), gts[0].clone()];
        assert_eq!(assign_labels(&[(1.0, 5.0)], &rev, 0.2, &tax()).unwrap(), t);
    }

    #[test]
    fn uniform_posteriors_give_a_ninth() {
        let post = Posteriors {
            verb: Tensor2::filled(1, 3, 1.0 / 3.0),
            noun: Some(Tensor2::filled(1, 3, 1.0 / 3.0)),
        };
        let d = assemble_detections(&[token(1.0)], &post, &tax(), 10);
        assert_eq!(d.len(), 4);
        assert!(d.iter().all(|d| (d.score - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn certain_posteriors_give_gen_score_and_respect_taxonomy() {
        let post = Posteriors {
            verb: Tensor2::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap(),
            noun: Some(Tensor2::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap()),
        };
        let d = assemble_detections(&[token(0.7)], &post, &tax(), 1);
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].verb, d[0].noun, d[0].score), (1, 0, 0.7));
        let mut restricted = tax();
        restricted.valid_actions.retain(|&a| a != (1, 0));
        let d = assemble_detections(&[token(0.7)], &post, &restricted, 5);
        assert!(d.iter().all(|d| (d.verb, d.noun) != (1, 0)));
    }

    #[test]
    fn single_action_scores() {
        let post = Posteriors {
            verb: Tensor2::from_rows(&[vec![0.2, 0.5, 0.3]]).unwrap(),
            noun: None,
        };
        let d = assemble_detections(&[token(0.5)], &post, &Taxonomy::single_action(2), 5);
        assert_eq!(
            d.iter().map(|d| (d.verb, d.score)).collect::<Vec<_>>(),
            vec![(1, 0.25), (0, 0.1)]
        );
    }
}
