use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::soft_nms::soft_nms;
use super::tem::BoundaryScorer;
use super::window::WindowPlan;
use super::Proposal;
use crate::error::{Error, Result};
use crate::featstore::AnnotatedVideo;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub max_duration_snippets: usize,
    pub sigma: f64,
    pub score_floor: f64,
    pub top_n: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            max_duration_snippets: 64,
            sigma: 0.5,
            score_floor: 1e-4,
            top_n: 100,
        }
    }
}

/// Every `(i, j)` pair with `i < j ≤ i + max_duration` inside each window,
/// scored `p_start[i] · p_end[j] · mean(p_action[i..j])` and mapped to global
/// seconds. Spans produced by several windows keep their best score.
pub fn enumerate_candidates(
    scorer: &dyn BoundaryScorer,
    video: &AnnotatedVideo,
    plan: &WindowPlan,
    max_duration: usize,
) -> Result<Vec<Proposal>> {
    let fps = video.visual.fps();
    let mut best: HashMap<(usize, usize), f64> = HashMap::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    for &(a, b) in &plan.windows {
        let p = scorer.score_window(video, (a, b))?;
        let n = b - a;
        if [&p.start, &p.end, &p.action]
            .iter()
            .any(|v| v.len() != n || v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Numeric(format!(
                "boundary scorer produced invalid probabilities on window [{a}, {b}) of {}",
                video.video_id
            )));
        }
        let mut prefix = vec![0.0; n + 1];
        for k in 0..n {
            prefix[k + 1] = prefix[k] + p.action[k];
        }
        for i in 0..n {
            for j in i + 1..n.min(i + max_duration + 1) {
                let mean = (prefix[j] - prefix[i]) / (j - i) as f64;
                let score = (p.start[i] * p.end[j] * mean).clamp(0.0, 1.0);
                let key = (a + i, a + j);
                match best.get_mut(&key) {
                    Some(s) => *s = s.max(score),
                    None => {
                        best.insert(key, score);
                        order.push(key);
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let t_s = key.0 as f64 / fps;
        let t_e = (key.1 as f64 / fps).min(video.duration);
        if t_s < t_e {
            out.push(Proposal::new(t_s, t_e, best[&key]));
        }
    }
    Ok(out)
}

/// Candidate enumeration followed by Soft-NMS; returns at most `top_n`
/// proposals in selection order.
pub fn generate_proposals(
    scorer: &dyn BoundaryScorer,
    video: &AnnotatedVideo,
    plan: &WindowPlan,
    cfg: &ProposalConfig,
) -> Result<Vec<Proposal>> {
    if cfg.max_duration_snippets == 0 || cfg.max_duration_snippets > plan.window_size {
        return Err(Error::Config(format!(
            "max_duration_snippets {} must lie in [1, window {}]",
            cfg.max_duration_snippets, plan.window_size
        )));
    }
    let cands = enumerate_candidates(scorer, video, plan, cfg.max_duration_snippets)?;
    soft_nms(&cands, cfg.sigma, cfg.score_floor, cfg.top_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaltal::tiou;
    use crate::featstore::{generate_synthetic, SynthSpec};
    use crate::proposals::tem::{ConstantScorer, OracleScorer};
    use crate::proposals::window::plan_windows;

    fn noiseless() -> SynthSpec {
        SynthSpec {
            n_videos: 3,
            noise: 0.0,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn uniform_scorer_gives_eighth_everywhere() {
        let corpus = generate_synthetic(&noiseless(), 0).unwrap();
        let v = &corpus.videos[0];
        let plan = plan_windows(v.visual.len(), 160, 80).unwrap();
        let c = enumerate_candidates(&ConstantScorer(0.5), v, &plan, 64).unwrap();
        assert!(!c.is_empty());
        assert!(c.iter().all(|p| p.score == 0.125));
    }

    #[test]
    fn oracle_top_proposal_recovers_each_gt() {
        let corpus = generate_synthetic(&noiseless(), 3).unwrap();
        for v in &corpus.videos {
            let plan = plan_windows(v.visual.len(), 160, 80).unwrap();
            let props = generate_proposals(&OracleScorer, v, &plan, &ProposalConfig::default()).unwrap();
            for g in &v.segments {
                let top = props
                    .iter()
                    .filter(|p| tiou(p.span(), (g.t_s, g.t_e)).unwrap() > 0.0)
                    .max_by(|a, b| a.score.total_cmp(&b.score))
                    .unwrap();
                assert!(tiou(top.span(), (g.t_s, g.t_e)).unwrap() >= 0.9);
            }
            for p in &props {
                assert!(0.0 <= p.t_s && p.t_s < p.t_e && p.t_e <= v.duration);
                assert!((0.0..=1.0).contains(&p.score));
            }
        }
    }

    #[test]
    fn straddling_instance_recovered_by_overlapping_window() {
        let mut corpus = generate_synthetic(&noiseless(), 1).unwrap();
        let v = &mut corpus.videos[0];
        let fps = v.visual.fps();
        let mut seg = v.segments[0].clone();
        // windows [0,160) and [80,240): the span [150,170) crosses the first boundary
        seg.t_s = 150.0 / fps;
        seg.t_e = 170.0 / fps;
        v.segments = vec![seg.clone()];
        assert!(v.visual.len() >= 240);
        let plan = plan_windows(v.visual.len(), 160, 80).unwrap();
        let props = generate_proposals(&OracleScorer, v, &plan, &ProposalConfig::default()).unwrap();
        assert_eq!(props[0].span(), (seg.t_s, seg.t_e));
        assert_eq!(props[0].score, 1.0);
    }

    #[test]
    fn deterministic_and_rejects_long_max_duration() {
        let corpus = generate_synthetic(&noiseless(), 2).unwrap();
        let v = &corpus.videos[0];
        let plan = plan_windows(v.visual.len(), 160, 80).unwrap();
        let cfg = ProposalConfig::default();
        let a = generate_proposals(&OracleScorer, v, &plan, &cfg).unwrap();
        let b = generate_proposals(&OracleScorer, v, &plan, &cfg).unwrap();
        assert_eq!(a, b);
        let bad = ProposalConfig {
            max_duration_snippets: 161,
            ..cfg
        };
        assert!(matches!(
            generate_proposals(&OracleScorer, v, &plan, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nan_scorer_is_numeric_error() {
        let corpus = generate_synthetic(&noiseless(), 2).unwrap();
        let v = &corpus.videos[0];
        let plan = plan_windows(v.visual.len(), 160, 80).unwrap();
        let r = generate_proposals(&ConstantScorer(f64::NAN), v, &plan, &ProposalConfig::default());
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
