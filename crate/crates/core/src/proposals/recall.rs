use serde::{Deserialize, Serialize};

use super::Proposal;
use crate::error::{Error, Result};
use crate::evaltal::tiou_unchecked;

/// `0.5, 0.55, …, 0.95`.
pub fn default_recall_tious() -> Vec<f64> {
    (0..10).map(|k| 0.5 + 0.05 * k as f64).collect()
}

/// Recall grid and its per-budget averages over the tIoU thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub budgets: Vec<usize>,
    pub tious: Vec<f64>,
    /// `recall[b][t]` for budget `budgets[b]` and threshold `tious[t]`.
    pub recall: Vec<Vec<f64>>,
    /// Mean of each `recall[b]` row.
    pub ar: Vec<f64>,
    pub ar_at_100: f64,
    pub videos_evaluated: usize,
    pub videos_skipped: usize,
}

/// Number of ground-truth spans matched by the top `budget` proposals at
/// threshold `theta`. Proposals are visited by descending score (input order
/// on ties); each takes the unmatched span it overlaps most.
pub fn matched_count(proposals: &[Proposal], gts: &[(f64, f64)], budget: usize, theta: f64) -> usize {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| proposals[b].score.total_cmp(&proposals[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut hits = 0;
    for &k in order.iter().take(budget) {
        let span = proposals[k].span();
        let mut best: Option<(usize, f64)> = None;
        for (g, &gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = tiou_unchecked(span, gt);
            if iou >= theta && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            hits += 1;
        }
    }
    hits
}

/// Recall for one video; undefined without ground truth.
pub fn video_recall(proposals: &[Proposal], gts: &[(f64, f64)], budget: usize, theta: f64) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::Data(
            "recall is undefined for a video without ground truth".into(),
        ));
    }
    Ok(matched_count(proposals, gts, budget, theta) as f64 / gts.len() as f64)
}

/// Corpus-level recall pooled over ground-truth instances. Videos without
/// ground truth are skipped with a warning.
pub fn average_recall(
    videos: &[(Vec<Proposal>, Vec<(f64, f64)>)],
    budgets: &[usize],
    tious: &[f64],
) -> Result<RecallReport> {
    if tious.is_empty() || budgets.is_empty() {
        return Err(Error::Config(
            "average recall needs at least one budget and threshold".into(),
        ));
    }
    let mut skipped = 0;
    let used: Vec<_> = videos
        .iter()
        .enumerate()
        .filter(|(k, (_, g))| {
            if g.is_empty() {
                log::warn!("video #{k} has no ground truth; excluded from recall");
                skipped += 1;
            }
            !g.is_empty()
        })
        .map(|(_, v)| v)
        .collect();
    if used.is_empty() {
        return Err(Error::Data("no video with ground truth to compute recall on".into()));
    }
    let total: usize = used.iter().map(|(_, g)| g.len()).sum();
    let grid = |budget: usize| -> Vec<f64> {
        tious
            .iter()
            .map(|&t| {
                let hits: usize = used.iter().map(|(p, g)| matched_count(p, g, budget, t)).sum();
                hits as f64 / total as f64
            })
            .collect()
    };
    let mean = |row: &[f64]| row.iter().sum::<f64>() / row.len() as f64;
    let recall: Vec<Vec<f64>> = budgets.iter().map(|&b| grid(b)).collect();
    let ar = recall.iter().map(|r| mean(r)).collect();
    let ar_at_100 = match budgets.iter().position(|&b| b == 100) {
        Some(k) => mean(&recall[k]),
        None => mean(&grid(100)),
    };
    Ok(RecallReport {
        budgets: budgets.to_vec(),
        tious: tious.to_vec(),
        recall,
        ar,
        ar_at_100,
        videos_evaluated: used.len(),
        videos_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_proposals_give_full_recall() {
        let gts = vec![(0.0, 2.0), (3.0, 5.0), (6.0, 9.0)];
        let props: Vec<_> = gts.iter().map(|&(a, b)| Proposal::new(a, b, 0.5)).collect();
        let r = average_recall(&[(props, gts)], &[3, 10, 100], &default_recall_tious()).unwrap();
        assert_eq!(r.ar, vec![1.0, 1.0, 1.0]);
        assert_eq!(r.ar_at_100, 1.0);
    }

    #[test]
    fn zero_proposals_give_zero() {
        let r = average_recall(&[(vec![], vec![(0.0, 1.0)])], &[1, 100], &default_recall_tious()).unwrap();
        assert_eq!(r.ar, vec![0.0, 0.0]);
    }

    #[test]
    fn half_overlap_top_proposal() {
        let gts = vec![(0.0, 10.0)];
        let good = vec![Proposal::new(0.0, 10.0, 0.9), Proposal::new(0.0, 5.0, 0.8)];
        assert_eq!(video_recall(&good, &gts, 1, 0.5).unwrap(), 1.0);
        let swapped = vec![Proposal::new(0.0, 10.0, 0.8), Proposal::new(0.0, 5.0, 0.9)];
        assert_eq!(video_recall(&swapped, &gts, 1, 0.5).unwrap(), 1.0);
        assert_eq!(video_recall(&swapped, &gts, 1, 0.55).unwrap(), 0.0);
        let r = average_recall(&[(swapped, gts)], &[1], &default_recall_tious()).unwrap();
        assert!((r.ar[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_ground_truth() {
        assert!(matches!(video_recall(&[], &[], 1, 0.5), Err(Error::Data(_))));
        let r = average_recall(
            &[(vec![], vec![]), (vec![Proposal::new(0.0, 1.0, 1.0)], vec![(0.0, 1.0)])],
            &[1],
            &[0.5],
        )
        .unwrap();
        assert_eq!((r.videos_evaluated, r.videos_skipped), (1, 1));
        assert!(matches!(
            average_recall(&[(vec![], vec![])], &[1], &[0.5]),
            Err(Error::Data(_))
        ));
    }

    proptest! {
        #[test]
        fn monotone_in_budget_and_threshold(
            props in proptest::collection::vec((0.0f64..20.0, 0.5f64..6.0, 0.0f64..1.0), 0..25),
            gts in proptest::collection::vec((0.0f64..20.0, 0.5f64..6.0), 1..6),
        ) {
            let props: Vec<_> = props.iter().map(|&(a, l, s)| Proposal::new(a, a + l, s)).collect();
            let gts: Vec<_> = gts.iter().map(|&(a, l)| (a, a + l)).collect();
            let budgets = [1, 2, 5, 10, 100];
            let r = average_recall(&[(props, gts)], &budgets, &default_recall_tious()).unwrap();
            for b in 1..budgets.len() {
                prop_assert!(r.ar[b] >= r.ar[b - 1]);
                for t in 0..r.tious.len() {
                    prop_assert!(r.recall[b][t] >= r.recall[b - 1][t]);
                }
            }
            for row in &r.recall {
                for t in 1..row.len() {
                    prop_assert!(row[t] <= row[t - 1]);
                }
            }
        }
    }
}
