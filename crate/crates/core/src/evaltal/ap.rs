use super::tiou::tiou_unchecked;

/// A scored detection of one class, keyed by video index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApDetection {
    pub video: usize,
    pub t_s: f64,
    pub t_e: f64,
    pub score: f64,
}

/// A ground-truth instance of one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApGround {
    pub video: usize,
    pub t_s: f64,
    pub t_e: f64,
}

/// Ranks detections by score (descending), then start time, then input
/// position.
pub(crate) fn ranking(dets: &[ApDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].t_s.total_cmp(&dets[b].t_s))
            .then(a.cmp(&b))
    });
    order
}

/// Claimed ground-truth index per detection, in ranking order. Each
/// detection looks at the unmatched ground truth of its video with the
/// largest tIoU (earliest on ties) and claims it when that tIoU reaches
/// `theta`.
pub(crate) fn match_ranked(dets: &[ApDetection], gts: &[ApGround], theta: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    ranking(dets)
        .into_iter()
        .map(|k| {
            let d = dets[k];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || gt.video != d.video {
                    continue;
                }
                let iou = tiou_unchecked((d.t_s, d.t_e), (gt.t_s, gt.t_e));
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, iou)) if iou >= theta => {
                    taken[g] = true;
                    Some(g)
                }
                _ => None,
            }
        })
        .collect()
}

/// Area under the precision-envelope PR curve, or `None` without ground
/// truth.
///
/// ```
/// use owl_tal::evaltal::{average_precision, ApDetection, ApGround};
/// let gt = [ApGround { video: 0, t_s: 0.0, t_e: 1.0 }];
/// let dets = [
///     ApDetection { video: 0, t_s: 5.0, t_e: 6.0, score: 0.9 },
///     ApDetection { video: 0, t_s: 0.0, t_e: 1.0, score: 0.8 },
/// ];
/// assert_eq!(average_precision(&dets, &gt, 0.5), Some(0.5));
/// ```
pub fn average_precision(dets: &[ApDetection], gts: &[ApGround], theta: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let hits = match_ranked(dets, gts, theta);
    let n_gt = gts.len() as f64;
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    for (k, &h) in hits.iter().enumerate() {
        tp += h.is_some() as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev) * p;
        prev = *r;
    }
    Some(ap)
}
