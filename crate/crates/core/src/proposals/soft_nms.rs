use super::Proposal;
use crate::error::{Error, Result};
use crate::evaltal::tiou_unchecked;

/// Gaussian Soft-NMS. Repeatedly takes the highest remaining score (earliest
/// input position on ties), then multiplies every other remaining score by
/// `exp(-tIoU² / sigma)`. Segments that fall below `score_floor` are dropped.
/// At most `top_n` segments are returned, in selection order.
///
/// ```
/// use owl_tal::proposals::{soft_nms, Proposal};
/// let dets = [Proposal::new(0.0, 1.0, 0.9), Proposal::new(0.0, 1.0, 0.8)];
/// let out = soft_nms(&dets, 0.5, 1e-4, 10).unwrap();
/// assert!((out[1].score - 0.8 * (-2.0f64).exp()).abs() < 1e-12);
/// ```
pub fn soft_nms(dets: &[Proposal], sigma: f64, score_floor: f64, top_n: usize) -> Result<Vec<Proposal>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("soft-nms sigma must be positive, got {sigma}")));
    }
    let mut live: Vec<Proposal> = dets.iter().copied().filter(|d| d.score >= score_floor).collect();
    let mut out = Vec::with_capacity(top_n.min(live.len()));
    while out.len() < top_n && !live.is_empty() {
        let mut best = 0;
        for (k, d) in live.iter().enumerate().skip(1) {
            if d.score > live[best].score {
                best = k;
            }
        }
        // `remove` keeps input order, which the tie-break depends on
        let pick = live.remove(best);
        let span = pick.span();
        live.retain_mut(|d| {
            let iou = tiou_unchecked(span, d.span());
            if iou > 0.0 {
                d.score *= (-(iou * iou) / sigma).exp();
            }
            d.score >= score_floor
        });
        out.push(pick);
    }
    Ok(out)
}
