use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::{pool_proposal_features, positional_input, AnnotatedVideo, PositionalInput};
use crate::numerics::Tensor2;
use crate::proposals::Proposal;

/// One proposal's pooled features and positional input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalToken {
    pub z_v: Vec<f64>,
    pub z_a: Vec<f64>,
    pub pos: PositionalInput,
    pub span: (f64, f64),
    pub gen_score: f64,
}

fn token_order(a: &ProposalToken, b: &ProposalToken) -> std::cmp::Ordering {
    a.span
        .0
        .total_cmp(&b.span.0)
        .then(a.span.1.total_cmp(&b.span.1))
        .then(b.gen_score.total_cmp(&a.gen_score))
}

/// Pools both tracks over every proposal and sorts the tokens by start,
/// then end, then descending score.
pub fn build_tokens(proposals: &[Proposal], video: &AnnotatedVideo) -> Result<Vec<ProposalToken>> {
    let mut tokens = proposals
        .iter()
        .map(|p| {
            Ok(ProposalToken {
                z_v: pool_proposal_features(&video.visual, p.t_s, p.t_e)?,
                z_a: pool_proposal_features(&video.audio, p.t_s, p.t_e)?,
                pos: positional_input(p.t_s, p.t_e, video.duration)?,
                span: (p.t_s, p.t_e),
                gen_score: p.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    tokens.sort_by(token_order);
    Ok(tokens)
}

pub(crate) fn check_sorted(tokens: &[ProposalToken]) -> Result<()> {
    if let Some(k) = tokens.windows(2).position(|w| token_order(&w[0], &w[1]).is_gt()) {
        return Err(Error::Ordering(format!(
            "token {} starts at {} after token {} at {}",
            k + 1,
            tokens[k + 1].span.0,
            k,
            tokens[k].span.0
        )));
    }
    Ok(())
}

/// `M × D` visual, `M × D` audio and `M × 2` positional matrices.
pub(crate) fn token_matrices(tokens: &[ProposalToken]) -> Result<(Tensor2, Tensor2, Tensor2)> {
    if tokens.is_empty() {
        return Err(Error::Data("no proposal tokens".into()));
    }
    let zv: Vec<Vec<f64>> = tokens.iter().map(|t| t.z_v.clone()).collect();
    let za: Vec<Vec<f64>> = tokens.iter().map(|t| t.z_a.clone()).collect();
    let p: Vec<Vec<f64>> = tokens.iter().map(|t| vec![t.pos.p_r, t.pos.p_d]).collect();
    Ok((
        Tensor2::from_rows(&zv)?,
        Tensor2::from_rows(&za)?,
        Tensor2::from_rows(&p)?,
    ))
}
