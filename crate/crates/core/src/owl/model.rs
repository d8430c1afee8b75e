use serde::{Deserialize, Serialize};

use super::attention::{AttentionWindow, FeedForward, MultiHeadAttention};
use super::classifier::{head_loss, ClassifierDims, Logits, ProposalClassifier, Targets, TrainConfig};
use super::tokens::{check_sorted, token_matrices, ProposalToken};
use crate::error::{Error, Result};
use crate::numerics::{self, Linear, ParamSet, Tape, Tensor2, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OwlConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Width of the learned positional encoding.
    pub d_pos: usize,
    /// Feed-forward hidden width as a multiple of `d_model`.
    pub ffn_mult: usize,
    pub window: AttentionWindow,
    pub theta_pos: f64,
    pub top_k: usize,
    pub train: TrainConfig,
}

impl Default for OwlConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            d_pos: 8,
            ffn_mult: 2,
            window: AttentionWindow::Band(4),
            theta_pos: 0.5,
            top_k: 5,
            train: TrainConfig::default(),
        }
    }
}

/// Audio encoder and visual decoder over proposal tokens.
///
/// Audio path: `[z_a ; pe(p)]` is projected to `d_model`, then one layer of
/// windowed self-attention and a feed-forward block. Visual path: `[z_v ;
/// pe(p)]` is projected, then windowed self-attention, windowed
/// cross-attention with the encoder output as keys and values, and a
/// feed-forward block, followed by the verb and noun heads.
#[derive(Clone, Debug)]
pub struct OwlModel {
    pub config: OwlConfig,
    pub dims: ClassifierDims,
    pub params: ParamSet,
    pos: Linear,
    proj_a: Linear,
    proj_v: Linear,
    enc_self: MultiHeadAttention,
    enc_ffn: FeedForward,
    dec_self: MultiHeadAttention,
    dec_cross: MultiHeadAttention,
    dec_ffn: FeedForward,
    verb_head: Linear,
    noun_head: Option<Linear>,
}

impl OwlModel {
    /// Fresh model; parameters are drawn from `config.train.seed`.
    pub fn new(config: OwlConfig, dims: ClassifierDims) -> Result<Self> {
        if config.d_model == 0 || config.d_pos == 0 || config.ffn_mult == 0 {
            return Err(Error::Config("OWL widths must be positive".into()));
        }
        if let AttentionWindow::Band(w) = config.window {
            AttentionWindow::band(w)?;
        }
        let mut rng = numerics::rng(config.train.seed);
        let mut ps = ParamSet::new();
        let (d, h) = (config.d_model, config.heads);
        let pos = Linear::new(&mut ps, "owl.pos", 2, config.d_pos, &mut rng);
        let proj_a = Linear::new(&mut ps, "owl.proj_a", dims.dim + config.d_pos, d, &mut rng);
        let proj_v = Linear::new(&mut ps, "owl.proj_v", dims.dim + config.d_pos, d, &mut rng);
        let enc_self = MultiHeadAttention::new(&mut ps, "owl.enc.self", d, h, &mut rng)?;
        let enc_ffn = FeedForward::new(&mut ps, "owl.enc.ffn", d, config.ffn_mult * d, &mut rng);
        let dec_self = MultiHeadAttention::new(&mut ps, "owl.dec.self", d, h, &mut rng)?;
        let dec_cross = MultiHeadAttention::new(&mut ps, "owl.dec.cross", d, h, &mut rng)?;
        let dec_ffn = FeedForward::new(&mut ps, "owl.dec.ffn", d, config.ffn_mult * d, &mut rng);
        let verb_head = Linear::new(&mut ps, "owl.head.verb", d, dims.verb_classes, &mut rng);
        let noun_head = dims
            .noun_classes
            .map(|n| Linear::new(&mut ps, "owl.head.noun", d, n, &mut rng));
        Ok(Self {
            config,
            dims,
            params: ps,
            pos,
            proj_a,
            proj_v,
            enc_self,
            enc_ffn,
            dec_self,
            dec_cross,
            dec_ffn,
            verb_head,
            noun_head,
        })
    }

    pub fn verb_head(&self) -> Linear {
        self.verb_head
    }

    pub fn noun_head(&self) -> Option<Linear> {
        self.noun_head
    }

    /// Records the forward pass under attention window `window`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        tokens: &[ProposalToken],
        window: AttentionWindow,
    ) -> Result<Logits> {
        check_sorted(tokens)?;
        let (zv, za, p) = token_matrices(tokens)?;
        if zv.cols() != self.dims.dim || za.cols() != self.dims.dim {
            return Err(Error::Dimension {
                op: "owl_forward",
                left: zv.shape(),
                right: (zv.rows(), self.dims.dim),
            });
        }
        let mask = window.mask(tokens.len());
        let p = tape.constant(p);
        let pe = self.pos.forward(tape, ps, p)?;
        let za = tape.constant(za);
        let zv = tape.constant(zv);

        let xa = tape.concat_cols(&[za, pe])?;
        let xa = self.proj_a.forward(tape, ps, xa)?;
        let ea = self.enc_self.forward(tape, ps, xa, xa, &mask)?;
        let ea = self.enc_ffn.forward(tape, ps, ea)?;

        let xv = tape.concat_cols(&[zv, pe])?;
        let xv = self.proj_v.forward(tape, ps, xv)?;
        let hv = self.dec_self.forward(tape, ps, xv, xv, &mask)?;
        let hv = self.dec_cross.forward(tape, ps, hv, ea, &mask)?;
        let hv = self.dec_ffn.forward(tape, ps, hv)?;

        Ok(Logits {
            verb: self.verb_head.forward(tape, ps, hv)?,
            noun: self.noun_head.map(|h| h.forward(tape, ps, hv)).transpose()?,
        })
    }
}

/// Per-token verb and noun logits of `model` at window `window`.
pub fn owl_forward(
    model: &OwlModel,
    tokens: &[ProposalToken],
    window: AttentionWindow,
) -> Result<(Tensor2, Option<Tensor2>)> {
    let mut tape = Tape::new();
    let l = model.forward(&mut tape, &model.params, tokens, window)?;
    Ok((tape.value(l.verb).clone(), l.noun.map(|n| tape.value(n).clone())))
}

impl ProposalClassifier for OwlModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn loss(&self, tape: &mut Tape, ps: &ParamSet, tokens: &[ProposalToken], targets: &Targets) -> Result<Var> {
        let l = self.forward(tape, ps, tokens, self.config.window)?;
        head_loss(tape, l, targets)
    }

    fn logits(&self, tokens: &[ProposalToken]) -> Result<(Tensor2, Option<Tensor2>)> {
        owl_forward(self, tokens, self.config.window)
    }
}
