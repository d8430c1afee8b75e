use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::Inputs;
use crate::numerics::{self, Linear, ParamSet, Tape, Tensor2, Var};
use crate::owl::{
    head_loss, token_matrices, ClassifierDims, Logits, ProposalClassifier, ProposalToken, Targets, TrainConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    VisualOnly,
    AudioOnly,
    Early,
    Intermediate,
    LateSelfGate,
    LateCrossGate,
}

impl FusionStrategy {
    /// The single-stream classifier reading `inputs`: one modality, or the
    /// channel-wise concatenation of both.
    pub fn for_inputs(inputs: Inputs) -> Self {
        match inputs {
            Inputs::V => FusionStrategy::VisualOnly,
            Inputs::A => FusionStrategy::AudioOnly,
            Inputs::Av => FusionStrategy::Early,
        }
    }

    pub fn is_late(self) -> bool {
        matches!(self, FusionStrategy::LateSelfGate | FusionStrategy::LateCrossGate)
    }

    fn has_branches(self) -> bool {
        self.is_late() || self == FusionStrategy::Intermediate
    }

    /// Supervised outputs when the config leaves the set empty.
    pub fn default_supervision(self) -> Vec<Inputs> {
        if self.has_branches() {
            vec![Inputs::V, Inputs::A, Inputs::Av]
        } else {
            vec![Inputs::Av]
        }
    }
}

/// Baseline classifier settings. `supervision` names the outputs that carry
/// a cross-entropy term: `v` and `a` are the per-modality branch heads, `av`
/// the fused (or only) output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    pub supervision: Vec<Inputs>,
    pub hidden: usize,
    pub theta_pos: f64,
    pub top_k: usize,
    pub train: TrainConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            strategy: FusionStrategy::Early,
            supervision: Vec::new(),
            hidden: 32,
            theta_pos: 0.5,
            top_k: 5,
            train: TrainConfig::default(),
        }
    }
}

impl FusionConfig {
    /// The supervised outputs in `v, a, av` order.
    pub fn effective_supervision(&self) -> Vec<Inputs> {
        if self.supervision.is_empty() {
            return self.strategy.default_supervision();
        }
        let mut s = self.supervision.clone();
        s.sort_by_key(|b| match b {
            Inputs::V => 0,
            Inputs::A => 1,
            Inputs::Av => 2,
        });
        s.dedup();
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("fusion hidden width must be positive".into()));
        }
        let s = self.effective_supervision();
        let ok = if self.strategy.is_late() {
            s.contains(&Inputs::V) && s.contains(&Inputs::A)
        } else if self.strategy == FusionStrategy::Intermediate {
            s.contains(&Inputs::Av)
        } else {
            s == [Inputs::Av]
        };
        if !ok {
            let names: Vec<_> = s.iter().map(|b| b.label()).collect();
            return Err(Error::Config(format!(
                "supervision {{{}}} does not fit strategy {:?}",
                names.join(","),
                self.strategy
            )));
        }
        Ok(())
    }
}

/// One Linear per head: verb classes, and noun classes when present.
#[derive(Clone, Copy, Debug)]
pub struct HeadGroup {
    pub verb: Linear,
    pub noun: Option<Linear>,
}

impl HeadGroup {
    fn new(ps: &mut ParamSet, name: &str, fan_in: usize, dims: &ClassifierDims, rng: &mut impl Rng) -> Self {
        Self {
            verb: Linear::new(ps, &format!("{name}.verb"), fan_in, dims.verb_classes, rng),
            noun: dims
                .noun_classes
                .map(|n| Linear::new(ps, &format!("{name}.noun"), fan_in, n, rng)),
        }
    }

    fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> Result<Logits> {
        Ok(Logits {
            verb: self.verb.forward(tape, ps, x)?,
            noun: self.noun.map(|h| h.forward(tape, ps, x)).transpose()?,
        })
    }

    pub fn linears(&self) -> impl Iterator<Item = Linear> {
        std::iter::once(self.verb).chain(self.noun)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Layout {
    Single {
        inputs: Inputs,
        hidden: Linear,
        heads: HeadGroup,
    },
    Intermediate {
        bv: Linear,
        ba: Linear,
        hv: HeadGroup,
        ha: HeadGroup,
        hav: HeadGroup,
    },
    Late {
        bv: Linear,
        ba: Linear,
        hv: HeadGroup,
        ha: HeadGroup,
        /// Sigmoid gates over the verb and noun scores of each modality.
        gv: HeadGroup,
        ga: HeadGroup,
        cross: bool,
    },
}

/// Every head output of one forward pass. `gates` holds the visual and
/// audio gate weights of the late strategies.
#[derive(Clone, Copy, Debug)]
pub struct FusionOutputs {
    pub fused: Logits,
    pub visual: Option<Logits>,
    pub audio: Option<Logits>,
    pub gates: Option<[Logits; 2]>,
}

/// Proposal classifier over pooled features only, without positional input
/// or context between proposals.
#[derive(Clone, Debug)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub dims: ClassifierDims,
    pub params: ParamSet,
    /// Replaces the learned late-fusion gates by constant visual and audio
    /// weights.
    pub gate_override: Option<(f64, f64)>,
    pub(crate) layout: Layout,
}

impl FusionModel {
    pub fn new(config: FusionConfig, dims: ClassifierDims) -> Result<Self> {
        config.validate()?;
        let mut rng = numerics::rng(config.train.seed);
        let mut ps = ParamSet::new();
        let (d, h) = (dims.dim, config.hidden);
        let layout = match config.strategy {
            FusionStrategy::VisualOnly | FusionStrategy::AudioOnly | FusionStrategy::Early => {
                let inputs = match config.strategy {
                    FusionStrategy::VisualOnly => Inputs::V,
                    FusionStrategy::AudioOnly => Inputs::A,
                    _ => Inputs::Av,
                };
                Layout::Single {
                    inputs,
                    hidden: Linear::new(&mut ps, "fusion.hidden", inputs.channels(d), h, &mut rng),
                    heads: HeadGroup::new(&mut ps, "fusion.head", h, &dims, &mut rng),
                }
            }
            FusionStrategy::Intermediate => Layout::Intermediate {
                bv: Linear::new(&mut ps, "fusion.branch_v", d, h, &mut rng),
                ba: Linear::new(&mut ps, "fusion.branch_a", d, h, &mut rng),
                hv: HeadGroup::new(&mut ps, "fusion.head_v", h, &dims, &mut rng),
                ha: HeadGroup::new(&mut ps, "fusion.head_a", h, &dims, &mut rng),
                hav: HeadGroup::new(&mut ps, "fusion.head_av", 2 * h, &dims, &mut rng),
            },
            FusionStrategy::LateSelfGate | FusionStrategy::LateCrossGate => {
                let cross = config.strategy == FusionStrategy::LateCrossGate;
                let gate_in = if cross { 2 * h } else { h };
                Layout::Late {
                    bv: Linear::new(&mut ps, "fusion.branch_v", d, h, &mut rng),
                    ba: Linear::new(&mut ps, "fusion.branch_a", d, h, &mut rng),
                    hv: HeadGroup::new(&mut ps, "fusion.head_v", h, &dims, &mut rng),
                    ha: HeadGroup::new(&mut ps, "fusion.head_a", h, &dims, &mut rng),
                    gv: HeadGroup::new(&mut ps, "fusion.gate_v", gate_in, &dims, &mut rng),
                    ga: HeadGroup::new(&mut ps, "fusion.gate_a", gate_in, &dims, &mut rng),
                    cross,
                }
            }
        };
        Ok(Self {
            config,
            dims,
            params: ps,
            gate_override: None,
            layout,
        })
    }

    /// Records every head of the model on `tape`.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, tokens: &[ProposalToken]) -> Result<FusionOutputs> {
        let (zv, za, _) = token_matrices(tokens)?;
        if zv.cols() != self.dims.dim || za.cols() != self.dims.dim {
            return Err(Error::Dimension {
                op: "fusion_forward",
                left: zv.shape(),
                right: (zv.rows(), self.dims.dim),
            });
        }
        let zv = tape.constant(zv);
        let za = tape.constant(za);
        let branch = |tape: &mut Tape, l: &Linear, x: Var| -> Result<Var> {
            let h = l.forward(tape, ps, x)?;
            tape.gelu(h)
        };
        match &self.layout {
            Layout::Single { inputs, hidden, heads } => {
                let x = match inputs {
                    Inputs::V => zv,
                    Inputs::A => za,
                    Inputs::Av => tape.concat_cols(&[zv, za])?,
                };
                let h = branch(tape, hidden, x)?;
                Ok(FusionOutputs {
                    fused: heads.forward(tape, ps, h)?,
                    visual: None,
                    audio: None,
                    gates: None,
                })
            }
            Layout::Intermediate { bv, ba, hv, ha, hav } => {
                let mv = branch(tape, bv, zv)?;
                let ma = branch(tape, ba, za)?;
                let m = tape.concat_cols(&[mv, ma])?;
                Ok(FusionOutputs {
                    fused: hav.forward(tape, ps, m)?,
                    visual: Some(hv.forward(tape, ps, mv)?),
                    audio: Some(ha.forward(tape, ps, ma)?),
                    gates: None,
                })
            }
            Layout::Late {
                bv,
                ba,
                hv,
                ha,
                gv,
                ga,
                cross,
            } => {
                let mv = branch(tape, bv, zv)?;
                let ma = branch(tape, ba, za)?;
                let lv = hv.forward(tape, ps, mv)?;
                let la = ha.forward(tape, ps, ma)?;
                let (wv, wa) = match self.gate_override {
                    Some((cv, ca)) => (constant_gate(tape, lv, cv), constant_gate(tape, la, ca)),
                    None => {
                        let (iv, ia) = if *cross {
                            let m = tape.concat_cols(&[mv, ma])?;
                            (m, m)
                        } else {
                            (mv, ma)
                        };
                        (sigmoid_gate(tape, ps, gv, iv)?, sigmoid_gate(tape, ps, ga, ia)?)
                    }
                };
                let mix = |tape: &mut Tape, sv: Var, gv: Var, sa: Var, ga: Var| -> Result<Var> {
                    let sv = tape.masked_row_softmax(sv, None)?;
                    let sa = tape.masked_row_softmax(sa, None)?;
                    let a = tape.mul(sv, gv)?;
                    let b = tape.mul(sa, ga)?;
                    tape.add(a, b)
                };
                let verb = mix(tape, lv.verb, wv.verb, la.verb, wa.verb)?;
                let noun = match (lv.noun, wv.noun, la.noun, wa.noun) {
                    (Some(sv), Some(gv), Some(sa), Some(ga)) => Some(mix(tape, sv, gv, sa, ga)?),
                    _ => None,
                };
                Ok(FusionOutputs {
                    fused: Logits { verb, noun },
                    visual: Some(lv),
                    audio: Some(la),
                    gates: Some([wv, wa]),
                })
            }
        }
    }

    /// Values of the visual and audio gate weights, for the late strategies.
    pub fn gate_values(&self, tokens: &[ProposalToken]) -> Result<Option<[(Tensor2, Option<Tensor2>); 2]>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &self.params, tokens)?;
        Ok(out
            .gates
            .map(|g| g.map(|l| (tape.value(l.verb).clone(), l.noun.map(|n| tape.value(n).clone())))))
    }

    /// Branch head outputs `(visual, audio)` when the strategy has branches.
    pub fn branch_logits(&self, tokens: &[ProposalToken]) -> Result<Option<[(Tensor2, Option<Tensor2>); 2]>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &self.params, tokens)?;
        let val = |l: Logits| (tape.value(l.verb).clone(), l.noun.map(|n| tape.value(n).clone()));
        Ok(match (out.visual, out.audio) {
            (Some(v), Some(a)) => Some([val(v), val(a)]),
            _ => None,
        })
    }
}

fn constant_gate(tape: &mut Tape, like: Logits, c: f64) -> Logits {
    let mut fill = |v: Var| {
        let (r, k) = tape.value(v).shape();
        tape.constant(Tensor2::filled(r, k, c))
    };
    Logits {
        verb: fill(like.verb),
        noun: like.noun.map(fill),
    }
}

fn sigmoid_gate(tape: &mut Tape, ps: &ParamSet, g: &HeadGroup, x: Var) -> Result<Logits> {
    let l = g.forward(tape, ps, x)?;
    Ok(Logits {
        verb: tape.sigmoid(l.verb)?,
        noun: l.noun.map(|n| tape.sigmoid(n)).transpose()?,
    })
}

/// Fused (or only) head outputs of `model`; the late strategies return the
/// gated score sum, whose row softmax is the final posterior.
pub fn fusion_forward(model: &FusionModel, tokens: &[ProposalToken]) -> Result<(Tensor2, Option<Tensor2>)> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &model.params, tokens)?;
    Ok((
        tape.value(out.fused.verb).clone(),
        out.fused.noun.map(|n| tape.value(n).clone()),
    ))
}

impl ProposalClassifier for FusionModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn loss(&self, tape: &mut Tape, ps: &ParamSet, tokens: &[ProposalToken], targets: &Targets) -> Result<Var> {
        let out = self.forward(tape, ps, tokens)?;
        let mut total: Option<Var> = None;
        for b in self.config.effective_supervision() {
            let logits = match b {
                Inputs::V => out.visual,
                Inputs::A => out.audio,
                Inputs::Av => Some(out.fused),
            };
            let Some(logits) = logits else { continue };
            let l = head_loss(tape, logits, targets)?;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        total.ok_or_else(|| Error::Config("fusion model has no supervised output".into()))
    }

    fn logits(&self, tokens: &[ProposalToken]) -> Result<(Tensor2, Option<Tensor2>)> {
        fusion_forward(self, tokens)
    }
}
