//! Per-snippet boundary and actionness scoring.
//!
//! The scorer reads each snippet together with `context_radius` neighbours on
//! either side (zero padded at window edges), passes the stacked vector
//! through two fully connected layers with a GELU between, and emits three
//! sigmoid probabilities: start, end, and actionness.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::window::plan_windows;
use crate::error::{Error, Result};
use crate::featstore::{snippet_index, AnnotatedVideo, Inputs};
use crate::numerics::{self, sigmoid, Linear, ParamSet, Tape, Tensor2, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemConfig {
    pub inputs: Inputs,
    pub context_radius: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub window: usize,
    pub stride: usize,
}

impl Default for TemConfig {
    fn default() -> Self {
        Self {
            inputs: Inputs::Av,
            context_radius: 2,
            hidden: 32,
            epochs: 12,
            lr: 0.5,
            seed: 0,
            window: 160,
            stride: 80,
        }
    }
}

/// Probabilities over one window, indexed by window-local snippet.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowProbs {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub action: Vec<f64>,
}

/// Anything that turns a window of a video into boundary probabilities.
pub trait BoundaryScorer {
    fn score_window(&self, video: &AnnotatedVideo, window: (usize, usize)) -> Result<WindowProbs>;
}

/// The trainable scorer.
#[derive(Clone, Debug)]
pub struct TemModel {
    pub config: TemConfig,
    pub dim: usize,
    pub params: ParamSet,
    hidden: Linear,
    out: Linear,
}

impl TemModel {
    /// Fresh model for per-modality feature dimension `dim`.
    pub fn new(config: TemConfig, dim: usize) -> Self {
        let mut rng = numerics::rng(config.seed);
        let mut params = ParamSet::new();
        let fan_in = config.inputs.channels(dim) * (2 * config.context_radius + 1);
        let hidden = Linear::new(&mut params, "tem.hidden", fan_in, config.hidden, &mut rng);
        let out = Linear::new(&mut params, "tem.out", config.hidden, 3, &mut rng);
        Self {
            config,
            dim,
            params,
            hidden,
            out,
        }
    }

    /// Stacked `len × fan_in` input for window `[a, b)` of a channel stack.
    pub fn window_input(&self, stack: &Tensor2, window: (usize, usize)) -> Tensor2 {
        let (a, b) = window;
        let r = self.config.context_radius as i64;
        let ch = stack.rows();
        let width = ch * (2 * r as usize + 1);
        let mut out = Tensor2::zeros(b - a, width);
        for i in a..b {
            let row = out.row_mut(i - a);
            for (k, o) in (-r..=r).enumerate() {
                let j = i as i64 + o;
                if j < a as i64 || j >= b as i64 {
                    continue;
                }
                for c in 0..ch {
                    row[k * ch + c] = stack.get(c, j as usize);
                }
            }
        }
        out
    }

    /// `len × 3` logits (start, end, action).
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, input: Tensor2) -> Result<Var> {
        let x = tape.constant(input);
        let h = self.hidden.forward(tape, params, x)?;
        let h = tape.gelu(h)?;
        self.out.forward(tape, params, h)
    }

    /// Mean binary cross-entropy over the three heads of one window.
    pub fn loss(&self, tape: &mut Tape, params: &ParamSet, input: Tensor2, targets: &Tensor2) -> Result<Var> {
        let logits = self.forward(tape, params, input)?;
        tape.bce_with_logits(logits, targets)
    }
}

impl BoundaryScorer for TemModel {
    fn score_window(&self, video: &AnnotatedVideo, window: (usize, usize)) -> Result<WindowProbs> {
        let stack = self.config.inputs.stack(video);
        let mut tape = Tape::new();
        let input = self.window_input(&stack, window);
        let logits = self.forward(&mut tape, &self.params, input)?;
        let l = tape.value(logits);
        let col = |c: usize| (0..l.rows()).map(|r| sigmoid(l.get(r, c))).collect::<Vec<_>>();
        Ok(WindowProbs {
            start: col(0),
            end: col(1),
            action: col(2),
        })
    }
}

/// `len × 3` training targets for window `[a, b)`: start and end are 1
/// within `max(1, 0.1·duration)` snippets of a boundary, action is 1 inside
/// any ground-truth span.
pub fn tem_targets(video: &AnnotatedVideo, window: (usize, usize), fps: f64) -> Tensor2 {
    let (a, b) = window;
    let mut t = Tensor2::zeros(b - a, 3);
    for seg in &video.segments {
        let s = snippet_index(seg.t_s, fps);
        let e = snippet_index(seg.t_e, fps);
        let tol = (0.1 * (e - s) as f64).max(1.0);
        for i in a..b {
            let g = i as i64;
            let row = t.row_mut(i - a);
            if ((g - s) as f64).abs() <= tol {
                row[0] = 1.0;
            }
            if ((g - e) as f64).abs() <= tol {
                row[1] = 1.0;
            }
            if g >= s && g < e {
                row[2] = 1.0;
            }
        }
    }
    t
}

/// Trains with per-window SGD; returns the mean loss of every epoch.
pub fn train_tem(model: &mut TemModel, videos: &[AnnotatedVideo]) -> Result<Vec<f64>> {
    if videos.is_empty() {
        return Err(Error::Data(
            "cannot train the boundary scorer on an empty corpus".into(),
        ));
    }
    let cfg = model.config.clone();
    let mut batches = Vec::new();
    for video in videos {
        let stack = cfg.inputs.stack(video);
        if stack.rows() != cfg.inputs.channels(model.dim) {
            return Err(Error::Dimension {
                op: "train_tem",
                left: (stack.rows(), stack.cols()),
                right: (cfg.inputs.channels(model.dim), stack.cols()),
            });
        }
        let plan = plan_windows(stack.cols(), cfg.window, cfg.stride)?;
        for &w in &plan.windows {
            let input = model.window_input(&stack, w);
            let targets = tem_targets(video, w, video.visual.fps());
            batches.push((input, targets));
        }
    }
    let mut rng = numerics::rng(cfg.seed ^ 0x7e3_0000);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let (input, targets) = &batches[k];
            model.params.zero_grads();
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, &model.params, input.clone(), targets)?;
            total += tape.value(loss).item();
            let grads = tape.backward(loss)?;
            model.params.accumulate(&tape, &grads);
            model.params.sgd_step(cfg.lr)?;
        }
        let mean = total / batches.len() as f64;
        if !mean.is_finite() || !model.params.all_finite() {
            return Err(Error::Numeric("boundary scorer diverged".into()));
        }
        curve.push(mean);
    }
    Ok(curve)
}

/// Probabilities read off the ground truth: 1 exactly at boundary snippets
/// and inside spans, 0 elsewhere.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleScorer;

impl BoundaryScorer for OracleScorer {
    fn score_window(&self, video: &AnnotatedVideo, window: (usize, usize)) -> Result<WindowProbs> {
        let fps = video.visual.fps();
        let (a, b) = window;
        let n = b - a;
        let mut p = WindowProbs {
            start: vec![0.0; n],
            end: vec![0.0; n],
            action: vec![0.0; n],
        };
        for seg in &video.segments {
            let s = snippet_index(seg.t_s, fps);
            let e = snippet_index(seg.t_e, fps);
            for i in a..b {
                let g = i as i64;
                if g == s {
                    p.start[i - a] = 1.0;
                }
                if g == e {
                    p.end[i - a] = 1.0;
                }
                if g >= s && g < e {
                    p.action[i - a] = 1.0;
                }
            }
        }
        Ok(p)
    }
}

/// Every probability fixed to one value.
#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl BoundaryScorer for ConstantScorer {
    fn score_window(&self, _video: &AnnotatedVideo, window: (usize, usize)) -> Result<WindowProbs> {
        let n = window.1 - window.0;
        Ok(WindowProbs {
            start: vec![self.0; n],
            end: vec![self.0; n],
            action: vec![self.0; n],
        })
    }
}
