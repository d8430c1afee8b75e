//! Baseline proposal classifiers over pooled proposal features: a single
//! modality, early fusion of the concatenated features, intermediate fusion
//! of per-modality embeddings, and late fusion of per-modality class scores
//! weighted by sigmoid gates.
//!
//! Late fusion turns each branch's head outputs into posteriors `s^v`,
//! `s^a`, weights them per class with gates `w^v`, `w^a` and sums:
//! `s = s^v ⊙ w^v + s^a ⊙ w^a`. Self gates read their own branch
//! embedding; cross gates read both. The fused `s` is softmaxed once more
//! for the final posterior.

mod model;

pub use model::{fusion_forward, FusionConfig, FusionModel, FusionOutputs, FusionStrategy, HeadGroup};
