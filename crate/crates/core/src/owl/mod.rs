//! The proposal classifier. Proposals become tokens of max-pooled visual
//! and audio features plus a positional input; an audio encoder and a
//! visual decoder with cross-attention mix information between tokens whose
//! start-time ranks lie within a window of each other.

mod attention;
mod classifier;
mod model;
mod tokens;

pub use attention::{AttentionWindow, FeedForward, MultiHeadAttention};
pub use classifier::{
    assemble_detections, assign_labels, detect, prepare_training, train_classifier, ClassifierDims, Logits, Posteriors,
    ProposalClassifier, Targets, TrainConfig, TrainingVideo,
};
pub use model::{owl_forward, OwlConfig, OwlModel};
pub use tokens::{build_tokens, ProposalToken};

pub(crate) use classifier::head_loss;
pub(crate) use tokens::token_matrices;
