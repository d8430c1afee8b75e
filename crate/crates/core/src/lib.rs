//! Separate-stage temporal action localization over visual and audio
//! feature streams.
//!
//! The pipeline runs in two stages. A proposal generator scores
//! boundaries and actionness over sliding windows and emits class-agnostic
//! segments ([`proposals`]). A proposal classifier then labels every
//! segment: either the windowed audiovisual transformer in [`owl`], where
//! audio tokens are encoded with banded self-attention and visual tokens
//! attend to them through banded cross-attention, or one of the simpler
//! fusion baselines in [`fusion`]. [`evaltal`] scores the result with
//! detection mAP over temporal IoU thresholds.
//!
//! All numerics are 64-bit and run on a small reverse-mode tape
//! ([`numerics`]), so every model in the crate is gradient-checked against
//! central differences.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaltal;
pub mod featstore;
pub mod fusion;
pub mod numerics;
pub mod owl;
pub mod pipeline;
pub mod proposals;

pub use error::{Error, Result};

/// Version string recorded in every artifact.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/proposals.md")]
    mod proposals {}
    #[doc = include_str!("../../../book/src/owl.md")]
    mod owl {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
