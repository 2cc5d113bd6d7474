//! Tooling for adapting language models to e-commerce: benchmark synthesis
//! and scoring, few-shot evaluation against completion-style backends,
//! perplexity sweeps, checkpoint interpolation and continued-pretraining
//! planning.

pub mod catalog;
pub mod checkpoint;
pub mod curve;
pub mod digest;
pub mod eval;
pub mod lm;
pub mod plan;
pub mod ratio;
pub mod rng;
pub mod taskgen;
