//! Fair-token learning, guided sampling and fairness metrics for text-to-image models.
//!
//! This crate learns per-category "fair tokens" that are appended to a text
//! prompt so a text-to-image model samples uniformly over the categories of a
//! set of sensitive attributes. It also implements hard-prompt generation with
//! negative prompting, a hybrid of both, and the fairness/quality metrics used
//! to compare them (KL divergence to uniform, FID, human preference tallies).
//!
//! Encoders and diffusion models are traits. The crate ships a deterministic
//! toy encoder and a stub diffusion backend so every formula can be exercised
//! exactly, without model weights.

pub mod benchmark;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod reference;
pub mod schema;
pub mod seed;
pub mod tokens;
pub mod training;
pub mod vector;

pub use error::{Error, Result};
pub use schema::{AttributeSet, AttributeSpec, CategoryCombination, CategorySpec, Phrase};
pub use tokens::{FairTokenTable, InclusivePrompt, TokenSeq};
