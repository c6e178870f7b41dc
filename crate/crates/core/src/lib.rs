//! Discrete prompt optimization for causal language models, driven by
//! numerical loss gradients computed through generated reasoning chains.
//!
//! The pipeline per step: propose candidate tokens for the current prompt
//! position from per-sample next-token distributions, generate reasoning
//! for a sampled batch under the current prompt, compute a regularized
//! cross-entropy loss at the extracted answer logits, backpropagate to a
//! one-hot indicator over the candidate slate, and replace the position
//! with the measured-best of the top gradient-ranked candidates.

pub mod candidates;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod optimizer;
pub mod reasoning;

pub use error::{Error, ErrorClass, Result};
pub use model::{DecodeConfig, Model, ModelHandle, OneHotIndicator, TokenId};
