//! Uniform interface to a causal language model: tokenization, greedy
//! generation, mixed-embedding forward passes, and gradients with respect
//! to a candidate-token indicator.

mod net;
pub mod tokenizer;
mod toy;

pub use toy::{ToyConfig, ToyLm};

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::ops::Range;

pub type TokenId = u32;

/// Static facts about a loaded model.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    pub id: String,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub special_tokens: BTreeSet<TokenId>,
    pub eos_id: TokenId,
}

impl ModelHandle {
    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::InvalidConfig("vocab size must be positive".into()));
        }
        if self
            .special_tokens
            .iter()
            .any(|&t| t as usize >= self.vocab_size)
        {
            return Err(Error::InvalidConfig(
                "special token id outside vocab".into(),
            ));
        }
        if !self.special_tokens.contains(&self.eos_id) {
            return Err(Error::InvalidConfig(
                "end-of-sequence id must be a special token".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
}

/// Decoding settings for reasoning and answer generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_new_tokens: usize,
    pub mode: DecodeMode,
    pub stop_sequences: Vec<String>,
}

impl DecodeConfig {
    pub fn greedy(max_new_tokens: usize) -> Result<Self> {
        if max_new_tokens == 0 {
            return Err(Error::InvalidDecodeConfig(
                "max new tokens must be at least 1".into(),
            ));
        }
        Ok(Self {
            max_new_tokens,
            mode: DecodeMode::Greedy,
            stop_sequences: Vec::new(),
        })
    }

    pub fn with_stops(mut self, stops: Vec<String>) -> Self {
        self.stop_sequences = stops;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidDecodeConfig(
                "max new tokens must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Weight vector over a candidate slate paired with the gathered
/// embedding rows. One-hot on the current token at initialization;
/// relaxed only transiently while probing gradients.
#[derive(Debug, Clone)]
pub struct OneHotIndicator {
    pub candidate_ids: Vec<TokenId>,
    pub weights: Vec<f64>,
    /// candidate-count x embedding-dim rows gathered from the model table.
    pub sub_table: Array2<f64>,
}

impl OneHotIndicator {
    pub fn new(candidate_ids: Vec<TokenId>, current: TokenId, sub_table: Array2<f64>) -> Result<Self> {
        let n = candidate_ids.len();
        if sub_table.nrows() != n {
            return Err(Error::InvalidIndicator(format!(
                "{} candidates but {} embedding rows",
                n,
                sub_table.nrows()
            )));
        }
        let mut seen = BTreeSet::new();
        if !candidate_ids.iter().all(|t| seen.insert(*t)) {
            return Err(Error::InvalidIndicator("duplicate candidate ids".into()));
        }
        let cur = candidate_ids.iter().position(|&t| t == current).ok_or_else(|| {
            Error::InvalidIndicator("current token missing from candidate slate".into())
        })?;
        let mut weights = vec![0.0; n];
        weights[cur] = 1.0;
        Ok(Self {
            candidate_ids,
            weights,
            sub_table,
        })
    }

    /// Index of the (single) unit-weight entry, if the vector is one-hot.
    pub fn hot_index(&self) -> Option<usize> {
        let mut hot = None;
        for (i, &w) in self.weights.iter().enumerate() {
            if w == 1.0 {
                if hot.is_some() {
                    return None;
                }
                hot = Some(i);
            } else if w != 0.0 {
                return None;
            }
        }
        hot
    }

    /// A copy with the unit weight moved onto `token`.
    pub fn rehot(&self, token: TokenId) -> Result<Self> {
        let idx = self
            .candidate_ids
            .iter()
            .position(|&t| t == token)
            .ok_or_else(|| Error::InvalidIndicator(format!("token {token} not in slate")))?;
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w = 0.0);
        out.weights[idx] = 1.0;
        Ok(out)
    }

    pub fn validate_weights(&self) -> Result<()> {
        if self.weights.len() != self.candidate_ids.len() {
            return Err(Error::InvalidIndicator(format!(
                "{} weights for {} candidates",
                self.weights.len(),
                self.candidate_ids.len()
            )));
        }
        let sum: f64 = self.weights.iter().sum();
        if !(sum - 1.0).abs().is_finite() || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidIndicator(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Span layout of a training sequence: input, prompt, reasoning,
/// extraction template, in that order, contiguous from zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqLayout {
    pub x: Range<usize>,
    pub prompt: Range<usize>,
    pub reasoning: Range<usize>,
    pub extract: Range<usize>,
}

impl SeqLayout {
    pub fn new(x_len: usize, prompt_len: usize, reasoning_len: usize, extract_len: usize) -> Self {
        let a = x_len;
        let b = a + prompt_len;
        let c = b + reasoning_len;
        let d = c + extract_len;
        Self {
            x: 0..a,
            prompt: a..b,
            reasoning: b..c,
            extract: c..d,
        }
    }

    pub fn total_len(&self) -> usize {
        self.extract.end
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x.start == 0
            && self.x.end == self.prompt.start
            && self.prompt.end == self.reasoning.start
            && self.reasoning.end == self.extract.start;
        if !ok {
            return Err(Error::InvalidConfig(
                "layout spans must be contiguous and ordered x, prompt, reasoning, extract".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Eos,
    StopSequence,
    MaxNewTokens,
}

/// Greedy-decoded continuation plus why it stopped.
#[derive(Debug, Clone)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub stop: StopReason,
}

/// Result of a mixed-embedding forward pass: answer logits teacher-forced
/// along the targets, prompt-token log-probabilities, and the cached state
/// needed to pull gradients back to the indicator weights.
pub struct MixedForward {
    pub answer_logits: Vec<Array1<f64>>,
    pub prompt_logprobs: Vec<f64>,
    pub(crate) state: toy::ToyForwardState,
}

/// A loaded model. The builtin toy model is selected with `toy:v1`;
/// `toy:v1@<seed>` loads a differently-initialized variant (useful for
/// prompt-transfer studies).
#[derive(Debug)]
pub enum Model {
    Toy(ToyLm),
}

impl Model {
    /// Resolve a model identifier. `device` must name a supported device
    /// for the backing implementation ("cpu" for toy models).
    pub fn load(id: &str, device: &str) -> Result<Model> {
        if device != "cpu" {
            return Err(Error::InvalidConfig(format!(
                "device {device:?} not supported (toy models run on cpu)"
            )));
        }
        if id == "toy:v1" {
            return Ok(Model::Toy(ToyLm::new(ToyConfig::v1(id))));
        }
        if let Some(seed) = id.strip_prefix("toy:v1@") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| Error::UnknownModel(id.to_string()))?;
            let mut cfg = ToyConfig::v1(id);
            cfg.seed = seed;
            return Ok(Model::Toy(ToyLm::new(cfg)));
        }
        Err(Error::UnknownModel(id.to_string()))
    }

    pub fn handle(&self) -> &ModelHandle {
        match self {
            Model::Toy(m) => m.handle(),
        }
    }

    pub fn window(&self) -> usize {
        match self {
            Model::Toy(m) => m.window(),
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        match self {
            Model::Toy(m) => m.tokenizer().tokenize(text),
        }
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        match self {
            Model::Toy(m) => m.tokenizer().detokenize(ids),
        }
    }

    pub fn token_text(&self, id: TokenId) -> String {
        match self {
            Model::Toy(m) => m.tokenizer().token_text(id).to_string(),
        }
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.handle().special_tokens.contains(&id)
    }

    /// End tokens terminate dynamic prompt growth: end-of-sequence or any
    /// token rendering sentence-final punctuation.
    pub fn is_end_token(&self, id: TokenId) -> bool {
        if id == self.handle().eos_id {
            return true;
        }
        let text = self.token_text(id);
        matches!(text.chars().last(), Some('.' | '!' | '?'))
    }

    /// Log-probability vector over the vocabulary for the next token.
    pub fn next_token_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        match self {
            Model::Toy(m) => m.next_token_distribution(context),
        }
    }

    /// Greedy continuation of `context`, stopping at end-of-sequence, a
    /// stop sequence, or the token budget.
    pub fn generate(&self, context: &[TokenId], config: &DecodeConfig) -> Result<Generation> {
        config.validate()?;
        match self {
            Model::Toy(m) => m.generate(context, config),
        }
    }

    /// Uncached forward over hard token ids; logits for every position.
    pub fn full_logits(&self, tokens: &[TokenId]) -> Result<Array2<f64>> {
        match self {
            Model::Toy(m) => m.full_logits(tokens),
        }
    }

    /// Forward pass in which the prompt token at `position` (a global
    /// index into `tokens`) is represented by `weights' * sub_table`.
    /// Targets are teacher-forced after the extraction span; one answer
    /// logit vector is returned per target. Prompt token log-probs are
    /// produced from the same pass for the regularizer.
    pub fn forward_with_indicator(
        &self,
        tokens: &[TokenId],
        layout: &SeqLayout,
        targets: &[TokenId],
        indicator: &OneHotIndicator,
        position: usize,
    ) -> Result<MixedForward> {
        layout.validate()?;
        indicator.validate_weights()?;
        if !layout.prompt.contains(&position) {
            return Err(Error::PositionOutsidePrompt {
                position,
                span_start: layout.prompt.start,
                span_end: layout.prompt.end,
            });
        }
        match self {
            Model::Toy(m) => m.forward_with_indicator(tokens, layout, targets, indicator, position),
        }
    }

    /// Gradient of a scalar loss with respect to the indicator weights,
    /// given the loss gradients at the answer logits and at the prompt
    /// log-probabilities of `fwd`.
    pub fn backward_to_indicator(
        &self,
        fwd: &MixedForward,
        d_answer_logits: &[Array1<f64>],
        d_prompt_logprobs: &[f64],
    ) -> Result<Vec<f64>> {
        match self {
            Model::Toy(m) => m.backward_to_indicator(fwd, d_answer_logits, d_prompt_logprobs),
        }
    }

    /// Embedding rows for the given token ids, in order.
    pub fn embedding_rows(&self, ids: &[TokenId]) -> Array2<f64> {
        match self {
            Model::Toy(m) => m.embedding_rows(ids),
        }
    }
}

pub(crate) fn validate_handle(handle: &ModelHandle) -> Result<()> {
    handle.validate()
}
