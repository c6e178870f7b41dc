//! Reasoning generation and extraction: produce the reasoning chain for a
//! sample under the current prompt, lay out the training sequence
//! (input, prompt, reasoning, extraction template), read answer logits
//! teacher-forced along the gold target, and parse evaluation-time
//! answers.

use crate::data::{AnswerKind, TaskSample, NO_ANSWER};
use crate::error::{Error, Result};
use crate::model::{
    DecodeConfig, MixedForward, Model, OneHotIndicator, SeqLayout, TokenId,
};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

pub const ANSWER_SLOT: &str = "{answer}";

/// Template appended after the reasoning to elicit final-answer logits.
/// The slot marker must occur exactly once; tokens before it form the
/// extraction sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionTemplate {
    pub text: String,
    pub answer_span: usize,
    pub kind: AnswerKind,
}

impl ExtractionTemplate {
    pub fn new(text: impl Into<String>, answer_span: usize, kind: AnswerKind) -> Result<Self> {
        let text = text.into();
        if text.matches(ANSWER_SLOT).count() != 1 {
            return Err(Error::InvalidConfig(format!(
                "extraction template must contain exactly one {ANSWER_SLOT} marker: {text:?}"
            )));
        }
        if answer_span == 0 {
            return Err(Error::InvalidConfig(
                "answer span length must be at least 1".into(),
            ));
        }
        Ok(Self {
            text,
            answer_span,
            kind,
        })
    }

    /// Default template per answer kind.
    pub fn for_kind(kind: AnswerKind) -> Self {
        let (text, span) = match kind {
            AnswerKind::Numeric => ("Therefore, the final answer (arabic numerals) is {answer}", 8),
            AnswerKind::MultipleChoice => ("Therefore, the final answer is ({answer}", 3),
            AnswerKind::Label => ("Therefore, the final answer is {answer}", 3),
        };
        Self::new(text, span, kind).expect("builtin templates are valid")
    }

    /// Resolve a task override against the kind default.
    pub fn for_task(kind: AnswerKind, override_text: Option<&str>) -> Result<Self> {
        match override_text {
            Some(text) => {
                let default = Self::for_kind(kind);
                Self::new(text, default.answer_span, kind)
            }
            None => Ok(Self::for_kind(kind)),
        }
    }

    /// Token ids of the template text before the answer slot.
    pub fn prefix_tokens(&self, model: &Model) -> Vec<TokenId> {
        let cut = self.text.find(ANSWER_SLOT).expect("validated at build");
        model.tokenize(&self.text[..cut])
    }
}

/// Token sequence and span layout for one sample under one prompt, with
/// the gold answer tokens for teacher forcing. The reasoning is produced
/// once per (sample, step) and reused across candidate evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub sample_id: String,
    pub tokens: Vec<TokenId>,
    pub layout: SeqLayout,
    pub target_ids: Vec<TokenId>,
}

impl ReasoningTrace {
    pub fn reasoning_tokens(&self) -> &[TokenId] {
        &self.tokens[self.layout.reasoning.clone()]
    }
}

/// Generate the reasoning chain for `sample` under `prompt_tokens` and
/// assemble the extraction sequence. With `ablate_reasoning` the chain is
/// skipped entirely and the layout carries an empty reasoning span.
pub fn generate_reasoning(
    model: &Model,
    sample: &TaskSample,
    prompt_tokens: &[TokenId],
    template: &ExtractionTemplate,
    config: &DecodeConfig,
    ablate_reasoning: bool,
) -> Result<ReasoningTrace> {
    let x = model.tokenize(&sample.input);
    if x.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "sample {}: input tokenizes to nothing",
            sample.id
        )));
    }
    let target_ids = model.tokenize(&sample.target);
    if target_ids.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "sample {}: target tokenizes to nothing",
            sample.id
        )));
    }

    let mut context = x.clone();
    context.extend_from_slice(prompt_tokens);
    let reasoning = if ablate_reasoning {
        Vec::new()
    } else {
        model.generate(&context, config)?.tokens
    };

    let extract = template.prefix_tokens(model);
    let layout = SeqLayout::new(x.len(), prompt_tokens.len(), reasoning.len(), extract.len());
    let mut tokens = context;
    tokens.extend_from_slice(&reasoning);
    tokens.extend_from_slice(&extract);
    debug_assert_eq!(tokens.len(), layout.total_len());

    if ablate_reasoning {
        assert!(layout.reasoning.is_empty());
    }
    Ok(ReasoningTrace {
        sample_id: sample.id.clone(),
        tokens,
        layout,
        target_ids,
    })
}

/// Answer logits for the trace with the prompt token at `position`
/// represented through the indicator: one logit vector per target token,
/// teacher-forced along the gold ids. The returned handle also carries
/// prompt log-probabilities and backward state.
pub fn answer_logits(
    model: &Model,
    trace: &ReasoningTrace,
    indicator: &OneHotIndicator,
    position: usize,
) -> Result<MixedForward> {
    model.forward_with_indicator(
        &trace.tokens,
        &trace.layout,
        &trace.target_ids,
        indicator,
        position,
    )
}

fn first_number(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").unwrap());
    re.find(text).map(|m| m.as_str().replace(',', ""))
}

fn first_choice_letter(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\(?\s*([A-Za-z])\s*\)").unwrap());
    if let Some(c) = re.captures(text) {
        return Some(c[1].to_uppercase());
    }
    // bare letter fallback: first standalone alphabetic character
    text.split_whitespace()
        .find(|w| w.len() == 1 && w.chars().all(|c| c.is_ascii_alphabetic()))
        .map(|w| w.to_uppercase())
}

fn first_label_word(text: &str) -> Option<String> {
    text.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .find(|w| !w.is_empty() && w.chars().all(|c| c.is_alphabetic()))
        .map(|w| w.to_lowercase())
}

/// Parse a generated continuation according to the answer kind.
/// Unparseable text yields the no-answer sentinel, never an error.
pub fn parse_answer(continuation: &str, kind: AnswerKind) -> String {
    let parsed = match kind {
        AnswerKind::Numeric => first_number(continuation),
        AnswerKind::MultipleChoice => first_choice_letter(continuation),
        AnswerKind::Label => first_label_word(continuation),
    };
    parsed.unwrap_or_else(|| NO_ANSWER.to_string())
}

/// Evaluation-time answer: generate reasoning, append the extraction
/// template, continue for the answer span, and parse.
pub fn extract_answer_text(
    model: &Model,
    sample: &TaskSample,
    prompt_tokens: &[TokenId],
    template: &ExtractionTemplate,
    config: &DecodeConfig,
) -> Result<String> {
    let x = model.tokenize(&sample.input);
    let mut context = x;
    context.extend_from_slice(prompt_tokens);
    let reasoning = model.generate(&context, config)?.tokens;
    context.extend_from_slice(&reasoning);
    context.extend_from_slice(&template.prefix_tokens(model));

    let answer_cfg = DecodeConfig {
        max_new_tokens: template.answer_span,
        ..config.clone()
    };
    let continuation = model.generate(&context, &answer_cfg)?.tokens;
    Ok(parse_answer(&model.detokenize(&continuation), template.kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_echo_dataset, EchoTaskConfig};
    use crate::model::Model;

    fn toy() -> Model {
        Model::load("toy:v1", "cpu").unwrap()
    }

    fn echo_sample() -> TaskSample {
        synthetic_echo_dataset(&EchoTaskConfig::default()).train[0].clone()
    }

    fn echo_template() -> ExtractionTemplate {
        ExtractionTemplate::for_task(AnswerKind::Label, Some("the answer is {answer}")).unwrap()
    }

    #[test]
    fn template_requires_exactly_one_slot() {
        assert!(ExtractionTemplate::new("no slot", 1, AnswerKind::Label).is_err());
        assert!(
            ExtractionTemplate::new("{answer} and {answer}", 1, AnswerKind::Label).is_err()
        );
        assert!(ExtractionTemplate::new("x {answer}", 0, AnswerKind::Label).is_err());
        assert!(ExtractionTemplate::new("x {answer}", 1, AnswerKind::Label).is_ok());
    }

    #[test]
    fn layout_conserves_lengths() {
        let m = toy();
        let sample = echo_sample();
        let prompt = m.tokenize("use proper logical reasoning");
        let cfg = DecodeConfig::greedy(6).unwrap();
        let trace =
            generate_reasoning(&m, &sample, &prompt, &echo_template(), &cfg, false).unwrap();
        let l = &trace.layout;
        assert_eq!(
            trace.tokens.len(),
            l.x.len() + l.prompt.len() + l.reasoning.len() + l.extract.len()
        );
        assert_eq!(l.prompt.len(), prompt.len());
    }

    #[test]
    fn traces_are_deterministic() {
        let m = toy();
        let sample = echo_sample();
        let prompt = m.tokenize("think step by step");
        let cfg = DecodeConfig::greedy(6).unwrap();
        let a = generate_reasoning(&m, &sample, &prompt, &echo_template(), &cfg, false).unwrap();
        let b = generate_reasoning(&m, &sample, &prompt, &echo_template(), &cfg, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reasoning_matches_argmax_replay() {
        let m = toy();
        let sample = echo_sample();
        let prompt = m.tokenize("say it again");
        let cfg = DecodeConfig::greedy(5).unwrap();
        let trace =
            generate_reasoning(&m, &sample, &prompt, &echo_template(), &cfg, false).unwrap();

        let mut ctx = m.tokenize(&sample.input);
        ctx.extend_from_slice(&prompt);
        let mut replay = Vec::new();
        for _ in 0..5 {
            let lp = m.next_token_distribution(&ctx).unwrap();
            let best = lp
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0 as TokenId;
            if best == m.handle().eos_id {
                break;
            }
            replay.push(best);
            ctx.push(best);
        }
        assert_eq!(trace.reasoning_tokens(), replay.as_slice());
    }

    #[test]
    fn ablation_empties_the_reasoning_span() {
        let m = toy();
        let sample = echo_sample();
        let prompt = m.tokenize("think step by step");
        let cfg = DecodeConfig::greedy(6).unwrap();
        let trace =
            generate_reasoning(&m, &sample, &prompt, &echo_template(), &cfg, true).unwrap();
        assert!(trace.layout.reasoning.is_empty());
        assert!(trace.reasoning_tokens().is_empty());
        assert_eq!(
            trace.tokens.len(),
            trace.layout.x.len() + trace.layout.prompt.len() + trace.layout.extract.len()
        );
    }

    #[test]
    fn single_token_answer_gives_one_logit_vector() {
        let m = toy();
        let sample = echo_sample();
        let prompt = m.tokenize("use proper");
        let cfg = DecodeConfig::greedy(4).unwrap();
        let trace =
            generate_reasoning(&m, &sample, &prompt, &echo_template(), &cfg, false).unwrap();
        assert_eq!(trace.target_ids.len(), 1);

        let position = trace.layout.prompt.start;
        let slate = vec![trace.tokens[position]];
        let table = m.embedding_rows(&slate);
        let ind = OneHotIndicator::new(slate, trace.tokens[position], table).unwrap();
        let fwd = answer_logits(&m, &trace, &ind, position).unwrap();
        assert_eq!(fwd.answer_logits.len(), 1);
        assert_eq!(fwd.answer_logits[0].len(), m.handle().vocab_size);
        assert_eq!(fwd.prompt_logprobs.len(), trace.layout.prompt.len());
    }

    #[test]
    fn multi_token_answer_teacher_forces_gold_prefix() {
        let m = toy();
        let mut sample = echo_sample();
        sample.target = "42".into();
        sample.kind = AnswerKind::Numeric;
        let prompt = m.tokenize("use proper");
        let cfg = DecodeConfig::greedy(3).unwrap();
        let template = ExtractionTemplate::for_kind(AnswerKind::Numeric);
        let trace = generate_reasoning(&m, &sample, &prompt, &template, &cfg, false).unwrap();
        assert_eq!(trace.target_ids.len(), 2);

        let position = trace.layout.prompt.start;
        let slate = vec![trace.tokens[position]];
        let table = m.embedding_rows(&slate);
        let ind = OneHotIndicator::new(slate, trace.tokens[position], table).unwrap();
        let fwd = answer_logits(&m, &trace, &ind, position).unwrap();
        assert_eq!(fwd.answer_logits.len(), 2);

        // oracle: uncached full forward over layout + gold first target
        let mut seq = trace.tokens.clone();
        seq.push(trace.target_ids[0]);
        let logits = m.full_logits(&seq).unwrap();
        let second = fwd.answer_logits[1].clone();
        for j in 0..second.len() {
            assert!((second[j] - logits[[seq.len() - 1, j]]).abs() < 1e-4);
        }
    }

    #[test]
    fn mixed_forward_matches_uncached_oracle() {
        let m = toy();
        let sample = echo_sample();
        let prompt = m.tokenize("think step by step");
        let cfg = DecodeConfig::greedy(5).unwrap();
        let trace =
            generate_reasoning(&m, &sample, &prompt, &echo_template(), &cfg, false).unwrap();

        let position = trace.layout.prompt.start + 1;
        let slate = vec![trace.tokens[position]];
        let table = m.embedding_rows(&slate);
        let ind = OneHotIndicator::new(slate, trace.tokens[position], table).unwrap();
        let fwd = answer_logits(&m, &trace, &ind, position).unwrap();

        let logits = m.full_logits(&trace.tokens).unwrap();
        let last = trace.tokens.len() - 1;
        for j in 0..m.handle().vocab_size {
            assert!((fwd.answer_logits[0][j] - logits[[last, j]]).abs() < 1e-4);
        }
    }

    #[test]
    fn parse_numeric_answers() {
        assert_eq!(parse_answer("is $72.", AnswerKind::Numeric), "72");
        assert_eq!(parse_answer("1,234 items", AnswerKind::Numeric), "1234");
        assert_eq!(parse_answer("roughly -3.5 here", AnswerKind::Numeric), "-3.5");
        assert_eq!(parse_answer("no digits here", AnswerKind::Numeric), NO_ANSWER);
    }

    #[test]
    fn parse_choice_answers() {
        assert_eq!(parse_answer("(B) because...", AnswerKind::MultipleChoice), "B");
        assert_eq!(parse_answer(" c) trailing", AnswerKind::MultipleChoice), "C");
        assert_eq!(parse_answer("pick d maybe", AnswerKind::MultipleChoice), "D");
        assert_eq!(parse_answer("....", AnswerKind::MultipleChoice), NO_ANSWER);
    }

    #[test]
    fn parse_label_answers() {
        assert_eq!(parse_answer("True, since...", AnswerKind::Label), "true");
        assert_eq!(parse_answer("  uncertain.", AnswerKind::Label), "uncertain");
        assert_eq!(parse_answer("123", AnswerKind::Label), NO_ANSWER);
    }

    #[test]
    fn extract_answer_never_crashes() {
        let m = toy();
        let sample = echo_sample();
        let prompt = m.tokenize("use proper logical reasoning");
        let cfg = DecodeConfig::greedy(6).unwrap();
        let out =
            extract_answer_text(&m, &sample, &prompt, &echo_template(), &cfg).unwrap();
        assert!(!out.is_empty());
    }
}
