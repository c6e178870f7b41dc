//! Regularized loss over reasoning-conditioned answer logits, the
//! backward pass that ranks candidate tokens by negative gradient, and
//! replacement selection by measured loss over the top-ranked candidates.

use crate::error::{Error, Result};
use crate::model::{MixedForward, Model, OneHotIndicator, TokenId};
use crate::reasoning::{answer_logits, ReasoningTrace};
use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

/// Cross-entropy term, perplexity term, their weight, and the total.
/// `total` is always constructed as `ce + lambda * perplexity`, so the
/// decomposition holds to machine precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub perplexity: f64,
    pub lambda: f64,
    pub total: f64,
    pub batch_size: usize,
}

impl LossBreakdown {
    pub fn new(ce: f64, perplexity: f64, lambda: f64, batch_size: usize) -> Self {
        Self {
            ce,
            perplexity,
            lambda,
            total: ce + lambda * perplexity,
            batch_size,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite() && self.perplexity.is_finite() && self.total.is_finite()
    }
}

/// A slate token with its negative-gradient score and, for the top-ranked
/// few, the re-evaluated loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub token: TokenId,
    pub neg_grad: f64,
    pub reeval_loss: Option<f64>,
}

fn log_softmax_at(logits: ArrayView1<f64>, target: usize) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logits[target] - lse
}

/// Mean token-level cross entropy over the targets of one sample.
pub fn ce_loss_single(logit_vectors: &[Array1<f64>], targets: &[TokenId]) -> Result<f64> {
    if logit_vectors.len() != targets.len() {
        return Err(Error::ArityMismatch {
            logits: logit_vectors.len(),
            targets: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::ArityMismatch {
            logits: 0,
            targets: 0,
        });
    }
    let mut total = 0.0;
    for (logits, &t) in logit_vectors.iter().zip(targets) {
        total -= log_softmax_at(logits.view(), t as usize);
    }
    Ok(total / targets.len() as f64)
}

/// Mean token-level cross entropy per sample, then mean over the batch.
pub fn ce_loss(per_sample: &[(Vec<Array1<f64>>, Vec<TokenId>)]) -> Result<f64> {
    if per_sample.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (logits, targets) in per_sample {
        total += ce_loss_single(logits, targets)?;
    }
    Ok(total / per_sample.len() as f64)
}

/// exp(-mean log-prob) of the prompt tokens given their prefix.
pub fn perplexity_from_logprobs(prompt_logprobs: &[f64]) -> f64 {
    if prompt_logprobs.is_empty() {
        return 1.0;
    }
    let mean = prompt_logprobs.iter().sum::<f64>() / prompt_logprobs.len() as f64;
    (-mean).exp()
}

/// Perplexity of the prompt conditioned on a sample input, recomputed
/// from scratch (used for logging and as an independent check on the
/// value the mixed forward produces).
pub fn perplexity_term(model: &Model, prompt_tokens: &[TokenId], input_text: &str) -> Result<f64> {
    if prompt_tokens.is_empty() {
        return Err(Error::InvalidConfig("prompt must be non-empty".into()));
    }
    let x = model.tokenize(input_text);
    let mut logprobs = Vec::with_capacity(prompt_tokens.len());
    let mut context = x;
    for &tok in prompt_tokens {
        let lp = model.next_token_distribution(&context)?;
        logprobs.push(lp[tok as usize]);
        context.push(tok);
    }
    Ok(perplexity_from_logprobs(&logprobs))
}

/// Batch loss from already-computed mixed forwards.
pub fn batch_loss(forwards: &[(&MixedForward, &[TokenId])], lambda: f64) -> Result<LossBreakdown> {
    if forwards.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ce = 0.0;
    let mut perpl = 0.0;
    for (fwd, targets) in forwards {
        ce += ce_loss_single(&fwd.answer_logits, targets)?;
        perpl += perplexity_from_logprobs(&fwd.prompt_logprobs);
    }
    let n = forwards.len() as f64;
    Ok(LossBreakdown::new(ce / n, perpl / n, lambda, forwards.len()))
}

/// Gradient-ranked candidate scores for the slate at `position`, plus the
/// batch loss under the current (one-hot) indicator.
///
/// One forward and one backward per sample; gradients accumulate over the
/// batch exactly as the batch-mean loss dictates. Scores sort by negative
/// gradient descending, ties by lower token id.
pub fn gradient_rank(
    model: &Model,
    traces: &[ReasoningTrace],
    indicator: &OneHotIndicator,
    position: usize,
    lambda: f64,
) -> Result<(Vec<CandidateScore>, LossBreakdown)> {
    if traces.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if indicator.hot_index().is_none() {
        return Err(Error::InvalidIndicator(
            "gradient ranking expects a one-hot indicator on the current token".into(),
        ));
    }
    let batch = traces.len() as f64;
    let mut grad = vec![0.0; indicator.candidate_ids.len()];
    let mut ce_sum = 0.0;
    let mut perpl_sum = 0.0;

    for trace in traces {
        let fwd = answer_logits(model, trace, indicator, position)?;
        let targets = &trace.target_ids;
        ce_sum += ce_loss_single(&fwd.answer_logits, targets)?;
        let sample_perpl = perplexity_from_logprobs(&fwd.prompt_logprobs);
        perpl_sum += sample_perpl;

        // d(batch mean CE)/d logits_t = (softmax - onehot) / (#targets * batch)
        let m = targets.len() as f64;
        let mut d_answer = Vec::with_capacity(targets.len());
        for (logits, &t) in fwd.answer_logits.iter().zip(targets) {
            let mut d = softmax_vec(logits.view());
            d[t as usize] -= 1.0;
            d.mapv_inplace(|v| v / (m * batch));
            d_answer.push(d);
        }

        // d(lambda * batch-mean perpl)/d logprob_i = -lambda * perpl / (|p| * batch)
        let p_len = fwd.prompt_logprobs.len() as f64;
        let d_lp = if p_len > 0.0 {
            vec![-lambda * sample_perpl / (p_len * batch); fwd.prompt_logprobs.len()]
        } else {
            Vec::new()
        };

        let d_eps = model.backward_to_indicator(&fwd, &d_answer, &d_lp)?;
        for (g, d) in grad.iter_mut().zip(d_eps) {
            *g += d;
        }
    }

    let breakdown = LossBreakdown::new(ce_sum / batch, perpl_sum / batch, lambda, traces.len());
    if !breakdown.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("indicator gradient".into()));
    }

    let mut scores: Vec<CandidateScore> = indicator
        .candidate_ids
        .iter()
        .zip(&grad)
        .map(|(&token, &g)| CandidateScore {
            token,
            neg_grad: -g,
            reeval_loss: None,
        })
        .collect();
    scores.sort_by(|a, b| {
        b.neg_grad
            .partial_cmp(&a.neg_grad)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.token.cmp(&b.token))
    });
    Ok((scores, breakdown))
}

fn softmax_vec(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out = logits.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|v| v / sum);
    out
}

/// Total loss of already-generated traces under their own prompts, with
/// no substitution: the batch objective for an arbitrary prompt.
pub fn hard_loss(model: &Model, traces: &[ReasoningTrace], lambda: f64) -> Result<LossBreakdown> {
    if traces.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ce_sum = 0.0;
    let mut perpl_sum = 0.0;
    for trace in traces {
        let position = trace.layout.prompt.start;
        let current = trace.tokens[position];
        let table = model.embedding_rows(&[current]);
        let indicator = OneHotIndicator::new(vec![current], current, table)?;
        let fwd = answer_logits(model, trace, &indicator, position)?;
        ce_sum += ce_loss_single(&fwd.answer_logits, &trace.target_ids)?;
        perpl_sum += perplexity_from_logprobs(&fwd.prompt_logprobs);
    }
    let n = traces.len() as f64;
    Ok(LossBreakdown::new(ce_sum / n, perpl_sum / n, lambda, traces.len()))
}

/// Measured total loss over the step's fixed traces with `token`
/// substituted (hard) at `position`.
pub fn measured_loss(
    model: &Model,
    traces: &[ReasoningTrace],
    indicator: &OneHotIndicator,
    position: usize,
    token: TokenId,
    lambda: f64,
) -> Result<LossBreakdown> {
    let hard = indicator.rehot(token)?;
    let mut ce_sum = 0.0;
    let mut perpl_sum = 0.0;
    for trace in traces {
        let fwd = answer_logits(model, trace, &hard, position)?;
        ce_sum += ce_loss_single(&fwd.answer_logits, &trace.target_ids)?;
        perpl_sum += perplexity_from_logprobs(&fwd.prompt_logprobs);
    }
    let n = traces.len() as f64;
    Ok(LossBreakdown::new(ce_sum / n, perpl_sum / n, lambda, traces.len()))
}

/// Evaluate the `mu` best-scored candidates by substituting each hard
/// token and rerunning the forward pass over the existing traces; the
/// measured-loss argmin wins. Scores gain `reeval_loss` for exactly the
/// evaluated candidates. Returns the chosen token and its loss.
pub fn select_replacement(
    model: &Model,
    scores: &mut [CandidateScore],
    mu: usize,
    traces: &[ReasoningTrace],
    indicator: &OneHotIndicator,
    position: usize,
    lambda: f64,
) -> Result<(TokenId, LossBreakdown)> {
    if scores.is_empty() {
        return Err(Error::InvalidConfig("empty candidate scores".into()));
    }
    if mu == 0 {
        return Err(Error::InvalidConfig("mu must be at least 1".into()));
    }
    let mu = mu.min(scores.len());

    let mut best: Option<(TokenId, LossBreakdown)> = None;
    for score in scores.iter_mut().take(mu) {
        let breakdown = measured_loss(model, traces, indicator, position, score.token, lambda)?;
        score.reeval_loss = Some(breakdown.total);
        let better = match &best {
            None => true,
            Some((_, cur)) => breakdown.total < cur.total,
        };
        if better {
            best = Some((score.token, breakdown));
        }
    }
    Ok(best.expect("mu >= 1 evaluated at least one candidate"))
}
