//! Candidate proposal: per-sample top-k next-token lists conditioned on
//! the sample input plus the prompt prefix, intersected across a sampled
//! batch to form the slate scored by gradients.

use crate::data::TaskSample;
use crate::error::{Error, Result};
use crate::model::{Model, OneHotIndicator, TokenId};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-position candidate slate with provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    pub position: usize,
    /// Sample ids in the order they were drawn.
    pub sampled_ids: Vec<String>,
    /// Sample id -> filtered top-k (token, log-prob), best first.
    pub per_sample_topk: BTreeMap<String, Vec<(TokenId, f64)>>,
    /// Ascending token ids.
    pub intersection: Vec<TokenId>,
    pub fallback_used: bool,
}

/// Tokens that may never enter a prompt: specials, end-of-sequence, and
/// anything rendering as pure whitespace.
fn eligible(model: &Model, token: TokenId) -> bool {
    if model.is_special(token) || token == model.handle().eos_id {
        return false;
    }
    !model.token_text(token).trim().is_empty()
}

fn top_k_filtered(model: &Model, context: &[TokenId], k: usize) -> Result<Vec<(TokenId, f64)>> {
    let logprobs = model.next_token_distribution(context)?;
    let mut order: Vec<usize> = (0..logprobs.len()).collect();
    order.sort_by(|&a, &b| {
        logprobs[b]
            .partial_cmp(&logprobs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    // take top-k first, then drop ineligible tokens; lists may come back
    // shorter than k
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| (i as TokenId, logprobs[i]))
        .filter(|&(t, _)| eligible(model, t))
        .collect())
}

/// Draw `q` samples without replacement (seeded), compute each sample's
/// filtered top-k list for the next token after `input ++ prefix`, and
/// intersect. An empty intersection falls back to tokens ranked by how
/// many lists contain them (then mean log-prob, then token id).
pub fn propose(
    model: &Model,
    samples: &[TaskSample],
    prompt_prefix: &[TokenId],
    k: usize,
    q: usize,
    seed: u64,
    position: usize,
) -> Result<CandidateSet> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if q > samples.len() {
        return Err(Error::InvalidConfig(format!(
            "q = {q} exceeds the {} available samples",
            samples.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if k > model.handle().vocab_size {
        return Err(Error::KTooLarge {
            k,
            vocab: model.handle().vocab_size,
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(q);

    let mut sampled_ids = Vec::with_capacity(q);
    let mut per_sample_topk = BTreeMap::new();
    for &i in &indices {
        let sample = &samples[i];
        let mut context = model.tokenize(&sample.input);
        context.extend_from_slice(prompt_prefix);
        let list = top_k_filtered(model, &context, k)?;
        sampled_ids.push(sample.id.clone());
        per_sample_topk.insert(sample.id.clone(), list);
    }

    let mut intersection: Vec<TokenId> = Vec::new();
    if let Some(first) = sampled_ids.first() {
        intersection = per_sample_topk[first].iter().map(|&(t, _)| t).collect();
        for id in &sampled_ids[1..] {
            let set: Vec<TokenId> = per_sample_topk[id].iter().map(|&(t, _)| t).collect();
            intersection.retain(|t| set.contains(t));
        }
    }
    intersection.sort_unstable();

    let mut fallback_used = false;
    if intersection.is_empty() {
        fallback_used = true;
        intersection = fallback_ranking(&per_sample_topk, k);
    }
    if intersection.is_empty() {
        return Err(Error::InvalidConfig(
            "candidate proposal produced no eligible tokens".into(),
        ));
    }

    Ok(CandidateSet {
        position,
        sampled_ids,
        per_sample_topk,
        intersection,
        fallback_used,
    })
}

/// Rank union tokens by (#lists containing them, mean log-prob, -id) and
/// keep the best min(k, available), returned in ascending token id.
fn fallback_ranking(
    per_sample_topk: &BTreeMap<String, Vec<(TokenId, f64)>>,
    k: usize,
) -> Vec<TokenId> {
    let mut stats: BTreeMap<TokenId, (usize, f64)> = BTreeMap::new();
    for list in per_sample_topk.values() {
        for &(t, lp) in list {
            let e = stats.entry(t).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += lp;
        }
    }
    let mut ranked: Vec<(TokenId, usize, f64)> = stats
        .into_iter()
        .map(|(t, (n, sum))| (t, n, sum / n as f64))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then(b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.0.cmp(&b.0))
    });
    let mut out: Vec<TokenId> = ranked.into_iter().take(k).map(|(t, _, _)| t).collect();
    out.sort_unstable();
    out
}

/// Indicator over `intersection ∪ {current}`: unit weight on the current
/// token, embedding rows gathered in slate order.
pub fn build_indicator(
    model: &Model,
    cands: &CandidateSet,
    current: TokenId,
) -> Result<OneHotIndicator> {
    let mut ids = cands.intersection.clone();
    if !ids.contains(&current) {
        ids.push(current);
    }
    let table = model.embedding_rows(&ids);
    OneHotIndicator::new(ids, current, table)
}
