//! Renormalized log-linear combination of AM and LM scores.
//!
//! Two normalizations are provided. Token level: at every position the scaled
//! scores `alpha_w * log p_AM(w) + beta_w * log p_LM(w)` are pushed through a
//! softmax over the vocabulary. Sentence level: the scaled sequence score is
//! normalized over a set of competing sequences, either an n-best list or,
//! at toy scale, every sequence of a fixed length.
//!
//! In both cases the scale applied to a token is the one indexed by that
//! token, including for competitors in the denominator.

use crate::error::{Error, Result};
use crate::logspace::{lse, LogSumAcc};
use crate::providers::ScoreSource;
use crate::types::{Hypothesis, NBestList, ScaleSet, StepScores, TokenId, TokenSeq};

/// Largest number of sequences the exact enumerations will visit.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

/// `scale * logp`, with `0 * -inf` defined as 0: a model with zero scale has
/// no influence, not even on tokens it rules out.
#[inline]
pub fn scaled(scale: f64, logp: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        scale * logp
    }
}

/// Combined score of emitting `w` given its AM and LM log-probabilities.
#[inline]
pub(crate) fn token_score(scales: &ScaleSet, w: TokenId, am: f64, lm: f64) -> f64 {
    scaled(scales.alpha_for(w), am) + scaled(scales.beta_for(w), lm)
}

pub(crate) fn combine_raw(am: &[f64], lm: &[f64], scales: &ScaleSet) -> Result<Vec<f64>> {
    if am.len() != scales.vocab_size() || lm.len() != scales.vocab_size() {
        return Err(Error::usage(format!(
            "step has {} / {} entries but scales are for vocabulary size {}",
            am.len(),
            lm.len(),
            scales.vocab_size()
        )));
    }
    let z: Vec<f64> = (0..am.len())
        .map(|w| token_score(scales, w as TokenId, am[w], lm[w]))
        .collect();
    if let Some(w) = z.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::DegenerateInput(format!(
            "combined logit for token {w} is {} (negative scale on a zero-probability token)",
            z[w]
        )));
    }
    Ok(z)
}

/// `z(w) = alpha_w * am_logp(w) + beta_w * lm_logp(w)` for every unit `w`.
pub fn combined_logits(step: &StepScores, scales: &ScaleSet) -> Result<Vec<f64>> {
    combine_raw(step.am_logp(), step.lm_logp(), scales)
}

pub(crate) fn token_posterior_raw(am: &[f64], lm: &[f64], scales: &ScaleSet) -> Result<Vec<f64>> {
    let z = combine_raw(am, lm, scales)?;
    let norm = lse(&z);
    if norm == f64::NEG_INFINITY {
        return Err(Error::DegenerateInput(
            "every combined logit is -inf".into(),
        ));
    }
    Ok(z.into_iter().map(|v| v - norm).collect())
}

/// Token-level renormalized posterior, as a log-distribution over the vocabulary.
pub fn token_posterior(step: &StepScores, scales: &ScaleSet) -> Result<Vec<f64>> {
    token_posterior_raw(step.am_logp(), step.lm_logp(), scales)
}

/// `log p-hat(w_1^N)`: the sum of token-level posterior log-probabilities of
/// `target` under teacher-forced `steps`.
pub fn token_level_log_prob(
    steps: &[StepScores],
    target: &[TokenId],
    scales: &ScaleSet,
) -> Result<f64> {
    if steps.len() != target.len() {
        return Err(Error::usage(format!(
            "{} steps for a target of length {}",
            steps.len(),
            target.len()
        )));
    }
    steps.iter().zip(target).try_fold(0.0, |acc, (step, &w)| {
        let lp = token_posterior(step, scales)?;
        Ok(acc + lp[w as usize])
    })
}

/// Unnormalized scaled sequence score `sum_n alpha_{w_n} am_n + beta_{w_n} lm_n`.
pub fn sequence_score(hyp: &Hypothesis, scales: &ScaleSet) -> f64 {
    hyp.tokens()
        .iter()
        .zip(hyp.am_logp().iter().zip(hyp.lm_logp()))
        .map(|(&w, (&am, &lm))| token_score(scales, w, am, lm))
        .sum()
}

/// Log of the sentence posterior renormalized over the n-best list.
pub fn nbest_log_posterior(nbest: &NBestList, scales: &ScaleSet) -> Vec<f64> {
    let scores: Vec<f64> = nbest
        .hypotheses()
        .iter()
        .map(|h| sequence_score(h, scales))
        .collect();
    let norm = lse(&scores);
    scores.into_iter().map(|s| s - norm).collect()
}

/// Sentence posterior renormalized over the n-best list (linear space).
pub fn nbest_posterior(nbest: &NBestList, scales: &ScaleSet) -> Vec<f64> {
    nbest_log_posterior(nbest, scales)
        .into_iter()
        .map(f64::exp)
        .collect()
}

fn check_capacity(k: usize, len: usize) -> Result<()> {
    let size = (k as f64).powi(len as i32);
    if size > ENUMERATION_LIMIT as f64 {
        return Err(Error::Capacity {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Visits every sequence of length `len` in lexicographic order with its
/// scaled score.
pub(crate) fn enumerate_sequences<A, L, F>(
    am: &A,
    lm: &L,
    len: usize,
    scales: &ScaleSet,
    mut visit: F,
) -> Result<()>
where
    A: ScoreSource + ?Sized,
    L: ScoreSource + ?Sized,
    F: FnMut(&[TokenId], f64),
{
    let k = am.vocab_size();
    if lm.vocab_size() != k {
        return Err(Error::usage(format!(
            "AM vocabulary size {k} differs from LM vocabulary size {}",
            lm.vocab_size()
        )));
    }
    scales.ensure_vocab(k)?;
    check_capacity(k, len)?;

    fn rec<A: ScoreSource + ?Sized, L: ScoreSource + ?Sized, F: FnMut(&[TokenId], f64)>(
        am: &A,
        lm: &L,
        scales: &ScaleSet,
        len: usize,
        prefix: &mut Vec<TokenId>,
        score: f64,
        visit: &mut F,
    ) {
        if prefix.len() == len {
            visit(prefix, score);
            return;
        }
        let a = am.log_probs(prefix);
        let l = lm.log_probs(prefix);
        for w in 0..a.len() {
            let s = score + token_score(scales, w as TokenId, a[w], l[w]);
            prefix.push(w as TokenId);
            rec(am, lm, scales, len, prefix, s, visit);
            prefix.pop();
        }
    }
    let mut prefix = Vec::with_capacity(len);
    rec(am, lm, scales, len, &mut prefix, 0.0, &mut visit);
    Ok(())
}

/// Sentence-level posterior of `target`, normalized over all `k^N` sequences
/// of the same length by explicit enumeration.
///
/// Only feasible at toy scale; fails with [`Error::Capacity`] beyond
/// [`ENUMERATION_LIMIT`] sequences.
pub fn exact_sentence_posterior<A, L>(
    am: &A,
    lm: &L,
    scales: &ScaleSet,
    target: &[TokenId],
) -> Result<f64>
where
    A: ScoreSource + ?Sized,
    L: ScoreSource + ?Sized,
{
    TokenSeq::new(target.to_vec()).check_vocab(am.vocab_size())?;
    let mut acc = LogSumAcc::new();
    let mut target_score = f64::NEG_INFINITY;
    enumerate_sequences(am, lm, target.len(), scales, |seq, s| {
        acc.push(s);
        if seq == target {
            target_score = s;
        }
    })?;
    let log_z = acc.value();
    if log_z == f64::NEG_INFINITY {
        return Err(Error::DegenerateInput(
            "every sequence has zero combined probability".into(),
        ));
    }
    Ok((target_score - log_z).exp())
}

/// Every length-`len` sequence with its exact sentence-level posterior, in
/// lexicographic order.
pub fn sentence_distribution<A, L>(
    am: &A,
    lm: &L,
    len: usize,
    scales: &ScaleSet,
) -> Result<Vec<(TokenSeq, f64)>>
where
    A: ScoreSource + ?Sized,
    L: ScoreSource + ?Sized,
{
    let mut scored = Vec::new();
    enumerate_sequences(am, lm, len, scales, |seq, s| {
        scored.push((TokenSeq::new(seq.to_vec()), s))
    })?;
    let log_z = {
        let mut acc = LogSumAcc::new();
        scored.iter().for_each(|(_, s)| acc.push(*s));
        acc.value()
    };
    if log_z == f64::NEG_INFINITY {
        return Err(Error::DegenerateInput(
            "every sequence has zero combined probability".into(),
        ));
    }
    Ok(scored
        .into_iter()
        .map(|(t, s)| (t, (s - log_z).exp()))
        .collect())
}

/// Builds a hypothesis for `tokens` with per-token scores read from the sources.
pub fn score_hypothesis<A, L>(am: &A, lm: &L, tokens: &[TokenId]) -> Result<Hypothesis>
where
    A: ScoreSource + ?Sized,
    L: ScoreSource + ?Sized,
{
    let mut a = Vec::with_capacity(tokens.len());
    let mut l = Vec::with_capacity(tokens.len());
    for n in 0..tokens.len() {
        let w = tokens[n] as usize;
        a.push(am.log_probs(&tokens[..n])[w]);
        l.push(lm.log_probs(&tokens[..n])[w]);
    }
    Hypothesis::new(TokenSeq::new(tokens.to_vec()), a, l)
}
