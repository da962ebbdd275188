use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScoreSource;
use crate::error::{Error, Result};
use crate::types::{TokenId, TokenSeq, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct ContextCounts {
    total: u64,
    counts: BTreeMap<TokenId, u64>,
}

/// Add-k smoothed n-gram LM with recursive backoff for unseen contexts.
///
/// Histories are left-padded with the pad token (the vocabulary's EOS), so
/// the sentence start is an ordinary context rather than the empty one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NGramFile", into = "NGramFile")]
pub struct NGramLM {
    order: usize,
    vocab_size: usize,
    smoothing: f64,
    pad: TokenId,
    /// `levels[l]` holds every observed context of length `l`.
    levels: Vec<BTreeMap<Vec<TokenId>, ContextCounts>>,
}

/// Counts `(ctx, w)` for every context length `0..order` over the padded corpus.
pub fn train_ngram(
    corpus: &[TokenSeq],
    vocab: &Vocabulary,
    order: usize,
    smoothing: f64,
) -> Result<NGramLM> {
    if corpus.is_empty() {
        return Err(Error::usage("cannot train an n-gram LM on an empty corpus"));
    }
    if order < 1 {
        return Err(Error::usage("n-gram order must be >= 1"));
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::usage(format!(
            "smoothing constant must be > 0, got {smoothing}"
        )));
    }
    let k = vocab.size();
    let pad = vocab.eos();
    let mut levels: Vec<BTreeMap<Vec<TokenId>, ContextCounts>> = vec![BTreeMap::new(); order];
    levels[0].insert(Vec::new(), ContextCounts::default());

    for seq in corpus {
        seq.check_vocab(k)?;
        let mut padded = vec![pad; order - 1];
        padded.extend_from_slice(seq);
        for i in (order - 1)..padded.len() {
            let w = padded[i];
            for (len, level) in levels.iter_mut().enumerate() {
                let ctx = padded[i - len..i].to_vec();
                let entry = level.entry(ctx).or_default();
                entry.total += 1;
                *entry.counts.entry(w).or_default() += 1;
            }
        }
    }
    Ok(NGramLM {
        order,
        vocab_size: k,
        smoothing,
        pad,
        levels,
    })
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// `log p(. | history)` using the longest observed context.
    pub fn lm_logprob(&self, history: &[TokenId]) -> Vec<f64> {
        let ctx_len = self.order - 1;
        let mut ctx = vec![self.pad; ctx_len.saturating_sub(history.len())];
        ctx.extend_from_slice(&history[history.len().saturating_sub(ctx_len)..]);

        let counts = (0..=ctx_len)
            .rev()
            .find_map(|len| self.levels[len].get(&ctx[ctx_len - len..]))
            .expect("empty context is always present");

        let ks = self.smoothing;
        let log_norm = (counts.total as f64 + ks * self.vocab_size as f64).ln();
        let mut out = vec![ks.ln() - log_norm; self.vocab_size];
        for (&w, &c) in &counts.counts {
            out[w as usize] = (c as f64 + ks).ln() - log_norm;
        }
        out
    }

    /// Number of distinct observed contexts of each length.
    pub fn context_counts(&self) -> Vec<usize> {
        self.levels.iter().map(BTreeMap::len).collect()
    }
}

impl ScoreSource for NGramLM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn log_probs(&self, history: &[TokenId]) -> Vec<f64> {
        self.lm_logprob(history)
    }
}

#[derive(Serialize, Deserialize)]
struct NGramFile {
    order: usize,
    vocab_size: usize,
    smoothing: f64,
    pad: TokenId,
    contexts: Vec<ContextEntry>,
}

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    context: Vec<TokenId>,
    total: u64,
    counts: Vec<(TokenId, u64)>,
}

impl From<NGramLM> for NGramFile {
    fn from(lm: NGramLM) -> Self {
        let contexts = lm
            .levels
            .into_iter()
            .flat_map(|level| level.into_iter())
            .map(|(context, c)| ContextEntry {
                context,
                total: c.total,
                counts: c.counts.into_iter().collect(),
            })
            .collect();
        NGramFile {
            order: lm.order,
            vocab_size: lm.vocab_size,
            smoothing: lm.smoothing,
            pad: lm.pad,
            contexts,
        }
    }
}

impl TryFrom<NGramFile> for NGramLM {
    type Error = Error;
    fn try_from(f: NGramFile) -> Result<Self> {
        if f.order < 1 || f.vocab_size < 2 || !(f.smoothing > 0.0) || f.pad as usize >= f.vocab_size
        {
            return Err(Error::usage("invalid n-gram LM header"));
        }
        let mut levels: Vec<BTreeMap<Vec<TokenId>, ContextCounts>> = vec![BTreeMap::new(); f.order];
        for e in f.contexts {
            if e.context.len() >= f.order {
                return Err(Error::usage(format!(
                    "context {:?} too long for order {}",
                    e.context, f.order
                )));
            }
            let counts: BTreeMap<TokenId, u64> = e.counts.into_iter().collect();
            if counts.keys().any(|&w| w as usize >= f.vocab_size)
                || counts.values().sum::<u64>() != e.total
            {
                return Err(Error::usage(format!(
                    "inconsistent counts for context {:?}",
                    e.context
                )));
            }
            levels[e.context.len()].insert(
                e.context,
                ContextCounts {
                    total: e.total,
                    counts,
                },
            );
        }
        levels[0].entry(Vec::new()).or_default();
        Ok(NGramLM {
            order: f.order,
            vocab_size: f.vocab_size,
            smoothing: f.smoothing,
            pad: f.pad,
            levels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logspace::{validate_log_distribution, VALIDATION_TOL};
    use proptest::prelude::*;

    fn seqs(v: &[&[TokenId]]) -> Vec<TokenSeq> {
        v.iter().map(|s| TokenSeq::new(s.to_vec())).collect()
    }

    #[test]
    fn single_symbol_corpus_limit() {
        let vocab = Vocabulary::numbered(2, 1).unwrap();
        let lm = train_ngram(&seqs(&[&[0, 0, 0]]), &vocab, 1, 1e-12).unwrap();
        assert!((lm.lm_logprob(&[])[0].exp() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unigram_count_arithmetic() {
        let vocab = Vocabulary::numbered(2, 1).unwrap();
        let lm = train_ngram(&seqs(&[&[0, 1]]), &vocab, 1, 1.0).unwrap();
        // (1 + 1) / (2 + 2)
        assert!((lm.lm_logprob(&[])[0].exp() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bigram_count_arithmetic() {
        let vocab = Vocabulary::numbered(2, 1).unwrap();
        let lm = train_ngram(&seqs(&[&[0, 1], &[0, 1]]), &vocab, 2, 0.1).unwrap();
        let p = lm.lm_logprob(&[0]);
        assert!((p[1].exp() - 2.1 / 2.2).abs() < 1e-12);
    }

    #[test]
    fn order_one_ignores_history() {
        let vocab = Vocabulary::numbered(3, 2).unwrap();
        let lm = train_ngram(&seqs(&[&[0, 1, 1], &[2]]), &vocab, 1, 0.5).unwrap();
        assert_eq!(lm.lm_logprob(&[]), lm.lm_logprob(&[0, 1]));
        assert_eq!(lm.lm_logprob(&[2]), lm.lm_logprob(&[1, 1, 1, 0]));
    }

    #[test]
    fn markov_truncation() {
        let vocab = Vocabulary::numbered(4, 3).unwrap();
        let lm = train_ngram(&seqs(&[&[0, 1, 2, 0, 1], &[1, 2, 2]]), &vocab, 3, 0.2).unwrap();
        assert_eq!(lm.lm_logprob(&[2, 2, 0, 1]), lm.lm_logprob(&[0, 1]));
        assert_eq!(lm.lm_logprob(&[1, 1, 1, 2]), lm.lm_logprob(&[1, 2]));
    }

    #[test]
    fn unseen_context_backs_off_exactly() {
        let vocab = Vocabulary::numbered(4, 3).unwrap();
        let corpus = seqs(&[&[0, 1, 2], &[1, 1]]);
        let tri = train_ngram(&corpus, &vocab, 3, 0.3).unwrap();
        let bi = train_ngram(&corpus, &vocab, 2, 0.3).unwrap();
        let uni = train_ngram(&corpus, &vocab, 1, 0.3).unwrap();
        // (2, 0) never observed; (0) observed as a bigram context
        assert_eq!(tri.lm_logprob(&[2, 0]), bi.lm_logprob(&[0]));
        // token 2 never precedes anything
        assert_eq!(tri.lm_logprob(&[0, 2]), uni.lm_logprob(&[]));
        assert_eq!(bi.lm_logprob(&[2]), uni.lm_logprob(&[]));
    }

    #[test]
    fn sentence_start_is_padded_context() {
        let vocab = Vocabulary::numbered(3, 2).unwrap();
        let lm = train_ngram(&seqs(&[&[0, 1], &[0, 1]]), &vocab, 2, 0.1).unwrap();
        assert_eq!(lm.lm_logprob(&[]), lm.lm_logprob(&[2]));
        assert!((lm.lm_logprob(&[])[0].exp() - 2.1 / 2.3).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let vocab = Vocabulary::numbered(2, 1).unwrap();
        assert!(train_ngram(&[], &vocab, 2, 1.0).unwrap_err().is_usage());
        assert!(train_ngram(&seqs(&[&[0]]), &vocab, 0, 1.0).is_err());
        assert!(train_ngram(&seqs(&[&[0]]), &vocab, 1, 0.0).is_err());
        assert!(train_ngram(&seqs(&[&[5]]), &vocab, 1, 1.0).is_err());
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let vocab = Vocabulary::numbered(5, 0).unwrap();
        let lm = train_ngram(&seqs(&[&[1, 2, 3, 0], &[4, 4, 2, 0]]), &vocab, 3, 0.05).unwrap();
        let a = serde_json::to_string(&lm).unwrap();
        let back: NGramLM = serde_json::from_str(&a).unwrap();
        assert_eq!(back, lm);
        assert_eq!(serde_json::to_string(&back).unwrap(), a);
    }

    proptest! {
        #[test]
        fn every_context_is_normalized(
            corpus in prop::collection::vec(prop::collection::vec(0u32..6, 0..8), 1..6),
            order in 1usize..4,
            ks in 0.01f64..2.0,
            history in prop::collection::vec(0u32..6, 0..5),
        ) {
            let vocab = Vocabulary::numbered(6, 0).unwrap();
            let corpus: Vec<TokenSeq> = corpus.into_iter().map(TokenSeq::new).collect();
            let lm = train_ngram(&corpus, &vocab, order, ks).unwrap();
            let p = lm.lm_logprob(&history);
            prop_assert!(validate_log_distribution(&p, VALIDATION_TOL).is_ok());
        }
    }
}
