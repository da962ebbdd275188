//! Corpus-level glue: teacher forcing, batch decoding, and rescored WER.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{best_index, decode_nbest, BeamConfig, EosRule};
use crate::error::{Error, Result};
use crate::metrics::{per_utterance_wer, ErrorMeasure, WerStats};
use crate::objectives::{hypothesis_errors, CETrainingItem};
use crate::providers::{ScoreSource, Utterance};
use crate::types::{NBestList, ScaleSet, StepScores, TokenId, TokenSeq, Vocabulary};

/// How per-utterance work is spread over threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parallelism {
    /// Worker threads; 1 runs inline on the calling thread.
    pub workers: usize,
    /// Reduce per-utterance results in corpus order.
    pub deterministic: bool,
}

impl Default for Parallelism {
    fn default() -> Self {
        Self {
            workers: 1,
            deterministic: true,
        }
    }
}

impl Parallelism {
    pub fn sequential() -> Self {
        Self::default()
    }

    /// Maps `f` over `0..n`, results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        if self.workers <= 1 {
            return (0..n).map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::usage(format!("cannot start {} workers: {e}", self.workers)))?;
        pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

/// Teacher-forced LM rows along `target`.
pub fn lm_rows<L: ScoreSource + ?Sized>(lm: &L, target: &[TokenId]) -> Vec<Vec<f64>> {
    (0..target.len())
        .map(|n| lm.log_probs(&target[..n]))
        .collect()
}

/// CE item for one utterance: target is the reference plus EOS.
pub fn ce_item<L: ScoreSource + ?Sized>(
    utt: &Utterance,
    lm: &L,
    eos: TokenId,
) -> Result<CETrainingItem> {
    let target = utt.target(eos);
    if utt.am.num_rows() < target.len() {
        return Err(Error::usage(format!(
            "utterance {}: {} AM rows for a target of length {}",
            utt.id,
            utt.am.num_rows(),
            target.len()
        )));
    }
    let steps = lm_rows(lm, &target)
        .into_iter()
        .enumerate()
        .map(|(n, lm_row)| StepScores::from_raw(utt.am.row(n).to_vec(), lm_row))
        .collect();
    CETrainingItem::new(target, steps)
}

pub fn ce_items<L>(
    utts: &[Utterance],
    lm: &L,
    eos: TokenId,
    par: Parallelism,
) -> Result<Vec<CETrainingItem>>
where
    L: ScoreSource + Sync + ?Sized,
{
    par.map(utts.len(), |i| ce_item(&utts[i], lm, eos))
}

/// Beam settings used for corpus decoding: EOS terminates, and the length
/// cap is twice the number of AM rows.
pub fn beam_for(utt: &Utterance, beam: usize, eos: TokenId) -> Result<BeamConfig> {
    BeamConfig::new(beam, 2 * utt.am.num_rows(), EosRule::Terminate(eos))
}

/// Decodes every utterance into an n-best list whose reference excludes EOS.
pub fn decode_corpus<L>(
    utts: &[Utterance],
    lm: &L,
    scales: &ScaleSet,
    beam: usize,
    eos: TokenId,
    par: Parallelism,
) -> Result<Vec<NBestList>>
where
    L: ScoreSource + Sync + ?Sized,
{
    par.map(utts.len(), |i| {
        let u = &utts[i];
        decode_nbest(
            &u.id,
            &u.reference,
            &u.am,
            lm,
            scales,
            &beam_for(u, beam, eos)?,
        )
    })
}

/// Errors of every hypothesis in every list.
pub fn corpus_errors(nbests: &[NBestList], measure: &ErrorMeasure<'_>) -> Result<Vec<Vec<f64>>> {
    nbests
        .iter()
        .map(|nb| hypothesis_errors(nb, measure))
        .collect()
}

/// Best hypothesis of each list under `scales`, with EOS removed.
pub fn top1(nbests: &[NBestList], scales: &ScaleSet, eos: Option<TokenId>) -> Vec<TokenSeq> {
    nbests
        .iter()
        .map(|nb| {
            let t = nb.hypotheses()[best_index(nb, scales)].tokens();
            match eos {
                Some(e) => t.without(e),
                None => t.clone(),
            }
        })
        .collect()
}

fn references(nbests: &[NBestList], eos: Option<TokenId>) -> Vec<TokenSeq> {
    nbests
        .iter()
        .map(|nb| match eos {
            Some(e) => nb.reference().without(e),
            None => nb.reference().clone(),
        })
        .collect()
}

/// Corpus WER of the rescored top-1 hypotheses.
pub fn rescored_wer(
    nbests: &[NBestList],
    scales: &ScaleSet,
    eos: Option<TokenId>,
    detok: Option<&Vocabulary>,
) -> Result<WerStats> {
    Ok(rescored_report(nbests, scales, eos, detok)?.corpus)
}

pub fn rescored_report(
    nbests: &[NBestList],
    scales: &ScaleSet,
    eos: Option<TokenId>,
    detok: Option<&Vocabulary>,
) -> Result<WerReport> {
    let ids: Vec<String> = nbests.iter().map(|nb| nb.id().to_string()).collect();
    WerReport::build(
        &ids,
        &references(nbests, eos),
        &top1(nbests, scales, eos),
        detok,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceWer {
    pub id: String,
    #[serde(flatten)]
    pub stats: WerStats,
}

/// Corpus WER plus the per-utterance breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub level: String,
    pub corpus: WerStats,
    pub utterances: Vec<UtteranceWer>,
}

impl WerReport {
    pub fn build(
        ids: &[String],
        refs: &[TokenSeq],
        hyps: &[TokenSeq],
        detok: Option<&Vocabulary>,
    ) -> Result<Self> {
        if ids.len() != refs.len() {
            return Err(Error::usage("one id per reference is required"));
        }
        let (per, corpus) = per_utterance_wer(refs, hyps, detok)?;
        Ok(Self {
            level: if detok.is_some() { "word" } else { "token" }.to_string(),
            corpus,
            utterances: ids
                .iter()
                .zip(per)
                .map(|(id, stats)| UtteranceWer {
                    id: id.clone(),
                    stats,
                })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{generate_synthetic_corpus, train_ngram, SyntheticConfig};

    #[test]
    fn ce_items_follow_the_reference() {
        let c =
            generate_synthetic_corpus(&SyntheticConfig::homogeneous(8, 0.2, (5, 0, 0), 3)).unwrap();
        let eos = c.vocab.eos();
        let refs: Vec<TokenSeq> = c.train.iter().map(|u| u.target(eos)).collect();
        let lm = train_ngram(&refs, &c.vocab, 2, 0.1).unwrap();
        let items = ce_items(&c.train, &lm, eos, Parallelism::sequential()).unwrap();
        for (it, u) in items.iter().zip(&c.train) {
            assert_eq!(it.target().len(), u.reference.len() + 1);
            assert_eq!(*it.target().last().unwrap(), eos);
            assert_eq!(it.steps()[0].lm_logp(), lm.lm_logprob(&[]).as_slice());
        }
    }

    #[test]
    fn parallel_decoding_matches_sequential() {
        let c = generate_synthetic_corpus(&SyntheticConfig::homogeneous(10, 0.3, (20, 0, 0), 4))
            .unwrap();
        let eos = c.vocab.eos();
        let refs: Vec<TokenSeq> = c.train.iter().map(|u| u.target(eos)).collect();
        let lm = train_ngram(&refs, &c.vocab, 2, 0.1).unwrap();
        let sc = ScaleSet::agnostic(10, 1.0, 0.5).unwrap();
        let a = decode_corpus(&c.train, &lm, &sc, 4, eos, Parallelism::sequential()).unwrap();
        let par = Parallelism {
            workers: 3,
            deterministic: true,
        };
        let b = decode_corpus(&c.train, &lm, &sc, 4, eos, par).unwrap();
        assert_eq!(a, b);
        let w = rescored_wer(&a, &sc, Some(eos), None).unwrap();
        assert!(
            w.rate >= 0.0 && w.ref_len == c.train.iter().map(|u| u.reference.len()).sum::<usize>()
        );
    }
}
