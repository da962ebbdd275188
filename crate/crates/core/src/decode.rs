//! Shallow-fusion search, n-best rescoring, and the brute-force argmax oracle.
//!
//! Hypotheses are ranked by the raw scaled score
//! `sum_n alpha_{w_n} log p_AM + beta_{w_n} log p_LM` with no normalization and
//! no length penalty. Ties are broken in favour of the lexicographically
//! smaller token-id sequence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{enumerate_sequences, sequence_score, token_score};
use crate::providers::ScoreSource;
use crate::types::{Hypothesis, NBestList, ScaleSet, TokenId, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "eos")]
pub enum EosRule {
    /// Emitting this token finalizes a hypothesis; finalized hypotheses keep
    /// competing for beam slots by their final score.
    Terminate(TokenId),
    /// No token is special; every hypothesis runs to `max_len`.
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    pub max_len: usize,
    pub eos: EosRule,
}

impl BeamConfig {
    pub fn new(beam: usize, max_len: usize, eos: EosRule) -> Result<Self> {
        let cfg = Self { beam, max_len, eos };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam < 1 {
            return Err(Error::usage("beam size must be >= 1"));
        }
        if self.max_len < 1 {
            return Err(Error::usage("max length must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Partial {
    tokens: Vec<TokenId>,
    am: Vec<f64>,
    lm: Vec<f64>,
    score: f64,
    done: bool,
}

fn rank(a: &Partial, b: &Partial) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search over the shallow-fusion score. Returns up to `cfg.beam`
/// hypotheses sorted best first.
///
/// Extensions where either model assigns zero probability are never kept, so
/// every returned hypothesis has finite per-token scores.
pub fn beam_search<A, L>(
    am: &A,
    lm: &L,
    scales: &ScaleSet,
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis>>
where
    A: ScoreSource + ?Sized,
    L: ScoreSource + ?Sized,
{
    cfg.validate()?;
    let k = am.vocab_size();
    if lm.vocab_size() != k {
        return Err(Error::usage(format!(
            "AM vocabulary size {k} differs from LM vocabulary size {}",
            lm.vocab_size()
        )));
    }
    scales.ensure_vocab(k)?;
    if let EosRule::Terminate(eos) = cfg.eos {
        if eos as usize >= k {
            return Err(Error::usage(format!("eos id {eos} out of range")));
        }
    }

    let mut beam = vec![Partial {
        tokens: Vec::new(),
        am: Vec::new(),
        lm: Vec::new(),
        score: 0.0,
        done: false,
    }];
    for _ in 0..cfg.max_len {
        if beam.iter().all(|p| p.done) {
            break;
        }
        let mut pool: Vec<Partial> = Vec::with_capacity(beam.len() * k);
        for p in beam {
            if p.done {
                pool.push(p);
                continue;
            }
            let a = am.log_probs(&p.tokens);
            let l = lm.log_probs(&p.tokens);
            if a.len() != k || l.len() != k {
                return Err(Error::usage(
                    "score source returned a vector of the wrong size",
                ));
            }
            for w in 0..k {
                if !(a[w].is_finite() && l[w].is_finite()) {
                    continue;
                }
                let tok = w as TokenId;
                let mut next = p.clone();
                next.tokens.push(tok);
                next.am.push(a[w]);
                next.lm.push(l[w]);
                next.score += token_score(scales, tok, a[w], l[w]);
                next.done = cfg.eos == EosRule::Terminate(tok);
                pool.push(next);
            }
        }
        if pool.is_empty() {
            return Err(Error::DegenerateInput(
                "no extension has nonzero probability under both models".into(),
            ));
        }
        if pool.len() > cfg.beam {
            pool.select_nth_unstable_by(cfg.beam - 1, rank);
            pool.truncate(cfg.beam);
        }
        pool.sort_by(rank);
        beam = pool;
    }
    beam.into_iter()
        .map(|p| Hypothesis::new(TokenSeq::new(p.tokens), p.am, p.lm))
        .collect()
}

/// Beam search packaged as an [`NBestList`] for one utterance.
pub fn decode_nbest<A, L>(
    id: &str,
    reference: &TokenSeq,
    am: &A,
    lm: &L,
    scales: &ScaleSet,
    cfg: &BeamConfig,
) -> Result<NBestList>
where
    A: ScoreSource + ?Sized,
    L: ScoreSource + ?Sized,
{
    NBestList::new(id, reference.clone(), beam_search(am, lm, scales, cfg)?)
}

/// Globally best length-`len` sequence by explicit enumeration.
pub fn exhaustive_argmax<A, L>(am: &A, lm: &L, scales: &ScaleSet, len: usize) -> Result<TokenSeq>
where
    A: ScoreSource + ?Sized,
    L: ScoreSource + ?Sized,
{
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    // lexicographic visiting order plus strict improvement keeps the smallest tie
    enumerate_sequences(am, lm, len, scales, |seq, s| {
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((seq.to_vec(), s));
        }
    })?;
    best.map(|(t, _)| TokenSeq::new(t))
        .ok_or_else(|| Error::DegenerateInput("no sequence to choose from".into()))
}

/// The same hypotheses ordered by [`sequence_score`], best first; ties keep
/// their input order.
pub fn rescore_nbest(nbest: &NBestList, scales: &ScaleSet) -> NBestList {
    let scores: Vec<f64> = nbest
        .hypotheses()
        .iter()
        .map(|h| sequence_score(h, scales))
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    nbest.with_order(&order)
}

/// Index of the best hypothesis under `scales`, first index on ties.
pub fn best_index(nbest: &NBestList, scales: &ScaleSet) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, h) in nbest.hypotheses().iter().enumerate() {
        let s = sequence_score(h, scales);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{train_ngram, NGramLM, PositionwiseToyAM};
    use crate::types::Vocabulary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ln(v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| x.ln()).collect()
    }

    fn random_row(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        crate::logspace::log_softmax(&logits).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, k: usize, n: usize) -> (PositionwiseToyAM, NGramLM) {
        let am = PositionwiseToyAM::new((0..n).map(|_| random_row(rng, k)).collect()).unwrap();
        let vocab = Vocabulary::numbered(k, 0).unwrap();
        let corpus: Vec<TokenSeq> = (0..6)
            .map(|_| {
                (0..rng.random_range(1..6))
                    .map(|_| rng.random_range(0..k as u32))
                    .collect::<Vec<_>>()
                    .into()
            })
            .collect();
        let lm = train_ngram(
            &corpus,
            &vocab,
            rng.random_range(1..4),
            rng.random_range(0.05..1.0),
        )
        .unwrap();
        (am, lm)
    }

    #[test]
    fn one_hot_am_recovers_reference() {
        let reference = [2u32, 1, 3, 0];
        let rows = reference
            .iter()
            .map(|&w| {
                (0..4)
                    .map(|v| if v == w { 0.0 } else { f64::NEG_INFINITY })
                    .collect()
            })
            .collect();
        let am = PositionwiseToyAM::new(rows).unwrap();
        let vocab = Vocabulary::numbered(4, 0).unwrap();
        let lm = train_ngram(&[TokenSeq::from([1, 1, 2])], &vocab, 2, 0.1).unwrap();
        let sc = ScaleSet::agnostic(4, 1.0, 0.0).unwrap();
        let cfg = BeamConfig::new(1, 10, EosRule::Terminate(0)).unwrap();
        let out = beam_search(&am, &lm, &sc, &cfg).unwrap();
        assert_eq!(out[0].tokens().0, reference);
    }

    #[test]
    fn greedy_am_only_is_rowwise_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (am, lm) = random_instance(&mut rng, 5, 4);
        let sc = ScaleSet::agnostic(5, 1.0, 0.0).unwrap();
        let cfg = BeamConfig::new(1, 4, EosRule::Ignore).unwrap();
        let out = beam_search(&am, &lm, &sc, &cfg).unwrap();
        let expect: Vec<u32> = am
            .rows()
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0 as u32
            })
            .collect();
        assert_eq!(out[0].tokens().0, expect);
        assert_eq!(exhaustive_argmax(&am, &lm, &sc, 4).unwrap().0, expect);
    }

    #[test]
    fn lm_only_unigram_repeats_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (am, _) = random_instance(&mut rng, 4, 3);
        let vocab = Vocabulary::numbered(4, 0).unwrap();
        let lm = train_ngram(&[TokenSeq::from([2, 2, 1, 3, 2])], &vocab, 1, 0.5).unwrap();
        let sc = ScaleSet::agnostic(4, 0.0, 1.0).unwrap();
        assert_eq!(
            exhaustive_argmax(&am, &lm, &sc, 3).unwrap().0,
            vec![2, 2, 2]
        );
    }

    #[test]
    fn full_beam_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let k = rng.random_range(2..5);
            let n = rng.random_range(1..5);
            let (am, lm) = random_instance(&mut rng, k, n);
            let sc = ScaleSet::subword(
                (0..k).map(|_| rng.random_range(0.0..2.0)).collect(),
                (0..k).map(|_| rng.random_range(0.0..2.0)).collect(),
            )
            .unwrap();
            let cfg = BeamConfig::new(k.pow(n as u32), n, EosRule::Ignore).unwrap();
            let beam = beam_search(&am, &lm, &sc, &cfg).unwrap();
            assert_eq!(beam.len(), k.pow(n as u32));
            assert_eq!(
                beam[0].tokens(),
                &exhaustive_argmax(&am, &lm, &sc, n).unwrap()
            );
            assert!(beam
                .windows(2)
                .all(|w| sequence_score(&w[0], &sc) >= sequence_score(&w[1], &sc)));
        }
    }

    #[test]
    fn eos_terminates_and_finished_hypotheses_compete() {
        // EOS (0) is likely at the first step; finished hypotheses stay in the beam.
        let am =
            PositionwiseToyAM::new(vec![ln(&[0.6, 0.3, 0.1]), ln(&[0.1, 0.45, 0.45])]).unwrap();
        let vocab = Vocabulary::numbered(3, 0).unwrap();
        let lm = train_ngram(&[TokenSeq::from([1, 2])], &vocab, 1, 1.0).unwrap();
        let sc = ScaleSet::agnostic(3, 1.0, 0.0).unwrap();
        let cfg = BeamConfig::new(3, 5, EosRule::Terminate(0)).unwrap();
        let out = beam_search(&am, &lm, &sc, &cfg).unwrap();
        assert_eq!(out[0].tokens().0, vec![0]);
        for h in &out {
            assert!(h.tokens().last() == Some(&0) || h.len() == 5);
        }
    }

    #[test]
    fn vocabulary_mismatch_is_usage_error() {
        let am = PositionwiseToyAM::new(vec![ln(&[0.5, 0.5])]).unwrap();
        let vocab = Vocabulary::numbered(3, 0).unwrap();
        let lm = train_ngram(&[TokenSeq::from([1])], &vocab, 1, 1.0).unwrap();
        let sc = ScaleSet::agnostic(2, 1.0, 1.0).unwrap();
        let cfg = BeamConfig::new(2, 2, EosRule::Ignore).unwrap();
        assert!(beam_search(&am, &lm, &sc, &cfg).unwrap_err().is_usage());
        assert!(BeamConfig::new(0, 2, EosRule::Ignore).is_err());
        assert!(BeamConfig::new(1, 0, EosRule::Ignore).is_err());
    }

    fn h(tokens: &[u32], am: f64, lm: f64) -> Hypothesis {
        let mut a = vec![0.0; tokens.len()];
        let mut l = vec![0.0; tokens.len()];
        a[0] = am;
        l[0] = lm;
        Hypothesis::new(TokenSeq::new(tokens.to_vec()), a, l).unwrap()
    }

    #[test]
    fn rescore_examples() {
        let single = NBestList::new("u", TokenSeq::default(), vec![h(&[1], -1.0, -1.0)]).unwrap();
        let sc = ScaleSet::agnostic(4, 1.0, 1.0).unwrap();
        assert_eq!(rescore_nbest(&single, &sc), single);

        // totals (am, lm): A (-1, -6), B (-2, -2), C (-3, -0.5)
        let nb = NBestList::new(
            "u",
            TokenSeq::default(),
            vec![
                h(&[3], -3.0, -0.5),
                h(&[1], -1.0, -6.0),
                h(&[2], -2.0, -2.0),
            ],
        )
        .unwrap();
        let am_only = rescore_nbest(&nb, &ScaleSet::agnostic(4, 1.0, 0.0).unwrap());
        let order: Vec<u32> = am_only.hypotheses().iter().map(|h| h.tokens()[0]).collect();
        assert_eq!(order, vec![1, 2, 3]);
        // beta = 1: A -7, B -4, C -3.5
        let fused = rescore_nbest(&nb, &ScaleSet::agnostic(4, 1.0, 1.0).unwrap());
        let order: Vec<u32> = fused.hypotheses().iter().map(|h| h.tokens()[0]).collect();
        assert_eq!(order, vec![3, 2, 1]);
        assert_eq!(
            best_index(&nb, &ScaleSet::agnostic(4, 1.0, 1.0).unwrap()),
            0
        );
    }

    #[test]
    fn rescore_is_stable_on_ties() {
        let nb = NBestList::new(
            "u",
            TokenSeq::default(),
            vec![
                h(&[3], -1.0, -1.0),
                h(&[1], -1.0, -1.0),
                h(&[2], -0.5, -1.0),
            ],
        )
        .unwrap();
        let r = rescore_nbest(&nb, &ScaleSet::agnostic(4, 1.0, 1.0).unwrap());
        let order: Vec<u32> = r.hypotheses().iter().map(|h| h.tokens()[0]).collect();
        assert_eq!(order, vec![2, 3, 1]);
    }
}
