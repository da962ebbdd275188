//! Edit distance, WER, and the accuracy function used by minimum-WER training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{TokenId, TokenSeq, Vocabulary};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.len() < b.len() {
        return edit_distance(b, a);
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Error counts of one minimal alignment of a hypothesis against a reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimal alignment counts; among equal-cost alignments, substitutions are
/// preferred over insertion/deletion pairs.
pub fn align_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    // cost table kept whole for the backtrace
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0
            && j > 0
            && d[i][j] == d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1])
        {
            if reference[i - 1] != hypothesis[j - 1] {
                counts.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerStats {
    pub rate: f64,
    pub errors: usize,
    pub ref_len: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl WerStats {
    fn from_counts(c: EditCounts, ref_len: usize) -> Self {
        let errors = c.total();
        let rate = if ref_len == 0 {
            if errors == 0 {
                0.0
            } else {
                1.0
            }
        } else {
            errors as f64 / ref_len as f64
        };
        Self {
            rate,
            errors,
            ref_len,
            substitutions: c.substitutions,
            insertions: c.insertions,
            deletions: c.deletions,
        }
    }
}

/// Corpus-level error rate `sum edits / sum reference lengths`, over tokens or,
/// with a vocabulary, over detokenized words.
pub fn corpus_wer(
    refs: &[TokenSeq],
    hyps: &[TokenSeq],
    detok: Option<&Vocabulary>,
) -> Result<WerStats> {
    Ok(per_utterance_wer(refs, hyps, detok)?.1)
}

/// Per-utterance stats plus their corpus aggregate.
pub fn per_utterance_wer(
    refs: &[TokenSeq],
    hyps: &[TokenSeq],
    detok: Option<&Vocabulary>,
) -> Result<(Vec<WerStats>, WerStats)> {
    if refs.len() != hyps.len() {
        return Err(Error::usage(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut total = EditCounts::default();
    let mut ref_len = 0;
    let mut per = Vec::with_capacity(refs.len());
    for (r, h) in refs.iter().zip(hyps) {
        let (c, n) = match detok {
            Some(v) => {
                let (rw, hw) = (v.detokenize(r)?, v.detokenize(h)?);
                (align_counts(&rw, &hw), rw.len())
            }
            None => (align_counts(r, h), r.len()),
        };
        total.substitutions += c.substitutions;
        total.insertions += c.insertions;
        total.deletions += c.deletions;
        ref_len += n;
        per.push(WerStats::from_counts(c, n));
    }
    Ok((per, WerStats::from_counts(total, ref_len)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyMode {
    /// Negative token-level edit distance.
    #[default]
    NegEdit,
    /// Negative word-level edit distance after detokenization.
    Word,
}

impl std::str::FromStr for AccuracyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg-edit" | "token" => Ok(AccuracyMode::NegEdit),
            "word" => Ok(AccuracyMode::Word),
            other => Err(Error::usage(format!("unknown accuracy mode {other:?}"))),
        }
    }
}

/// Accuracy of `y` treating `y_ref` as ground truth; 0 is perfect.
pub fn accuracy(
    y: &[TokenId],
    y_ref: &[TokenId],
    mode: AccuracyMode,
    detok: Option<&Vocabulary>,
) -> Result<f64> {
    match mode {
        AccuracyMode::NegEdit => Ok(-(edit_distance(y, y_ref) as f64)),
        AccuracyMode::Word => {
            let v = detok.ok_or_else(|| {
                Error::usage("word-level accuracy needs a vocabulary to detokenize")
            })?;
            Ok(-(edit_distance(&v.detokenize(y)?, &v.detokenize(y_ref)?) as f64))
        }
    }
}

/// The error `-accuracy` of hypotheses against references, with EOS removed
/// from both sides first.
#[derive(Debug, Clone, Copy)]
pub struct ErrorMeasure<'a> {
    pub mode: AccuracyMode,
    pub eos: Option<TokenId>,
    pub vocab: Option<&'a Vocabulary>,
}

impl<'a> ErrorMeasure<'a> {
    /// Token-level edit distance with no EOS stripping.
    pub fn tokens() -> Self {
        Self {
            mode: AccuracyMode::NegEdit,
            eos: None,
            vocab: None,
        }
    }

    pub fn for_vocab(mode: AccuracyMode, vocab: &'a Vocabulary) -> Self {
        Self {
            mode,
            eos: Some(vocab.eos()),
            vocab: Some(vocab),
        }
    }

    pub fn error(&self, hyp: &[TokenId], reference: &[TokenId]) -> Result<f64> {
        match self.eos {
            Some(eos) => {
                let strip = |s: &[TokenId]| -> Vec<TokenId> {
                    s.iter().copied().filter(|&t| t != eos).collect()
                };
                Ok(-accuracy(
                    &strip(hyp),
                    &strip(reference),
                    self.mode,
                    self.vocab,
                )?)
            }
            None => Ok(-accuracy(hyp, reference, self.mode, self.vocab)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance::<u32>(&[], &[4, 5, 6]), 3);
        assert_eq!(edit_distance(&chars("kitten"), &chars("sitting")), 3);
        assert_eq!(edit_distance(&chars("sitting"), &chars("kitten")), 3);
    }

    #[test]
    fn align_counts_breakdown() {
        let c = align_counts(&chars("kitten"), &chars("sitting"));
        assert_eq!(
            c,
            EditCounts {
                substitutions: 2,
                insertions: 1,
                deletions: 0
            }
        );
        let c = align_counts(&[1, 2, 3], &[] as &[i32]);
        assert_eq!(c.deletions, 3);
    }

    #[test]
    fn corpus_wer_examples() {
        let refs: Vec<TokenSeq> = vec![vec![1, 2, 3, 4].into(), vec![5, 6, 7, 8, 9, 10].into()];
        assert_eq!(corpus_wer(&refs, &refs, None).unwrap().rate, 0.0);

        let empty = vec![TokenSeq::default(); 2];
        let w = corpus_wer(&refs, &empty, None).unwrap();
        assert_eq!(w.rate, 1.0);
        assert_eq!(w.deletions, 10);

        // one substitution in the first, a deletion and an insertion in the second
        let hyps: Vec<TokenSeq> = vec![vec![1, 2, 0, 4].into(), vec![5, 7, 8, 9, 10, 11].into()];
        let w = corpus_wer(&refs, &hyps, None).unwrap();
        assert_eq!((w.errors, w.ref_len), (3, 10));
        assert!((w.rate - 0.3).abs() < 1e-15);

        assert!(corpus_wer(&refs, &hyps[..1], None).unwrap_err().is_usage());
    }

    #[test]
    fn word_level_wer() {
        let v = Vocabulary::new(
            vec!["</s>".into(), "ab@@".into(), "c".into(), "d".into()],
            0,
        )
        .unwrap();
        let refs: Vec<TokenSeq> = vec![vec![1, 2, 3, 0].into()]; // "abc d"
        let hyps: Vec<TokenSeq> = vec![vec![2, 3].into()]; // "c d"
        let w = corpus_wer(&refs, &hyps, Some(&v)).unwrap();
        assert_eq!((w.errors, w.ref_len, w.substitutions), (1, 2, 1));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(
            accuracy(&[1, 2], &[1, 2], AccuracyMode::NegEdit, None).unwrap(),
            0.0
        );
        assert_eq!(
            accuracy(&[], &[1, 2, 3, 4, 5], AccuracyMode::NegEdit, None).unwrap(),
            -5.0
        );
        let k: Vec<u32> = "kitten".bytes().map(u32::from).collect();
        let s: Vec<u32> = "sitting".bytes().map(u32::from).collect();
        assert_eq!(accuracy(&k, &s, AccuracyMode::NegEdit, None).unwrap(), -3.0);
        assert!(accuracy(&k, &s, AccuracyMode::Word, None)
            .unwrap_err()
            .is_usage());
    }

    #[test]
    fn error_measure_strips_eos() {
        let m = ErrorMeasure {
            mode: AccuracyMode::NegEdit,
            eos: Some(0),
            vocab: None,
        };
        assert_eq!(m.error(&[3, 4, 0], &[3, 4]).unwrap(), 0.0);
        assert_eq!(
            ErrorMeasure::tokens().error(&[3, 4, 0], &[3, 4]).unwrap(),
            1.0
        );
    }

    proptest! {
        #[test]
        fn metric_axioms(
            a in prop::collection::vec(0u8..4, 0..10),
            b in prop::collection::vec(0u8..4, 0..10),
            c in prop::collection::vec(0u8..4, 0..10),
        ) {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab, edit_distance(&b, &a));
            prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert_eq!(align_counts(&a, &b).total(), ab);
        }

        #[test]
        fn single_utterance_wer_is_edit_ratio(
            r in prop::collection::vec(0u32..5, 1..10),
            h in prop::collection::vec(0u32..5, 0..10),
        ) {
            let w = corpus_wer(&[r.clone().into()], &[h.clone().into()], None).unwrap();
            prop_assert_eq!(w.rate, edit_distance(&r, &h) as f64 / r.len() as f64);
        }

        #[test]
        fn accuracy_nonpositive_zero_iff_equal(
            y in prop::collection::vec(1u32..4, 0..8),
            r in prop::collection::vec(1u32..4, 0..8),
        ) {
            let v = Vocabulary::new(vec!["</s>".into(), "a@@".into(), "b".into(), "c@@".into()], 0).unwrap();
            let tok = accuracy(&y, &r, AccuracyMode::NegEdit, None).unwrap();
            prop_assert!(tok <= 0.0);
            prop_assert_eq!(tok == 0.0, y == r);
            let word = accuracy(&y, &r, AccuracyMode::Word, Some(&v)).unwrap();
            prop_assert!(word <= 0.0);
            prop_assert_eq!(word == 0.0, v.detokenize(&y).unwrap() == v.detokenize(&r).unwrap());
        }
    }
}
