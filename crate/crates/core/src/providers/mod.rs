//! Score sources standing in for the acoustic and language models, plus the
//! synthetic corpus generator.

mod ngram;
mod synthetic;
mod toy_am;

pub use ngram::{train_ngram, NGramLM};
pub use synthetic::{
    generate_synthetic_corpus, NoiseSpread, SyntheticConfig, SyntheticCorpus, Utterance,
};
pub use toy_am::{PositionwiseToyAM, TrainableToyAM};

use crate::types::TokenId;

/// A black-box next-token distribution.
///
/// Implementations return a log-distribution over the vocabulary for the
/// given history and must be deterministic. Acoustic sources are bound to a
/// single utterance, so the utterance context is carried by the value itself.
pub trait ScoreSource {
    fn vocab_size(&self) -> usize;

    fn log_probs(&self, history: &[TokenId]) -> Vec<f64>;
}

impl<T: ScoreSource + ?Sized> ScoreSource for &T {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn log_probs(&self, history: &[TokenId]) -> Vec<f64> {
        (**self).log_probs(history)
    }
}
