//! Log-linear fusion of an acoustic model and a language model with
//! learnable scale parameters.
//!
//! Two score sources are combined per token as
//! `z(w) = alpha_w * log p_AM(w) + beta_w * log p_LM(w)`, either with one
//! global pair of scales or one pair per subword unit. The scales are learned
//! by gradient descent under a cross-entropy criterion (token-level
//! renormalization) or an expected-error criterion over n-best lists, and can
//! be compared against a grid-searched baseline.

pub mod analysis;
pub mod cli;
pub mod decode;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod logspace;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod providers;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    GradientVector, Hypothesis, NBestList, ScaleMode, ScaleSet, ScaleValues, StepScores, TokenId,
    TokenSeq, Vocabulary,
};
