//! Domain types shared by every module.

use std::collections::{HashMap, HashSet};
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{self, Violation, VALIDATION_TOL};

pub type TokenId = u32;

/// Suffix marking a subword unit that continues into the next unit
/// (`"ab@@" "c"` detokenizes to the word `"abc"`).
pub const CONTINUATION_MARKER: &str = "@@";

/// The closed set of subword units, with an id <-> string bijection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    units: Vec<String>,
    eos: TokenId,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    units: Vec<String>,
    eos: TokenId,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;
    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::new(r.units, r.eos)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            units: v.units,
            eos: v.eos,
        }
    }
}

impl Vocabulary {
    pub fn new(units: Vec<String>, eos: TokenId) -> Result<Self> {
        if units.len() < 2 {
            return Err(Error::usage(format!(
                "vocabulary needs at least 2 units, got {}",
                units.len()
            )));
        }
        if eos as usize >= units.len() {
            return Err(Error::usage(format!(
                "eos id {eos} out of range for {} units",
                units.len()
            )));
        }
        let mut index = HashMap::with_capacity(units.len());
        for (id, u) in units.iter().enumerate() {
            if index.insert(u.clone(), id as TokenId).is_some() {
                return Err(Error::usage(format!("duplicate vocabulary unit {u:?}")));
            }
        }
        Ok(Self { units, eos, index })
    }

    /// Units named `"0"`, `"1"`, ..., with the given EOS id. Handy for tests.
    pub fn numbered(k: usize, eos: TokenId) -> Result<Self> {
        Self::new((0..k).map(|i| i.to_string()).collect(), eos)
    }

    pub fn size(&self) -> usize {
        self.units.len()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn unit(&self, id: TokenId) -> Option<&str> {
        self.units.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, unit: &str) -> Option<TokenId> {
        self.index.get(unit).copied()
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    /// Character length of a unit, not counting the continuation marker.
    pub fn char_len(&self, id: TokenId) -> Option<usize> {
        self.unit(id).map(|u| {
            u.strip_suffix(CONTINUATION_MARKER)
                .unwrap_or(u)
                .chars()
                .count()
        })
    }

    /// Merges subword units into words. EOS is dropped; a unit ending in
    /// [`CONTINUATION_MARKER`] glues onto the following unit.
    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<Vec<String>> {
        let mut words = Vec::new();
        let mut current = String::new();
        for &t in tokens {
            if t == self.eos {
                continue;
            }
            let unit = self
                .unit(t)
                .ok_or_else(|| Error::usage(format!("token id {t} out of range")))?;
            match unit.strip_suffix(CONTINUATION_MARKER) {
                Some(stem) => current.push_str(stem),
                None => {
                    current.push_str(unit);
                    words.push(std::mem::take(&mut current));
                }
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
        Ok(words)
    }
}

/// A sequence of token ids `w_1^N`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn check_vocab(&self, k: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t as usize >= k) {
            Some(t) => Err(Error::usage(format!(
                "token id {t} out of range for vocabulary size {k}"
            ))),
            None => Ok(()),
        }
    }

    /// The sequence with every occurrence of `eos` removed.
    pub fn without(&self, eos: TokenId) -> TokenSeq {
        TokenSeq(self.0.iter().copied().filter(|&t| t != eos).collect())
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl Deref for TokenSeq {
    type Target = [TokenId];
    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

impl<const N: usize> From<[TokenId; N]> for TokenSeq {
    fn from(v: [TokenId; N]) -> Self {
        Self(v.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    /// One `(alpha, beta)` pair shared by every unit.
    Agnostic,
    /// One `(alpha_w, beta_w)` pair per subword unit.
    Subword,
}

impl std::str::FromStr for ScaleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agnostic" => Ok(ScaleMode::Agnostic),
            "subword" => Ok(ScaleMode::Subword),
            other => Err(Error::usage(format!("unknown scale mode {other:?}"))),
        }
    }
}

/// A scalar or a per-unit vector of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleValues {
    Scalar(f64),
    PerUnit(Vec<f64>),
}

impl ScaleValues {
    #[inline]
    pub fn get(&self, w: TokenId) -> f64 {
        match self {
            ScaleValues::Scalar(v) => *v,
            ScaleValues::PerUnit(v) => v[w as usize],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ScaleValues::Scalar(_) => 1,
            ScaleValues::PerUnit(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            ScaleValues::Scalar(v) => std::slice::from_ref(v),
            ScaleValues::PerUnit(v) => v,
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        match self {
            ScaleValues::Scalar(v) => std::slice::from_mut(v),
            ScaleValues::PerUnit(v) => v,
        }
    }

    pub fn mean(&self) -> f64 {
        let s = self.as_slice();
        s.iter().sum::<f64>() / s.len() as f64
    }

    fn zeros_like(&self) -> Self {
        match self {
            ScaleValues::Scalar(_) => ScaleValues::Scalar(0.0),
            ScaleValues::PerUnit(v) => ScaleValues::PerUnit(vec![0.0; v.len()]),
        }
    }

    fn same_shape(&self, other: &Self) -> bool {
        matches!(
            (self, other),
            (ScaleValues::Scalar(_), ScaleValues::Scalar(_))
        ) || matches!((self, other), (ScaleValues::PerUnit(a), ScaleValues::PerUnit(b)) if a.len() == b.len())
    }
}

/// AM scales `alpha` and LM scales `beta`, either one global pair or one pair
/// per subword unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScaleSetRepr", into = "ScaleSetRepr")]
pub struct ScaleSet {
    vocab_size: usize,
    alpha: ScaleValues,
    beta: ScaleValues,
}

#[derive(Serialize, Deserialize)]
struct ScaleSetRepr {
    mode: ScaleMode,
    alpha: ScaleValues,
    beta: ScaleValues,
    vocab_size: usize,
}

impl TryFrom<ScaleSetRepr> for ScaleSet {
    type Error = Error;
    fn try_from(r: ScaleSetRepr) -> Result<Self> {
        let s = ScaleSet::from_values(r.vocab_size, r.alpha, r.beta)?;
        if s.mode() != r.mode {
            return Err(Error::usage(format!(
                "scale file declares mode {:?} but values have the other shape",
                r.mode
            )));
        }
        Ok(s)
    }
}

impl From<ScaleSet> for ScaleSetRepr {
    fn from(s: ScaleSet) -> Self {
        ScaleSetRepr {
            mode: s.mode(),
            alpha: s.alpha,
            beta: s.beta,
            vocab_size: s.vocab_size,
        }
    }
}

impl ScaleSet {
    pub fn agnostic(vocab_size: usize, alpha: f64, beta: f64) -> Result<Self> {
        Self::from_values(
            vocab_size,
            ScaleValues::Scalar(alpha),
            ScaleValues::Scalar(beta),
        )
    }

    pub fn subword(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let k = alpha.len();
        Self::from_values(k, ScaleValues::PerUnit(alpha), ScaleValues::PerUnit(beta))
    }

    pub fn from_values(vocab_size: usize, alpha: ScaleValues, beta: ScaleValues) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::usage(format!(
                "vocab_size must be >= 2, got {vocab_size}"
            )));
        }
        if !alpha.same_shape(&beta) {
            return Err(Error::usage("alpha and beta shapes differ"));
        }
        if let ScaleValues::PerUnit(a) = &alpha {
            if a.len() != vocab_size {
                return Err(Error::usage(format!(
                    "subword scales have length {} but vocab_size is {vocab_size}",
                    a.len()
                )));
            }
        }
        if alpha
            .as_slice()
            .iter()
            .chain(beta.as_slice())
            .any(|v| !v.is_finite())
        {
            return Err(Error::usage("scale entries must be finite"));
        }
        Ok(Self {
            vocab_size,
            alpha,
            beta,
        })
    }

    /// Rebuilds a scale set of the same mode from a flat parameter vector
    /// laid out as `[alpha..., beta...]`.
    pub fn with_flat(&self, params: &[f64]) -> Result<Self> {
        let n = self.alpha.len();
        if params.len() != 2 * n {
            return Err(Error::usage(format!(
                "expected {} flat parameters, got {}",
                2 * n,
                params.len()
            )));
        }
        let (a, b) = params.split_at(n);
        let (alpha, beta) = match self.mode() {
            ScaleMode::Agnostic => (ScaleValues::Scalar(a[0]), ScaleValues::Scalar(b[0])),
            ScaleMode::Subword => (
                ScaleValues::PerUnit(a.to_vec()),
                ScaleValues::PerUnit(b.to_vec()),
            ),
        };
        Self::from_values(self.vocab_size, alpha, beta)
    }

    pub fn mode(&self) -> ScaleMode {
        match self.alpha {
            ScaleValues::Scalar(_) => ScaleMode::Agnostic,
            ScaleValues::PerUnit(_) => ScaleMode::Subword,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    #[inline]
    pub fn alpha_for(&self, w: TokenId) -> f64 {
        self.alpha.get(w)
    }

    #[inline]
    pub fn beta_for(&self, w: TokenId) -> f64 {
        self.beta.get(w)
    }

    pub fn alpha(&self) -> &ScaleValues {
        &self.alpha
    }

    pub fn beta(&self) -> &ScaleValues {
        &self.beta
    }

    pub fn mean_alpha(&self) -> f64 {
        self.alpha.mean()
    }

    pub fn mean_beta(&self) -> f64 {
        self.beta.mean()
    }

    pub fn num_params(&self) -> usize {
        2 * self.alpha.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.alpha.as_slice().to_vec();
        v.extend_from_slice(self.beta.as_slice());
        v
    }

    /// Agnostic scales copied into every unit's slot; subword scales unchanged.
    pub fn broadcast(&self) -> ScaleSet {
        match self.mode() {
            ScaleMode::Subword => self.clone(),
            ScaleMode::Agnostic => ScaleSet {
                vocab_size: self.vocab_size,
                alpha: ScaleValues::PerUnit(vec![self.alpha.get(0); self.vocab_size]),
                beta: ScaleValues::PerUnit(vec![self.beta.get(0); self.vocab_size]),
            },
        }
    }

    /// Every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<ScaleSet> {
        let flat: Vec<f64> = self.to_flat().into_iter().map(|v| v * c).collect();
        self.with_flat(&flat)
    }

    pub fn ensure_vocab(&self, k: usize) -> Result<()> {
        if self.vocab_size != k {
            return Err(Error::usage(format!(
                "scales are for vocabulary size {} but inputs have {k}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// One decoding step: the AM and LM next-token log-distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScores {
    am_logp: Vec<f64>,
    lm_logp: Vec<f64>,
}

impl StepScores {
    /// Validated constructor.
    pub fn new(am_logp: Vec<f64>, lm_logp: Vec<f64>) -> Result<Self, Violation> {
        let s = Self::from_raw(am_logp, lm_logp);
        logspace::validate_step_scores(&s)?;
        Ok(s)
    }

    /// Wraps the vectors without validation; see [`logspace::validate_step_scores`].
    pub fn from_raw(am_logp: Vec<f64>, lm_logp: Vec<f64>) -> Self {
        Self { am_logp, lm_logp }
    }

    pub fn am_logp(&self) -> &[f64] {
        &self.am_logp
    }

    pub fn lm_logp(&self) -> &[f64] {
        &self.lm_logp
    }

    pub fn vocab_size(&self) -> usize {
        self.am_logp.len()
    }
}

/// A scored hypothesis with its per-token AM and LM log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HypothesisRepr", into = "HypothesisRepr")]
pub struct Hypothesis {
    tokens: TokenSeq,
    am_logp: Vec<f64>,
    lm_logp: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HypothesisRepr {
    tokens: TokenSeq,
    am_logp: Vec<f64>,
    lm_logp: Vec<f64>,
}

impl TryFrom<HypothesisRepr> for Hypothesis {
    type Error = Error;
    fn try_from(r: HypothesisRepr) -> Result<Self> {
        Hypothesis::new(r.tokens, r.am_logp, r.lm_logp)
    }
}

impl From<Hypothesis> for HypothesisRepr {
    fn from(h: Hypothesis) -> Self {
        HypothesisRepr {
            tokens: h.tokens,
            am_logp: h.am_logp,
            lm_logp: h.lm_logp,
        }
    }
}

impl Hypothesis {
    pub fn new(tokens: TokenSeq, am_logp: Vec<f64>, lm_logp: Vec<f64>) -> Result<Self> {
        if tokens.len() != am_logp.len() || tokens.len() != lm_logp.len() {
            return Err(Error::usage(format!(
                "hypothesis lengths differ: {} tokens, {} am scores, {} lm scores",
                tokens.len(),
                am_logp.len(),
                lm_logp.len()
            )));
        }
        if let Some(v) = am_logp
            .iter()
            .chain(&lm_logp)
            .find(|v| !v.is_finite() || **v > VALIDATION_TOL)
        {
            return Err(Error::usage(format!(
                "hypothesis log-probabilities must be finite and <= 0, found {v}"
            )));
        }
        Ok(Self {
            tokens,
            am_logp,
            lm_logp,
        })
    }

    pub fn tokens(&self) -> &TokenSeq {
        &self.tokens
    }

    pub fn am_logp(&self) -> &[f64] {
        &self.am_logp
    }

    pub fn lm_logp(&self) -> &[f64] {
        &self.lm_logp
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `log p_AM(w_1^N)` as the sum of per-token scores.
    pub fn total_am(&self) -> f64 {
        self.am_logp.iter().sum()
    }

    pub fn total_lm(&self) -> f64 {
        self.lm_logp.iter().sum()
    }
}

/// Reference transcription plus scored hypotheses for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NBestRepr", into = "NBestRepr")]
pub struct NBestList {
    id: String,
    reference: TokenSeq,
    hypotheses: Vec<Hypothesis>,
}

#[derive(Serialize, Deserialize)]
struct NBestRepr {
    id: String,
    #[serde(rename = "ref")]
    reference: TokenSeq,
    hyps: Vec<Hypothesis>,
}

impl TryFrom<NBestRepr> for NBestList {
    type Error = Error;
    fn try_from(r: NBestRepr) -> Result<Self> {
        NBestList::new(r.id, r.reference, r.hyps)
    }
}

impl From<NBestList> for NBestRepr {
    fn from(n: NBestList) -> Self {
        NBestRepr {
            id: n.id,
            reference: n.reference,
            hyps: n.hypotheses,
        }
    }
}

impl NBestList {
    pub fn new(
        id: impl Into<String>,
        reference: TokenSeq,
        hypotheses: Vec<Hypothesis>,
    ) -> Result<Self> {
        let id = id.into();
        if hypotheses.is_empty() {
            return Err(Error::usage(format!(
                "n-best list {id:?} has no hypotheses"
            )));
        }
        let mut seen = HashSet::with_capacity(hypotheses.len());
        for h in &hypotheses {
            if !seen.insert(h.tokens()) {
                return Err(Error::usage(format!(
                    "n-best list {id:?} contains duplicate hypothesis {:?}",
                    h.tokens().0
                )));
            }
        }
        Ok(Self {
            id,
            reference,
            hypotheses,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn reference(&self) -> &TokenSeq {
        &self.reference
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }

    pub fn check_vocab(&self, k: usize) -> Result<()> {
        self.reference.check_vocab(k)?;
        self.hypotheses
            .iter()
            .try_for_each(|h| h.tokens().check_vocab(k))
    }

    /// Same id and reference with hypotheses in a new order.
    pub(crate) fn with_order(&self, order: &[usize]) -> NBestList {
        NBestList {
            id: self.id.clone(),
            reference: self.reference.clone(),
            hypotheses: order.iter().map(|&i| self.hypotheses[i].clone()).collect(),
        }
    }
}

/// Partial derivatives of an objective w.r.t. the scales, and optionally
/// w.r.t. toy-AM logits (flattened row-major).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientVector {
    pub d_alpha: ScaleValues,
    pub d_beta: ScaleValues,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_toy_am: Option<Vec<f64>>,
}

impl GradientVector {
    pub fn zeros_like(scales: &ScaleSet) -> Self {
        Self {
            d_alpha: scales.alpha.zeros_like(),
            d_beta: scales.beta.zeros_like(),
            d_toy_am: None,
        }
    }

    /// Scale-gradient entries laid out like [`ScaleSet::to_flat`].
    pub fn scales_flat(&self) -> Vec<f64> {
        let mut v = self.d_alpha.as_slice().to_vec();
        v.extend_from_slice(self.d_beta.as_slice());
        v
    }

    pub fn from_flat(scales: &ScaleSet, flat: &[f64]) -> Self {
        let n = scales.alpha.len();
        let mut g = Self::zeros_like(scales);
        g.d_alpha.as_mut_slice().copy_from_slice(&flat[..n]);
        g.d_beta.as_mut_slice().copy_from_slice(&flat[n..2 * n]);
        g
    }

    pub fn is_finite(&self) -> bool {
        self.d_alpha
            .as_slice()
            .iter()
            .chain(self.d_beta.as_slice())
            .chain(self.d_toy_am.iter().flatten())
            .all(|v| v.is_finite())
    }

    /// `self += weight * other` on the scale entries.
    pub fn add_scaled(&mut self, other: &GradientVector, weight: f64) {
        for (a, b) in self
            .d_alpha
            .as_mut_slice()
            .iter_mut()
            .zip(other.d_alpha.as_slice())
        {
            *a += weight * b;
        }
        for (a, b) in self
            .d_beta
            .as_mut_slice()
            .iter_mut()
            .zip(other.d_beta.as_slice())
        {
            *a += weight * b;
        }
    }
}
