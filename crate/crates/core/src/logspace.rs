//! Numerically stable log-space primitives.
//!
//! Every probability in this crate lives in natural-log space. Products of
//! per-token probabilities become sums and normalizers become `log_sum_exp`
//! calls with max subtraction, so nothing underflows for sequences of
//! realistic length.

use std::fmt;

use crate::error::{Error, Result};
use crate::types::StepScores;

/// Tolerance used when validating inputs that claim to be log-distributions.
pub const VALIDATION_TOL: f64 = 1e-9;

/// Tolerance for normalization of quantities this crate derives itself.
pub const DERIVED_TOL: f64 = 1e-8;

/// `log Σ exp(v)`, computed with max subtraction.
///
/// Returns exactly `-inf` only if every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::usage("log_sum_exp of an empty vector"));
    }
    Ok(lse(values))
}

/// Unchecked variant for hot paths; `values` must be nonempty.
pub(crate) fn lse(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-softmax: `v - log_sum_exp(v)`. Returns `None` when every entry is `-inf`.
pub fn log_softmax(values: &[f64]) -> Option<Vec<f64>> {
    if values.is_empty() {
        return None;
    }
    let norm = lse(values);
    if !norm.is_finite() {
        return None;
    }
    Some(values.iter().map(|&v| v - norm).collect())
}

/// Softmax in linear space. Returns `None` when every entry is `-inf`.
pub fn softmax(values: &[f64]) -> Option<Vec<f64>> {
    log_softmax(values).map(|v| v.into_iter().map(f64::exp).collect())
}

/// Streaming log-sum-exp accumulator for enumerations too large to buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSumAcc {
    max: f64,
    scaled_sum: f64,
}

impl LogSumAcc {
    pub(crate) fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled_sum: 0.0,
        }
    }

    pub(crate) fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.scaled_sum = self.scaled_sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.scaled_sum += (v - self.max).exp();
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled_sum.ln()
        }
    }
}

/// Which half of a [`StepScores`] a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSide {
    Am,
    Lm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    /// NaN or +inf at the given index.
    NonFinite {
        index: usize,
    },
    /// An entry above zero (beyond tolerance).
    Positive {
        index: usize,
        value: f64,
    },
    /// `log_sum_exp` differs from zero by more than the tolerance.
    NotNormalized {
        log_mass: f64,
    },
    Empty,
    LengthMismatch {
        am: usize,
        lm: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub side: Option<ScoreSide>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = match self.side {
            Some(ScoreSide::Am) => "am_logp: ",
            Some(ScoreSide::Lm) => "lm_logp: ",
            None => "",
        };
        match &self.kind {
            ViolationKind::NonFinite { index } => write!(f, "{side}non-finite entry at {index}"),
            ViolationKind::Positive { index, value } => {
                write!(f, "{side}positive log-probability {value} at {index}")
            }
            ViolationKind::NotNormalized { log_mass } => {
                write!(f, "{side}not normalized (logsumexp = {log_mass})")
            }
            ViolationKind::Empty => write!(f, "{side}empty distribution"),
            ViolationKind::LengthMismatch { am, lm } => {
                write!(f, "length mismatch: am has {am} entries, lm has {lm}")
            }
        }
    }
}

impl std::error::Error for Violation {}

/// Checks that `logp` is a log-distribution: no NaN or +inf, no entry above
/// `tol`, and `log_sum_exp` within `tol` of zero. `-inf` entries are allowed.
pub fn validate_log_distribution(logp: &[f64], tol: f64) -> Result<(), ViolationKind> {
    if logp.is_empty() {
        return Err(ViolationKind::Empty);
    }
    for (index, &v) in logp.iter().enumerate() {
        if v.is_nan() || v == f64::INFINITY {
            return Err(ViolationKind::NonFinite { index });
        }
    }
    for (index, &v) in logp.iter().enumerate() {
        if v > tol {
            return Err(ViolationKind::Positive { index, value: v });
        }
    }
    let log_mass = lse(logp);
    if !(log_mass.abs() <= tol) {
        return Err(ViolationKind::NotNormalized { log_mass });
    }
    Ok(())
}

/// Accepts iff both halves of `step` are log-distributions of equal length
/// within [`VALIDATION_TOL`].
pub fn validate_step_scores(step: &StepScores) -> Result<(), Violation> {
    let (am, lm) = (step.am_logp(), step.lm_logp());
    if am.len() != lm.len() {
        return Err(Violation {
            side: None,
            kind: ViolationKind::LengthMismatch {
                am: am.len(),
                lm: lm.len(),
            },
        });
    }
    validate_log_distribution(am, VALIDATION_TOL).map_err(|kind| Violation {
        side: Some(ScoreSide::Am),
        kind,
    })?;
    validate_log_distribution(lm, VALIDATION_TOL).map_err(|kind| Violation {
        side: Some(ScoreSide::Lm),
        kind,
    })
}
