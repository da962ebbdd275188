use super::ScoreSource;
use crate::error::{Error, Result};
use crate::logspace::{log_softmax, validate_log_distribution, VALIDATION_TOL};
use crate::types::TokenId;

/// Lowest logit used when a trainable AM is initialized from a row holding
/// `-inf` (zero probability).
pub const LOGIT_FLOOR: f64 = -1e4;

/// Per-utterance acoustic scores: row `n` is the log-distribution for output
/// position `n`, independent of the history.
///
/// Positions past the last row reuse the last row.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionwiseToyAM {
    rows: Vec<Vec<f64>>,
}

impl PositionwiseToyAM {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::usage("toy AM needs at least one row"))?;
        for (n, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::usage(format!(
                    "toy AM row {n} has {} entries, expected {k}",
                    row.len()
                )));
            }
            validate_log_distribution(row, VALIDATION_TOL)
                .map_err(|v| Error::usage(format!("toy AM row {n}: {v:?}")))?;
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, position: usize) -> &[f64] {
        &self.rows[position.min(self.rows.len() - 1)]
    }
}

impl ScoreSource for PositionwiseToyAM {
    fn vocab_size(&self) -> usize {
        self.rows[0].len()
    }

    fn log_probs(&self, history: &[TokenId]) -> Vec<f64> {
        self.row(history.len()).to_vec()
    }
}

/// Toy AM with free logits; each row is read through log-softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableToyAM {
    vocab_size: usize,
    logits: Vec<f64>,
}

impl TrainableToyAM {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::usage("toy AM needs at least one row"))?;
        if k < 2 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::usage("toy AM rows must share a length >= 2"));
        }
        let logits: Vec<f64> = rows.into_iter().flatten().collect();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("toy AM logits must be finite"));
        }
        Ok(Self {
            vocab_size: k,
            logits,
        })
    }

    /// Logits equal to the given log-probabilities, `-inf` floored at [`LOGIT_FLOOR`].
    pub fn from_positionwise(am: &PositionwiseToyAM) -> Self {
        let rows = am
            .rows()
            .iter()
            .map(|r| r.iter().map(|&v| v.max(LOGIT_FLOOR)).collect())
            .collect();
        Self::new(rows).expect("validated rows are finite after flooring")
    }

    pub fn num_rows(&self) -> usize {
        self.logits.len() / self.vocab_size
    }

    /// Flat row-major logits, the trainable parameters.
    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn logits_row(&self, position: usize) -> &[f64] {
        let n = position.min(self.num_rows() - 1);
        &self.logits[n * self.vocab_size..(n + 1) * self.vocab_size]
    }

    pub fn row_log_probs(&self, position: usize) -> Vec<f64> {
        log_softmax(self.logits_row(position)).expect("finite logits")
    }

    pub fn to_positionwise(&self) -> PositionwiseToyAM {
        let rows = (0..self.num_rows())
            .map(|n| self.row_log_probs(n))
            .collect();
        PositionwiseToyAM { rows }
    }
}

impl ScoreSource for TrainableToyAM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn log_probs(&self, history: &[TokenId]) -> Vec<f64> {
        self.row_log_probs(history.len())
    }
}
