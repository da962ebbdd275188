use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::WerStats;
use crate::pipeline::rescored_wer;
use crate::types::{NBestList, ScaleSet, TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub beta: f64,
    pub wer: WerStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub alpha: f64,
    pub best_beta: f64,
    pub best_wer: WerStats,
    /// One row per grid value, in the order given.
    pub table: Vec<GridPoint>,
}

impl GridSearchResult {
    pub fn scales(&self, vocab_size: usize) -> Result<ScaleSet> {
        ScaleSet::agnostic(vocab_size, self.alpha, self.best_beta)
    }
}

/// `lo, lo + step, ...` up to `hi` inclusive. Each value is `lo + i * step`
/// rounded to 12 decimals, so `0.05 * 14` comes out as `0.7`.
pub fn beta_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::usage(format!(
            "invalid grid [{lo}, {hi}] with step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// Rescores the n-best lists with `alpha = 1` and every `beta` in `grid`,
/// returning the `beta` with the fewest errors. Ties go to the smaller `beta`.
pub fn grid_search_scales(
    nbests: &[NBestList],
    vocab_size: usize,
    grid: &[f64],
    eos: Option<TokenId>,
    detok: Option<&Vocabulary>,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::usage("beta grid is empty"));
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, WerStats)> = None;
    for &beta in grid {
        let wer = rescored_wer(
            nbests,
            &ScaleSet::agnostic(vocab_size, 1.0, beta)?,
            eos,
            detok,
        )?;
        let better = match &best {
            None => true,
            Some((b, w)) => wer.errors < w.errors || (wer.errors == w.errors && beta < *b),
        };
        if better {
            best = Some((beta, wer));
        }
        table.push(GridPoint { beta, wer });
    }
    let (best_beta, best_wer) = best.expect("grid is nonempty");
    Ok(GridSearchResult {
        alpha: 1.0,
        best_beta,
        best_wer,
        table,
    })
}
