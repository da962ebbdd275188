//! Randomized comparison of analytic gradients against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::logspace::log_softmax;
use crate::metrics::ErrorMeasure;
use crate::objectives::{
    ce_objective, finite_difference_gradient, minwer_objective, relative_error, CETrainingItem,
};
use crate::train::Criterion;
use crate::types::{Hypothesis, NBestList, ScaleMode, ScaleSet, StepScores};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-5;

/// Instances whose analytic gradient norm falls below this are redrawn:
/// there the relative error measures only finite-difference rounding noise.
pub const MIN_GRADIENT_NORM: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub criterion: Criterion,
    pub mode: ScaleMode,
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
    pub tolerance: f64,
    /// Instances redrawn because their gradient was numerically zero.
    pub redrawn: usize,
    pub passed: bool,
}

fn random_row(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
    log_softmax(&logits).expect("finite logits")
}

fn random_scales(rng: &mut ChaCha8Rng, k: usize, mode: ScaleMode) -> Result<ScaleSet> {
    match mode {
        ScaleMode::Agnostic => {
            ScaleSet::agnostic(k, rng.random_range(0.2..2.0), rng.random_range(0.2..2.0))
        }
        ScaleMode::Subword => ScaleSet::subword(
            (0..k).map(|_| rng.random_range(0.2..2.0)).collect(),
            (0..k).map(|_| rng.random_range(0.2..2.0)).collect(),
        ),
    }
}

/// A random teacher-forced item with `k` in 2..=6 and length 1..=5.
pub fn random_ce_item(rng: &mut ChaCha8Rng) -> Result<CETrainingItem> {
    let k = rng.random_range(2..=6);
    let n = rng.random_range(1..=5);
    let steps = (0..n)
        .map(|_| StepScores::from_raw(random_row(rng, k), random_row(rng, k)))
        .collect();
    let target: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
    CETrainingItem::new(target.into(), steps)
}

/// A random n-best list over `k` units with 2..=6 distinct hypotheses.
pub fn random_nbest(rng: &mut ChaCha8Rng, k: usize) -> Result<NBestList> {
    let size = rng.random_range(2..=6);
    let mut hyps: Vec<Hypothesis> = Vec::with_capacity(size);
    while hyps.len() < size {
        let len = rng.random_range(1..=6);
        let tokens: Vec<u32> = (0..len).map(|_| rng.random_range(0..k as u32)).collect();
        if hyps.iter().any(|h| h.tokens().0 == tokens) {
            continue;
        }
        let am = (0..len)
            .map(|_| rng.random_range(0.01f64..1.0).ln())
            .collect();
        let lm = (0..len)
            .map(|_| rng.random_range(0.01f64..1.0).ln())
            .collect();
        hyps.push(Hypothesis::new(tokens.into(), am, lm)?);
    }
    let reference: Vec<u32> = (0..rng.random_range(1..=6))
        .map(|_| rng.random_range(0..k as u32))
        .collect();
    NBestList::new("gradcheck", reference.into(), hyps)
}

/// Relative error between analytic and finite-difference gradients for one
/// random instance, or `None` if the analytic gradient is numerically zero.
fn trial(
    rng: &mut ChaCha8Rng,
    criterion: Criterion,
    mode: ScaleMode,
    h: f64,
) -> Result<Option<f64>> {
    let (analytic, fd) = match criterion {
        Criterion::Ce => {
            let item = random_ce_item(rng)?;
            let sc = random_scales(rng, item.steps()[0].vocab_size(), mode)?;
            let a = ce_objective(&item, &sc)?.gradient;
            let f = finite_difference_gradient(|s| Ok(ce_objective(&item, s)?.loss), &sc, h)?;
            (a, f)
        }
        Criterion::MinWer => {
            let k = rng.random_range(2..=6);
            let nb = random_nbest(rng, k)?;
            let sc = random_scales(rng, k, mode)?;
            let m = ErrorMeasure::tokens();
            let a = minwer_objective(&nb, &sc, &m)?.gradient;
            let f = finite_difference_gradient(|s| Ok(minwer_objective(&nb, s, &m)?.loss), &sc, h)?;
            (a, f)
        }
    };
    let a = analytic.scales_flat();
    if a.iter().map(|g| g * g).sum::<f64>().sqrt() < MIN_GRADIENT_NORM {
        return Ok(None);
    }
    Ok(Some(relative_error(&a, &fd.scales_flat())))
}

pub fn grad_check(
    criterion: Criterion,
    mode: ScaleMode,
    trials: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut redrawn = 0;
    let mut done = 0;
    while done < trials {
        match trial(&mut rng, criterion, mode, GRADCHECK_STEP)? {
            Some(e) => {
                max = max.max(e);
                sum += e;
                done += 1;
            }
            None => redrawn += 1,
        }
    }
    Ok(GradCheckReport {
        criterion,
        mode,
        trials,
        seed,
        step: GRADCHECK_STEP,
        max_relative_error: max,
        mean_relative_error: if trials == 0 {
            0.0
        } else {
            sum / trials as f64
        },
        tolerance: GRADCHECK_TOL,
        redrawn,
        passed: max < GRADCHECK_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_pass() {
        for c in [Criterion::Ce, Criterion::MinWer] {
            for m in [ScaleMode::Agnostic, ScaleMode::Subword] {
                let r = grad_check(c, m, 10, 1).unwrap();
                assert!(r.passed, "{r:?}");
            }
        }
    }

    #[test]
    fn reproducible() {
        let a = grad_check(Criterion::MinWer, ScaleMode::Subword, 5, 3).unwrap();
        let b = grad_check(Criterion::MinWer, ScaleMode::Subword, 5, 3).unwrap();
        assert_eq!(a, b);
    }
}
