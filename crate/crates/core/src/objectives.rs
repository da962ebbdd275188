//! Training criteria for the scales, with analytic gradients and a
//! central-difference oracle.
//!
//! Cross entropy uses the token-level renormalization:
//! `loss = -sum_n log p-hat_n(w_n)` with
//! `d loss / d alpha_v = -sum_n [delta(w_n = v) - p-hat_n(v)] * am_n(v)`.
//!
//! Minimum WER uses the sentence-level posterior `q` renormalized over an
//! n-best list and minimizes the expected error `sum_h q(h) E(h)`, with
//! `d loss / d theta = sum_h q(h) (E(h) - loss) d score(h) / d theta`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::{nbest_posterior, token_posterior_raw};
use crate::logspace::{log_softmax, validate_log_distribution, VALIDATION_TOL};
use crate::metrics::ErrorMeasure;
use crate::providers::TrainableToyAM;
use crate::types::{GradientVector, NBestList, ScaleMode, ScaleSet, StepScores, TokenId, TokenSeq};

/// A target sequence with the teacher-forced model distributions along it.
#[derive(Debug, Clone, PartialEq)]
pub struct CETrainingItem {
    target: TokenSeq,
    steps: Vec<StepScores>,
}

impl CETrainingItem {
    pub fn new(target: TokenSeq, steps: Vec<StepScores>) -> Result<Self> {
        if target.len() != steps.len() {
            return Err(Error::usage(format!(
                "target has {} tokens but {} steps were given",
                target.len(),
                steps.len()
            )));
        }
        for (n, s) in steps.iter().enumerate() {
            crate::logspace::validate_step_scores(s)
                .map_err(|v| Error::usage(format!("step {n}: {v}")))?;
            target.check_vocab(s.vocab_size())?;
        }
        Ok(Self { target, steps })
    }

    pub fn target(&self) -> &TokenSeq {
        &self.target
    }

    pub fn steps(&self) -> &[StepScores] {
        &self.steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub gradient: GradientVector,
}

/// Accumulates `weight * logp` into a per-unit or shared gradient slot. A
/// nonzero weight on a zero-probability score means the derivative is unbounded.
#[inline]
fn accumulate(grad: &mut [f64], mode: ScaleMode, v: usize, weight: f64, logp: f64) -> Result<()> {
    if weight == 0.0 {
        return Ok(());
    }
    if logp == f64::NEG_INFINITY {
        return Err(Error::DegenerateInput(format!(
            "gradient w.r.t. the scale of token {v} is unbounded (zero-probability token with zero scale)"
        )));
    }
    let term = weight * logp;
    match mode {
        ScaleMode::Agnostic => grad[0] += term,
        ScaleMode::Subword => grad[v] += term,
    }
    Ok(())
}

/// CE loss and scale gradient, plus `d loss / d am_logp` for every step.
fn ce_core(
    target: &[TokenId],
    am_rows: &[&[f64]],
    lm_rows: &[&[f64]],
    scales: &ScaleSet,
) -> Result<(ObjectiveValue, Vec<Vec<f64>>)> {
    let mode = scales.mode();
    let mut g = GradientVector::zeros_like(scales);
    let mut d_am = Vec::with_capacity(target.len());
    let mut loss = 0.0;
    for (n, &w) in target.iter().enumerate() {
        let (am, lm) = (am_rows[n], lm_rows[n]);
        let post = token_posterior_raw(am, lm, scales)?;
        let lp_target = post[w as usize];
        if lp_target == f64::NEG_INFINITY {
            return Err(Error::InfiniteLoss {
                position: n,
                token: w,
            });
        }
        loss -= lp_target;
        let mut d_row = vec![0.0; am.len()];
        for v in 0..am.len() {
            let p = post[v].exp();
            // d loss / d z_v
            let dz = p - f64::from(u8::from(v == w as usize));
            if dz == 0.0 {
                continue;
            }
            let tok = v as TokenId;
            accumulate(g.d_alpha.as_mut_slice(), mode, v, dz, am[v])?;
            accumulate(g.d_beta.as_mut_slice(), mode, v, dz, lm[v])?;
            d_row[v] = dz * scales.alpha_for(tok);
        }
        d_am.push(d_row);
    }
    Ok((ObjectiveValue { loss, gradient: g }, d_am))
}

/// Cross-entropy loss `-log p-hat(target)` under token-level renormalization.
pub fn ce_objective(item: &CETrainingItem, scales: &ScaleSet) -> Result<ObjectiveValue> {
    let am: Vec<&[f64]> = item.steps.iter().map(StepScores::am_logp).collect();
    let lm: Vec<&[f64]> = item.steps.iter().map(StepScores::lm_logp).collect();
    Ok(ce_core(&item.target, &am, &lm, scales)?.0)
}

/// CE for a trainable toy AM: `d_toy_am` holds the gradient w.r.t. every
/// logit (row-major, rows past the target are zero), chained through the
/// log-softmax that maps logits to AM log-probabilities.
pub fn ce_objective_toy_am(
    am: &TrainableToyAM,
    lm_rows: &[Vec<f64>],
    target: &[TokenId],
    scales: &ScaleSet,
) -> Result<ObjectiveValue> {
    if lm_rows.len() != target.len() {
        return Err(Error::usage("one LM row per target position is required"));
    }
    if target.len() > am.num_rows() {
        return Err(Error::usage(format!(
            "target of length {} exceeds the {} AM rows",
            target.len(),
            am.num_rows()
        )));
    }
    let am_rows: Vec<Vec<f64>> = (0..target.len()).map(|n| am.row_log_probs(n)).collect();
    let am_refs: Vec<&[f64]> = am_rows.iter().map(Vec::as_slice).collect();
    let lm_refs: Vec<&[f64]> = lm_rows.iter().map(Vec::as_slice).collect();
    let (mut value, d_am) = ce_core(target, &am_refs, &lm_refs, scales)?;

    let k = scales.vocab_size();
    let mut d_logits = vec![0.0; am.params().len()];
    for (n, g) in d_am.iter().enumerate() {
        // d logp_v / d logit_u = delta_uv - softmax_u
        let total: f64 = g.iter().sum();
        let out = &mut d_logits[n * k..(n + 1) * k];
        for u in 0..k {
            out[u] = g[u] - am_rows[n][u].exp() * total;
        }
    }
    value.gradient.d_toy_am = Some(d_logits);
    Ok(value)
}

/// Expected error under the n-best posterior, for precomputed per-hypothesis
/// errors `errors[h] = E(h, reference)`.
pub fn minwer_objective_with_errors(
    nbest: &NBestList,
    errors: &[f64],
    scales: &ScaleSet,
) -> Result<ObjectiveValue> {
    if errors.len() != nbest.len() {
        return Err(Error::usage(format!(
            "{} errors for {} hypotheses",
            errors.len(),
            nbest.len()
        )));
    }
    let q = nbest_posterior(nbest, scales);
    let loss: f64 = q.iter().zip(errors).map(|(p, e)| p * e).sum();
    let mode = scales.mode();
    let mut g = GradientVector::zeros_like(scales);
    for ((h, &p), &e) in nbest.hypotheses().iter().zip(&q).zip(errors) {
        let weight = p * (e - loss);
        if weight == 0.0 {
            continue;
        }
        for (i, &w) in h.tokens().iter().enumerate() {
            accumulate(
                g.d_alpha.as_mut_slice(),
                mode,
                w as usize,
                weight,
                h.am_logp()[i],
            )?;
            accumulate(
                g.d_beta.as_mut_slice(),
                mode,
                w as usize,
                weight,
                h.lm_logp()[i],
            )?;
        }
    }
    Ok(ObjectiveValue { loss, gradient: g })
}

/// Per-hypothesis errors of an n-best list against its reference.
pub fn hypothesis_errors(nbest: &NBestList, measure: &ErrorMeasure<'_>) -> Result<Vec<f64>> {
    nbest
        .hypotheses()
        .iter()
        .map(|h| measure.error(h.tokens(), nbest.reference()))
        .collect()
}

/// Minimum-WER loss `sum_h q(h) E(h)`, the negative of the expected accuracy.
pub fn minwer_objective(
    nbest: &NBestList,
    scales: &ScaleSet,
    measure: &ErrorMeasure<'_>,
) -> Result<ObjectiveValue> {
    let errors = hypothesis_errors(nbest, measure)?;
    minwer_objective_with_errors(nbest, &errors, scales)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate. Coordinates where either evaluation is non-finite are reported.
pub fn central_differences<F>(f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::usage(format!("step size must be > 0, got {h}")));
    }
    let mut x = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    let mut bad = Vec::new();
    for i in 0..theta.len() {
        x[i] = theta[i] + h;
        let up = f(&x);
        x[i] = theta[i] - h;
        let down = f(&x);
        x[i] = theta[i];
        if !(up.is_finite() && down.is_finite()) {
            bad.push(i);
        }
        out.push((up - down) / (2.0 * h));
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(Error::NonFiniteDifference(bad))
    }
}

/// Central-difference gradient of `objective` w.r.t. every scale entry.
pub fn finite_difference_gradient<F>(
    objective: F,
    scales: &ScaleSet,
    h: f64,
) -> Result<GradientVector>
where
    F: Fn(&ScaleSet) -> Result<f64>,
{
    let flat = central_differences(
        |x| {
            scales
                .with_flat(x)
                .and_then(|s| objective(&s))
                .unwrap_or(f64::NAN)
        },
        &scales.to_flat(),
        h,
    )?;
    Ok(GradientVector::from_flat(scales, &flat))
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vectors are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Teacher-forced CE item for `target` from per-position AM rows and an LM.
pub fn teacher_forced_item<L>(
    am_rows: &[Vec<f64>],
    lm: &L,
    target: &TokenSeq,
) -> Result<CETrainingItem>
where
    L: crate::providers::ScoreSource + ?Sized,
{
    if am_rows.len() < target.len() {
        return Err(Error::usage("fewer AM rows than target positions"));
    }
    let steps = (0..target.len())
        .map(|n| {
            let lm_row = lm.log_probs(&target[..n]);
            validate_log_distribution(&lm_row, VALIDATION_TOL)
                .map_err(|v| Error::usage(format!("LM row {n}: {v:?}")))?;
            Ok(StepScores::from_raw(am_rows[n].clone(), lm_row))
        })
        .collect::<Result<Vec<_>>>()?;
    CETrainingItem::new(target.clone(), steps)
}

/// Log-softmax of each logit row, exposed for callers assembling items by hand.
pub fn rows_from_logits(rows: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    rows.iter().map(|r| log_softmax(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::token_posterior;
    use crate::types::Hypothesis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ln(v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| x.ln()).collect()
    }

    fn random_row(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        log_softmax(&logits).unwrap()
    }

    fn random_item(rng: &mut ChaCha8Rng, k: usize, n: usize) -> CETrainingItem {
        let steps = (0..n)
            .map(|_| StepScores::new(random_row(rng, k), random_row(rng, k)).unwrap())
            .collect();
        let target: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        CETrainingItem::new(target.into(), steps).unwrap()
    }

    fn random_scales(rng: &mut ChaCha8Rng, k: usize, mode: ScaleMode) -> ScaleSet {
        match mode {
            ScaleMode::Agnostic => {
                ScaleSet::agnostic(k, rng.random_range(0.3..2.0), rng.random_range(0.3..2.0))
                    .unwrap()
            }
            ScaleMode::Subword => ScaleSet::subword(
                (0..k).map(|_| rng.random_range(0.3..2.0)).collect(),
                (0..k).map(|_| rng.random_range(0.3..2.0)).collect(),
            )
            .unwrap(),
        }
    }

    #[test]
    fn ce_perfect_model() {
        let one_hot = |w: usize| {
            (0..3)
                .map(|v| if v == w { 0.0 } else { f64::NEG_INFINITY })
                .collect::<Vec<_>>()
        };
        let steps = vec![
            StepScores::new(one_hot(2), ln(&[0.2, 0.3, 0.5])).unwrap(),
            StepScores::new(one_hot(0), ln(&[0.6, 0.3, 0.1])).unwrap(),
        ];
        let item = CETrainingItem::new(vec![2, 0].into(), steps).unwrap();
        let sc = ScaleSet::agnostic(3, 1.0, 0.0).unwrap();
        let v = ce_objective(&item, &sc).unwrap();
        assert_eq!(v.loss, 0.0);
        assert_eq!(v.gradient.d_alpha, crate::types::ScaleValues::Scalar(0.0));
    }

    #[test]
    fn ce_uniform_models() {
        let k = 5;
        let u = vec![(1.0 / k as f64).ln(); k];
        let steps = vec![StepScores::new(u.clone(), u.clone()).unwrap(); 3];
        let item = CETrainingItem::new(vec![1, 4, 0].into(), steps).unwrap();
        for sc in [
            ScaleSet::agnostic(k, 1.3, 0.4).unwrap(),
            ScaleSet::agnostic(k, 0.0, 2.0).unwrap(),
        ] {
            let v = ce_objective(&item, &sc).unwrap();
            assert!((v.loss - 3.0 * (k as f64).ln()).abs() < 1e-12);
            assert!(v.gradient.scales_flat().iter().all(|g| g.abs() < 1e-12));
        }
    }

    #[test]
    fn ce_infinite_loss() {
        let steps = vec![StepScores::new(vec![0.0, f64::NEG_INFINITY], ln(&[0.5, 0.5])).unwrap()];
        let item = CETrainingItem::new(vec![1].into(), steps).unwrap();
        let sc = ScaleSet::agnostic(2, 1.0, 1.0).unwrap();
        assert!(matches!(
            ce_objective(&item, &sc),
            Err(Error::InfiniteLoss {
                position: 0,
                token: 1
            })
        ));
    }

    #[test]
    fn ce_matches_token_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for mode in [ScaleMode::Agnostic, ScaleMode::Subword] {
            let item = random_item(&mut rng, 6, 5);
            let sc = random_scales(&mut rng, 6, mode);
            let loss = ce_objective(&item, &sc).unwrap().loss;
            let direct: f64 = item
                .steps()
                .iter()
                .zip(item.target().iter())
                .map(|(s, &w)| -token_posterior(s, &sc).unwrap()[w as usize])
                .sum();
            assert!((loss - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for mode in [ScaleMode::Agnostic, ScaleMode::Subword] {
            let item = random_item(&mut rng, 3, 2);
            let sc = random_scales(&mut rng, 3, mode);
            let analytic = ce_objective(&item, &sc).unwrap().gradient;
            let fd = finite_difference_gradient(|s| Ok(ce_objective(&item, s)?.loss), &sc, 1e-5)
                .unwrap();
            let err = relative_error(&analytic.scales_flat(), &fd.scales_flat());
            assert!(err < 1e-6, "{mode:?}: {err}");
        }
    }

    fn random_nbest(rng: &mut ChaCha8Rng, k: usize, n: usize) -> NBestList {
        let mut hyps: Vec<Hypothesis> = Vec::new();
        while hyps.len() < n {
            let len = rng.random_range(1..6);
            let tokens: Vec<u32> = (0..len).map(|_| rng.random_range(0..k as u32)).collect();
            if hyps.iter().any(|h| h.tokens().0 == tokens) {
                continue;
            }
            let am = (0..len)
                .map(|_| rng.random_range(0.02f64..1.0).ln())
                .collect();
            let lm = (0..len)
                .map(|_| rng.random_range(0.02f64..1.0).ln())
                .collect();
            hyps.push(Hypothesis::new(tokens.into(), am, lm).unwrap());
        }
        let reference: Vec<u32> = (0..rng.random_range(1..6))
            .map(|_| rng.random_range(0..k as u32))
            .collect();
        NBestList::new("u", reference.into(), hyps).unwrap()
    }

    #[test]
    fn minwer_singleton() {
        let h = Hypothesis::new(vec![1, 2].into(), vec![-0.5, -0.7], vec![-1.0, -2.0]).unwrap();
        let nb = NBestList::new("u", vec![1, 3, 3].into(), vec![h]).unwrap();
        let sc = ScaleSet::subword(vec![1.0; 4], vec![0.5; 4]).unwrap();
        let v = minwer_objective(&nb, &sc, &ErrorMeasure::tokens()).unwrap();
        assert_eq!(v.loss, 2.0);
        assert!(v.gradient.scales_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn minwer_equal_scores() {
        let a = Hypothesis::new(vec![1, 2].into(), vec![-1.0, -1.0], vec![-1.0, -1.0]).unwrap();
        let b = Hypothesis::new(vec![2, 2].into(), vec![-1.0, -1.0], vec![-1.0, -1.0]).unwrap();
        let nb = NBestList::new("u", vec![1, 2].into(), vec![a, b]).unwrap();
        let v = minwer_objective_with_errors(
            &nb,
            &[0.0, 2.0],
            &ScaleSet::agnostic(3, 1.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!((v.loss - 1.0).abs() < 1e-15);
    }

    #[test]
    fn minwer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [ScaleMode::Subword, ScaleMode::Agnostic] {
            let nb = random_nbest(&mut rng, 5, 4);
            let sc = random_scales(&mut rng, 5, mode);
            let m = ErrorMeasure::tokens();
            let analytic = minwer_objective(&nb, &sc, &m).unwrap().gradient;
            let fd =
                finite_difference_gradient(|s| Ok(minwer_objective(&nb, s, &m)?.loss), &sc, 1e-5)
                    .unwrap();
            let err = relative_error(&analytic.scales_flat(), &fd.scales_flat());
            assert!(err < 1e-6, "{mode:?}: {err}");
        }
    }

    #[test]
    fn minwer_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let nb = random_nbest(&mut rng, 4, 6);
        let sc = ScaleSet::agnostic(4, 1.0, 0.8).unwrap();
        let errors = hypothesis_errors(&nb, &ErrorMeasure::tokens()).unwrap();
        let base = minwer_objective_with_errors(&nb, &errors, &sc)
            .unwrap()
            .loss;
        // appending the same extra token with identical scores to every
        // hypothesis adds one constant to every sequence score
        let shifted: Vec<Hypothesis> = nb
            .hypotheses()
            .iter()
            .map(|h| {
                let mut t = h.tokens().0.clone();
                t.push(3);
                let mut a = h.am_logp().to_vec();
                a.push(-2.5);
                let mut l = h.lm_logp().to_vec();
                l.push(-0.3);
                Hypothesis::new(t.into(), a, l).unwrap()
            })
            .collect();
        let nb2 = NBestList::new("u", nb.reference().clone(), shifted).unwrap();
        let v = minwer_objective_with_errors(&nb2, &errors, &sc)
            .unwrap()
            .loss;
        assert!((v - base).abs() < 1e-9);
    }

    #[test]
    fn minwer_depends_on_joint_scaling() {
        // scores under (1, 1): A -1.5, B -2.0; scaling both scales by c
        // sharpens or flattens the posterior while keeping the ranking
        let a = Hypothesis::new(vec![1].into(), vec![-1.0], vec![-0.5]).unwrap();
        let b = Hypothesis::new(vec![2].into(), vec![-0.5], vec![-1.5]).unwrap();
        let nb = NBestList::new("u", vec![2].into(), vec![a, b]).unwrap();
        let sc = ScaleSet::agnostic(3, 1.0, 1.0).unwrap();
        let m = ErrorMeasure::tokens();
        let base = minwer_objective(&nb, &sc, &m).unwrap().loss;
        // q(A) = 1 / (1 + e^-0.5)
        assert!((base - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-12);
        for c in [0.1, 2.0, 10.0] {
            let v = minwer_objective(&nb, &sc.scaled(c).unwrap(), &m)
                .unwrap()
                .loss;
            assert!((v - base).abs() > 1e-3, "c = {c}");
        }
    }

    #[test]
    fn toy_am_logit_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k = 4;
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let am = TrainableToyAM::new(rows).unwrap();
        let target = [1u32, 3, 0];
        let lm_rows: Vec<Vec<f64>> = (0..3).map(|_| random_row(&mut rng, k)).collect();
        let sc = random_scales(&mut rng, k, ScaleMode::Subword);
        let v = ce_objective_toy_am(&am, &lm_rows, &target, &sc).unwrap();
        let analytic = v.gradient.d_toy_am.clone().unwrap();
        let fd = central_differences(
            |x| {
                let mut m = am.clone();
                m.params_mut().copy_from_slice(x);
                ce_objective_toy_am(&m, &lm_rows, &target, &sc)
                    .unwrap()
                    .loss
            },
            am.params(),
            1e-5,
        )
        .unwrap();
        assert!(relative_error(&analytic, &fd) < 1e-6);
        // the unused last row receives no gradient
        assert!(analytic[3 * k..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn finite_difference_basics() {
        let sc = ScaleSet::agnostic(2, 1.0, -0.5).unwrap();
        let g = finite_difference_gradient(|_| Ok(4.2), &sc, 1e-3).unwrap();
        assert_eq!(g.scales_flat(), vec![0.0, 0.0]);
        for h in [1e-1, 1e-3, 0.5] {
            let g = central_differences(|x| x[0] * x[0], &[1.0], h).unwrap();
            assert!((g[0] - 2.0).abs() < 1e-9);
        }
        let err = central_differences(
            |x| if x[0] > 1.0 { f64::INFINITY } else { 0.0 },
            &[1.0, 2.0],
            0.1,
        );
        assert!(matches!(err, Err(Error::NonFiniteDifference(c)) if c == vec![0]));
        assert!(central_differences(|_| 0.0, &[1.0], 0.0).is_err());
    }
}
