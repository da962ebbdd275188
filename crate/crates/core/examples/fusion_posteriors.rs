//! Token-level and n-best posteriors of the log-linear combination, and what
//! joint rescaling of both scales does to each.

use fusion_scales::fusion::{
    combined_logits, nbest_posterior, token_level_log_prob, token_posterior,
};
use fusion_scales::{Hypothesis, NBestList, ScaleSet, StepScores};

fn ln(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.ln()).collect()
}

fn main() -> fusion_scales::Result<()> {
    let step = StepScores::new(ln(&[0.6, 0.3, 0.1]), ln(&[0.2, 0.5, 0.3]))?;
    for (a, b) in [(1.0, 0.0), (1.0, 0.5), (2.0, 1.0)] {
        let sc = ScaleSet::agnostic(3, a, b)?;
        let p: Vec<f64> = token_posterior(&step, &sc)?
            .iter()
            .map(|l| l.exp())
            .collect();
        println!(
            "alpha {a}, beta {b}: logits {:.3?} -> p {:.3?}",
            combined_logits(&step, &sc)?,
            p
        );
    }

    let subword = ScaleSet::subword(vec![1.0, 0.5, 1.5], vec![0.2, 0.8, 0.4])?;
    let p: Vec<f64> = token_posterior(&step, &subword)?
        .iter()
        .map(|l| l.exp())
        .collect();
    println!("subword scales: p {p:.3?}");

    // sentence level: scaling both by c only sharpens, the order stays
    let hyp =
        |t: &[u32], am: &[f64], lm: &[f64]| Hypothesis::new(t.to_vec().into(), ln(am), ln(lm));
    let nbest = NBestList::new(
        "utt",
        vec![1, 2].into(),
        vec![
            hyp(&[1, 2], &[0.5, 0.4], &[0.3, 0.6])?,
            hyp(&[1, 1], &[0.5, 0.5], &[0.3, 0.1])?,
            hyp(&[2, 2], &[0.2, 0.4], &[0.5, 0.6])?,
        ],
    )?;
    let base = ScaleSet::agnostic(3, 1.0, 0.6)?;
    for c in [0.5, 1.0, 4.0] {
        println!(
            "n-best posterior at c = {c}: {:.3?}",
            nbest_posterior(&nbest, &base.scaled(c)?)
        );
    }

    // token level: products of renormalized steps are not scale invariant
    let steps = vec![
        step.clone(),
        StepScores::new(ln(&[0.1, 0.2, 0.7]), ln(&[0.6, 0.3, 0.1]))?,
    ];
    for c in [1.0, 5.0] {
        let lp = token_level_log_prob(&steps, &[0, 2], &base.scaled(c)?)?;
        println!("token-level p(0 2) at c = {c}: {:.4}", lp.exp());
    }
    Ok(())
}
