//! On a corpus where half the units are much noisier than the rest, one scale
//! pair per unit beats the best single pair.

use fusion_scales::experiments::{
    default_grid, prepare, subword_advantage, subword_ce_config, subword_minwer_config, Setup,
};
use fusion_scales::pipeline::Parallelism;

fn main() -> fusion_scales::Result<()> {
    let setup = Setup::heterogeneous(1);
    let prep = prepare(&setup, Parallelism::default())?;
    let r = subword_advantage(
        &prep,
        &default_grid(),
        &subword_ce_config(1),
        &subword_minwer_config(1),
    )?;
    println!(
        "best agnostic (beta {:.2}): {:.2}%",
        r.best_agnostic_beta,
        100.0 * r.best_agnostic_test_wer.rate
    );
    println!("subword CE:     {:.2}%", 100.0 * r.ce_test_wer.rate);
    println!("subword minWER: {:.2}%", 100.0 * r.subword_test_wer.rate);
    println!("relative reduction {:.1}%", 100.0 * r.relative_reduction);

    // mean scales of the clean and noisy units (EOS excluded)
    let eos = prep.corpus.vocab.eos() as usize;
    let noisy: Vec<Option<bool>> = setup
        .corpus
        .noise
        .iter()
        .enumerate()
        .map(|(w, &e)| (w != eos).then_some(e > 0.1))
        .collect();
    let mean = |v: &[f64], sel: bool| {
        let xs: Vec<f64> = v
            .iter()
            .zip(&noisy)
            .filter(|(_, &n)| n == Some(sel))
            .map(|(x, _)| *x)
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let (a, b) = (
        r.subword.scales.alpha().as_slice(),
        r.subword.scales.beta().as_slice(),
    );
    println!(
        "clean half: alpha {:.3}, beta {:.3}",
        mean(a, false),
        mean(b, false)
    );
    println!(
        "noisy half: alpha {:.3}, beta {:.3}",
        mean(a, true),
        mean(b, true)
    );
    Ok(())
}
