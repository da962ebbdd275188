//! Histogram, correlation and per-length means of learned subword scales.

use fusion_scales::analysis::analyze_scales;
use fusion_scales::experiments::{prepare, subword_ce_config, Setup};
use fusion_scales::pipeline::Parallelism;
use fusion_scales::train::{init_scales, train_scales, DEFAULT_INIT_STDDEV};
use fusion_scales::ScaleMode;

fn main() -> fusion_scales::Result<()> {
    let mut setup = Setup::heterogeneous(2);
    (setup.corpus.train_size, setup.corpus.test_size) = (1000, 10);
    let par = Parallelism::default();
    let prep = prepare(&setup, par)?;
    let init = init_scales(
        ScaleMode::Subword,
        prep.vocab_size(),
        2,
        DEFAULT_INIT_STDDEV,
    )?;
    let ce = train_scales(&prep.ce_set(par)?, &init, &subword_ce_config(2))?;

    let report = analyze_scales(&ce.scales, &prep.corpus.vocab, 10)?;
    println!(
        "alpha mean {:.3} sd {:.3}",
        report.alpha.mean, report.alpha.stddev
    );
    println!(
        "beta  mean {:.3} sd {:.3}",
        report.beta.mean, report.beta.stddev
    );
    match report.pearson {
        Some(r) => println!("pearson(alpha, beta) = {r:.3}"),
        None => println!("pearson undefined (constant scales)"),
    }
    println!("alpha histogram: {:?}", report.alpha_histogram.counts);
    for g in &report.length_profile {
        println!(
            "length {}: {} units, alpha {:.3}, beta {:.3}",
            g.length, g.size, g.mean_alpha, g.mean_beta
        );
    }
    report.write_length_csv(std::io::stdout())?;
    Ok(())
}
