//! Agnostic minWER-trained scales against a grid search over beta.

use fusion_scales::experiments::{
    agnostic_minwer_config, default_grid, learned_vs_manual, prepare, Setup,
};
use fusion_scales::pipeline::Parallelism;

fn main() -> fusion_scales::Result<()> {
    let prep = prepare(&Setup::homogeneous(1), Parallelism::default())?;
    let r = learned_vs_manual(&prep, &default_grid(), &agnostic_minwer_config(1))?;
    println!(
        "grid:    beta {:.2}, test WER {:.2}%",
        r.grid.best_beta,
        100.0 * r.grid_test_wer.rate
    );
    println!(
        "learned: alpha {:.3}, beta {:.3} (ratio {:.3}), test WER {:.2}%",
        r.learned.mean_alpha,
        r.learned.mean_beta,
        r.learned_ratio,
        100.0 * r.learned_test_wer.rate
    );
    Ok(())
}
