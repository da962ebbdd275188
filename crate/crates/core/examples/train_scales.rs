//! Learn subword-dependent scales: cross-entropy on teacher-forced steps,
//! then expected-error (minWER) training on n-best lists.

use fusion_scales::experiments::{prepare, Setup};
use fusion_scales::pipeline::Parallelism;
use fusion_scales::train::{
    init_scales, train_scales, Criterion, TrainConfig, DEFAULT_INIT_STDDEV,
};
use fusion_scales::ScaleMode;

fn main() -> fusion_scales::Result<()> {
    let mut setup = Setup::heterogeneous(4);
    (setup.corpus.train_size, setup.corpus.test_size) = (1000, 500);
    let par = Parallelism::default();
    let prep = prepare(&setup, par)?;
    let k = prep.vocab_size();

    let ce_cfg = TrainConfig {
        criterion: Criterion::Ce,
        mode: ScaleMode::Subword,
        epochs: 100,
        lr: 0.05,
        ..TrainConfig::default()
    };
    let init = init_scales(ScaleMode::Subword, k, ce_cfg.seed, DEFAULT_INIT_STDDEV)?;
    let ce = train_scales(&prep.ce_set(par)?, &init, &ce_cfg)?;
    println!(
        "CE: loss {:.4} -> {:.4}, mean alpha {:.3}, mean beta {:.3}, test WER {:.2}%",
        ce.losses[0],
        ce.final_loss,
        ce.mean_alpha,
        ce.mean_beta,
        100.0 * prep.test_wer(&ce.scales)?.rate
    );

    let minwer_cfg = TrainConfig {
        criterion: Criterion::MinWer,
        epochs: 50,
        ..ce_cfg
    };
    let mw = train_scales(&prep.minwer_set()?, &ce.scales, &minwer_cfg)?;
    println!(
        "minWER: expected errors {:.4} -> {:.4}, test WER {:.2}%",
        mw.losses[0],
        mw.final_loss,
        100.0 * prep.test_wer(&mw.scales)?.rate
    );
    Ok(())
}
