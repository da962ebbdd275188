//! Generate a synthetic corpus, train a bigram LM, beam-search n-best lists
//! and rescore them under different LM scales.

use fusion_scales::pipeline::{decode_corpus, rescored_wer, Parallelism};
use fusion_scales::providers::{
    generate_synthetic_corpus, train_ngram, NoiseSpread, SyntheticConfig,
};
use fusion_scales::{ScaleSet, TokenSeq};

fn main() -> fusion_scales::Result<()> {
    let mut cfg = SyntheticConfig::homogeneous(30, 0.3, (500, 0, 200), 3);
    cfg.jitter = Some(4.0);
    cfg.spread = NoiseSpread::Confuser { focus: 0.7 };
    let corpus = generate_synthetic_corpus(&cfg)?;
    let eos = corpus.vocab.eos();
    let refs: Vec<TokenSeq> = corpus.train.iter().map(|u| u.target(eos)).collect();
    let lm = train_ngram(&refs, &corpus.vocab, 2, 0.1)?;

    let k = corpus.vocab.size();
    let decode_scales = ScaleSet::agnostic(k, 1.0, 0.5)?;
    let nbest = decode_corpus(
        &corpus.test,
        &lm,
        &decode_scales,
        8,
        eos,
        Parallelism::default(),
    )?;
    let first = &nbest[0];
    println!("{}: reference {:?}", first.id(), first.reference().0);
    for h in first.hypotheses().iter().take(3) {
        println!(
            "  {:?} am {:.2} lm {:.2}",
            h.tokens().0,
            h.total_am(),
            h.total_lm()
        );
    }

    for beta in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let wer = rescored_wer(&nbest, &ScaleSet::agnostic(k, 1.0, beta)?, Some(eos), None)?;
        println!(
            "beta {beta:4}: WER {:.2}% ({} errors)",
            100.0 * wer.rate,
            wer.errors
        );
    }
    Ok(())
}
