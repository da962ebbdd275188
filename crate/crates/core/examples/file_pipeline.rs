//! The command-line pipeline end to end on files: generate, train-lm, decode,
//! train-scales (subword minWER), rescore, evaluate.

use fusion_scales::cli;

fn step(args: &[&str]) {
    println!("$ fusion-scales {}", args.join(" "));
    let code = cli::run(std::iter::once("fusion-scales").chain(args.iter().copied()));
    assert_eq!(code, 0, "step failed");
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    step(&[
        "generate",
        "--vocab-size",
        "50",
        "--noise",
        "0.05",
        "--noise-high",
        "0.5",
        "--train",
        "2000",
        "--test",
        "500",
        "--seed",
        "1",
        "--out-dir",
        &p("data"),
    ]);
    let vocab = p("data/vocab.json");
    step(&[
        "train-lm",
        "--vocab",
        &vocab,
        "--corpus",
        &p("data/train.jsonl"),
        "--out",
        &p("lm.json"),
    ]);
    for split in ["train", "test"] {
        step(&[
            "decode",
            "--vocab",
            &vocab,
            "--lm",
            &p("lm.json"),
            "--corpus",
            &p(&format!("data/{split}.jsonl")),
            "--out",
            &p(&format!("{split}.nbest.jsonl")),
        ]);
    }
    step(&[
        "train-scales",
        "--criterion",
        "ce",
        "--mode",
        "subword",
        "--epochs",
        "100",
        "--lr",
        "0.05",
        "--vocab",
        &vocab,
        "--corpus",
        &p("data/train.jsonl"),
        "--lm",
        &p("lm.json"),
        "--out",
        &p("ce.json"),
    ]);
    step(&[
        "train-scales",
        "--criterion",
        "minwer",
        "--mode",
        "subword",
        "--epochs",
        "50",
        "--lr",
        "0.05",
        "--vocab",
        &vocab,
        "--nbest",
        &p("train.nbest.jsonl"),
        "--init",
        &p("ce.json"),
        "--out",
        &p("minwer.json"),
    ]);
    step(&[
        "rescore",
        "--vocab",
        &vocab,
        "--nbest",
        &p("test.nbest.jsonl"),
        "--scales",
        &p("minwer.json"),
        "--hyps",
        &p("hyps.jsonl"),
    ]);
    step(&[
        "evaluate",
        "--refs",
        &p("data/test.jsonl"),
        "--hyps",
        &p("hyps.jsonl"),
        "--vocab",
        &vocab,
    ]);
    step(&[
        "grid-search",
        "--vocab",
        &vocab,
        "--nbest",
        &p("test.nbest.jsonl"),
        "--out",
        &p("grid.json"),
    ]);
}
