//! Command-line front end. Every subcommand reads and writes the file
//! formats in [`crate::io`]; exit codes are 0 on success, 2 on usage errors
//! and 1 on runtime errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze_scales, write_scales_csv, DEFAULT_BINS};
use crate::decode::rescore_nbest;
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::io::{create_file, read_json, read_jsonl, write_json, write_jsonl};
use crate::metrics::ErrorMeasure;
use crate::pipeline::{ce_items, decode_corpus, Parallelism, WerReport};
use crate::providers::{
    generate_synthetic_corpus, train_ngram, NGramLM, NoiseSpread, SyntheticConfig, Utterance,
};
use crate::train::{
    beta_grid, grid_search_scales, init_scales, joint_items, joint_train, train_scales_with,
    Criterion, EpochHook, RegenerateNBest, TrainConfig, TrainingSet,
};
use crate::types::{NBestList, ScaleMode, ScaleSet, TokenSeq, Vocabulary};

#[derive(Debug, Parser)]
#[command(
    name = "fusion-scales",
    version,
    about = "Learn AM/LM fusion scales on n-best lists and synthetic corpora"
)]
pub struct Cli {
    /// Worker threads for per-utterance work.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Reduce per-utterance results in a fixed order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus (vocab.json, train/dev/test.jsonl).
    Generate(GenerateArgs),
    /// Train an add-k n-gram LM on corpus references.
    TrainLm(TrainLmArgs),
    /// Beam-search every utterance into an n-best list.
    Decode(DecodeArgs),
    /// Reorder n-best lists under new scales and write top-1 transcripts.
    Rescore(RescoreArgs),
    /// Learn scales with the CE or minWER criterion.
    TrainScales(TrainScalesArgs),
    /// Train toy-AM logits (and optionally scales) with the LM fixed.
    JointTrain(JointTrainArgs),
    /// Grid-search beta with alpha fixed to 1.
    GridSearch(GridSearchArgs),
    /// Score transcripts against references.
    Evaluate(EvaluateArgs),
    /// Histogram, correlation and length statistics of subword scales.
    Analyze(AnalyzeArgs),
    /// Compare analytic gradients with finite differences on random instances.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON synthetic config; other generation flags are ignored when given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    /// Noise of every unit, or of the first half with --noise-high.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Noise of the second half of the units.
    #[arg(long)]
    pub noise_high: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 0)]
    pub dev: usize,
    #[arg(long, default_value_t = 500)]
    pub test: usize,
    /// Beta concentration around the reference mass; 0 disables jitter.
    #[arg(long, default_value_t = 4.0)]
    pub jitter: f64,
    /// Share of the off-reference mass taken by one confuser; 0 spreads it uniformly.
    #[arg(long, default_value_t = 0.7)]
    pub confuser_focus: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainLmArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 0.1)]
    pub smoothing: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// Scale file; overrides --alpha/--beta.
    #[arg(long)]
    pub scales: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
}

impl ScaleArgs {
    fn load(&self, k: usize) -> Result<ScaleSet> {
        let s = match &self.scales {
            Some(p) => read_json::<ScaleSet>(p)?,
            None => ScaleSet::agnostic(k, self.alpha, self.beta)?,
        };
        s.ensure_vocab(k)?;
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub lm: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub scales: ScaleArgs,
    #[arg(long, default_value_t = 12)]
    pub beam: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RescoreArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub nbest: PathBuf,
    #[command(flatten)]
    pub scales: ScaleArgs,
    /// Top-1 transcripts, one `{"id", "tokens"}` record per line.
    #[arg(long)]
    pub hyps: PathBuf,
    /// Reordered n-best lists.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainScalesArgs {
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub criterion: Option<Criterion>,
    #[arg(long)]
    pub mode: Option<ScaleMode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Corpus JSONL; needed for CE and for n-best regeneration.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// N-best JSONL; needed for minWER.
    #[arg(long)]
    pub nbest: Option<PathBuf>,
    /// Starting scales; random around 1.0 when absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for per-epoch scale files.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct JointTrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep the scales fixed and train only the toy AM.
    #[arg(long)]
    pub fix_scales: bool,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub lm: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus with the trained AM scores.
    #[arg(long)]
    pub out_corpus: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridSearchArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub nbest: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub grid_min: f64,
    #[arg(long, default_value_t = 3.0)]
    pub grid_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub grid_step: f64,
    /// Score words after detokenization instead of tokens.
    #[arg(long)]
    pub word: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Best scales as a scale file.
    #[arg(long)]
    pub scales_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Reference JSONL: `{"id", "tokens"}` or corpus records with `ref`.
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long)]
    pub hyps: PathBuf,
    /// Vocabulary, required for --word.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub word: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub scales: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for histogram.csv, lengths.csv and scales.csv.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub criterion: Criterion,
    /// Both modes when absent.
    #[arg(long)]
    pub mode: Option<ScaleMode>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A transcript line: `{"id": ..., "tokens": [...]}`. Corpus and n-best
/// records are accepted too, through their `ref` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    #[serde(alias = "ref")]
    pub tokens: TokenSeq,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn parallelism(cli: &Cli) -> Parallelism {
    Parallelism {
        workers: cli.workers.max(1),
        deterministic: cli.deterministic,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let par = parallelism(cli);
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::TrainLm(a) => train_lm(a),
        Command::Decode(a) => decode(a, par),
        Command::Rescore(a) => rescore(a),
        Command::TrainScales(a) => train_scales_cmd(a, cli),
        Command::JointTrain(a) => joint_train_cmd(a, cli),
        Command::GridSearch(a) => grid_search(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Analyze(a) => analyze(a),
        Command::GradCheck(a) => grad_check_cmd(a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => read_json::<SyntheticConfig>(p)?,
        None => {
            let sizes = (a.train, a.dev, a.test);
            let mut cfg = match a.noise_high {
                Some(high) => {
                    SyntheticConfig::heterogeneous(a.vocab_size, a.noise, high, sizes, a.seed)
                }
                None => SyntheticConfig::homogeneous(a.vocab_size, a.noise, sizes, a.seed),
            };
            cfg.jitter = (a.jitter > 0.0).then_some(a.jitter);
            cfg.spread = if a.confuser_focus > 0.0 {
                NoiseSpread::Confuser {
                    focus: a.confuser_focus,
                }
            } else {
                NoiseSpread::Uniform
            };
            cfg
        }
    };
    let corpus = generate_synthetic_corpus(&cfg)?;
    ensure_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("config.json"), &cfg)?;
    write_json(&a.out_dir.join("vocab.json"), &corpus.vocab)?;
    write_jsonl(&a.out_dir.join("train.jsonl"), &corpus.train)?;
    write_jsonl(&a.out_dir.join("dev.jsonl"), &corpus.dev)?;
    write_jsonl(&a.out_dir.join("test.jsonl"), &corpus.test)?;
    log::info!(
        "wrote {} / {} / {} utterances to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn load_corpus(path: &Path, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    let utts: Vec<Utterance> = read_jsonl(path)?;
    for u in &utts {
        u.reference.check_vocab(vocab.size())?;
        if u.am.rows()[0].len() != vocab.size() {
            return Err(Error::usage(format!(
                "utterance {}: AM rows do not match the vocabulary",
                u.id
            )));
        }
    }
    Ok(utts)
}

fn load_nbest(path: &Path, vocab: &Vocabulary) -> Result<Vec<NBestList>> {
    let lists: Vec<NBestList> = read_jsonl(path)?;
    for nb in &lists {
        nb.check_vocab(vocab.size())?;
    }
    Ok(lists)
}

fn load_lm(path: &Path, vocab: &Vocabulary) -> Result<NGramLM> {
    let lm: NGramLM = read_json(path)?;
    if crate::providers::ScoreSource::vocab_size(&lm) != vocab.size() {
        return Err(Error::usage(
            "LM vocabulary size does not match the vocabulary",
        ));
    }
    Ok(lm)
}

fn train_lm(a: &TrainLmArgs) -> Result<()> {
    let vocab: Vocabulary = read_json(&a.vocab)?;
    let utts = load_corpus(&a.corpus, &vocab)?;
    let refs: Vec<TokenSeq> = utts.iter().map(|u| u.target(vocab.eos())).collect();
    let lm = train_ngram(&refs, &vocab, a.order, a.smoothing)?;
    write_json(&a.out, &lm)
}

fn decode(a: &DecodeArgs, par: Parallelism) -> Result<()> {
    let vocab: Vocabulary = read_json(&a.vocab)?;
    let lm = load_lm(&a.lm, &vocab)?;
    let utts = load_corpus(&a.corpus, &vocab)?;
    let scales = a.scales.load(vocab.size())?;
    let lists = decode_corpus(&utts, &lm, &scales, a.beam, vocab.eos(), par)?;
    write_jsonl(&a.out, &lists)
}

fn rescore(a: &RescoreArgs) -> Result<()> {
    let vocab: Vocabulary = read_json(&a.vocab)?;
    let lists = load_nbest(&a.nbest, &vocab)?;
    let scales = a.scales.load(vocab.size())?;
    let rescored: Vec<NBestList> = lists.iter().map(|nb| rescore_nbest(nb, &scales)).collect();
    let hyps: Vec<Transcript> = rescored
        .iter()
        .map(|nb| Transcript {
            id: nb.id().to_string(),
            tokens: nb.best().tokens().without(vocab.eos()),
        })
        .collect();
    write_jsonl(&a.hyps, &hyps)?;
    if let Some(out) = &a.out {
        write_jsonl(out, &rescored)?;
    }
    Ok(())
}

fn train_config(path: Option<&PathBuf>, cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    if cli.workers > 1 {
        cfg.workers = cli.workers;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

/// Writes `scales-epoch-NNNN.json` after every epoch.
struct Checkpoints<'a> {
    dir: &'a Path,
    inner: Option<&'a mut dyn EpochHook>,
}

impl EpochHook for Checkpoints<'_> {
    fn before_epoch(
        &mut self,
        epoch: usize,
        scales: &ScaleSet,
        data: &mut TrainingSet,
    ) -> Result<()> {
        match self.inner.as_deref_mut() {
            Some(h) => h.before_epoch(epoch, scales, data),
            None => Ok(()),
        }
    }

    fn after_epoch(&mut self, epoch: usize, scales: &ScaleSet, _loss: f64) -> Result<()> {
        write_json(
            &self.dir.join(format!("scales-epoch-{:04}.json", epoch + 1)),
            scales,
        )
    }
}

fn train_scales_cmd(a: &TrainScalesArgs, cli: &Cli) -> Result<()> {
    let mut cfg = train_config(a.config.as_ref(), cli)?;
    if let Some(c) = a.criterion {
        cfg.criterion = c;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if a.batch_size.is_some() {
        cfg.batch_size = a.batch_size;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let vocab: Vocabulary = read_json(&a.vocab)?;
    let k = vocab.size();
    let init = match &a.init {
        Some(p) => {
            let s: ScaleSet = read_json(p)?;
            s.ensure_vocab(k)?;
            match (s.mode(), cfg.mode) {
                (ScaleMode::Agnostic, ScaleMode::Subword) => s.broadcast(),
                (ScaleMode::Subword, ScaleMode::Agnostic) => {
                    return Err(Error::usage(
                        "cannot start agnostic training from subword scales",
                    ))
                }
                _ => s,
            }
        }
        None => init_scales(cfg.mode, k, cfg.seed, cfg.init_stddev)?,
    };
    let par = cfg.parallelism();
    let measure = ErrorMeasure::for_vocab(cfg.accuracy, &vocab);
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone().ok_or_else(|| {
            Error::usage(format!(
                "--{flag} is required for {:?} training",
                cfg.criterion
            ))
        })
    };
    let corpus = a
        .corpus
        .as_ref()
        .map(|p| load_corpus(p, &vocab))
        .transpose()?;
    let lm = a.lm.as_ref().map(|p| load_lm(p, &vocab)).transpose()?;
    let mut data = match cfg.criterion {
        Criterion::Ce => {
            let (Some(utts), Some(lm)) = (&corpus, &lm) else {
                need(&None, "corpus and --lm")?;
                unreachable!()
            };
            TrainingSet::Ce(ce_items(utts, lm, vocab.eos(), par)?)
        }
        Criterion::MinWer => {
            let lists = load_nbest(&need(&a.nbest, "nbest")?, &vocab)?;
            TrainingSet::minwer(lists, &measure)?
        }
    };
    let mut regen;
    let inner: Option<&mut dyn EpochHook> =
        if cfg.regenerate_nbest && cfg.criterion == Criterion::MinWer {
            let (Some(utts), Some(lm)) = (&corpus, &lm) else {
                return Err(Error::usage("n-best regeneration needs --corpus and --lm"));
            };
            regen = RegenerateNBest {
                utterances: utts,
                lm,
                beam: cfg.beam,
                measure,
                parallelism: par,
            };
            Some(&mut regen)
        } else {
            None
        };
    let report = match &a.checkpoint_dir {
        Some(dir) => {
            ensure_dir(dir)?;
            let mut hook = Checkpoints { dir, inner };
            train_scales_with(&mut data, &init, &cfg, &mut hook)
        }
        None => match inner {
            Some(h) => train_scales_with(&mut data, &init, &cfg, h),
            None => train_scales_with(&mut data, &init, &cfg, &mut ()),
        },
    };
    let report = match report {
        Ok(r) => r,
        Err(Error::Diverged { epoch, last }) => {
            write_json(&a.out, &last.scales)?;
            return Err(Error::Diverged { epoch, last });
        }
        Err(e) => return Err(e),
    };
    write_json(&a.out, &report.scales)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    log::info!(
        "final loss {:.6}, mean alpha {:.4}, mean beta {:.4}",
        report.final_loss,
        report.mean_alpha,
        report.mean_beta
    );
    Ok(())
}

fn joint_train_cmd(a: &JointTrainArgs, cli: &Cli) -> Result<()> {
    let mut cfg = train_config(a.config.as_ref(), cli)?;
    cfg.criterion = Criterion::Ce;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.trainable.toy_am = true;
    cfg.trainable.scales = !a.fix_scales;
    let vocab: Vocabulary = read_json(&a.vocab)?;
    let lm = load_lm(&a.lm, &vocab)?;
    let utts = load_corpus(&a.corpus, &vocab)?;
    let init: ScaleSet = read_json(&a.init)?;
    init.ensure_vocab(vocab.size())?;
    let items = joint_items(&utts, &lm, vocab.eos());
    let out = joint_train(&items, &init, &cfg)?;
    write_json(&a.out, &out.report.scales)?;
    let trained: Vec<Utterance> = utts
        .into_iter()
        .zip(&out.ams)
        .map(|(u, am)| Utterance {
            am: am.to_positionwise(),
            ..u
        })
        .collect();
    write_jsonl(&a.out_corpus, &trained)?;
    if let Some(p) = &a.report {
        write_json(p, &out.report)?;
    }
    Ok(())
}

fn grid_search(a: &GridSearchArgs) -> Result<()> {
    let vocab: Vocabulary = read_json(&a.vocab)?;
    let lists = load_nbest(&a.nbest, &vocab)?;
    let grid = beta_grid(a.grid_min, a.grid_max, a.grid_step)?;
    let detok = a.word.then_some(&vocab);
    let result = grid_search_scales(&lists, vocab.size(), &grid, Some(vocab.eos()), detok)?;
    write_json(&a.out, &result)?;
    if let Some(p) = &a.scales_out {
        write_json(p, &result.scales(vocab.size())?)?;
    }
    println!(
        "best beta {} (alpha 1): WER {:.4}",
        result.best_beta, result.best_wer.rate
    );
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let refs: Vec<Transcript> = read_jsonl(&a.refs)?;
    let hyps: Vec<Transcript> = read_jsonl(&a.hyps)?;
    let vocab: Option<Vocabulary> = a.vocab.as_ref().map(|p| read_json(p)).transpose()?;
    if a.word && vocab.is_none() {
        return Err(Error::usage("--word needs --vocab"));
    }
    let by_id: std::collections::HashMap<&str, &TokenSeq> =
        hyps.iter().map(|h| (h.id.as_str(), &h.tokens)).collect();
    if by_id.len() != hyps.len() {
        return Err(Error::usage("duplicate ids in hypotheses"));
    }
    let mut ids = Vec::with_capacity(refs.len());
    let mut ref_seqs = Vec::with_capacity(refs.len());
    let mut hyp_seqs = Vec::with_capacity(refs.len());
    for r in &refs {
        let h = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::usage(format!("no hypothesis for utterance {}", r.id)))?;
        let strip = |t: &TokenSeq| match &vocab {
            Some(v) => t.without(v.eos()),
            None => t.clone(),
        };
        ids.push(r.id.clone());
        ref_seqs.push(strip(&r.tokens));
        hyp_seqs.push(strip(h));
    }
    if refs.len() != hyps.len() {
        return Err(Error::usage(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let detok = if a.word { vocab.as_ref() } else { None };
    let report = WerReport::build(&ids, &ref_seqs, &hyp_seqs, detok)?;
    println!(
        "WER {:.4} ({} errors / {} {}s: {} sub, {} ins, {} del)",
        report.corpus.rate,
        report.corpus.errors,
        report.corpus.ref_len,
        report.level,
        report.corpus.substitutions,
        report.corpus.insertions,
        report.corpus.deletions
    );
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let vocab: Vocabulary = read_json(&a.vocab)?;
    let scales: ScaleSet = read_json(&a.scales)?;
    let report = analyze_scales(&scales, &vocab, a.bins)?;
    write_json(&a.out, &report)?;
    if let Some(dir) = &a.csv_dir {
        ensure_dir(dir)?;
        report.write_histogram_csv(create_file(&dir.join("histogram.csv"))?)?;
        report.write_length_csv(create_file(&dir.join("lengths.csv"))?)?;
        write_scales_csv(&scales, &vocab, create_file(&dir.join("scales.csv"))?)?;
    }
    Ok(())
}

fn grad_check_cmd(a: &GradCheckArgs) -> Result<()> {
    let modes = match a.mode {
        Some(m) => vec![m],
        None => vec![ScaleMode::Agnostic, ScaleMode::Subword],
    };
    let reports: Vec<GradCheckReport> = modes
        .into_iter()
        .map(|m| grad_check(a.criterion, m, a.trials, a.seed))
        .collect::<Result<_>>()?;
    let max = reports
        .iter()
        .map(|r| r.max_relative_error)
        .fold(0.0, f64::max);
    let summary = serde_json::json!({
        "max_relative_error": max,
        "passed": reports.iter().all(|r| r.passed),
        "runs": reports,
    });
    match &a.out {
        Some(p) => write_json(p, &summary)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("json value serializes")
        ),
    }
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Error::DegenerateInput(format!(
            "gradient check failed: max relative error {max:e}"
        )))
    }
}
