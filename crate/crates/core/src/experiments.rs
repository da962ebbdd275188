//! End-to-end protocols on synthetic corpora: learned versus grid-searched
//! scales, subword-dependent versus agnostic scales, and joint training.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{AccuracyMode, ErrorMeasure, WerStats};
use crate::pipeline::{ce_items, decode_corpus, rescored_wer, Parallelism};
use crate::providers::{
    generate_synthetic_corpus, train_ngram, NGramLM, NoiseSpread, SyntheticConfig, SyntheticCorpus,
};
use crate::train::{
    beta_grid, grid_search_scales, init_scales, joint_items, joint_train, train_scales, Criterion,
    GridSearchResult, TrainConfig, TrainReport, Trainable, TrainingSet,
};
use crate::types::{NBestList, ScaleMode, ScaleSet, TokenSeq};

/// Everything needed to go from a seed to decoded n-best lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub corpus: SyntheticConfig,
    pub lm_order: usize,
    pub lm_smoothing: f64,
    /// Agnostic scales `(1, decode_beta)` used to produce the n-best lists.
    pub decode_beta: f64,
    pub beam: usize,
}

impl Setup {
    /// k = 50, noise 0.3 on every unit, 2000 train / 500 test utterances.
    pub fn homogeneous(seed: u64) -> Self {
        Self::with_corpus(SyntheticConfig::homogeneous(50, 0.3, (2000, 0, 500), seed))
    }

    /// k = 50, half the units with noise 0.05 and half with 0.5,
    /// 5000 train / 2000 test utterances.
    pub fn heterogeneous(seed: u64) -> Self {
        Self::with_corpus(SyntheticConfig::heterogeneous(
            50,
            0.05,
            0.5,
            (5000, 0, 2000),
            seed,
        ))
    }

    /// Jittered reference mass with a single strong confuser per row, a
    /// bigram LM, and a beam of 12.
    pub fn with_corpus(mut corpus: SyntheticConfig) -> Self {
        corpus.jitter = Some(4.0);
        corpus.spread = NoiseSpread::Confuser { focus: 0.7 };
        Self {
            corpus,
            lm_order: 2,
            lm_smoothing: 0.1,
            decode_beta: 0.5,
            beam: 12,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.corpus.vocab_size
    }
}

/// A generated corpus with its LM and n-best lists for the train and test splits.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: SyntheticCorpus,
    pub lm: NGramLM,
    pub train_nbest: Vec<NBestList>,
    pub test_nbest: Vec<NBestList>,
}

impl Prepared {
    pub fn vocab_size(&self) -> usize {
        self.corpus.vocab.size()
    }

    pub fn measure(&self) -> ErrorMeasure<'_> {
        ErrorMeasure::for_vocab(AccuracyMode::NegEdit, &self.corpus.vocab)
    }

    /// Token-level WER of the rescored test lists.
    pub fn test_wer(&self, scales: &ScaleSet) -> Result<WerStats> {
        rescored_wer(
            &self.test_nbest,
            scales,
            Some(self.corpus.vocab.eos()),
            None,
        )
    }

    pub fn ce_set(&self, par: Parallelism) -> Result<TrainingSet> {
        Ok(TrainingSet::Ce(ce_items(
            &self.corpus.train,
            &self.lm,
            self.corpus.vocab.eos(),
            par,
        )?))
    }

    pub fn minwer_set(&self) -> Result<TrainingSet> {
        TrainingSet::minwer(self.train_nbest.clone(), &self.measure())
    }
}

/// Generates the corpus, trains the LM on the train references (EOS
/// appended), and decodes both splits.
pub fn prepare(setup: &Setup, par: Parallelism) -> Result<Prepared> {
    let corpus = generate_synthetic_corpus(&setup.corpus)?;
    let eos = corpus.vocab.eos();
    let refs: Vec<TokenSeq> = corpus.train.iter().map(|u| u.target(eos)).collect();
    let lm = train_ngram(&refs, &corpus.vocab, setup.lm_order, setup.lm_smoothing)?;
    let dec = ScaleSet::agnostic(corpus.vocab.size(), 1.0, setup.decode_beta)?;
    let train_nbest = decode_corpus(&corpus.train, &lm, &dec, setup.beam, eos, par)?;
    let test_nbest = decode_corpus(&corpus.test, &lm, &dec, setup.beam, eos, par)?;
    Ok(Prepared {
        corpus,
        lm,
        train_nbest,
        test_nbest,
    })
}

/// The `beta` grid used for the manual baseline: 0 to 3 in steps of 0.05.
pub fn default_grid() -> Vec<f64> {
    beta_grid(0.0, 3.0, 0.05).expect("constant grid is valid")
}

#[derive(Debug, Clone, Serialize)]
pub struct LearnedVsManual {
    /// Grid search on the train n-best lists.
    pub grid: GridSearchResult,
    pub grid_test_wer: WerStats,
    pub learned: TrainReport,
    pub learned_ratio: f64,
    pub learned_test_wer: WerStats,
}

/// Agnostic minWER training budget that lets the scales sharpen enough for the
/// expected error to track the top-1 error.
pub fn agnostic_minwer_config(seed: u64) -> TrainConfig {
    TrainConfig {
        criterion: Criterion::MinWer,
        mode: ScaleMode::Agnostic,
        epochs: 1500,
        lr: 0.2,
        seed,
        ..TrainConfig::default()
    }
}

/// Grid-searched `beta` (with `alpha = 1`) against agnostic minWER training,
/// both on the train n-best lists, evaluated on the test lists.
pub fn learned_vs_manual(
    prep: &Prepared,
    grid: &[f64],
    cfg: &TrainConfig,
) -> Result<LearnedVsManual> {
    let k = prep.vocab_size();
    let eos = Some(prep.corpus.vocab.eos());
    let g = grid_search_scales(&prep.train_nbest, k, grid, eos, None)?;
    let grid_test_wer = prep.test_wer(&g.scales(k)?)?;
    let init = init_scales(ScaleMode::Agnostic, k, cfg.seed, cfg.init_stddev)?;
    let learned = train_scales(&prep.minwer_set()?, &init, cfg)?;
    let learned_test_wer = prep.test_wer(&learned.scales)?;
    Ok(LearnedVsManual {
        grid: g,
        grid_test_wer,
        learned_ratio: learned.mean_beta / learned.mean_alpha,
        learned,
        learned_test_wer,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SubwordAdvantage {
    /// Best agnostic `beta` chosen directly on the test lists, so the
    /// baseline is the best any agnostic pair can do up to grid resolution.
    pub best_agnostic_beta: f64,
    pub best_agnostic_test_wer: WerStats,
    pub ce: TrainReport,
    pub ce_test_wer: WerStats,
    pub subword: TrainReport,
    pub subword_test_wer: WerStats,
    /// `1 - subword / agnostic` on test WER.
    pub relative_reduction: f64,
}

pub fn subword_ce_config(seed: u64) -> TrainConfig {
    TrainConfig {
        criterion: Criterion::Ce,
        mode: ScaleMode::Subword,
        epochs: 200,
        lr: 0.05,
        seed,
        ..TrainConfig::default()
    }
}

pub fn subword_minwer_config(seed: u64) -> TrainConfig {
    TrainConfig {
        criterion: Criterion::MinWer,
        mode: ScaleMode::Subword,
        epochs: 100,
        lr: 0.05,
        seed,
        ..TrainConfig::default()
    }
}

/// CE-trains subword scales from a random start, continues with minWER,
/// and compares against the best agnostic scales.
pub fn subword_advantage(
    prep: &Prepared,
    grid: &[f64],
    ce_cfg: &TrainConfig,
    minwer_cfg: &TrainConfig,
) -> Result<SubwordAdvantage> {
    let k = prep.vocab_size();
    let oracle = grid_search_scales(
        &prep.test_nbest,
        k,
        grid,
        Some(prep.corpus.vocab.eos()),
        None,
    )?;
    let init = init_scales(ScaleMode::Subword, k, ce_cfg.seed, ce_cfg.init_stddev)?;
    let ce = train_scales(&prep.ce_set(ce_cfg.parallelism())?, &init, ce_cfg)?;
    let ce_test_wer = prep.test_wer(&ce.scales)?;
    let subword = train_scales(&prep.minwer_set()?, &ce.scales, minwer_cfg)?;
    let subword_test_wer = prep.test_wer(&subword.scales)?;
    Ok(SubwordAdvantage {
        best_agnostic_beta: oracle.best_beta,
        best_agnostic_test_wer: oracle.best_wer,
        relative_reduction: 1.0 - subword_test_wer.rate / oracle.best_wer.rate,
        ce,
        ce_test_wer,
        subword,
        subword_test_wer,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct JointComparison {
    /// CE loss of the starting scales.
    pub initial_loss: f64,
    /// Scales-only CE training continued with the joint budget.
    pub scales_only: TrainReport,
    pub joint_fixed_scales: TrainReport,
    pub joint_trainable_scales: TrainReport,
    /// `|fixed - trainable| / min(fixed, trainable)` on final training loss.
    pub relative_gap: f64,
}

/// Joint-training budget: the default conservative learning rate.
pub fn joint_config(seed: u64) -> TrainConfig {
    TrainConfig {
        criterion: Criterion::Ce,
        mode: ScaleMode::Subword,
        epochs: 50,
        seed,
        ..TrainConfig::default()
    }
}

/// Starting from `scales` (typically CE-trained), compares scales-only
/// training with joint AM + scale training and AM-only training, all with
/// the same budget.
pub fn joint_comparison(
    prep: &Prepared,
    scales: &ScaleSet,
    cfg: &TrainConfig,
) -> Result<JointComparison> {
    let par = cfg.parallelism();
    let ce = prep.ce_set(par)?;
    let initial_loss = ce.mean_loss(scales, par)?;
    let scales_only = train_scales(
        &ce,
        scales,
        &TrainConfig {
            trainable: Trainable {
                scales: true,
                toy_am: false,
            },
            ..cfg.clone()
        },
    )?;
    let items = joint_items(&prep.corpus.train, &prep.lm, prep.corpus.vocab.eos());
    let run = |train_scales: bool| {
        let c = TrainConfig {
            trainable: Trainable {
                scales: train_scales,
                toy_am: true,
            },
            ..cfg.clone()
        };
        joint_train(&items, scales, &c).map(|o| o.report)
    };
    let fixed = run(false)?;
    let trainable = run(true)?;
    let relative_gap = (fixed.final_loss - trainable.final_loss).abs()
        / fixed.final_loss.min(trainable.final_loss);
    Ok(JointComparison {
        initial_loss,
        scales_only,
        joint_fixed_scales: fixed,
        joint_trainable_scales: trainable,
        relative_gap,
    })
}
